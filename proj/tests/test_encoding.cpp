#include <doctest.h>

#include "devgraph/encoding.hpp"
#include "devgraph/error.hpp"
#include "devgraph/text.hpp"

#include <cmath>
#include <set>

using namespace devgraph;
using namespace devgraph::encoding;

#ifndef DEVGRAPH_GOLDEN_DIR
#define DEVGRAPH_GOLDEN_DIR "docs/golden"
#endif

namespace {

struct Fixture {
    physics::Device device = physics::make_nmosfet(DeviceSpec{});
    physics::BiasPoint bias;
    physics::SolutionFields fields;

    Fixture() {
        bias.voltages = {{"gate", 0.8}, {"drain", 0.3}};
        fields = physics::gummel_solve(device, bias);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

std::size_t find_vertex(const DeviceMesh& mesh, auto&& pred) {
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
        if (pred(v)) return v;
    FAIL("no vertex matches");
    return 0;
}

} // namespace

TEST_CASE("layout v1") {
    auto base = NodeFeatureLayout::v1();
    CHECK(base.width() == 27);
    CHECK(NodeFeatureLayout::v1(Task::poisson).width() == 28);
    CHECK(NodeFeatureLayout::v1(Task::iv).width() == 29);
    std::size_t offset = 0;
    for (const auto& b : base.blocks) {
        CHECK(b.offset == offset);
        offset += b.width;
    }
    CHECK(base.block("region").offset == 17);
    CHECK(base.block("doping").width == 2);
    CHECK_THROWS_AS(base.block("spin"), InvalidArgument);
    auto mask = base.one_hot_mask();
    CHECK(std::count(mask.begin(), mask.end(), true) == 7);
}

TEST_CASE("relative position edge features") {
    auto self = relative_position({0.2, 0.7}, {0.2, 0.7});
    CHECK(self == std::array<double, 3>{0.0, 0.0, 0.0});
    auto r = relative_position({0.0, 0.0}, {0.3, 0.4});
    CHECK(r[0] == 0.3);
    CHECK(r[1] == 0.4);
    CHECK(r[2] == doctest::Approx(0.5).epsilon(1e-15));
    auto back = relative_position({0.3, 0.4}, {0.0, 0.0});
    CHECK(back[0] == -r[0]);
    CHECK(back[1] == -r[1]);
    CHECK(back[2] == r[2]);
}

TEST_CASE("encode_device") {
    const auto& f = fixture();
    const auto& mesh = f.device.mesh;
    auto g = encode_device(f.device, f.bias);
    const auto layout = NodeFeatureLayout::v1();
    REQUIRE(g.x.cols() == 27);
    REQUIRE(g.node_count() == mesh.vertex_count());

    SUBCASE("material, region and contact blocks") {
        const auto si = find_vertex(mesh, [&](std::size_t v) { return mesh.regions[mesh.region_of_vertex[v]].material == "Silicon"; });
        CHECK(g.x.row(si).segment(0, 3) == Eigen::RowVector3d(0, 0, 1));
        const auto ox = find_vertex(mesh, [&](std::size_t v) { return mesh.regions[mesh.region_of_vertex[v]].material == "SiO2"; });
        CHECK(g.x.row(ox).segment(0, 3) == Eigen::RowVector3d(0, 1, 0));
        const auto drain = *mesh.contacts.at("drain").begin();
        CHECK(g.x.row(drain).segment(17, 4) == Eigen::RowVector4d(0, 1, 0, 0));
        const auto gate = *mesh.contacts.at("gate").begin();
        CHECK(g.x.row(gate).segment(17, 4) == Eigen::RowVector4d(1, 0, 0, 0));
        std::set<std::size_t> contact_nodes;
        for (const auto& [name, verts] : mesh.contacts) contact_nodes.insert(verts.begin(), verts.end());
        const auto bulk = find_vertex(mesh, [&](std::size_t v) { return !contact_nodes.count(v); });
        CHECK(g.x.row(bulk).segment(17, 4) == Eigen::RowVector4d(0, 0, 0, 1));
        CHECK(g.x.row(bulk).segment(21, 3).isZero());
        // bias is broadcast to every node
        CHECK(g.x(bulk, 13) == 0.8);
        CHECK(g.x(bulk, 14) == 0.3);
        CHECK(g.x(bulk, 26) == 300.0);
    }
    SUBCASE("coordinates and doping") {
        CHECK(g.x.col(11).minCoeff() == 0.0);
        CHECK(g.x.col(11).maxCoeff() == 1.0);
        CHECK(g.x.col(12).minCoeff() == 0.0);
        CHECK(g.x.col(12).maxCoeff() == 1.0);
        const auto w = find_vertex(mesh, [&](std::size_t v) { return f.device.doping.donors[v] > 0.0; });
        CHECK(g.x(w, 24) == doctest::Approx(std::log10(1.0 + 1e26 / 1e18)).epsilon(1e-14));
        CHECK(log_compress(-9e18, 1e18) == -1.0);
        CHECK(log_compress(0.0, 1e18) == 0.0);
    }
    SUBCASE("edges") {
        CHECK(g.edge_count() == 2 * mesh.edge_count() + mesh.vertex_count());
        std::set<std::pair<int, int>> directed;
        int loops = 0;
        for (std::size_t e = 0; e < g.edge_count(); ++e) {
            directed.insert({g.src[e], g.dst[e]});
            if (g.src[e] == g.dst[e]) {
                ++loops;
                CHECK(g.edge_attr.row(e).isZero());
            }
            CHECK(std::abs(g.edge_attr(e, 2) - std::hypot(g.edge_attr(e, 0), g.edge_attr(e, 1))) <= 1e-12);
        }
        CHECK(loops == static_cast<int>(mesh.vertex_count()));
        for (auto [s, d] : directed) CHECK(directed.count({d, s}));
    }
    SUBCASE("pure function") { CHECK(encode_device(f.device, f.bias) == g); }
    SUBCASE("vertex relabeling permutes rows") {
        std::vector<std::size_t> perm(mesh.vertex_count());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 37 + 11) % perm.size();
        REQUIRE(std::set<std::size_t>(perm.begin(), perm.end()).size() == perm.size());
        auto dev = f.device;
        dev.mesh = permute_vertices(mesh, perm);
        for (std::size_t k = 0; k < perm.size(); ++k) {
            dev.doping.donors[k] = f.device.doping.donors[perm[k]];
            dev.doping.acceptors[k] = f.device.doping.acceptors[perm[k]];
        }
        auto pg = encode_device(dev, f.bias);
        for (std::size_t k = 0; k < perm.size(); ++k) CHECK(pg.x.row(k) == g.x.row(perm[k]));
    }
    SUBCASE("errors") {
        auto dev = f.device;
        dev.doping.donors.pop_back();
        CHECK_THROWS_AS(encode_device(dev, f.bias), InvalidArgument);
        dev = f.device;
        dev.materials.erase("SiO2");
        CHECK_THROWS_AS(encode_device(dev, f.bias), InvalidArgument);
    }
}

TEST_CASE("self-consistent features") {
    const auto& f = fixture();
    auto g = encode_device(f.device, f.bias);
    auto p = attach_self_consistent(g, f.fields, Task::poisson);
    CHECK(p.x.cols() == g.x.cols() + 1);
    CHECK(p.node_label == f.fields.potential);
    CHECK(p.x(0, 27) == log_compress(f.fields.charge[0], kChargeReference));
    auto iv = attach_self_consistent(g, f.fields, Task::iv);
    CHECK(iv.x.cols() == g.x.cols() + 2);
    CHECK(iv.x(5, 27) == f.fields.potential[5]);
    CHECK(iv.graph_label == doctest::Approx(std::log10(f.fields.currents.at("drain"))).epsilon(1e-15));
    CHECK_THROWS_AS(attach_self_consistent(p, f.fields, Task::iv), InvalidArgument);

    auto short_fields = f.fields;
    short_fields.charge.pop_back();
    CHECK_THROWS_AS(attach_self_consistent(g, short_fields, Task::poisson), InvalidArgument);
    auto reversed = f.fields;
    reversed.currents["drain"] = -1e-3;
    CHECK_THROWS_WITH_AS(attach_self_consistent(g, reversed, Task::iv), doctest::Contains("rejected"), InvalidArgument);
}

TEST_CASE("normalizer") {
    const auto& f = fixture();
    std::vector<DeviceGraph> train;
    for (double vg : {0.0, 0.6, 1.2}) {
        physics::BiasPoint b = f.bias;
        b.voltages["gate"] = vg;
        auto fields = physics::gummel_solve(f.device, b);
        train.push_back(attach_self_consistent(encode_device(f.device, b), fields, Task::poisson));
    }
    const auto layout = NodeFeatureLayout::v1(Task::poisson);
    auto norm = fit_normalizer(train, layout);
    // constant temperature column
    CHECK(norm.scale[26] == 1.0);
    CHECK(norm.shift[26] == 300.0);
    // one-hot columns untouched
    CHECK(norm.shift[0] == 0.0);
    CHECK(norm.scale[19] == 1.0);

    std::vector<DeviceGraph> scaled;
    for (const auto& g : train) scaled.push_back(norm.apply(g));
    for (Eigen::Index c : {11, 12, 13, 24, 27}) {
        double sum = 0.0, sq = 0.0, count = 0.0;
        for (const auto& g : scaled) sum += g.x.col(c).sum(), count += static_cast<double>(g.x.rows());
        for (const auto& g : scaled) sq += (g.x.col(c).array() - sum / count).square().sum();
        CHECK(std::abs(sum / count) <= 1e-6);
        CHECK(std::abs(std::sqrt(sq / count) - 1.0) <= 1e-6);
    }
    CHECK(scaled[0].x.col(26).isZero());
    CHECK(scaled[0].x.col(17) == train[0].x.col(17));
    for (std::size_t v = 0; v < train[1].node_label.size(); ++v) {
        const double y = train[1].node_label[v];
        CHECK(std::abs(norm.label_from_model(scaled[1].node_label[v]) - y) <= 1e-12 * std::max(1.0, std::abs(y)));
    }
    CHECK(parse_normalizer(write_normalizer(norm)) == norm);
    CHECK_THROWS_AS(fit_normalizer(std::vector<DeviceGraph>{}, layout), InvalidArgument);
    CHECK_THROWS_AS(norm.apply(encode_device(f.device, f.bias)), InvalidArgument);
}

TEST_CASE("graph bundle") {
    const auto& f = fixture();
    GraphBundle b;
    b.task = Task::poisson;
    b.layout = NodeFeatureLayout::v1(Task::poisson);
    auto g = attach_self_consistent(encode_device(f.device, f.bias), f.fields, Task::poisson);
    g.id = "s00000";
    b.graphs = {g, g};
    b.graphs[1].id = "s00001";
    b.train = {1};
    b.validation = {0};
    b.normalizer = fit_normalizer(std::vector<DeviceGraph>{g}, b.layout);
    CHECK(parse_bundle(write_bundle(b)) == b);

    auto text = write_bundle(b);
    CHECK_THROWS_AS(parse_bundle(text.substr(0, text.size() / 2)), ParseError);

    auto golden = text::read_file(std::string(DEVGRAPH_GOLDEN_DIR) + "/example.dbundle");
    auto parsed = parse_bundle(golden);
    CHECK(parsed.graphs.size() == 1);
    CHECK(parsed.graphs[0].edge_count() == 4);
    CHECK(write_bundle(parsed) == golden);
}
