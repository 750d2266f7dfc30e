#include <doctest.h>

#include "devgraph/error.hpp"
#include "devgraph/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

using namespace devgraph;

namespace {

// Every side of every triangle, deduplicated through a std::set: an
// independent route to the edge set.
std::set<Edge> edge_set_oracle(const std::vector<Triangle>& tris) {
    std::set<Edge> s;
    for (const auto& t : tris)
        for (int k = 0; k < 3; ++k) {
            auto a = t[k], b = t[(k + 1) % 3];
            s.insert({std::min(a, b), std::max(a, b)});
        }
    return s;
}

double sum(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

} // namespace

TEST_CASE("uniform grid counts") {
    SUBCASE("nx=4, ny=3") {
        auto m = build_uniform_mesh(4, 3, 3.0, 2.0);
        CHECK(m.vertex_count() == 12);
        CHECK(m.triangles.size() == (4 - 1) * (3 - 1) * 2);
    }
    SUBCASE("nx=2, ny=2 is a single split quad") {
        auto m = build_uniform_mesh(2, 2, 1.0, 1.0);
        CHECK(m.vertex_count() == 4);
        CHECK(m.triangles.size() == 2);
        CHECK(m.edges.size() == 5);
    }
}

TEST_CASE("extract_edges") {
    CHECK(extract_edges(std::vector<Triangle>{{0, 1, 2}}, 3) == std::vector<Edge>{{0, 1}, {0, 2}, {1, 2}});
    CHECK(extract_edges(std::vector<Triangle>{{0, 1, 2}, {1, 3, 2}}, 4).size() == 5);
    CHECK(extract_edges(std::vector<Triangle>{}, 0).empty());
    CHECK_THROWS_AS(extract_edges(std::vector<Triangle>{{0, 1, 7}}, 3), InvalidArgument);

    SUBCASE("order independent and equal to the set oracle") {
        auto m = build_device_mesh(DeviceSpec{});
        auto tris = m.triangles;
        std::mt19937 rng(7);
        std::shuffle(tris.begin(), tris.end(), rng);
        for (auto& t : tris) std::rotate(t.begin(), t.begin() + static_cast<long>(rng() % 3), t.end());
        const auto shuffled = extract_edges(tris, m.vertex_count());
        CHECK(shuffled == m.edges);
        const auto oracle = edge_set_oracle(m.triangles);
        CHECK(std::vector<Edge>(oracle.begin(), oracle.end()) == m.edges);
        CHECK(extract_edges(tris, m.vertex_count()) == shuffled);
    }
}

TEST_CASE("box method on a uniform right-triangle grid") {
    const double h = 0.25;
    auto m = build_uniform_mesh(5, 5, 1.0, 1.0);
    const std::size_t center = 2 * 5 + 2;
    CHECK(m.cv_volume[center] == doctest::Approx(h * h).epsilon(1e-12));

    // Laplacian row assembled from cv_coeff: 4 axis neighbours with weight 1, diagonals 0
    int axis = 0, diagonal = 0;
    for (std::size_t e = 0; e < m.edge_count(); ++e) {
        const auto [a, b] = m.edges[e];
        if (a != center && b != center) continue;
        const auto other = a == center ? b : a;
        const auto& p = m.vertices[center];
        const auto& q = m.vertices[other];
        const bool is_axis = std::abs(p.x - q.x) < 1e-12 || std::abs(p.y - q.y) < 1e-12;
        if (is_axis) {
            ++axis;
            CHECK(m.cv_coeff[e] == doctest::Approx(1.0).epsilon(1e-12));
        } else {
            ++diagonal;
            CHECK(m.cv_coeff[e] == 0.0);
        }
    }
    CHECK(axis == 4);
    CHECK(diagonal == 2);
}

TEST_CASE("control volumes partition the device area") {
    for (const DeviceMesh& m : {build_uniform_mesh(7, 4, 2e-7, 1e-7), build_device_mesh(DeviceSpec{}),
                                build_warped_mesh(9)}) {
        const double area = m.total_area();
        CHECK(std::abs(sum(m.cv_volume) - area) <= 1e-9 * area);
        for (double v : m.cv_volume) CHECK(v >= 0.0);
        for (double c : m.cv_coeff) CHECK(c >= 0.0);
    }
    // device outline: body rectangle plus the oxide band over the channel
    DeviceSpec spec;
    auto m = build_device_mesh(spec);
    const double outline = (2 * spec.well_width + spec.gate_length) * spec.body_depth +
                           spec.gate_length * spec.oxide_thickness;
    CHECK(std::abs(sum(m.cv_volume) - outline) <= 1e-9 * outline);
}

TEST_CASE("obtuse triangles use the barycentric dual") {
    DeviceMesh m;
    m.vertices = {{0, 0}, {4, 0}, {2, 0.5}};
    m.triangles = {{0, 1, 2}};
    m.region_of_vertex = {0, 0, 0};
    m.region_of_triangle = {0};
    m.regions = {{"r", "Silicon"}};
    control_volumes(m);
    for (double v : m.cv_volume) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    for (double c : m.cv_coeff) CHECK(c >= 0.0);

    m.vertices = {{0, 0}, {1, 0}, {2, 0}};
    CHECK_THROWS_AS(control_volumes(m), InvalidArgument);
}

TEST_CASE("nMOSFET template") {
    DeviceSpec spec;
    auto m = build_device_mesh(spec);
    std::set<std::size_t> seen;
    for (const char* name : {"gate", "source", "drain", "body"}) {
        REQUIRE(m.contacts.count(name));
        const auto& members = m.contacts.at(name);
        CHECK(!members.empty());
        for (auto v : members) CHECK(seen.insert(v).second);
    }
    CHECK(m.region_of_vertex.size() == m.vertex_count());
    for (int r : m.region_of_vertex) CHECK((r >= 0 && r < 4));
    for (const auto& t : m.triangles)
        for (auto v : t) CHECK(v < m.vertex_count());

    SUBCASE("deterministic") { CHECK(build_device_mesh(spec) == m); }

    SUBCASE("grading refines toward junctions") {
        // spacing at the metallurgical junction x = well_width is finer than mid-channel
        std::vector<double> xs;
        for (const auto& p : m.vertices)
            if (p.y == 0.0) xs.push_back(p.x);
        std::sort(xs.begin(), xs.end());
        auto spacing_at = [&](double x) {
            double best = 1e9, h = 0;
            for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
                const double mid = 0.5 * (xs[i] + xs[i + 1]);
                if (std::abs(mid - x) < best) best = std::abs(mid - x), h = xs[i + 1] - xs[i];
            }
            return h;
        };
        CHECK(spacing_at(spec.well_width) < spacing_at(spec.well_width + spec.gate_length / 2));
    }

    SUBCASE("construction errors name the parameter") {
        auto bad = spec;
        bad.well_depth = spec.body_depth * 1.5;
        CHECK_THROWS_WITH_AS(build_device_mesh(bad), doctest::Contains("well_depth"), InvalidArgument);
        bad = spec;
        bad.gate_length = 0.0;
        CHECK_THROWS_WITH_AS(build_device_mesh(bad), doctest::Contains("gate_length"), InvalidArgument);
        bad = spec;
        bad.nx = 3;
        CHECK_THROWS_WITH_AS(build_device_mesh(bad), doctest::Contains("nx"), InvalidArgument);
        bad = spec;
        bad.template_id = "finfet";
        CHECK_THROWS_WITH_AS(build_device_mesh(bad), doctest::Contains("template"), InvalidArgument);
    }
}

TEST_CASE("vertex permutation relabels consistently") {
    auto m = build_uniform_mesh(4, 3, 1.0, 1.0);
    std::vector<std::size_t> perm(m.vertex_count());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (i * 5 + 3) % perm.size();
    auto p = permute_vertices(m, perm);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        CHECK(p.vertices[k] == m.vertices[perm[k]]);
        CHECK(p.cv_volume[k] == doctest::Approx(m.cv_volume[perm[k]]).epsilon(1e-14));
    }
    CHECK(p.edges.size() == m.edges.size());
}
