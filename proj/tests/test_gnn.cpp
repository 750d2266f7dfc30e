#include <doctest.h>

#include "devgraph/error.hpp"
#include "devgraph/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

using namespace devgraph;
using namespace devgraph::gnn;
using encoding::DeviceGraph;
using encoding::Task;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Path plus random chords, both directions, plus self-loops.
DeviceGraph random_graph(std::mt19937_64& rng, int n, Eigen::Index features) {
    DeviceGraph g;
    g.x = random_matrix(rng, n, features);
    Matrix pos = random_matrix(rng, n, 2);
    std::set<std::pair<int, int>> pairs;
    for (int i = 0; i + 1 < n; ++i) pairs.insert({i, i + 1});
    for (int k = 0; k < n; ++k) {
        int a = static_cast<int>(rng() % static_cast<unsigned>(n)), b = static_cast<int>(rng() % static_cast<unsigned>(n));
        if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
    }
    auto push = [&](int s, int d) {
        g.src.push_back(s);
        g.dst.push_back(d);
    };
    for (auto [a, b] : pairs) push(a, b), push(b, a);
    for (int i = 0; i < n; ++i) push(i, i);
    g.edge_attr.resize(static_cast<Eigen::Index>(g.src.size()), 3);
    for (std::size_t e = 0; e < g.src.size(); ++e) {
        const Eigen::RowVector2d d = pos.row(g.dst[e]) - pos.row(g.src[e]);
        g.edge_attr.row(static_cast<Eigen::Index>(e)) << d(0), d(1), d.norm();
    }
    g.node_label.assign(static_cast<std::size_t>(n), 0.0);
    return g;
}

// Row k of the result is row perm[k] of the input.
DeviceGraph permute(const DeviceGraph& g, const std::vector<int>& perm) {
    std::vector<int> inverse(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inverse[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
    DeviceGraph p = g;
    for (std::size_t k = 0; k < perm.size(); ++k) p.x.row(static_cast<Eigen::Index>(k)) = g.x.row(perm[k]);
    // also reverse edge order to exercise order independence
    const auto e_count = g.edge_count();
    for (std::size_t e = 0; e < e_count; ++e) {
        const auto from = e_count - 1 - e;
        p.src[e] = inverse[static_cast<std::size_t>(g.src[from])];
        p.dst[e] = inverse[static_cast<std::size_t>(g.dst[from])];
        p.edge_attr.row(static_cast<Eigen::Index>(e)) = g.edge_attr.row(static_cast<Eigen::Index>(from));
    }
    return p;
}

std::vector<int> random_permutation(std::mt19937_64& rng, int n) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

encoding::Normalizer identity_normalizer(std::size_t width, Task task) {
    encoding::Normalizer n;
    n.task = task;
    n.shift.assign(width, 0.0);
    n.scale.assign(width, 1.0);
    return n;
}

double leaky(double v) { return v > 0 ? v : 0.2 * v; }

} // namespace

TEST_CASE("normalized adjacency") {
    auto one = normalized_adjacency({0}, {0}, 1);
    CHECK(one->coeff(0, 0) == 1.0);
    auto two = normalized_adjacency({0, 1, 0, 1}, {1, 0, 0, 1}, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(two->coeff(i, j) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(normalized_adjacency({0}, {1}, 2), InvalidArgument);
}

TEST_CASE("gcn layer") {
    ParameterSet params;
    GcnLayer layer(params, "g", 2, 2);
    layer.weight.mutable_value() = Matrix::Identity(2, 2);

    DeviceGraph single;
    single.x = Matrix(Eigen::RowVector2d(3.0, -1.0));
    single.src = {0};
    single.dst = {0};
    single.edge_attr = Matrix::Zero(1, 3);
    CHECK(layer.forward(ad::constant(single.x), make_batch(single)).value() == single.x);

    DeviceGraph pair;
    pair.x.resize(2, 2);
    pair.x << 1, 2, 5, 10;
    pair.src = {0, 1, 0, 1};
    pair.dst = {1, 0, 0, 1};
    pair.edge_attr = Matrix::Zero(4, 3);
    auto out = layer.forward(ad::constant(pair.x), make_batch(pair)).value();
    CHECK(out(0, 0) == doctest::Approx(3.0));
    CHECK(out(1, 1) == doctest::Approx(6.0));
    CHECK(out.row(0) == out.row(1));

    CHECK_THROWS_WITH_AS(layer.forward(ad::constant(Matrix::Zero(2, 3)), make_batch(pair)),
                         doctest::Contains("input width 3"), InvalidArgument);

    std::mt19937_64 rng(3);
    ParameterSet p2(7);
    GcnLayer wide(p2, "w", 4, 6);
    auto g = random_graph(rng, 9, 4);
    auto perm = random_permutation(rng, 9);
    auto pg = permute(g, perm);
    auto y = wide.forward(ad::constant(g.x), make_batch(g)).value();
    auto py = wide.forward(ad::constant(pg.x), make_batch(pg)).value();
    for (int k = 0; k < 9; ++k) CHECK((py.row(k) - y.row(perm[static_cast<std::size_t>(k)])).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("relgat layer") {
    std::mt19937_64 rng(17);
    SUBCASE("self-loop only node") {
        ParameterSet params(1);
        RelGatLayer layer(params, "a", 3, 4, 2, true);
        DeviceGraph g;
        g.x = random_matrix(rng, 1, 3);
        g.src = {0};
        g.dst = {0};
        g.edge_attr = Matrix::Zero(1, 3);
        auto batch = make_batch(g);
        auto alpha = layer.weights(ad::constant(g.x), batch).value();
        CHECK(alpha == Matrix::Ones(1, 2));
        auto out = layer.forward(ad::constant(g.x), batch).value();
        CHECK((out - g.x * layer.weight.value()).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("attention sums to one") {
        ParameterSet params(2);
        RelGatLayer layer(params, "a", 5, 8, 2, true);
        for (int trial = 0; trial < 5; ++trial) {
            auto g = random_graph(rng, 12, 5);
            auto alpha = layer.weights(ad::constant(g.x), make_batch(g)).value();
            Matrix sums = Matrix::Zero(12, 2);
            for (std::size_t e = 0; e < g.edge_count(); ++e) sums.row(g.dst[e]) += alpha.row(static_cast<Eigen::Index>(e));
            CHECK(alpha.minCoeff() >= 0.0);
            CHECK((sums.array() - 1.0).abs().maxCoeff() <= 1e-12);
        }
    }
    SUBCASE("brute-force oracle on a 3-node path") {
        ParameterSet params(99);
        RelGatLayer layer(params, "a", 2, 4, 2, true, 3);
        DeviceGraph g;
        g.x = random_matrix(rng, 3, 2);
        g.src = {0, 1, 1, 2, 0, 1, 2};
        g.dst = {1, 0, 2, 1, 0, 1, 2};
        Matrix pos = random_matrix(rng, 3, 2);
        g.edge_attr.resize(7, 3);
        for (int e = 0; e < 7; ++e) {
            Eigen::RowVector2d d = pos.row(g.dst[e]) - pos.row(g.src[e]);
            g.edge_attr.row(e) << d(0), d(1), d.norm();
        }
        auto out = layer.forward(ad::constant(g.x), make_batch(g)).value();

        const Matrix& W = layer.weight.value();
        Matrix expected = Matrix::Zero(3, 4);
        for (int h = 0; h < 2; ++h) {
            const Matrix Wh = W.middleCols(2 * h, 2);
            const Matrix& U = layer.edge_weight[h].value();
            const Matrix& a = layer.attention[h].value();
            for (int i = 0; i < 3; ++i) {
                std::vector<double> score;
                std::vector<int> from;
                for (int e = 0; e < 7; ++e) {
                    if (g.dst[e] != i) continue;
                    const int j = g.src[e];
                    Eigen::RowVectorXd cat(2 + 2 + 3);
                    cat << g.x.row(i) * Wh, g.x.row(j) * Wh, g.edge_attr.row(e) * U;
                    score.push_back(leaky(cat.dot(a.row(0))));
                    from.push_back(j);
                }
                double z = 0.0;
                for (double s : score) z += std::exp(s);
                for (std::size_t k = 0; k < score.size(); ++k)
                    expected.block(i, 2 * h, 1, 2) += std::exp(score[k]) / z * (g.x.row(from[k]) * Wh);
            }
        }
        CHECK((out - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("averaged heads and errors") {
        ParameterSet params(4);
        RelGatLayer last(params, "a", 3, 5, 2, false);
        CHECK(last.out_width() == 5);
        auto g = random_graph(rng, 6, 3);
        CHECK(last.forward(ad::constant(g.x), make_batch(g)).cols() == 5);
        CHECK_THROWS_AS(RelGatLayer(params, "b", 3, 5, 2, true), InvalidArgument);
        g.edge_attr = Matrix::Zero(static_cast<Eigen::Index>(g.edge_count()), 2);
        CHECK_THROWS_WITH_AS(last.forward(ad::constant(g.x), make_batch(g)), doctest::Contains("width 2"),
                             InvalidArgument);
    }
}

TEST_CASE("residual block") {
    std::mt19937_64 rng(8);
    auto g = random_graph(rng, 10, 4);
    auto batch = make_batch(g);
    ParameterSet params;
    ResBlock same(params, "r", 4, 4);
    CHECK_FALSE(same.projection.defined());
    same.gcn.weight.mutable_value().setZero();
    CHECK(same.forward(ad::constant(g.x), batch).value() == g.x);

    ResBlock wide(params, "w", 128, 256);
    CHECK(wide.projection.defined());
    auto big = random_graph(rng, 5, 128);
    CHECK(wide.forward(ad::constant(big.x), make_batch(big)).cols() == 256);
}

TEST_CASE("layer gradients") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        auto g = random_graph(rng, 7, 3);
        auto batch = make_batch(g);
        const Matrix proj = random_matrix(rng, 7, 4);
        auto project = [&](const ad::Tensor& t) { return ad::sum(ad::multiply(t, ad::constant(proj.leftCols(t.cols())))); };

        ParameterSet params(static_cast<std::uint64_t>(trial));
        GcnLayer gcn(params, "g", 3, 4);
        CHECK(ad::grad_check(
                  [&](const std::vector<ad::Tensor>& t) {
                      GcnLayer l = gcn;
                      l.weight = t[1];
                      l.bias = t[2];
                      return project(l.forward(t[0], batch));
                  },
                  {g.x, gcn.weight.value(), gcn.bias.value()}) < 1e-5);

        RelGatLayer gat(params, "a", 3, 4, 2, true, 3);
        CHECK(ad::grad_check(
                  [&](const std::vector<ad::Tensor>& t) {
                      RelGatLayer l = gat;
                      l.weight = t[1];
                      l.edge_weight = {t[2], t[3]};
                      l.attention = {t[4], t[5]};
                      return project(l.forward(t[0], batch));
                  },
                  {g.x, gat.weight.value(), gat.edge_weight[0].value(), gat.edge_weight[1].value(),
                   gat.attention[0].value(), gat.attention[1].value()}) < 1e-5);

        ResBlock res(params, "r", 3, 4);
        CHECK(ad::grad_check(
                  [&](const std::vector<ad::Tensor>& t) {
                      ResBlock l = res;
                      l.gcn.weight = t[1];
                      l.projection = t[2];
                      return project(l.forward(t[0], batch));
                  },
                  {g.x, res.gcn.weight.value(), res.projection.value()}) < 1e-5);
    }
}

TEST_CASE("mlp parameter count") {
    ParameterSet params;
    Mlp mlp(params, "m", 19, {128, 1}, false);
    CHECK(params.count() == 19 * 128 + 128 + 128 * 1 + 1);
    CHECK(params.count() == 2689);
    CHECK(mlp.forward(ad::constant(Matrix::Zero(3, 19))).cols() == 1);
}

TEST_CASE("architectures") {
    const std::size_t width = encoding::NodeFeatureLayout::v1(Task::poisson).width();
    SUBCASE("poisson") {
        Model relgat(poisson_architecture("relgat", width));
        CHECK(relgat.message_layer_count() == 12);
        CHECK(relgat.total_layer_count() == 13);
        Model fat(poisson_architecture("fatgcn", width));
        CHECK(fat.message_layer_count() == 5);
        CHECK(fat.mlp_layer_count() == 6);
        CHECK(fat.total_layer_count() == 11);
        Model deep(poisson_architecture("deepgcn", width));
        CHECK(deep.total_layer_count() == 13);
        Model res(poisson_architecture("resgcn", width));
        CHECK(res.total_layer_count() == 13);
        CHECK(res.config().residual);
        MESSAGE("parameters: fatgcn " << fat.parameter_count() << ", deepgcn " << deep.parameter_count()
                                      << ", resgcn " << res.parameter_count() << ", relgat " << relgat.parameter_count());
    }
    SUBCASE("iv") {
        const std::size_t iv_width = encoding::NodeFeatureLayout::v1(Task::iv).width();
        for (auto arch : {"fatgcn", "relgat"}) {
            Model m(iv_architecture(arch, iv_width));
            CHECK(m.pooled());
            CHECK(m.message_layer_count() == 3);
            CHECK(m.mlp_layer_count() == 4);
            CHECK(m.total_layer_count() == 7);
            MESSAGE(std::string(arch) << " IV parameters: " << m.parameter_count());
        }
        CHECK_THROWS_AS(iv_architecture("deepgcn", iv_width), InvalidArgument);
    }
    SUBCASE("invalid configurations") {
        CHECK_THROWS_WITH_AS(poisson_architecture("sage", width), doctest::Contains("sage"), InvalidArgument);
        auto c = poisson_architecture("relgat", width);
        c.layer_widths[0] = 63;
        CHECK_THROWS_AS(Model{c}, InvalidArgument);
        c = iv_architecture("relgat", width + 1);
        c.mlp_widths.back() = 2;
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
        c = iv_architecture("fatgcn", width + 1);
        c.pooling = "none";
        CHECK_THROWS_AS(c.validate(), InvalidArgument);
    }
    SUBCASE("zero input produces finite output") {
        DeviceGraph g;
        std::mt19937_64 rng(2);
        g = random_graph(rng, 6, static_cast<Eigen::Index>(width));
        g.x.setZero();
        for (auto arch : {"fatgcn", "deepgcn", "resgcn", "relgat"}) {
            Model m(poisson_architecture(arch, width));
            CHECK(m.forward(make_batch(g)).value().allFinite());
        }
    }
}

TEST_CASE("model symmetry") {
    std::mt19937_64 rng(31);
    SUBCASE("node task equivariance") {
        for (auto arch : {"fatgcn", "resgcn", "relgat"}) {
            Model m(scaled_architecture(arch, Task::poisson, 6, 3, 8), 5);
            auto g = random_graph(rng, 15, 6);
            auto y = m.forward(make_batch(g)).value();
            for (int trial = 0; trial < 5; ++trial) {
                auto perm = random_permutation(rng, 15);
                auto py = m.forward(make_batch(permute(g, perm))).value();
                double worst = 0.0;
                for (int k = 0; k < 15; ++k) worst = std::max(worst, std::abs(py(k, 0) - y(perm[static_cast<std::size_t>(k)], 0)));
                CHECK(worst <= 1e-9);
            }
        }
    }
    SUBCASE("graph task invariance") {
        for (auto arch : {"fatgcn", "relgat"}) {
            Model m(scaled_architecture(arch, Task::iv, 6, 2, 8), 6);
            auto g = random_graph(rng, 15, 6);
            const double y = m.forward(make_batch(g)).value()(0, 0);
            for (int trial = 0; trial < 5; ++trial) {
                auto pg = permute(g, random_permutation(rng, 15));
                CHECK(std::abs(m.forward(make_batch(pg)).value()(0, 0) - y) <= 1e-9);
            }
        }
    }
    SUBCASE("mean pooling of identical embeddings") {
        Matrix rows = Matrix::Ones(4, 1) * random_matrix(rng, 1, 5);
        auto pooled = ad::mean_pool_segments(ad::constant(rows), ad::make_index({0, 0, 0, 0}), 1).value();
        CHECK((pooled - rows.topRows(1)).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("batching matches separate passes") {
        Model m(scaled_architecture("relgat", Task::iv, 6, 2, 8), 9);
        auto a = random_graph(rng, 8, 6), b = random_graph(rng, 11, 6);
        auto joint = m.forward(make_batch({&a, &b})).value();
        CHECK(std::abs(joint(0, 0) - m.forward(make_batch(a)).value()(0, 0)) <= 1e-12);
        CHECK(std::abs(joint(1, 0) - m.forward(make_batch(b)).value()(0, 0)) <= 1e-12);
    }
}

TEST_CASE("prediction and checkpoints") {
    std::mt19937_64 rng(41);
    const std::size_t width = encoding::NodeFeatureLayout::v1(Task::poisson).width();
    Model m(scaled_architecture("relgat", Task::poisson, width, 2, 8), 3);
    auto norm = identity_normalizer(width, Task::poisson);
    norm.label_shift = 0.4;
    norm.label_scale = 0.25;
    auto g = random_graph(rng, 20, static_cast<Eigen::Index>(width));
    g.task = Task::poisson;
    auto phi = predict_potential(m, norm, g);
    CHECK(phi.size() == g.node_count());

    auto text = write_checkpoint(m, norm);
    auto loaded = parse_checkpoint(text);
    CHECK(loaded.model.config() == m.config());
    CHECK(loaded.normalizer == norm);
    CHECK(predict_potential(loaded.model, loaded.normalizer, g) == phi);
    CHECK(write_checkpoint(loaded.model, loaded.normalizer) == text);

    auto narrow = g;
    narrow.x.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(width) - 1);
    CHECK_THROWS_WITH_AS(predict_potential(m, norm, narrow), doctest::Contains("expects 28"), InvalidArgument);
    CHECK_THROWS_AS(predict_current(m, norm, g), InvalidArgument);

    CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), ParseError);
    auto bad = text;
    bad.replace(bad.find("heads 2"), 7, "heads 3");
    CHECK_THROWS_AS(parse_checkpoint(bad), ParseError);

    Model iv(scaled_architecture("fatgcn", Task::iv, width + 1, 2, 8), 3);
    auto iv_norm = identity_normalizer(width + 1, Task::iv);
    auto gi = random_graph(rng, 12, static_cast<Eigen::Index>(width) + 1);
    gi.task = Task::iv;
    gi.node_label.clear();
    const double y = predict_current(iv, iv_norm, gi);
    auto iv_loaded = parse_checkpoint(write_checkpoint(iv, iv_norm));
    CHECK(predict_current(iv_loaded.model, iv_loaded.normalizer, gi) == y);
}
