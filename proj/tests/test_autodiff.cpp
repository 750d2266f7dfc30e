#include <doctest.h>

#include "devgraph/autodiff.hpp"
#include "devgraph/error.hpp"

#include <cmath>
#include <random>

using namespace devgraph;
using namespace devgraph::ad;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Index random_index(std::mt19937_64& rng, std::size_t n, int bound) {
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(rng() % static_cast<unsigned>(bound));
    return make_index(std::move(v));
}

// Projects a tensor to a scalar with fixed random weights so every entry matters.
Tensor project(const Tensor& t, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(multiply(t, constant(random_matrix(rng, t.rows(), t.cols()))));
}

} // namespace

TEST_CASE("forward values") {
    Matrix a(2, 2);
    a << 1, 2, 3, 4;
    CHECK(matmul(constant(a), constant(Matrix::Identity(2, 2))).value() == a);

    auto x = variable(Matrix::Constant(1, 1, 3.0));
    auto y = multiply(x, x);
    backward(y);
    CHECK(y.item() == 9.0);
    CHECK(x.grad()(0, 0) == 6.0);

    Matrix rows(2, 3);
    rows << 1, 2, 3, 10, 20, 30;
    auto r = variable(rows);
    auto s = scatter_sum(r, make_index({0, 0}), 1);
    CHECK(s.value() == Matrix(Eigen::RowVector3d(11, 22, 33)));
    backward(sum(s));
    CHECK(r.grad() == Matrix::Ones(2, 3));

    auto g = gather_rows(constant(rows), make_index({1, 1, 0}));
    CHECK(g.value().row(0) == rows.row(1));
    CHECK(g.value().row(2) == rows.row(0));

    // broadcasting forms
    auto bias = add(constant(rows), constant(Matrix(Eigen::RowVector3d(1, 1, 1))));
    CHECK(bias.value()(1, 2) == 31.0);
    auto col = multiply(constant(rows), constant(Matrix(Eigen::Vector2d(2, 0))));
    CHECK(col.value()(0, 1) == 4.0);
    CHECK(col.value()(1, 1) == 0.0);
    CHECK_THROWS_WITH_AS(add(constant(Matrix::Zero(2, 3)), constant(Matrix::Zero(3, 2))), doctest::Contains("2x3"),
                         InvalidArgument);
    CHECK_THROWS_WITH_AS(matmul(constant(Matrix::Zero(2, 3)), constant(Matrix::Zero(2, 3))), doctest::Contains("2x3 and 2x3"),
                         InvalidArgument);
    CHECK_THROWS_AS(gather_rows(constant(rows), make_index({2})), InvalidArgument);
    CHECK_THROWS_AS(backward(constant(rows)), InvalidArgument);

    CHECK(elu(constant(Matrix::Constant(1, 1, -1.0))).item() == doctest::Approx(std::exp(-1.0) - 1.0));
    CHECK(leaky_relu(constant(Matrix::Constant(1, 1, -2.0)), 0.2).item() == doctest::Approx(-0.4));
    auto pooled = mean_pool_segments(constant(rows), make_index({1, 1}), 2);
    CHECK(pooled.value().row(0).isZero());
    CHECK(pooled.value()(1, 0) == 5.5);
    CHECK(mean_rows(constant(rows)).value()(0, 2) == 16.5);
}

TEST_CASE("segment softmax") {
    auto seg = make_index({0, 1, 1});
    Matrix s(3, 1);
    s << 5.0, 0.0, std::log(2.0);
    auto w = segment_softmax(constant(s), seg, 2);
    CHECK(w.value()(0, 0) == 1.0);
    CHECK(w.value()(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(w.value()(2, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    Matrix shifted = s;
    shifted(1, 0) += 100.0;
    shifted(2, 0) += 100.0;
    auto w2 = segment_softmax(constant(shifted), seg, 2);
    CHECK((w2.value() - w.value()).cwiseAbs().maxCoeff() <= 1e-12);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto idx = random_index(rng, 40, 7);
        auto ws = segment_softmax(constant(random_matrix(rng, 40, 2, -30, 30)), idx, 7);
        Matrix sums = Matrix::Zero(7, 2);
        std::vector<int> counts(7, 0);
        for (std::size_t k = 0; k < 40; ++k) {
            sums.row((*idx)[k]) += ws.value().row(static_cast<Eigen::Index>(k));
            ++counts[static_cast<std::size_t>((*idx)[k])];
        }
        CHECK(ws.value().minCoeff() >= 0.0);
        for (int seg_id = 0; seg_id < 7; ++seg_id)
            if (counts[static_cast<std::size_t>(seg_id)])
                for (int h = 0; h < 2; ++h) CHECK(std::abs(sums(seg_id, h) - 1.0) <= 1e-12);
    }
}

TEST_CASE("layer norm") {
    auto gamma = constant(Matrix::Ones(1, 2)), beta = constant(Matrix::Zero(1, 2));
    Matrix row(1, 2);
    row << 1, 3;
    auto y = layer_norm(constant(row), gamma, beta);
    CHECK(std::abs(y.value()(0, 0) + 1.0) <= 1e-4);
    CHECK(std::abs(y.value()(0, 1) - 1.0) <= 1e-4);
    auto flat = layer_norm(constant(Matrix::Constant(1, 2, 7.0)), gamma, beta);
    CHECK(flat.value().cwiseAbs().maxCoeff() <= 1e-12);
    Matrix g(1, 2), b(1, 2);
    g << 2.0, 2.0;
    b << 5.0, 5.0;
    auto affine = layer_norm(constant(row), constant(g), constant(b));
    CHECK((affine.value().array() - (2.0 * y.value().array() + 5.0)).abs().maxCoeff() <= 1e-12);
    CHECK_THROWS_AS(layer_norm(constant(row), constant(Matrix::Ones(1, 3)), beta), InvalidArgument);
}

TEST_CASE("gradient check on every primitive") {
    CHECK(grad_check([](const std::vector<Tensor>& in) { return sum(in[0]); }, {Matrix::Constant(1, 1, 0.3)}) <= 1e-9);

    std::mt19937_64 rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto seed = rng();
        const Eigen::Index r = 2 + static_cast<Eigen::Index>(rng() % 4), c = 1 + static_cast<Eigen::Index>(rng() % 4);
        const Matrix a = random_matrix(rng, r, c), b = random_matrix(rng, r, c), m = random_matrix(rng, c, 3);
        const Matrix row = random_matrix(rng, 1, c), colv = random_matrix(rng, r, 1);
        const Matrix pos = random_matrix(rng, r, c, 0.5, 2.0);
        auto idx = random_index(rng, static_cast<std::size_t>(r) + 3, static_cast<int>(r));
        auto seg = random_index(rng, static_cast<std::size_t>(r), 3);
        auto seg_long = random_index(rng, static_cast<std::size_t>(r) + 3, 3);
        auto check = [&](auto fn, std::vector<Matrix> in) {
            worst = std::max(worst, grad_check([&](const std::vector<Tensor>& t) { return project(fn(t), seed); }, in));
        };
        check([](auto& t) { return add(t[0], t[1]); }, {a, b});
        check([](auto& t) { return add(t[0], t[1]); }, {a, row});
        check([](auto& t) { return sub(t[0], t[1]); }, {a, colv});
        check([](auto& t) { return multiply(t[0], t[1]); }, {a, b});
        check([](auto& t) { return multiply(t[0], t[1]); }, {a, colv});
        check([](auto& t) { return scale(t[0], -1.7); }, {a});
        check([](auto& t) { return matmul(t[0], t[1]); }, {a, m});
        check([](auto& t) { return transpose(t[0]); }, {a});
        check([](auto& t) { return concat_cols({t[0], t[1], t[0]}); }, {a, colv});
        check([c](auto& t) { return slice_cols(t[0], c > 1 ? 1 : 0, 1); }, {a});
        check([](auto& t) { return exp(t[0]); }, {a});
        check([](auto& t) { return log(t[0]); }, {pos});
        check([](auto& t) { return leaky_relu(t[0], 0.2); }, {a});
        check([](auto& t) { return elu(t[0]); }, {a});
        check([&](auto& t) { return gather_rows(t[0], idx); }, {a});
        check([&](auto& t) { return scatter_sum(t[0], seg, 3); }, {a});
        check([&](auto& t) { return weighted_aggregate(t[0], t[1], idx, seg_long, 3); },
              {a, random_matrix(rng, static_cast<Eigen::Index>(idx->size()), 1)});
        check([&](auto& t) { return weighted_aggregate(t[0], t[1], idx, seg_long, 3); },
              {random_matrix(rng, r, 4), random_matrix(rng, static_cast<Eigen::Index>(idx->size()), 2)});
        check([](auto& t) { return mean_rows(t[0]); }, {a});
        check([&](auto& t) { return mean_pool_segments(t[0], seg, 3); }, {a});
        check([&](auto& t) { return segment_softmax(t[0], seg, 3); }, {a});
        check([](auto& t) { return layer_norm(t[0], t[1], t[2]); }, {a, row, random_matrix(rng, 1, c)});
        check([](auto& t) { return mse_loss(t[0], t[1]); }, {a, b});
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("weighted aggregate") {
    Matrix v(2, 4);
    v << 1, 2, 3, 4, 10, 20, 30, 40;
    Matrix a(3, 2);
    a << 0.5, 2.0, 1.0, 0.0, 3.0, 1.0;
    auto out = weighted_aggregate(constant(v), constant(a), make_index({0, 1, 1}), make_index({0, 0, 1}), 2).value();
    Matrix expected(2, 4);
    expected << 0.5 + 10, 1 + 20, 6, 8, 30, 60, 30, 40;
    CHECK(out == expected);
    CHECK_THROWS_AS(weighted_aggregate(constant(v), constant(Matrix::Ones(3, 3)), make_index({0, 1, 1}),
                                       make_index({0, 0, 1}), 2),
                    InvalidArgument);
}

TEST_CASE("sparse product") {
    auto s = std::make_shared<SparseMatrix>(2, 3);
    s->insert(0, 0) = 0.5;
    s->insert(0, 2) = 0.5;
    s->insert(1, 1) = 2.0;
    s->makeCompressed();
    std::mt19937_64 rng(3);
    CHECK(grad_check([&](const std::vector<Tensor>& t) { return project(spmm(s, t[0]), 9); }, {random_matrix(rng, 3, 4)}) <
          1e-6);
    CHECK_THROWS_AS(spmm(s, constant(Matrix::Zero(2, 2))), InvalidArgument);
}

TEST_CASE("shared subexpressions sum over paths") {
    std::mt19937_64 rng(21);
    const Matrix a = random_matrix(rng, 3, 3);
    // shared: h = exp(x) used twice
    auto x1 = variable(a);
    auto h = exp(x1);
    backward(sum(add(multiply(h, h), h)));
    // duplicated: two independent copies of exp(x)
    auto x2 = variable(a);
    auto h1 = exp(x2), h2 = exp(x2), h3 = exp(x2);
    backward(sum(add(multiply(h1, h2), h3)));
    CHECK((x1.grad() - x2.grad()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mse of equal tensors") {
    std::mt19937_64 rng(1);
    const Matrix a = random_matrix(rng, 4, 2);
    auto p = variable(a);
    auto loss = mse_loss(p, constant(a));
    backward(loss);
    CHECK(loss.item() == 0.0);
    CHECK(p.grad().isZero());
    CHECK_THROWS_AS(mse_loss(p, constant(Matrix::Zero(2, 4))), InvalidArgument);
}
