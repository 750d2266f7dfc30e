#include "devgraph/autodiff.hpp"

#include "devgraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace devgraph::ad {

namespace {

thread_local bool recording = true;

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Tensor make(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (recording)
        for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
    if (node->requires_grad) {
        for (auto& p : parents) node->parents.push_back(p.node());
        node->backward = std::move(fn);
    }
    return Tensor(node);
}

Node& parent(Node& self, std::size_t k) { return *self.parents[k]; }

bool broadcastable(const Matrix& a, const Matrix& b) {
    auto dim_ok = [](Eigen::Index x, Eigen::Index y) { return x == y || x == 1 || y == 1; };
    return dim_ok(a.rows(), b.rows()) && dim_ok(a.cols(), b.cols());
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back to the operand's shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
    if (rows == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

void check_index(const Index& index, Eigen::Index bound, const char* op) {
    if (!index) throw InvalidArgument(std::string(op) + ": null index");
    for (int i : *index)
        if (i < 0 || i >= bound)
            throw InvalidArgument(std::string(op) + ": index " + std::to_string(i) + " out of range [0, " +
                                  std::to_string(bound) + ")");
}

template <class Forward, class Backward>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Forward fwd, Backward bwd) {
    if (!broadcastable(a.value(), b.value()))
        throw InvalidArgument(std::string(op) + ": shapes " + shape(a.value()) + " and " + shape(b.value()) +
                              " do not broadcast");
    const Eigen::Index r = std::max(a.rows(), b.rows()), c = std::max(a.cols(), b.cols());
    Matrix ea = expand(a.value(), r, c), eb = expand(b.value(), r, c);
    Matrix out = fwd(ea, eb);
    return make(std::move(out), {a, b}, [bwd, r, c](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        Matrix ea = expand(pa.value, r, c), eb = expand(pb.value, r, c);
        if (pa.requires_grad) pa.grad_buffer() += reduce_to(bwd(self.grad, ea, eb, 0), pa.value.rows(), pa.value.cols());
        if (pb.requires_grad) pb.grad_buffer() += reduce_to(bwd(self.grad, ea, eb, 1), pb.value.rows(), pb.value.cols());
    });
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D df) {
    Matrix out = a.value().unaryExpr(f);
    return make(std::move(out), {a}, [df](Node& self) {
        Node& p = parent(self, 0);
        p.grad_buffer().array() += self.grad.array() * p.value.binaryExpr(self.value, df).array();
    });
}

} // namespace

Index make_index(std::vector<int> values) { return std::make_shared<const std::vector<int>>(std::move(values)); }

Matrix& Node::grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
}

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

const Matrix& Tensor::grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() {
    if (node_) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
}

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw InvalidArgument("item: tensor is " + shape(value()) + ", not 1x1");
    return value()(0, 0);
}

Tensor constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Tensor(node);
}

Tensor variable(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](const Matrix& x, const Matrix& y) -> Matrix { return x + y; },
        [](const Matrix& g, const Matrix&, const Matrix&, int) -> Matrix { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](const Matrix& x, const Matrix& y) -> Matrix { return x - y; },
        [](const Matrix& g, const Matrix&, const Matrix&, int k) -> Matrix { return k == 0 ? g : Matrix(-g); });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "multiply", [](const Matrix& x, const Matrix& y) -> Matrix { return x.cwiseProduct(y); },
        [](const Matrix& g, const Matrix& x, const Matrix& y, int k) -> Matrix {
            return k == 0 ? g.cwiseProduct(y) : g.cwiseProduct(x);
        });
}

Tensor scale(const Tensor& a, double s) {
    return make(a.value() * s, {a}, [s](Node& self) { parent(self, 0).grad_buffer() += self.grad * s; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw InvalidArgument("matmul: shapes " + shape(a.value()) + " and " + shape(b.value()) + " are incompatible");
    Matrix out = a.value() * b.value();
    return make(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value.transpose();
        if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * self.grad;
    });
}

Tensor transpose(const Tensor& a) {
    Matrix out = a.value().transpose();
    return make(std::move(out), {a}, [](Node& self) { parent(self, 0).grad_buffer() += self.grad.transpose(); });
}

Tensor spmm(std::shared_ptr<const SparseMatrix> s, const Tensor& x) {
    if (!s || s->cols() != x.rows())
        throw InvalidArgument("spmm: sparse operand does not match " + shape(x.value()));
    Matrix out = (*s) * x.value();
    return make(std::move(out), {x}, [s](Node& self) {
        parent(self, 0).grad_buffer().noalias() += s->transpose() * self.grad;
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no operands");
    const Eigen::Index r = parts.front().rows();
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r)
            throw InvalidArgument("concat_cols: row counts differ (" + shape(parts.front().value()) + " vs " +
                                  shape(p.value()) + ")");
        c += p.cols();
    }
    Matrix out(r, c);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return make(std::move(out), parts, [](Node& self) {
        Eigen::Index off = 0;
        for (auto& p : self.parents) {
            if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(off, p->value.cols());
            off += p->value.cols();
        }
    });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols())
        throw InvalidArgument("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                              ") outside " + shape(a.value()));
    Matrix out = a.value().middleCols(start, count);
    return make(std::move(out), {a}, [start, count](Node& self) {
        parent(self, 0).grad_buffer().middleCols(start, count) += self.grad;
    });
}

Tensor exp(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& a, double alpha) {
    return unary(
        a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
        [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Tensor gather_rows(const Tensor& a, const Index& index) {
    check_index(index, a.rows(), "gather_rows");
    const auto& idx = *index;
    Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = a.value().row(idx[k]);
    return make(std::move(out), {a}, [index](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        const auto& idx = *index;
        for (std::size_t k = 0; k < idx.size(); ++k) g.row(idx[k]) += self.grad.row(static_cast<Eigen::Index>(k));
    });
}

Tensor scatter_sum(const Tensor& a, const Index& index, Eigen::Index size) {
    check_index(index, size, "scatter_sum");
    const auto& idx = *index;
    if (static_cast<Eigen::Index>(idx.size()) != a.rows())
        throw InvalidArgument("scatter_sum: index has " + std::to_string(idx.size()) + " entries for " +
                              shape(a.value()));
    Matrix out = Matrix::Zero(size, a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(idx[k]) += a.value().row(static_cast<Eigen::Index>(k));
    return make(std::move(out), {a}, [index](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        const auto& idx = *index;
        for (std::size_t k = 0; k < idx.size(); ++k) g.row(static_cast<Eigen::Index>(k)) += self.grad.row(idx[k]);
    });
}

Tensor weighted_aggregate(const Tensor& values, const Tensor& weights, const Index& src, const Index& dst,
                          Eigen::Index size) {
    check_index(src, values.rows(), "weighted_aggregate");
    check_index(dst, size, "weighted_aggregate");
    const Eigen::Index heads = weights.cols(), c = values.cols();
    if (src->size() != dst->size() || static_cast<Eigen::Index>(src->size()) != weights.rows())
        throw InvalidArgument("weighted_aggregate: " + std::to_string(src->size()) + " sources, " +
                              std::to_string(dst->size()) + " destinations and weights " + shape(weights.value()));
    if (heads == 0 || c % heads != 0)
        throw InvalidArgument("weighted_aggregate: values " + shape(values.value()) + " do not split into " +
                              std::to_string(heads) + " blocks");
    const Eigen::Index w = c / heads;
    Matrix out = Matrix::Zero(size, c);
    const Matrix& v = values.value();
    const Matrix& a = weights.value();
    for (std::size_t e = 0; e < src->size(); ++e) {
        const double* from = v.data() + (*src)[e] * c;
        double* to = out.data() + (*dst)[e] * c;
        const double* ae = a.data() + static_cast<Eigen::Index>(e) * heads;
        for (Eigen::Index k = 0; k < heads; ++k)
            for (Eigen::Index j = k * w; j < (k + 1) * w; ++j) to[j] += ae[k] * from[j];
    }
    return make(std::move(out), {values, weights}, [src, dst, heads, c, w](Node& self) {
        Node& pv = parent(self, 0);
        Node& pa = parent(self, 1);
        const double* g = self.grad.data();
        const double* v = pv.value.data();
        const double* a = pa.value.data();
        double* gv = pv.requires_grad ? pv.grad_buffer().data() : nullptr;
        double* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
        for (std::size_t e = 0; e < src->size(); ++e) {
            const Eigen::Index s = (*src)[e], d = (*dst)[e], row = static_cast<Eigen::Index>(e);
            for (Eigen::Index k = 0; k < heads; ++k) {
                const double ak = a[row * heads + k];
                double dot = 0.0;
                for (Eigen::Index j = k * w; j < (k + 1) * w; ++j) {
                    const double gj = g[d * c + j];
                    if (gv) gv[s * c + j] += ak * gj;
                    dot += gj * v[s * c + j];
                }
                if (ga) ga[row * heads + k] += dot;
            }
        }
    });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rows() == 0) throw InvalidArgument("mean_rows: no rows");
    Matrix out = a.value().colwise().mean();
    return make(std::move(out), {a}, [](Node& self) {
        Node& p = parent(self, 0);
        p.grad_buffer().rowwise() += self.grad.row(0) / static_cast<double>(p.value.rows());
    });
}

Tensor mean_pool_segments(const Tensor& a, const Index& segment, Eigen::Index count) {
    check_index(segment, count, "mean_pool_segments");
    const auto& seg = *segment;
    if (static_cast<Eigen::Index>(seg.size()) != a.rows())
        throw InvalidArgument("mean_pool_segments: segment index has " + std::to_string(seg.size()) + " entries for " +
                              shape(a.value()));
    std::vector<double> inv(static_cast<std::size_t>(count), 0.0);
    for (int s : seg) inv[static_cast<std::size_t>(s)] += 1.0;
    for (double& v : inv) v = v > 0.0 ? 1.0 / v : 0.0;
    Matrix out = Matrix::Zero(count, a.cols());
    for (std::size_t k = 0; k < seg.size(); ++k) out.row(seg[k]) += a.value().row(static_cast<Eigen::Index>(k));
    for (Eigen::Index s = 0; s < count; ++s) out.row(s) *= inv[static_cast<std::size_t>(s)];
    return make(std::move(out), {a}, [segment, inv](Node& self) {
        Matrix& g = parent(self, 0).grad_buffer();
        const auto& seg = *segment;
        for (std::size_t k = 0; k < seg.size(); ++k)
            g.row(static_cast<Eigen::Index>(k)) += self.grad.row(seg[k]) * inv[static_cast<std::size_t>(seg[k])];
    });
}

Tensor segment_softmax(const Tensor& scores, const Index& segment, Eigen::Index count) {
    check_index(segment, count, "segment_softmax");
    const auto& seg = *segment;
    if (static_cast<Eigen::Index>(seg.size()) != scores.rows())
        throw InvalidArgument("segment_softmax: segment index has " + std::to_string(seg.size()) + " entries for " +
                              shape(scores.value()));
    const Matrix& s = scores.value();
    const Eigen::Index h = s.cols();
    Matrix peak = Matrix::Constant(count, h, -INFINITY);
    for (std::size_t k = 0; k < seg.size(); ++k)
        peak.row(seg[k]) = peak.row(seg[k]).cwiseMax(s.row(static_cast<Eigen::Index>(k)));
    Matrix out(s.rows(), h);
    Matrix denom = Matrix::Zero(count, h);
    for (std::size_t k = 0; k < seg.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        out.row(r) = (s.row(r) - peak.row(seg[k])).array().exp().matrix();
        denom.row(seg[k]) += out.row(r);
    }
    for (std::size_t k = 0; k < seg.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        out.row(r).array() /= denom.row(seg[k]).array();
    }
    return make(std::move(out), {scores}, [segment, count](Node& self) {
        const auto& seg = *segment;
        const Matrix& w = self.value;
        Matrix dot = Matrix::Zero(count, w.cols());
        for (std::size_t k = 0; k < seg.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            dot.row(seg[k]) += w.row(r).cwiseProduct(self.grad.row(r));
        }
        Matrix& g = parent(self, 0).grad_buffer();
        for (std::size_t k = 0; k < seg.size(); ++k) {
            const auto r = static_cast<Eigen::Index>(k);
            g.row(r).array() += w.row(r).array() * (self.grad.row(r) - dot.row(seg[k])).array();
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Eigen::Index c = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
        throw InvalidArgument("layer_norm: gamma " + shape(gamma.value()) + " and beta " + shape(beta.value()) +
                              " must be 1x" + std::to_string(c));
    const Matrix& v = x.value();
    Eigen::VectorXd inv_std(v.rows());
    Matrix xhat(v.rows(), c);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double mean = v.row(r).mean();
        const double var = (v.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    return make(std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pg.requires_grad) pg.grad_buffer() += self.grad.cwiseProduct(xhat).colwise().sum();
        if (pb.requires_grad) pb.grad_buffer() += self.grad.colwise().sum();
        if (px.requires_grad) {
            const double n = static_cast<double>(xhat.cols());
            Matrix& g = px.grad_buffer();
            for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                Eigen::RowVectorXd dxhat = self.grad.row(r).cwiseProduct(pg.value.row(0));
                const double m1 = dxhat.mean();
                const double m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / n;
                g.row(r).array() += inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    return make(Matrix::Constant(1, 1, a.value().sum()), {a},
                [](Node& self) { parent(self, 0).grad_buffer().array() += self.grad(0, 0); });
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
        throw InvalidArgument("mse_loss: prediction " + shape(prediction.value()) + " vs target " +
                              shape(target.value()));
    const double n = static_cast<double>(prediction.value().size());
    if (n == 0) throw InvalidArgument("mse_loss: empty tensors");
    Matrix diff = prediction.value() - target.value();
    const double loss = diff.squaredNorm() / n;
    return make(Matrix::Constant(1, 1, loss), {prediction, target}, [diff = std::move(diff), n](Node& self) {
        const double g = self.grad(0, 0) * 2.0 / n;
        Node& p = parent(self, 0);
        Node& t = parent(self, 1);
        if (p.requires_grad) p.grad_buffer() += g * diff;
        if (t.requires_grad) t.grad_buffer() -= g * diff;
    });
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1)
        throw InvalidArgument("backward: loss must be a 1x1 tensor");
    if (!loss.requires_grad()) return;

    // iterative post-order DFS gives a topological order of the requires-grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (n->backward) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
    loss.node()->grad_buffer()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->backward(*n);
            n->grad.resize(0, 0); // intermediate gradients are not needed after propagation
        }
    }
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Matrix>& inputs,
                  double h) {
    std::vector<Tensor> vars;
    for (const auto& m : inputs) vars.push_back(variable(m));
    Tensor out = f(vars);
    if (out.rows() != 1 || out.cols() != 1) throw InvalidArgument("grad_check: function must return a 1x1 tensor");
    backward(out);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = vars[k].grad();
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Tensor> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Matrix m = inputs[j];
                    if (j == k) m.data()[i] += delta;
                    probe.push_back(constant(std::move(m)));
                }
                return f(probe).item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double a = analytic.data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
    }
    return worst;
}

} // namespace devgraph::ad
