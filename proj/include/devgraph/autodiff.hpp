#pragma once

#include "devgraph/matrix.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace devgraph::ad {

/// Shared, immutable row index used by gather/scatter/segment operations.
using Index = std::shared_ptr<const std::vector<int>>;
Index make_index(std::vector<int> values);

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Node {
    Matrix value;
    Matrix grad; // allocated (zero) on first use
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Matrix& grad_buffer();
};

/// Handle to a value in the computation graph.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Matrix& value() const { return node_->value; }
    Matrix& mutable_value() { return node_->value; }
    /// Accumulated gradient; zeros of the value's shape when none has flowed.
    const Matrix& grad() const;
    void zero_grad();

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    /// Scalar value of a 1x1 tensor.
    double item() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Leaf without gradient.
Tensor constant(Matrix value);
/// Leaf that accumulates gradients (parameters, inputs under test).
Tensor variable(Matrix value);

// Elementwise binary operations broadcast a 1xC row, an Rx1 column or a 1x1
// scalar against the other operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Sparse constant times dense tensor.
Tensor spmm(std::shared_ptr<const SparseMatrix> s, const Tensor& x);

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor elu(const Tensor& a, double alpha = 1.0);

/// out[k] = a[index[k]]
Tensor gather_rows(const Tensor& a, const Index& index);
/// out[index[k]] += a[k], out has `size` rows.
Tensor scatter_sum(const Tensor& a, const Index& index, Eigen::Index size);
/// out[dst[k]] += weights[k, h] * values[src[k]] on column block h; the
/// value columns split into weights.cols() equal blocks.
Tensor weighted_aggregate(const Tensor& values, const Tensor& weights, const Index& src, const Index& dst,
                          Eigen::Index size);
/// 1xC column means.
Tensor mean_rows(const Tensor& a);
/// Row means per segment; empty segments yield zero rows.
Tensor mean_pool_segments(const Tensor& a, const Index& segment, Eigen::Index count);
/// Column-wise softmax within each segment, shifted by the segment maximum.
Tensor segment_softmax(const Tensor& scores, const Index& segment, Eigen::Index count);
/// Row-wise normalization with population variance, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum(const Tensor& a);
/// Mean squared error over all entries (1x1).
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

/// Reverse pass from a 1x1 loss. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

/// Largest |analytic - numeric| / max(1, |analytic|) over every input entry,
/// numeric by central differences with step h. `f` must return a 1x1 tensor.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Matrix>& inputs,
                  double h = 1e-6);

} // namespace devgraph::ad
