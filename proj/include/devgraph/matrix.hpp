#pragma once

#include <Eigen/Dense>

namespace devgraph {

/// Dense row-major matrix used for features, activations and parameters.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

} // namespace devgraph
