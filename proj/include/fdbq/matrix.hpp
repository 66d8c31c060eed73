#pragma once

#include <Eigen/Dense>

namespace fdbq {

// Row-major so that one output channel (a weight row) is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace fdbq
