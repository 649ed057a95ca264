#pragma once

#include <Eigen/Dense>

namespace diratlas {

// Row-major so that each sample / token is a contiguous span the kernels
// can stream over.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace diratlas
