#pragma once

#include <Eigen/Core>

namespace cs3d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using CMatrixMap = Eigen::Map<const RowMatrix>;

}  // namespace cs3d
