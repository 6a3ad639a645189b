#pragma once

#include <Eigen/Dense>

namespace mimil {

// Row-major so that flattening a matrix follows its natural reading order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVector = Eigen::Matrix<double, Eigen::Dynamic, 1>;

}  // namespace mimil
