#pragma once

#include <Eigen/Core>

namespace adma::numerics::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap cmap(const double* p, Eigen::Index r, Eigen::Index c) { return ConstMap(p, r, c); }
inline MutMap mmap(double* p, Eigen::Index r, Eigen::Index c) { return MutMap(p, r, c); }

}  // namespace adma::numerics::detail
