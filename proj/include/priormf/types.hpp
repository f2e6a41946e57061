#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace priormf {

using Index = Eigen::Index;

// Factor rows are stored contiguously, so matrices are row-major throughout.
template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Vector = VectorX<double>;

/// Malformed or inconsistent input data (parse failures, bad splits, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or broken numerical contracts detected at runtime.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace priormf
