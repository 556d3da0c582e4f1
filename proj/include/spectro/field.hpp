#pragma once

// Dense 2-D fields and the patch extraction / embedding pair S_j, S_j^T.

#include <complex>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "spectro/errors.hpp"

namespace spectro {

using Index = Eigen::Index;
using cd = std::complex<double>;

template <typename T>
using Field = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ComplexField = Field<cd>;
using RealField = Field<double>;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct Offset {
  Index row = 0;
  Index col = 0;

  friend bool operator==(const Offset&, const Offset&) = default;
};

template <typename Derived>
Shape shape_of(const Eigen::DenseBase<Derived>& f) {
  return {f.rows(), f.cols()};
}

inline std::string to_string(Shape s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

inline void check_patch_fits(Shape image, Shape patch, Offset at) {
  if (patch.rows <= 0 || patch.cols <= 0)
    throw DimensionError("empty patch shape");
  if (at.row < 0 || at.col < 0 || at.row + patch.rows > image.rows ||
      at.col + patch.cols > image.cols)
    throw GeometryError("patch " + to_string(patch) + " at (" + std::to_string(at.row) + "," +
                        std::to_string(at.col) + ") does not fit inside image " +
                        to_string(image));
}

/// Copy of the block of `u` starting at `at`; no periodic wraparound.
template <typename Derived>
Field<typename Derived::Scalar> extract_patch(const Eigen::ArrayBase<Derived>& u, Offset at,
                                              Shape patch) {
  check_patch_fits(shape_of(u), patch, at);
  return u.block(at.row, at.col, patch.rows, patch.cols);
}

/// Adds `patch` into `accumulator` at `at`. Adjoint of extract_patch.
///
/// The accumulator is taken by const reference so that Eigen maps and blocks
/// can be passed as temporaries; it is written through.
template <typename DerivedA, typename DerivedP>
void embed_patch_add(const Eigen::ArrayBase<DerivedA>& accumulator,
                     const Eigen::ArrayBase<DerivedP>& patch, Offset at) {
  auto& acc = const_cast<Eigen::ArrayBase<DerivedA>&>(accumulator);
  check_patch_fits(shape_of(acc), shape_of(patch), at);
  acc.block(at.row, at.col, patch.rows(), patch.cols()) += patch;
}

/// Column `c` of a pixels-by-channels matrix viewed as a row-major image.
template <typename Matrix>
auto channel_image(Matrix& m, Index c, Shape s) {
  using Scalar = typename std::remove_const_t<Matrix>::Scalar;
  using Target = std::conditional_t<std::is_const_v<Matrix>, const Field<Scalar>, Field<Scalar>>;
  return Eigen::Map<Target>(m.col(c).data(), s.rows, s.cols);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& a) {
  return a.derived().array().isFinite().all();
}

} // namespace spectro
