#pragma once

// The bilinear ptychography operator A_j(w, u) = F(w . S_j u), its adjoint in
// the object, and the illumination maps used as diagonal preconditioners.

#include <set>
#include <utility>
#include <vector>

#include "spectro/fft.hpp"
#include "spectro/field.hpp"

namespace spectro {

/// Scan positions shared by every energy.
class ScanGeometry {
public:
  ScanGeometry() = default;
  ScanGeometry(Shape image, Shape patch, std::vector<Offset> offsets)
      : image_(image), patch_(patch), offsets_(std::move(offsets)) {
    if (offsets_.empty())
      throw GeometryError("scan geometry needs at least one position");
    std::set<std::pair<Index, Index>> seen;
    for (const auto& o : offsets_) {
      check_patch_fits(image_, patch_, o);
      if (!seen.emplace(o.row, o.col).second)
        throw GeometryError("duplicate scan offset (" + std::to_string(o.row) + "," +
                            std::to_string(o.col) + ")");
    }
  }

  Shape image() const { return image_; }
  Shape patch() const { return patch_; }
  Index positions() const { return static_cast<Index>(offsets_.size()); }
  const std::vector<Offset>& offsets() const { return offsets_; }
  Offset offset(Index j) const { return offsets_[static_cast<std::size_t>(j)]; }

private:
  Shape image_;
  Shape patch_;
  std::vector<Offset> offsets_;
};

/// Frames indexed by (energy, position), stored energy-major.
template <typename T>
struct Stack {
  Index energies = 0;
  Index positions = 0;
  std::vector<Field<T>> frames;

  Stack() = default;
  Stack(Index l, Index j, Shape s)
      : energies(l), positions(j),
        frames(static_cast<std::size_t>(l * j), Field<T>::Zero(s.rows, s.cols)) {}

  Field<T>& at(Index l, Index j) { return frames[static_cast<std::size_t>(l * positions + j)]; }
  const Field<T>& at(Index l, Index j) const {
    return frames[static_cast<std::size_t>(l * positions + j)];
  }
  Shape frame_shape() const { return frames.empty() ? Shape{} : shape_of(frames.front()); }
};

using FrameStack = Stack<cd>;
using MeasurementSet = Stack<double>;

inline void check_probe(const ComplexField& probe, const ScanGeometry& geom) {
  if (shape_of(probe) != geom.patch())
    throw DimensionError("probe shape " + to_string(shape_of(probe)) +
                         " does not match patch shape " + to_string(geom.patch()));
}

/// Exit wave of one scan position before propagation: w . S_j u.
template <typename Derived>
ComplexField exit_wave(const ComplexField& probe, const Eigen::ArrayBase<Derived>& u,
                       const ScanGeometry& geom, Index j) {
  return probe * extract_patch(u, geom.offset(j), geom.patch());
}

/// Frames F(w . S_j u) for every scan position j.
template <typename Derived>
std::vector<ComplexField> ptycho_forward(const ComplexField& probe,
                                         const Eigen::ArrayBase<Derived>& u,
                                         const ScanGeometry& geom) {
  check_probe(probe, geom);
  if (shape_of(u) != geom.image())
    throw DimensionError("object shape " + to_string(shape_of(u)) + " does not match geometry " +
                         to_string(geom.image()));
  std::vector<ComplexField> frames;
  frames.reserve(static_cast<std::size_t>(geom.positions()));
  for (Index j = 0; j < geom.positions(); ++j) {
    ComplexField w = exit_wave(probe, u, geom, j);
    unitary_dft2_inplace(w, Direction::forward);
    frames.push_back(std::move(w));
  }
  return frames;
}

/// sum_j S_j^T (conj(w) . F^*(z_j)).
inline ComplexField ptycho_adjoint(const ComplexField& probe, const std::vector<ComplexField>& z,
                                   const ScanGeometry& geom) {
  check_probe(probe, geom);
  if (static_cast<Index>(z.size()) != geom.positions())
    throw DimensionError("frame count does not match scan positions");
  ComplexField out = ComplexField::Zero(geom.image().rows, geom.image().cols);
  const ComplexField conj_probe = probe.conjugate();
  for (Index j = 0; j < geom.positions(); ++j) {
    const auto& frame = z[static_cast<std::size_t>(j)];
    if (shape_of(frame) != geom.patch())
      throw DimensionError("frame shape does not match probe");
    ComplexField back = frame;
    unitary_dft2_inplace(back, Direction::inverse);
    embed_patch_add(out, conj_probe * back, geom.offset(j));
  }
  return out;
}

/// sum_j S_j^T |w|^2, the illumination weight of every object pixel.
inline RealField object_denominator(const ComplexField& probe, const ScanGeometry& geom) {
  check_probe(probe, geom);
  RealField out = RealField::Zero(geom.image().rows, geom.image().cols);
  const RealField weight = probe.abs2();
  for (const auto& o : geom.offsets())
    embed_patch_add(out, weight, o);
  return out;
}

/// sum_{l,j} |S_j Y_l|^2 over a pixels-by-energies contrast stack.
inline RealField probe_denominator(const Eigen::MatrixXcd& contrast, const ScanGeometry& geom) {
  const Shape patch = geom.patch();
  const Shape image = geom.image();
  if (contrast.cols() < 1 || contrast.rows() != image.size())
    throw DimensionError("contrast stack does not match geometry");
  RealField out = RealField::Zero(patch.rows, patch.cols);
  for (Index l = 0; l < contrast.cols(); ++l) {
    const auto y = channel_image(contrast, l, image);
    for (const auto& o : geom.offsets())
      out += y.block(o.row, o.col, patch.rows, patch.cols).abs2();
  }
  return out;
}

/// |A(w, u)|^2 per scan position.
template <typename Derived>
std::vector<RealField> intensities(const ComplexField& probe, const Eigen::ArrayBase<Derived>& u,
                                   const ScanGeometry& geom) {
  auto frames = ptycho_forward(probe, u, geom);
  std::vector<RealField> out;
  out.reserve(frames.size());
  for (const auto& f : frames)
    out.push_back(f.abs2());
  return out;
}

} // namespace spectro
