#pragma once

// Proximal maps and projections used by the ADMM subproblems.

#include <cmath>
#include <vector>

#include "spectro/field.hpp"
#include "spectro/forward_model.hpp"

namespace spectro {

struct TvConfig {
  int inner_iterations = 20;
  double dual_step = 0.125;  // in (0, 1/4]
};

/// Dual variable of the TV prox, kept between calls to warm-start it.
struct TvDual {
  RealField px;
  RealField py;
};

namespace detail {

// Forward differences with a zero last difference (Neumann boundary).
inline void gradient(const RealField& u, RealField& gx, RealField& gy) {
  const Index r = u.rows(), c = u.cols();
  gx.setZero(r, c);
  gy.setZero(r, c);
  if (c > 1)
    gx.leftCols(c - 1) = u.rightCols(c - 1) - u.leftCols(c - 1);
  if (r > 1)
    gy.topRows(r - 1) = u.bottomRows(r - 1) - u.topRows(r - 1);
}

// Negative adjoint of `gradient`.
inline void divergence(const RealField& px, const RealField& py, RealField& div) {
  const Index r = px.rows(), c = px.cols();
  div.setZero(r, c);
  if (c > 1) {
    div.leftCols(c - 1) += px.leftCols(c - 1);
    div.rightCols(c - 1) -= px.leftCols(c - 1);
  }
  if (r > 1) {
    div.topRows(r - 1) += py.topRows(r - 1);
    div.bottomRows(r - 1) -= py.topRows(r - 1);
  }
}

} // namespace detail

/// Isotropic total variation with forward differences and Neumann boundary.
inline double total_variation(const RealField& u) {
  RealField gx, gy;
  detail::gradient(u, gx, gy);
  return (gx.square() + gy.square()).sqrt().sum();
}

inline double tv_objective(const RealField& u, const RealField& u0, double nu) {
  return nu * total_variation(u) + 0.5 * (u - u0).square().sum();
}

/// argmin_u nu TV(u) + 1/2 |u - u0|^2 by projected gradient on the dual
/// (u = u0 - nu div p, |p| <= 1 pointwise). Never returns a point whose
/// objective exceeds that of u0.
inline RealField tv_prox(const RealField& u0, double nu, const TvConfig& cfg,
                         TvDual* warm = nullptr) {
  if (nu < 0.0)
    throw ParameterError("tv_prox: negative weight");
  if (cfg.inner_iterations < 1 || !(cfg.dual_step > 0.0) || cfg.dual_step > 0.25)
    throw ParameterError("tv_prox: inner_iterations >= 1 and dual_step in (0, 0.25] required");
  if (nu == 0.0 || u0.size() == 0)
    return u0;

  TvDual local;
  TvDual& dual = warm ? *warm : local;
  if (shape_of(dual.px) != shape_of(u0)) {
    dual.px.setZero(u0.rows(), u0.cols());
    dual.py.setZero(u0.rows(), u0.cols());
  }

  RealField div, gx, gy;
  const double inv_nu = 1.0 / nu;
  for (int it = 0; it < cfg.inner_iterations; ++it) {
    detail::divergence(dual.px, dual.py, div);
    detail::gradient(div - u0 * inv_nu, gx, gy);
    dual.px += cfg.dual_step * gx;
    dual.py += cfg.dual_step * gy;
    const RealField scale = (dual.px.square() + dual.py.square()).sqrt().max(1.0);
    dual.px /= scale;
    dual.py /= scale;
  }
  detail::divergence(dual.px, dual.py, div);
  RealField u = u0 - nu * div;
  if (tv_objective(u, u0, nu) > tv_objective(u0, u0, nu))
    return u0;
  return u;
}

/// Minimiser over z of 1/2 (|z|^2 - I log|z|^2) + lambda/2 |z - zhat|^2.
inline cd poisson_prox(cd zhat, double intensity, double lambda) {
  const double a = std::abs(zhat);
  const double rho =
      (std::sqrt(4.0 * (1.0 + lambda) * intensity + lambda * lambda * a * a) + lambda * a) /
      (2.0 * (1.0 + lambda));
  if (a > 0.0)
    return zhat * (rho / a);
  // The phase is free when zhat = 0; pick the real axis.
  return {rho, 0.0};
}

inline void check_intensities(const MeasurementSet& measured) {
  for (const auto& f : measured.frames)
    if (!(f >= 0.0).all() || !all_finite(f))
      throw DataError("measured intensities must be finite and non-negative");
}

/// Pointwise Poisson prox of every frame.
inline FrameStack poisson_prox(const FrameStack& zhat, const MeasurementSet& measured,
                               double lambda) {
  if (!(lambda > 0.0))
    throw ParameterError("poisson_prox: lambda must be positive");
  if (zhat.frames.size() != measured.frames.size())
    throw DimensionError("poisson_prox: frame counts differ");
  check_intensities(measured);
  FrameStack out = zhat;
  for (std::size_t k = 0; k < out.frames.size(); ++k) {
    auto& z = out.frames[k];
    const auto& in = measured.frames[k];
    if (shape_of(z) != shape_of(in))
      throw DimensionError("poisson_prox: frame shapes differ");
    for (Index p = 0; p < z.size(); ++p)
      z(p) = poisson_prox(z(p), in(p), lambda);
  }
  return out;
}

/// w / |w| with the Frobenius norm over all pixels.
inline ComplexField probe_projection(const ComplexField& probe) {
  const double norm = probe.matrix().norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DegenerateProbe("probe has zero or non-finite norm");
  return probe / norm;
}

template <typename Derived>
auto nonneg_projection(const Eigen::DenseBase<Derived>& x) {
  return x.derived().cwiseMax(0.0).eval();
}

} // namespace spectro
