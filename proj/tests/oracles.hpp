#pragma once

// Slow reference implementations used by the unit tests and the acceptance
// binary. None of them shares code with the library routine it checks.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "spectro/field.hpp"
#include "spectro/forward_model.hpp"
#include "spectro/solvers.hpp"

namespace oracle {

using spectro::cd;
using spectro::ComplexField;
using spectro::Index;
using spectro::RealField;

/// Direct O(n^4) unitary 2-D DFT.
inline ComplexField naive_dft2(const ComplexField& u, bool inverse) {
  const Index m = u.rows(), n = u.cols();
  const double sign = inverse ? 1.0 : -1.0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(m * n));
  ComplexField out(m, n);
  for (Index k = 0; k < m; ++k)
    for (Index l = 0; l < n; ++l) {
      cd acc = 0.0;
      for (Index r = 0; r < m; ++r)
        for (Index c = 0; c < n; ++c) {
          const double phase = sign * 2.0 * std::numbers::pi *
                               (static_cast<double>(k * r) / static_cast<double>(m) +
                                static_cast<double>(l * c) / static_cast<double>(n));
          acc += u(r, c) * std::polar(1.0, phase);
        }
      out(k, l) = scale * acc;
    }
  return out;
}

inline ComplexField random_complex(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ComplexField f(rows, cols);
  for (Index p = 0; p < f.size(); ++p)
    f(p) = {n(rng), n(rng)};
  return f;
}

inline cd inner(const ComplexField& a, const ComplexField& b) {
  return (a.conjugate() * b).sum();
}

/// Minimises g(rho) = 1/2 (rho^2 - I log rho^2) + lambda/2 (rho - a)^2 by golden
/// section, comparing points through the exact difference g(p) - g(q) to keep
/// precision near the minimum, and returns rho * zhat / |zhat|.
inline cd poisson_prox_golden(cd zhat, double intensity, double lambda) {
  const double a = std::abs(zhat);
  // g(p) - g(q), rearranged so that it stays accurate when p ~ q.
  auto diff = [&](double p, double q) {
    const double d = p - q;
    double log_term = 0.0;
    if (intensity > 0.0)
      log_term = intensity * std::log1p(d / q);
    return d * (0.5 * (1.0 + lambda) * (p + q) - lambda * a) - log_term;
  };
  // The minimiser lies in (0, a + sqrt(I)].
  double lo = 0.0;
  double hi = a + std::sqrt(intensity) + 1.0;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - invphi * (hi - lo);
  double x2 = lo + invphi * (hi - lo);
  for (int it = 0; it < 400 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const bool take_left = diff(x1, x2) < 0.0;
    if (take_left) {
      hi = x2;
      x2 = x1;
      x1 = hi - invphi * (hi - lo);
    } else {
      lo = x1;
      x1 = x2;
      x2 = lo + invphi * (hi - lo);
    }
  }
  const double rho = 0.5 * (lo + hi);
  return a > 0.0 ? zhat * (rho / a) : cd{rho, 0.0};
}

/// nu TV(u) + 1/2 |u - u0|^2 on a 3x3 image with the library's discretisation
/// (forward differences, Neumann boundary), written out independently.
inline double tv3_objective(const std::array<double, 9>& u, const std::array<double, 9>& u0, double nu) {
  double tv = 0.0, fit = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const double v = u[static_cast<std::size_t>(3 * r + c)];
      const double gx = c < 2 ? u[static_cast<std::size_t>(3 * r + c + 1)] - v : 0.0;
      const double gy = r < 2 ? u[static_cast<std::size_t>(3 * (r + 1) + c)] - v : 0.0;
      tv += std::sqrt(gx * gx + gy * gy);
      const double e = v - u0[static_cast<std::size_t>(3 * r + c)];
      fit += e * e;
    }
  return nu * tv + 0.5 * fit;
}

/// Grid-search minimiser of the 3x3 TV objective: exhaustive search over a
/// 5-level lattice spanning [min u0, max u0], then pattern search over the
/// 3^9 moves {-h, 0, h}^9 with h halved whenever no move improves.
inline double tv3_grid_minimum(const std::array<double, 9>& u0, double nu,
                               std::array<double, 9>* argmin = nullptr) {
  double lo = u0[0], hi = u0[0];
  for (double v : u0) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::array<double, 9> best = u0;
  double best_val = tv3_objective(u0, u0, nu);
  constexpr int levels = 5;
  std::array<int, 9> idx{};
  std::array<double, 9> cand{};
  const double span = hi - lo;
  for (long code = 0; code < 1953125; ++code) {  // 5^9
    long rem = code;
    for (int k = 0; k < 9; ++k) {
      idx[static_cast<std::size_t>(k)] = static_cast<int>(rem % levels);
      rem /= levels;
      cand[static_cast<std::size_t>(k)] = lo + span * idx[static_cast<std::size_t>(k)] / (levels - 1.0);
    }
    const double v = tv3_objective(cand, u0, nu);
    if (v < best_val) {
      best_val = v;
      best = cand;
    }
  }
  double h = std::max(span, 1e-3) / (levels - 1.0);
  while (h > 1e-9) {
    bool improved = true;
    while (improved) {
      improved = false;
      std::array<double, 9> local_best = best;
      double local_val = best_val;
      for (int code = 0; code < 19683; ++code) {  // 3^9
        int rem = code;
        for (int k = 0; k < 9; ++k) {
          cand[static_cast<std::size_t>(k)] = best[static_cast<std::size_t>(k)] + h * ((rem % 3) - 1);
          rem /= 3;
        }
        const double v = tv3_objective(cand, u0, nu);
        if (v < local_val - 1e-15) {
          local_val = v;
          local_best = cand;
        }
      }
      if (local_val < best_val) {
        best_val = local_val;
        best = local_best;
        improved = true;
      }
    }
    h *= 0.5;
  }
  if (argmin)
    *argmin = best;
  return best_val;
}

/// Column-major vec of an N x L matrix.
template <typename Matrix>
Eigen::Matrix<typename Matrix::Scalar, Eigen::Dynamic, 1> vec(const Matrix& m) {
  return Eigen::Map<const Eigen::Matrix<typename Matrix::Scalar, Eigen::Dynamic, 1>>(m.data(), m.size());
}

/// Dense Kronecker form of diag(d) Y + beta Y M = rhs, solved by LU.
template <typename Matrix>
Matrix dense_sylvester(const Eigen::VectorXd& d, double beta, const Matrix& m, const Matrix& rhs) {
  using Scalar = typename Matrix::Scalar;
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index n = d.size(), l = m.rows();
  Dense big = Dense::Zero(n * l, n * l);
  for (Index a = 0; a < l; ++a)
    for (Index b = 0; b < l; ++b)
      for (Index p = 0; p < n; ++p)
        big(a * n + p, b * n + p) += beta * m(b, a);  // (M^T kron I)
  for (Index a = 0; a < l; ++a)
    for (Index p = 0; p < n; ++p)
      big(a * n + p, a * n + p) += d(p);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x = big.partialPivLu().solve(vec(rhs));
  return Eigen::Map<const Matrix>(x.data(), n, l);
}

/// Relative residual |diag(d) Y + beta Y M - rhs| / |rhs|.
template <typename Matrix>
double sylvester_residual(const Eigen::VectorXd& d, double beta, const Matrix& m, const Matrix& rhs,
                          const Matrix& y) {
  const Matrix lhs = d.asDiagonal() * y + beta * y * m;
  return (lhs - rhs).norm() / rhs.norm();
}

/// A small random solver state with every field populated, for the
/// contrast-update oracles.
struct SylvesterInstance {
  spectro::ScanGeometry geom;
  spectro::Dictionary dict;
  spectro::SolverState state;
  spectro::FrameStack back;  // F^*(Z + Lambda)
  double lambda = 0.7;
  double beta = 0.3;
};

inline SylvesterInstance make_sylvester_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  SylvesterInstance s;
  s.geom = spectro::ScanGeometry({8, 8}, {4, 4}, {{0, 0}, {0, 2}, {0, 4}, {2, 0}, {2, 3}, {4, 4}, {4, 1}});
  const Index energies = 3, comps = 2, pixels = 64;
  s.dict.spectra.resize(comps, energies);
  for (Index c = 0; c < comps; ++c)
    for (Index l = 0; l < energies; ++l)
      s.dict.spectra(c, l) = {0.5 + n(rng) * 0.3, n(rng) * 0.2};
  s.state.probe = spectro::probe_projection(random_complex(4, 4, rng));
  s.state.thickness = Eigen::MatrixXd::NullaryExpr(pixels, comps, [&] { return std::abs(n(rng)); });
  s.state.contrast = Eigen::MatrixXcd::NullaryExpr(pixels, energies, [&] { return cd{1.0 + 0.2 * n(rng), 0.2 * n(rng)}; });
  s.state.gamma = Eigen::MatrixXcd::NullaryExpr(pixels, comps, [&] { return cd{n(rng), n(rng)}; });
  s.state.gamma_real = Eigen::MatrixXd::NullaryExpr(pixels, comps, [&] { return n(rng); });
  s.state.z = spectro::FrameStack(energies, s.geom.positions(), s.geom.patch());
  s.state.multiplier = s.state.z;
  for (auto& f : s.state.z.frames)
    f = random_complex(4, 4, rng);
  for (auto& f : s.state.multiplier.frames)
    f = random_complex(4, 4, rng);
  s.back = spectro::backpropagated_frames(s.state);
  return s;
}

/// Right-hand side and diagonal of the complete-dictionary normal equations,
/// assembled from ptycho_adjoint rather than the solver's own helpers.
struct NormalEquations {
  Eigen::VectorXd diagonal;
  Eigen::MatrixXcd rhs;
  Eigen::MatrixXcd m;
};

inline void q_matrix(const SylvesterInstance& s, Eigen::MatrixXcd& q) {
  const Index energies = s.state.contrast.cols();
  q.resize(s.geom.image().size(), energies);
  for (Index l = 0; l < energies; ++l) {
    std::vector<ComplexField> frames;
    for (Index j = 0; j < s.geom.positions(); ++j)
      frames.push_back(s.state.z.at(l, j) + s.state.multiplier.at(l, j));
    const ComplexField ql = spectro::ptycho_adjoint(s.state.probe, frames, s.geom);
    for (Index p = 0; p < ql.size(); ++p)
      q(p, l) = ql(p);  // row-major image flattening matches channel_image
  }
}

inline Eigen::VectorXd normal_diagonal(const SylvesterInstance& s, double gamma2_factor, double* gamma2) {
  const RealField od = spectro::object_denominator(s.state.probe, s.geom);
  *gamma2 = gamma2_factor * s.lambda * od.maxCoeff();
  Eigen::VectorXd d(od.size());
  for (Index p = 0; p < od.size(); ++p)
    d(p) = s.lambda * od(p) + *gamma2;
  return d;
}

inline NormalEquations complete_normal_equations(const SylvesterInstance& s, const Eigen::MatrixXcd& pinv,
                                                 double gamma2_factor) {
  NormalEquations e;
  double gamma2 = 0.0;
  e.diagonal = normal_diagonal(s, gamma2_factor, &gamma2);
  Eigen::MatrixXcd q;
  q_matrix(s, q);
  Eigen::MatrixXcd t = s.state.gamma + s.state.thickness.cast<cd>() +
                       Eigen::MatrixXcd::Ones(q.rows(), 1) * pinv.colwise().sum();
  e.rhs = s.lambda * q + gamma2 * s.state.contrast + s.beta * t * pinv.adjoint();
  e.m = pinv * pinv.adjoint();
  return e;
}

struct RealNormalEquations {
  Eigen::VectorXd diagonal;
  Eigen::MatrixXd rhs;
  Eigen::MatrixXd m;
};

inline RealNormalEquations real_normal_equations(const SylvesterInstance& s, const Eigen::MatrixXd& pinv,
                                                 double gamma2_factor) {
  RealNormalEquations e;
  double gamma2 = 0.0;
  e.diagonal = normal_diagonal(s, gamma2_factor, &gamma2);
  Eigen::MatrixXcd q;
  q_matrix(s, q);
  Eigen::MatrixXd t = s.state.gamma_real + s.state.thickness +
                      Eigen::MatrixXd::Ones(q.rows(), 1) * pinv.colwise().sum();
  e.rhs = s.lambda * q.real() + gamma2 * s.state.contrast.real() + s.beta * t * pinv.transpose();
  e.m = pinv * pinv.transpose();
  return e;
}

} // namespace oracle
