#pragma once

// ADMM solvers for thickness maps from multi-energy ptychography data with an
// unknown probe: the complete-dictionary solver (SPA), the absorption-only
// dictionary solver (SPiA), and the two-step baseline (independent per-energy
// ptychography followed by dictionary least squares).
//
// Variables, all images flattened row-major:
//   probe  w        patch-sized, |w| = 1
//   thickness X     N x C, X >= 0
//   contrast Y      N x L, linearised as Y = 1 + X D
//   Z, Lambda       L x J detector frames and their multipliers
//   Gamma           N x C multiplier of X = (Y - 1) pinv(D)

#include <chrono>
#include <cmath>
#include <optional>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "spectro/dictionary.hpp"
#include "spectro/fft.hpp"
#include "spectro/forward_model.hpp"
#include "spectro/metrics.hpp"
#include "spectro/regularizers.hpp"

namespace spectro {

struct SolverConfig {
  double lambda = 1.0;
  /// Unset: 0.1 * lambda * mean(object_denominator) of the initial probe.
  std::optional<double> beta;
  double delta = 0.0;
  int max_iterations = 300;
  /// Stop once the successive thickness error drops below this (0 disables).
  double stop_tolerance = 0.0;
  TvConfig tv;
  double gamma1_factor = 1e-3;
  double gamma2_factor = 1e-3;
};

struct InitOptions {
  /// Start from this probe instead of the modulus seed.
  std::optional<ComplexField> probe;
  /// Circularly shift the modulus seed by half a window so that its peak sits
  /// in the middle of the patch rather than at pixel (0, 0).
  bool center_seed = true;
};

struct SolverState {
  ComplexField probe;
  Eigen::MatrixXd thickness;
  Eigen::MatrixXcd contrast;
  FrameStack z;
  FrameStack multiplier;        // Lambda
  Eigen::MatrixXcd gamma;       // complete dictionary
  Eigen::MatrixXd gamma_real;   // absorption-only dictionary
  std::vector<TvDual> tv_duals; // warm starts, one per component
  int iteration = 0;
  ConvergenceTrace trace;
};

struct Reconstruction {
  Eigen::MatrixXd thickness;
  ComplexField probe;
  Eigen::MatrixXcd contrast;
  ConvergenceTrace trace;
  int iterations = 0;
};

template <typename Factors>
inline constexpr bool is_complete_v = std::is_same_v<Factors, DictionaryFactors>;

namespace detail {

inline void check_measurements(const MeasurementSet& measured, const ScanGeometry& geom) {
  if (measured.energies < 1 || measured.positions != geom.positions() ||
      static_cast<Index>(measured.frames.size()) != measured.energies * measured.positions)
    throw DimensionError("measurement set does not match the scan geometry");
  for (const auto& f : measured.frames)
    if (shape_of(f) != geom.patch())
      throw DimensionError("measurement frame shape does not match the probe");
  check_intensities(measured);
}

template <typename Factors>
void check_factors(const Factors& f, Index energies) {
  if (f.pinv.rows() != energies || f.eigenvectors.rows() != energies ||
      f.eigenvalues.size() != energies)
    throw DimensionError("dictionary factors do not match the number of energies");
}

inline void check_scale(double v, const char* what, int iteration) {
  if (!std::isfinite(v) || v > 1e12)
    throw DivergenceError(iteration, std::string("solver diverged: ") + what +
                                         " norm is non-finite or above 1e12 at iteration " +
                                         std::to_string(iteration));
}

} // namespace detail

/// F^*(Z_{l,j} + Lambda_{l,j}) for every frame.
inline FrameStack backpropagated_frames(const SolverState& s) {
  FrameStack w = s.z;
  for (std::size_t k = 0; k < w.frames.size(); ++k) {
    w.frames[k] += s.multiplier.frames[k];
    unitary_dft2_inplace(w.frames[k], Direction::inverse);
  }
  return w;
}

/// Frames A(w, Y_l) for every energy.
inline FrameStack forward_frames(const ComplexField& probe, const Eigen::MatrixXcd& contrast,
                                 const ScanGeometry& geom) {
  FrameStack out(contrast.cols(), geom.positions(), geom.patch());
  for (Index l = 0; l < contrast.cols(); ++l) {
    const auto y = channel_image(contrast, l, geom.image());
    auto frames = ptycho_forward(probe, y, geom);
    for (Index j = 0; j < geom.positions(); ++j)
      out.at(l, j) = std::move(frames[static_cast<std::size_t>(j)]);
  }
  return out;
}

template <typename Factors>
SolverState initialize(const MeasurementSet& measured, const Factors& factors,
                       const ScanGeometry& geom, const InitOptions& opts = {}) {
  detail::check_measurements(measured, geom);
  detail::check_factors(factors, measured.energies);
  const Index n = geom.image().size();
  const Index energies = measured.energies;
  const Index comps = factors.pinv.cols();

  SolverState s;
  if (opts.probe) {
    check_probe(*opts.probe, geom);
    s.probe = probe_projection(*opts.probe);
  } else {
    ComplexField mean_modulus = ComplexField::Zero(geom.patch().rows, geom.patch().cols);
    for (const auto& f : measured.frames)
      mean_modulus += f.sqrt().cast<cd>();
    mean_modulus /= static_cast<double>(measured.frames.size());
    if (!(mean_modulus.abs().maxCoeff() > 0.0))
      throw DegenerateProbe("all measurements are zero; cannot seed the probe");
    ComplexField seed = unitary_dft2(std::move(mean_modulus), Direction::inverse);
    if (opts.center_seed)
      seed = fftshift(seed);
    s.probe = probe_projection(seed);
  }
  s.contrast = Eigen::MatrixXcd::Ones(n, energies);
  s.thickness = Eigen::MatrixXd::Zero(n, comps);
  s.z = forward_frames(s.probe, s.contrast, geom);
  s.multiplier = FrameStack(energies, geom.positions(), geom.patch());
  if constexpr (is_complete_v<Factors>)
    s.gamma = Eigen::MatrixXcd::Zero(n, comps);
  else
    s.gamma_real = Eigen::MatrixXd::Zero(n, comps);
  s.tv_duals.resize(static_cast<std::size_t>(comps));
  return s;
}

/// Penalty beta used when the configuration leaves it unset.
inline double default_beta(double lambda, const ComplexField& probe, const ScanGeometry& geom) {
  return 0.1 * lambda * object_denominator(probe, geom).mean();
}

inline SolverConfig resolve_config(SolverConfig cfg, const SolverState& s,
                                   const ScanGeometry& geom) {
  if (!(cfg.lambda > 0.0))
    throw ParameterError("lambda must be positive");
  if (!cfg.beta)
    cfg.beta = default_beta(cfg.lambda, s.probe, geom);
  if (*cfg.beta < 0.0 || cfg.delta < 0.0)
    throw ParameterError("beta and delta must be non-negative");
  if (cfg.delta > 0.0 && !(*cfg.beta > 0.0))
    throw ParameterError("TV regularisation needs beta > 0");
  return cfg;
}

// --- subproblems ------------------------------------------------------------

/// One preconditioned gradient step on the probe, before normalisation, given
/// the backpropagated frames F^*(Z + Lambda).
inline ComplexField probe_step(const SolverState& s, const FrameStack& back, const ScanGeometry& geom,
                               double gamma1_factor) {
  const RealField den = probe_denominator(s.contrast, geom);
  const double gamma1 = gamma1_factor * den.maxCoeff();
  if (!(den.maxCoeff() + gamma1 > 0.0))
    throw GeometryError("probe update: contrast is zero under every scan position");
  ComplexField num = gamma1 * s.probe;
  const Shape patch = geom.patch();
  for (Index l = 0; l < s.contrast.cols(); ++l) {
    const auto y = channel_image(s.contrast, l, geom.image());
    for (Index j = 0; j < geom.positions(); ++j) {
      const Offset o = geom.offset(j);
      num += back.at(l, j) * y.block(o.row, o.col, patch.rows, patch.cols).conjugate();
    }
  }
  return num / (den + gamma1).cast<cd>();
}

/// probe_step followed by projection onto the unit sphere.
inline ComplexField probe_update(const SolverState& s, const FrameStack& back,
                                 const ScanGeometry& geom, double gamma1_factor) {
  return probe_projection(probe_step(s, back, geom, gamma1_factor));
}

inline ComplexField probe_update(const SolverState& s, const ScanGeometry& geom,
                                 double gamma1_factor) {
  return probe_update(s, backpropagated_frames(s), geom, gamma1_factor);
}

namespace detail {

inline Eigen::MatrixXd denoise_columns(const Eigen::MatrixXd& target, double nu, const TvConfig& tv,
                                       Shape image, std::vector<TvDual>* duals) {
  Eigen::MatrixXd x(target.rows(), target.cols());
  for (Index c = 0; c < target.cols(); ++c) {
    if (nu > 0.0) {
      const RealField u0 = channel_image(target, c, image);
      TvDual* warm = duals ? &(*duals)[static_cast<std::size_t>(c)] : nullptr;
      channel_image(x, c, image) = tv_prox(u0, nu, tv, warm).cwiseMax(0.0);
    } else {
      x.col(c) = target.col(c).cwiseMax(0.0);
    }
  }
  return x;
}

} // namespace detail

/// X_c = max(0, Denoise_nu(Re((Y - 1) pinv - Gamma)_c)); nu = delta / beta.
inline Eigen::MatrixXd thickness_update_spa(const Eigen::MatrixXcd& contrast,
                                            const Eigen::MatrixXcd& gamma,
                                            const Eigen::MatrixXcd& pinv, double nu,
                                            const TvConfig& tv, Shape image,
                                            std::vector<TvDual>* duals = nullptr) {
  const Eigen::MatrixXd target =
      ((contrast.array() - 1.0).matrix() * pinv - gamma).real();
  return detail::denoise_columns(target, nu, tv, image, duals);
}

/// X_c = max(0, Denoise_nu((Re(Y - 1) pinv_r - Gamma_r)_c)).
inline Eigen::MatrixXd thickness_update_spia(const Eigen::MatrixXcd& contrast,
                                             const Eigen::MatrixXd& gamma_real,
                                             const Eigen::MatrixXd& pinv_real, double nu,
                                             const TvConfig& tv, Shape image,
                                             std::vector<TvDual>* duals = nullptr) {
  const Eigen::MatrixXd target =
      (contrast.real().array() - 1.0).matrix() * pinv_real - gamma_real;
  return detail::denoise_columns(target, nu, tv, image, duals);
}

/// Q_l = sum_j S_j^T (conj(w) . F^*(Lambda_{l,j} + Z_{l,j})) as an N x L matrix.
inline Eigen::MatrixXcd adjoint_stack(const ComplexField& probe, const FrameStack& back,
                                      const ScanGeometry& geom) {
  const Shape image = geom.image();
  const Shape patch = geom.patch();
  Eigen::MatrixXcd q = Eigen::MatrixXcd::Zero(image.size(), back.energies);
  const ComplexField conj_probe = probe.conjugate();
  for (Index l = 0; l < back.energies; ++l) {
    auto ql = channel_image(q, l, image);
    for (Index j = 0; j < geom.positions(); ++j) {
      const Offset o = geom.offset(j);
      ql.block(o.row, o.col, patch.rows, patch.cols) += conj_probe * back.at(l, j);
    }
  }
  return q;
}

/// Closed-form solution of the Sylvester system
///   diag(lambda * objden + gamma2) Y + beta Y M = rhs,   M = V diag(S) V^*.
template <typename Matrix>
Matrix sylvester_diagonal_solve(const Eigen::VectorXd& diagonal, double beta,
                                const Matrix& eigenvectors, const Eigen::VectorXd& eigenvalues,
                                const Matrix& rhs) {
  Matrix rotated = rhs * eigenvectors;
  for (Index l = 0; l < rotated.cols(); ++l)
    rotated.col(l).array() /= (diagonal.array() + beta * eigenvalues(l));
  return rotated * eigenvectors.adjoint();
}

/// Scalars shared by both contrast updates.
struct ContrastWeights {
  Eigen::VectorXd diagonal;  // lambda * objden + gamma2, per pixel
  double gamma2 = 0.0;
};

inline ContrastWeights contrast_weights(const ComplexField& probe, const ScanGeometry& geom,
                                        double lambda, double gamma2_factor) {
  const RealField objden = object_denominator(probe, geom);
  ContrastWeights w;
  w.gamma2 = gamma2_factor * lambda * objden.maxCoeff();
  w.diagonal = (lambda * Eigen::Map<const Eigen::VectorXd>(objden.data(), objden.size())).array() +
               w.gamma2;
  return w;
}

/// Y-update with the complete dictionary.
inline Eigen::MatrixXcd contrast_update_spa(const SolverState& s, const DictionaryFactors& f,
                                            const FrameStack& back, const ScanGeometry& geom,
                                            double lambda, double beta, double gamma2_factor) {
  const auto w = contrast_weights(s.probe, geom, lambda, gamma2_factor);
  const Eigen::MatrixXcd q = adjoint_stack(s.probe, back, geom);
  const Eigen::RowVectorXcd ones_pinv = f.pinv.colwise().sum();
  Eigen::MatrixXcd target = s.gamma + s.thickness.cast<cd>();
  target.rowwise() += ones_pinv;
  const Eigen::MatrixXcd rhs = lambda * q + w.gamma2 * s.contrast + beta * target * f.pinv.adjoint();
  return sylvester_diagonal_solve(w.diagonal, beta, f.eigenvectors, f.eigenvalues, rhs);
}

/// Y-update with the absorption-only dictionary: the real part solves the
/// Sylvester system in pinv_r, the imaginary part is decoupled.
inline Eigen::MatrixXcd contrast_update_spia(const SolverState& s, const RealDictionaryFactors& f,
                                             const FrameStack& back, const ScanGeometry& geom,
                                             double lambda, double beta, double gamma2_factor) {
  const auto w = contrast_weights(s.probe, geom, lambda, gamma2_factor);
  const Eigen::MatrixXcd q = adjoint_stack(s.probe, back, geom);
  const Eigen::RowVectorXd ones_pinv = f.pinv.colwise().sum();
  Eigen::MatrixXd target = s.gamma_real + s.thickness;
  target.rowwise() += ones_pinv;
  const Eigen::MatrixXd rhs_real =
      lambda * q.real() + w.gamma2 * s.contrast.real() + beta * target * f.pinv.transpose();
  const Eigen::MatrixXd re =
      sylvester_diagonal_solve(w.diagonal, beta, f.eigenvectors, f.eigenvalues, rhs_real);
  Eigen::MatrixXd im = lambda * q.imag() + w.gamma2 * s.contrast.imag();
  im.array().colwise() /= w.diagonal.array();
  Eigen::MatrixXcd y(re.rows(), re.cols());
  y.real() = re;
  y.imag() = im;
  return y;
}

inline Eigen::MatrixXcd contrast_update(const SolverState& s, const DictionaryFactors& f,
                                        const FrameStack& back, const ScanGeometry& geom,
                                        double lambda, double beta, double gamma2_factor) {
  return contrast_update_spa(s, f, back, geom, lambda, beta, gamma2_factor);
}

inline Eigen::MatrixXcd contrast_update(const SolverState& s, const RealDictionaryFactors& f,
                                        const FrameStack& back, const ScanGeometry& geom,
                                        double lambda, double beta, double gamma2_factor) {
  return contrast_update_spia(s, f, back, geom, lambda, beta, gamma2_factor);
}

/// Constraint residual X - (Y - 1) pinv in the multiplier's own field.
inline Eigen::MatrixXcd decomposition_residual(const Eigen::MatrixXd& x,
                                               const Eigen::MatrixXcd& contrast,
                                               const DictionaryFactors& f) {
  return x.cast<cd>() - (contrast.array() - 1.0).matrix() * f.pinv;
}

inline Eigen::MatrixXd decomposition_residual(const Eigen::MatrixXd& x,
                                              const Eigen::MatrixXcd& contrast,
                                              const RealDictionaryFactors& f) {
  return x - (contrast.real().array() - 1.0).matrix() * f.pinv;
}

/// Poisson negative log-likelihood sum_l G(A(w, Y_l); I_l) for the given frames.
inline double data_fidelity(const FrameStack& predicted, const MeasurementSet& measured) {
  double g = 0.0;
  for (std::size_t k = 0; k < predicted.frames.size(); ++k) {
    const RealField p = predicted.frames[k].abs2().max(1e-30);
    g += 0.5 * (p - measured.frames[k] * p.log()).sum();
  }
  return g;
}

inline double tv_energy(const Eigen::MatrixXd& x, Shape image) {
  double tv = 0.0;
  for (Index c = 0; c < x.cols(); ++c)
    tv += total_variation(RealField(channel_image(x, c, image)));
  return tv;
}

/// One sweep of probe, thickness, contrast, Z and multiplier updates.
/// `cfg.beta` must be resolved (see resolve_config).
template <typename Factors>
void admm_iteration(SolverState& s, const SolverConfig& cfg, const Factors& f,
                    const ScanGeometry& geom, const MeasurementSet& measured) {
  if (!cfg.beta)
    throw ParameterError("admm_iteration: beta is unresolved");
  const double beta = *cfg.beta;
  const double lambda = cfg.lambda;
  const int k = s.iteration + 1;
  const Shape image = geom.image();
  const double nu = cfg.delta > 0.0 ? cfg.delta / beta : 0.0;

  const FrameStack back = backpropagated_frames(s);
  s.probe = probe_update(s, back, geom, cfg.gamma1_factor);

  const Eigen::MatrixXd previous = s.thickness;
  if constexpr (is_complete_v<Factors>)
    s.thickness = thickness_update_spa(s.contrast, s.gamma, f.pinv, nu, cfg.tv, image, &s.tv_duals);
  else
    s.thickness =
        thickness_update_spia(s.contrast, s.gamma_real, f.pinv, nu, cfg.tv, image, &s.tv_duals);

  s.contrast = contrast_update(s, f, back, geom, lambda, beta, cfg.gamma2_factor);

  const FrameStack predicted = forward_frames(s.probe, s.contrast, geom);
  FrameStack zhat = predicted;
  for (std::size_t i = 0; i < zhat.frames.size(); ++i)
    zhat.frames[i] -= s.multiplier.frames[i];
  s.z = poisson_prox(zhat, measured, lambda);

  for (std::size_t i = 0; i < predicted.frames.size(); ++i)
    s.multiplier.frames[i] += s.z.frames[i] - predicted.frames[i];
  if constexpr (is_complete_v<Factors>)
    s.gamma += decomposition_residual(s.thickness, s.contrast, f);
  else
    s.gamma_real += decomposition_residual(s.thickness, s.contrast, f);

  const double xnorm = s.thickness.norm();
  s.trace.successive_error.push_back(xnorm > 0.0 ? successive_error(s.thickness, previous) : 1.0);
  s.trace.objective.push_back(cfg.delta * tv_energy(s.thickness, image) +
                              data_fidelity(predicted, measured));
  s.iteration = k;

  detail::check_scale(s.probe.matrix().norm(), "probe", k);
  detail::check_scale(xnorm, "thickness", k);
  detail::check_scale(s.contrast.norm(), "contrast", k);
  double frames_norm = 0.0;
  for (std::size_t i = 0; i < s.z.frames.size(); ++i)
    frames_norm += s.z.frames[i].abs2().sum() + s.multiplier.frames[i].abs2().sum();
  detail::check_scale(std::sqrt(frames_norm), "frame", k);
  detail::check_scale(is_complete_v<Factors> ? s.gamma.norm() : s.gamma_real.norm(), "multiplier",
                      k);
}

/// Iterates admm_iteration until max_iterations or until the successive
/// thickness error falls below cfg.stop_tolerance.
template <typename Factors>
Reconstruction run_solver(const MeasurementSet& measured, const Factors& f,
                          const ScanGeometry& geom, const SolverConfig& config,
                          const InitOptions& init = {}) {
  SolverState s = initialize(measured, f, geom, init);
  const SolverConfig cfg = resolve_config(config, s, geom);
  using clock = std::chrono::steady_clock;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto t0 = clock::now();
    admm_iteration(s, cfg, f, geom, measured);
    s.trace.seconds.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    const double err = s.trace.successive_error.back();
    if (cfg.stop_tolerance > 0.0 && s.thickness.norm() > 0.0 && err < cfg.stop_tolerance)
      break;
  }
  return {std::move(s.thickness), std::move(s.probe), std::move(s.contrast), std::move(s.trace),
          s.iteration};
}

// --- two-step baseline ------------------------------------------------------

struct PhaseAlignment {
  Eigen::VectorXcd aligned;
  double theta = 0.0;
  bool defined = true;
};

/// e^{-i theta} y with theta = arg <y, 1>, the rotation closest to all-ones.
/// When <y, 1> = 0 the rotation is undefined; theta is 0 and `defined` false.
template <typename Derived>
PhaseAlignment phase_align(const Eigen::MatrixBase<Derived>& y) {
  if (y.size() == 0 || y.cwiseAbs().maxCoeff() == 0.0)
    throw ParameterError("phase_align: contrast is identically zero");
  const cd inner = y.sum();
  PhaseAlignment out;
  if (std::abs(inner) == 0.0) {
    out.defined = false;
    out.aligned = y;
    return out;
  }
  out.theta = std::arg(inner);
  out.aligned = y * std::polar(1.0, -out.theta);
  return out;
}

struct BaselineResult {
  Eigen::MatrixXd thickness;
  Eigen::MatrixXcd contrast;  // stage-1 output, before alignment
  ComplexField probe;
  ConvergenceTrace trace;
  std::vector<double> phases;  // removed per energy
  int undefined_alignments = 0;
};

/// Dictionary least squares on a per-energy contrast stack, optionally phase
/// aligning each energy first.
inline Eigen::MatrixXd spectroscopy_fit(const Eigen::MatrixXcd& contrast, const DictionaryFactors& f,
                                        bool align, std::vector<double>* phases = nullptr,
                                        int* undefined = nullptr) {
  Eigen::MatrixXcd y = contrast;
  if (align) {
    for (Index l = 0; l < y.cols(); ++l) {
      auto a = phase_align(y.col(l));
      y.col(l) = a.aligned;
      if (phases)
        phases->push_back(a.theta);
      if (undefined && !a.defined)
        ++*undefined;
    }
  }
  return ((y.array() - 1.0).matrix() * f.pinv).real().cwiseMax(0.0);
}

inline Eigen::MatrixXd spectroscopy_fit(const Eigen::MatrixXcd& contrast,
                                        const RealDictionaryFactors& f, bool align,
                                        std::vector<double>* phases = nullptr,
                                        int* undefined = nullptr) {
  Eigen::MatrixXcd y = contrast;
  if (align) {
    for (Index l = 0; l < y.cols(); ++l) {
      auto a = phase_align(y.col(l));
      y.col(l) = a.aligned;
      if (phases)
        phases->push_back(a.theta);
      if (undefined && !a.defined)
        ++*undefined;
    }
  }
  return ((y.real().array() - 1.0).matrix() * f.pinv).cwiseMax(0.0);
}

/// Stage 1: the same ADMM machinery with beta = delta = 0, i.e. independent
/// blind ptychography per energy sharing one probe, for the full iteration
/// budget. Stage 2: phase alignment and dictionary least squares.
template <typename Factors>
BaselineResult two_step_baseline(const MeasurementSet& measured, const Factors& f,
                                 const ScanGeometry& geom, const SolverConfig& config,
                                 bool align = true, const InitOptions& init = {}) {
  SolverConfig cfg = config;
  cfg.beta = 0.0;
  cfg.delta = 0.0;
  cfg.stop_tolerance = 0.0;
  Reconstruction stage1 = run_solver(measured, f, geom, cfg, init);
  BaselineResult out;
  out.thickness = spectroscopy_fit(stage1.contrast, f, align, &out.phases, &out.undefined_alignments);
  out.contrast = std::move(stage1.contrast);
  out.probe = std::move(stage1.probe);
  out.trace = std::move(stage1.trace);
  return out;
}

} // namespace spectro
