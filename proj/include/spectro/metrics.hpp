#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spectro/errors.hpp"
#include "spectro/forward_model.hpp"

namespace spectro {

inline constexpr double kSnrCapDb = 300.0;

/// Which norm divides the squared error in `snr`.
enum class SnrDenominator {
  reconstruction,  // |X|^2 with X the first argument (the literal formula)
  truth,           // |X_g|^2
};

/// -10 log10(|X - X_g|^2 / |X|^2), capped at +300 dB for a zero error.
template <typename A, typename B>
double snr(const Eigen::DenseBase<A>& x, const Eigen::DenseBase<B>& truth,
           SnrDenominator denominator = SnrDenominator::reconstruction) {
  if (x.rows() != truth.rows() || x.cols() != truth.cols())
    throw DimensionError("snr: shapes differ");
  const double err = (x.derived() - truth.derived()).matrix().squaredNorm();
  const double ref = denominator == SnrDenominator::reconstruction
                         ? x.derived().matrix().squaredNorm()
                         : truth.derived().matrix().squaredNorm();
  if (!(ref > 0.0))
    throw UndefinedMetric("snr: reference norm is zero");
  if (err == 0.0)
    return kSnrCapDb;
  return std::min(kSnrCapDb, -10.0 * std::log10(err / ref));
}

/// |X_k - X_{k-1}| / |X_k|.
template <typename A, typename B>
double successive_error(const Eigen::DenseBase<A>& current, const Eigen::DenseBase<B>& previous) {
  const double norm = current.derived().matrix().norm();
  if (!(norm > 0.0))
    throw UndefinedMetric("successive_error: current iterate is zero");
  return (current.derived() - previous.derived()).matrix().norm() / norm;
}

/// SNR of noisy detector data against its noise-free expectation, normalised by
/// the noisy data.
inline double data_snr(const MeasurementSet& clean, const MeasurementSet& noisy) {
  if (clean.frames.size() != noisy.frames.size())
    throw DimensionError("data_snr: frame counts differ");
  double err = 0.0, ref = 0.0;
  for (std::size_t k = 0; k < clean.frames.size(); ++k) {
    if (shape_of(clean.frames[k]) != shape_of(noisy.frames[k]))
      throw DimensionError("data_snr: frame shapes differ");
    err += (noisy.frames[k] - clean.frames[k]).square().sum();
    ref += noisy.frames[k].square().sum();
  }
  if (!(ref > 0.0))
    throw UndefinedMetric("data_snr: noisy data is identically zero");
  if (err == 0.0)
    return kSnrCapDb;
  return std::min(kSnrCapDb, -10.0 * std::log10(err / ref));
}

struct ConvergenceTrace {
  std::vector<double> successive_error;
  std::vector<double> objective;
  std::vector<double> seconds;

  std::size_t size() const { return successive_error.size(); }
};

inline void write_trace_csv(const std::string& path, const ConvergenceTrace& trace) {
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write " + path);
  out << "iteration,successive_error,objective,seconds\n" << std::setprecision(17);
  for (std::size_t k = 0; k < trace.size(); ++k)
    out << k + 1 << ',' << trace.successive_error[k] << ',' << trace.objective[k] << ','
        << trace.seconds[k] << '\n';
}

} // namespace spectro
