#pragma once

// Synthetic experiments: focused probe, piecewise-constant thickness phantom,
// raster scan and photon-counting (Poisson) measurements.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "spectro/dictionary.hpp"
#include "spectro/fft.hpp"
#include "spectro/forward_model.hpp"
#include "spectro/metrics.hpp"
#include "spectro/regularizers.hpp"

namespace spectro {

enum class ProbeModel { zone_plate, gaussian };

struct SimulationSpec {
  Shape image{128, 128};
  Index probe_size = 32;
  double fwhm = 8.0;
  Index step = 16;
  double photon_scale = 1e5;
  /// When set, photon_scale is calibrated to reach this data SNR (dB).
  std::optional<double> target_data_snr;
  std::uint64_t seed = 1;
  Index energies = 5;
  Index components = 3;
  ProbeModel probe_model = ProbeModel::zone_plate;
  /// Upper bound for |X D| used to scale the phantom.
  double max_contrast = 0.5;
};

// --- probe ------------------------------------------------------------------

/// Full width at half maximum of |w| along the row through its peak, with
/// linear interpolation of the half-maximum crossings.
inline double measure_fwhm(const ComplexField& probe) {
  const RealField mag = probe.abs();
  Index pr = 0, pc = 0;
  const double peak = mag.maxCoeff(&pr, &pc);
  if (!(peak > 0.0))
    throw DegenerateProbe("measure_fwhm: zero probe");
  const double half = 0.5 * peak;
  auto crossing = [&](int dir) {
    Index c = pc;
    while (true) {
      const Index next = c + dir;
      if (next < 0 || next >= mag.cols())
        return static_cast<double>(c);
      if (mag(pr, next) < half) {
        const double a = mag(pr, c), b = mag(pr, next);
        return static_cast<double>(c) + dir * (a - half) / (a - b);
      }
      c = next;
    }
  };
  return crossing(+1) - crossing(-1);
}

namespace detail {

// Centred probe from a soft-edged circular pupil of radius `radius` (frequency
// pixels). The pupil is real and symmetric, so the probe is too.
inline ComplexField pupil_probe(Index n, double radius) {
  ComplexField pupil(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) {
      const double fr = static_cast<double>(r <= n / 2 ? r : r - n);
      const double fc = static_cast<double>(c <= n / 2 ? c : c - n);
      const double d = std::hypot(fr, fc);
      pupil(r, c) = std::clamp(radius - d + 0.5, 0.0, 1.0);
    }
  }
  return fftshift(unitary_dft2(std::move(pupil), Direction::inverse));
}

} // namespace detail

/// Focused probe of size n x n whose central lobe has FWHM `fwhm` in |w| (zone
/// plate: inverse DFT of a circular pupil with radius tuned by bisection), or a
/// Gaussian amplitude of that FWHM. Always unit norm.
inline ComplexField make_probe(Index n, double fwhm, ProbeModel model = ProbeModel::zone_plate) {
  if (n < 2 || !(fwhm >= 1.0) || fwhm > static_cast<double>(n))
    throw ParameterError("make_probe: need 1 pixel <= fwhm <= probe size");
  if (model == ProbeModel::gaussian) {
    ComplexField w(n, n);
    const double centre = static_cast<double>(n / 2);
    const double k = 4.0 * std::numbers::ln2 / (fwhm * fwhm);
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < n; ++c) {
        const double dr = static_cast<double>(r) - centre, dc = static_cast<double>(c) - centre;
        w(r, c) = std::exp(-k * (dr * dr + dc * dc));
      }
    return probe_projection(w);
  }
  // FWHM shrinks as the pupil grows.
  double lo = 0.5, hi = static_cast<double>(n) / 2.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (measure_fwhm(detail::pupil_probe(n, mid)) > fwhm)
      lo = mid;
    else
      hi = mid;
  }
  ComplexField w = detail::pupil_probe(n, 0.5 * (lo + hi));
  if (std::abs(measure_fwhm(w) - fwhm) > 1.0)
    throw ParameterError("make_probe: requested FWHM is not attainable for this probe size");
  return probe_projection(w);
}

// --- phantom ----------------------------------------------------------------

/// Threshold below 10% of the channel maximum to zero, shift to a zero minimum
/// and rescale to [0, 1].
inline Eigen::MatrixXd normalize_phantom(Eigen::MatrixXd x) {
  for (Index c = 0; c < x.cols(); ++c) {
    auto col = x.col(c);
    col.array() -= col.minCoeff();
    const double mx = col.maxCoeff();
    if (mx > 0.0) {
      col = (col.array() < 0.1 * mx).select(0.0, col);
      col /= mx;
    }
  }
  return x;
}

/// Built-in piecewise-constant phantom, N x C with values in [0, 1]: disks,
/// rectangles, rings and bars at fixed relative positions per channel.
inline Eigen::MatrixXd make_phantom(Shape image, Index components) {
  if (components < 1)
    throw ParameterError("make_phantom: need at least one component");
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(image.size(), components);
  const double h = static_cast<double>(image.rows), w = static_cast<double>(image.cols);

  struct Disk { double r, c, radius, inner, value; };
  struct Rect { double r0, c0, r1, c1, value; };
  // Relative coordinates; an inner radius > 0 makes a ring.
  const std::vector<std::vector<Disk>> disks = {
      {{0.30, 0.30, 0.17, 0.00, 0.8}, {0.70, 0.62, 0.20, 0.00, 1.0}, {0.28, 0.75, 0.08, 0.00, 0.6}},
      {{0.55, 0.30, 0.12, 0.06, 0.9}},
      {{0.35, 0.55, 0.14, 0.00, 0.7}, {0.80, 0.25, 0.09, 0.00, 1.0}},
  };
  const std::vector<std::vector<Rect>> rects = {
      {{0.80, 0.10, 0.92, 0.45, 0.5}},
      {{0.12, 0.45, 0.40, 0.88, 0.7}, {0.65, 0.55, 0.90, 0.70, 1.0}, {0.20, 0.08, 0.30, 0.22, 0.5}},
      {{0.55, 0.70, 0.62, 0.95, 0.8}, {0.08, 0.10, 0.45, 0.16, 0.6}, {0.50, 0.40, 0.90, 0.46, 0.9}},
  };

  for (Index c = 0; c < components; ++c) {
    const auto k = static_cast<std::size_t>(c % 3);
    // Channels beyond the third reuse a mirrored layout.
    const bool mirror = c >= 3;
    auto img = channel_image(x, c, image);
    for (Index r = 0; r < image.rows; ++r) {
      for (Index q = 0; q < image.cols; ++q) {
        const double yr = (static_cast<double>(r) + 0.5) / h;
        const double xq0 = (static_cast<double>(q) + 0.5) / w;
        const double xq = mirror ? 1.0 - xq0 : xq0;
        double v = 0.0;
        for (const auto& d : disks[k]) {
          const double dist = std::hypot(yr - d.r, xq - d.c);
          if (dist <= d.radius && dist >= d.inner)
            v = std::max(v, d.value);
        }
        for (const auto& b : rects[k])
          if (yr >= b.r0 && yr <= b.r1 && xq >= b.c0 && xq <= b.c1)
            v = std::max(v, b.value);
        img(r, q) = v;
      }
    }
  }
  return normalize_phantom(std::move(x));
}

/// Scales a non-negative phantom so that max |X D| equals `limit`.
inline Eigen::MatrixXd fit_phantom_scale(const Eigen::MatrixXd& x, const Dictionary& dict,
                                         double limit = 0.5) {
  if (x.cols() != dict.components())
    throw DimensionError("phantom component count does not match dictionary");
  const double peak = (x.cast<cd>() * dict.spectra).cwiseAbs().maxCoeff();
  if (!(peak > 0.0))
    throw ParameterError("phantom is identically zero");
  return x * (limit / peak);
}

// --- scan -------------------------------------------------------------------

inline std::vector<Index> grid_axis(Index n, Index m, Index step) {
  std::vector<Index> pos;
  for (Index p = 0; p + m <= n; p += step)
    pos.push_back(p);
  if (pos.back() != n - m)
    pos.push_back(n - m);
  return pos;
}

/// Raster scan with offsets {0, step, 2 step, ...} per axis and a final
/// clamped offset N - m so that the last patch touches the border.
inline ScanGeometry make_grid_scan(Shape image, Shape patch, Index step) {
  if (step < 1)
    throw ParameterError("make_grid_scan: step must be >= 1");
  if (patch.rows > image.rows || patch.cols > image.cols || patch.rows < 1 || patch.cols < 1)
    throw ParameterError("make_grid_scan: patch larger than image");
  const auto rows = grid_axis(image.rows, patch.rows, step);
  const auto cols = grid_axis(image.cols, patch.cols, step);
  std::vector<Offset> offsets;
  for (Index r : rows)
    for (Index c : cols)
      offsets.push_back({r, c});
  return ScanGeometry(image, patch, std::move(offsets));
}

// --- measurements -----------------------------------------------------------

/// Stateless 64-bit generator: the k-th output of stream `key` is a SplitMix64
/// finaliser of key + k * golden. Satisfies UniformRandomBitGenerator.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) : key_(mix(key)) {}
  CounterRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c)
      : key_(mix(mix(mix(mix(seed) ^ a) ^ (b * 0x9E3779B97F4A7C15ull)) ^ (c + 0x632BE59BD9B4E019ull))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() { return mix(key_ + (++counter_) * 0x9E3779B97F4A7C15ull); }

private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Y = 1 + X D as an N x L matrix.
inline Eigen::MatrixXcd contrast_from_thickness(const Eigen::MatrixXd& x, const Dictionary& dict) {
  Eigen::MatrixXcd y = x.cast<cd>() * dict.spectra;
  y.array() += 1.0;
  return y;
}

/// |A(w, Y_l)|^2 for every energy and position.
inline MeasurementSet clean_intensities(const ComplexField& probe, const Eigen::MatrixXcd& contrast,
                                        const ScanGeometry& geom) {
  MeasurementSet out(contrast.cols(), geom.positions(), geom.patch());
  for (Index l = 0; l < contrast.cols(); ++l) {
    auto frames = intensities(probe, channel_image(contrast, l, geom.image()), geom);
    for (Index j = 0; j < geom.positions(); ++j)
      out.at(l, j) = std::move(frames[static_cast<std::size_t>(j)]);
  }
  return out;
}

struct SimulatedData {
  MeasurementSet noisy;   // counts / photon_scale
  MeasurementSet clean;   // |A(w, Y_l)|^2
  double photon_scale = 0.0;
  double data_snr = 0.0;
};

/// Poisson draw of photon_scale * clean, divided back by photon_scale. Every
/// detector pixel has its own stream keyed by (seed, l, j, pixel).
inline MeasurementSet poisson_draw(const MeasurementSet& clean, double photon_scale,
                                   std::uint64_t seed) {
  if (!(photon_scale > 0.0))
    throw ParameterError("photon_scale must be positive");
  MeasurementSet out = clean;
  for (Index l = 0; l < clean.energies; ++l) {
    for (Index j = 0; j < clean.positions; ++j) {
      const auto& mu = clean.at(l, j);
      auto& dst = out.at(l, j);
      for (Index p = 0; p < mu.size(); ++p) {
        const double mean = photon_scale * mu(p);
        if (!std::isfinite(mean))
          throw DataError("non-finite expected intensity");
        if (mean <= 0.0) {
          dst(p) = 0.0;
          continue;
        }
        CounterRng rng(seed, static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(j),
                       static_cast<std::uint64_t>(p));
        std::poisson_distribution<std::int64_t> poisson(mean);
        dst(p) = static_cast<double>(poisson(rng)) / photon_scale;
      }
    }
  }
  return out;
}

inline SimulatedData simulate_measurements(const ComplexField& probe, const Eigen::MatrixXd& x,
                                           const Dictionary& dict, const ScanGeometry& geom,
                                           double photon_scale, std::uint64_t seed) {
  SimulatedData d;
  d.clean = clean_intensities(probe, contrast_from_thickness(x, dict), geom);
  d.noisy = poisson_draw(d.clean, photon_scale, seed);
  d.photon_scale = photon_scale;
  d.data_snr = data_snr(d.clean, d.noisy);
  return d;
}

/// Bisection on log(photon_scale) until the data SNR of a draw with `seed`
/// is within `tolerance` dB of `target`.
inline double calibrate_photon_scale(const MeasurementSet& clean, double target, std::uint64_t seed,
                                     double tolerance = 0.05) {
  double total = 0.0, energy = 0.0;
  for (const auto& f : clean.frames) {
    total += f.sum();
    energy += f.square().sum();
  }
  if (!(total > 0.0))
    throw ParameterError("cannot calibrate photons for all-zero data");
  // Noise energy is about total / s, so SNR ~ 10 log10(s energy / total).
  const double guess = std::pow(10.0, target / 10.0) * total / energy;
  double lo = std::log(guess) - 4.0, hi = std::log(guess) + 4.0;
  double best = guess, best_err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = std::exp(mid);
    const double achieved = data_snr(clean, poisson_draw(clean, s, seed));
    if (std::abs(achieved - target) < best_err) {
      best_err = std::abs(achieved - target);
      best = s;
    }
    if (best_err <= tolerance)
      break;
    if (achieved < target)
      lo = mid;
    else
      hi = mid;
  }
  return best;
}

/// A complete synthetic instance.
struct Experiment {
  SimulationSpec spec;
  Dictionary dictionary;
  Eigen::MatrixXd phantom;  // N x C
  ComplexField probe;
  ScanGeometry geometry;
  SimulatedData data;
};

inline Experiment make_experiment(const SimulationSpec& spec,
                                  std::optional<Dictionary> dictionary = std::nullopt,
                                  std::optional<Eigen::MatrixXd> phantom = std::nullopt) {
  if (!(spec.fwhm <= static_cast<double>(spec.probe_size)) || spec.step < 1)
    throw ParameterError("simulation needs fwhm <= probe size and step >= 1");
  Experiment e;
  e.spec = spec;
  e.dictionary = dictionary ? std::move(*dictionary)
                            : synthesize_dictionary(spec.components, spec.energies, spec.seed);
  if (e.dictionary.components() != spec.components || e.dictionary.energy_count() != spec.energies)
    throw DimensionError("dictionary does not match the requested components/energies");
  e.phantom = fit_phantom_scale(phantom ? normalize_phantom(std::move(*phantom))
                                        : make_phantom(spec.image, spec.components),
                                e.dictionary, spec.max_contrast);
  e.probe = make_probe(spec.probe_size, spec.fwhm, spec.probe_model);
  e.geometry = make_grid_scan(spec.image, {spec.probe_size, spec.probe_size}, spec.step);
  const MeasurementSet clean =
      clean_intensities(e.probe, contrast_from_thickness(e.phantom, e.dictionary), e.geometry);
  const double scale = spec.target_data_snr
                           ? calibrate_photon_scale(clean, *spec.target_data_snr, spec.seed)
                           : spec.photon_scale;
  e.data.clean = clean;
  e.data.noisy = poisson_draw(clean, scale, spec.seed);
  e.data.photon_scale = scale;
  e.data.data_snr = data_snr(e.data.clean, e.data.noisy);
  e.spec.photon_scale = scale;
  return e;
}

} // namespace spectro
