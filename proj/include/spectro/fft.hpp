#pragma once

// Unitary 2-D discrete Fourier transform, 1/sqrt(rows*cols) scaling in both
// directions so that the inverse is also the adjoint.

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include <fftw3.h>

#include "spectro/field.hpp"

namespace spectro {

enum class Direction { forward, inverse };

namespace detail {

// In-place, unaligned FFTW plans keyed by (rows, cols, direction). Plans are
// created under a lock; executing a plan on new arrays is thread-safe.
class PlanCache {
public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(Index rows, Index cols, Direction dir) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto key = std::make_tuple(rows, cols, dir == Direction::forward);
    auto it = plans_.find(key);
    if (it != plans_.end())
      return it->second;
    ComplexField scratch(rows, cols);
    auto* data = reinterpret_cast<fftw_complex*>(scratch.data());
    fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), data, data,
                                      dir == Direction::forward ? FFTW_FORWARD : FFTW_BACKWARD,
                                      FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, plan);
    return plan;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [key, plan] : plans_)
      fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::tuple<Index, Index, bool>, fftw_plan> plans_;
};

} // namespace detail

/// In-place unitary DFT of a row-major field.
inline void unitary_dft2_inplace(ComplexField& u, Direction dir) {
  if (u.size() == 0)
    throw DimensionError("unitary_dft2: empty field");
  fftw_plan plan = detail::PlanCache::instance().get(u.rows(), u.cols(), dir);
  auto* data = reinterpret_cast<fftw_complex*>(u.data());
  fftw_execute_dft(plan, data, data);
  u *= 1.0 / std::sqrt(static_cast<double>(u.size()));
}

inline ComplexField unitary_dft2(ComplexField u, Direction dir) {
  unitary_dft2_inplace(u, dir);
  return u;
}

/// Circular shift moving the zero index to the centre, as numpy.fft.fftshift.
template <typename T>
Field<T> fftshift(const Field<T>& u) {
  Field<T> out(u.rows(), u.cols());
  const Index hr = u.rows() / 2, hc = u.cols() / 2;
  for (Index r = 0; r < u.rows(); ++r)
    for (Index c = 0; c < u.cols(); ++c)
      out((r + hr) % u.rows(), (c + hc) % u.cols()) = u(r, c);
  return out;
}

} // namespace spectro
