#pragma once

// Spectrum dictionary D (components x energies), its right pseudo-inverses and
// the Gram eigendecomposition that diagonalises the contrast Sylvester solve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectro/errors.hpp"

namespace spectro {

inline constexpr double kMaxGramCondition = 1e8;

struct Dictionary {
  Eigen::MatrixXcd spectra;  // C x L
  std::vector<std::string> labels;
  std::vector<double> energies;  // eV, metadata only

  Eigen::Index components() const { return spectra.rows(); }
  Eigen::Index energy_count() const { return spectra.cols(); }
  Eigen::MatrixXd absorption() const { return spectra.real(); }
};

template <typename Scalar>
struct BasicFactors {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix pinv;               // L x C, D * pinv = I
  Matrix eigenvectors;       // L x L, unitary
  Eigen::VectorXd eigenvalues;  // descending, of pinv * pinv^*
};

/// Factors for the complete complex dictionary.
using DictionaryFactors = BasicFactors<std::complex<double>>;
/// Factors for the absorption-only (real part) dictionary.
using RealDictionaryFactors = BasicFactors<double>;

namespace detail {

template <typename Matrix>
double gram_condition(const Matrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(hi > 0.0) || !(lo > 0.0))
    return std::numeric_limits<double>::infinity();
  return hi / lo;
}

template <typename Matrix>
Matrix right_pseudo_inverse(const Matrix& d, double max_condition) {
  if (d.rows() < 1 || d.cols() < d.rows())
    throw DimensionError("dictionary must be C x L with 1 <= C <= L");
  if (!d.allFinite())
    throw ParameterError("dictionary has non-finite entries");
  const Matrix gram = d * d.adjoint();
  const double cond = gram_condition(gram);
  if (!(cond <= max_condition)) {
    std::ostringstream os;
    os << "dictionary Gram matrix is ill-conditioned (condition " << cond << " > " << max_condition
       << ")";
    throw IllConditionedDictionary(cond, os.str());
  }
  return d.adjoint() * gram.ldlt().solve(Matrix::Identity(d.rows(), d.rows()));
}

} // namespace detail

/// D^* (D D^*)^{-1}.
inline Eigen::MatrixXcd pseudo_inverse(const Eigen::MatrixXcd& d,
                                       double max_condition = kMaxGramCondition) {
  return detail::right_pseudo_inverse(d, max_condition);
}

/// D_r^T (D_r D_r^T)^{-1}.
inline Eigen::MatrixXd real_pseudo_inverse(const Eigen::MatrixXd& d,
                                           double max_condition = kMaxGramCondition) {
  return detail::right_pseudo_inverse(d, max_condition);
}

/// Hermitian eigendecomposition pinv pinv^* = V diag(S) V^*.
///
/// Eigenvalues are sorted descending, clamped at zero, and every eigenvector is
/// rotated so that its first entry with modulus above 1e-12 is real positive.
template <typename Matrix>
std::pair<Matrix, Eigen::VectorXd> gram_eigendecomposition(const Matrix& pinv) {
  const Matrix gram = pinv * pinv.adjoint();
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  if (es.info() != Eigen::Success)
    throw Error("gram eigendecomposition failed");
  const Eigen::Index n = gram.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return es.eigenvalues()(a) > es.eigenvalues()(b);
  });
  Matrix v(n, n);
  Eigen::VectorXd s(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto src = order[static_cast<std::size_t>(k)];
    s(k) = std::max(0.0, es.eigenvalues()(src));
    auto col = es.eigenvectors().col(src);
    typename Matrix::Scalar phase = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(col(i)) > 1e-12) {
        phase = std::abs(col(i)) / col(i);
        break;
      }
    }
    v.col(k) = col * phase;
  }
  return {std::move(v), std::move(s)};
}

inline DictionaryFactors factorize(const Dictionary& dict,
                                   double max_condition = kMaxGramCondition) {
  DictionaryFactors f;
  f.pinv = pseudo_inverse(dict.spectra, max_condition);
  std::tie(f.eigenvectors, f.eigenvalues) = gram_eigendecomposition(f.pinv);
  return f;
}

inline RealDictionaryFactors factorize_real(const Dictionary& dict,
                                            double max_condition = kMaxGramCondition) {
  RealDictionaryFactors f;
  f.pinv = real_pseudo_inverse(dict.absorption(), max_condition);
  std::tie(f.eigenvectors, f.eigenvalues) = gram_eigendecomposition(f.pinv);
  return f;
}

inline double gram_condition_number(const Eigen::MatrixXcd& d) {
  return detail::gram_condition(Eigen::MatrixXcd(d * d.adjoint()));
}

// --- I/O --------------------------------------------------------------------
//
// CSV layout: header `label,e0_re,e0_im,...,e{L-1}_re,e{L-1}_im`, one row per
// component.

inline void save_dictionary(const std::string& path, const Dictionary& dict) {
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write dictionary to " + path);
  out << "label";
  for (Eigen::Index l = 0; l < dict.energy_count(); ++l)
    out << ",e" << l << "_re,e" << l << "_im";
  out << '\n' << std::setprecision(17);
  for (Eigen::Index c = 0; c < dict.components(); ++c) {
    out << (static_cast<std::size_t>(c) < dict.labels.size() ? dict.labels[c]
                                                            : "m" + std::to_string(c));
    for (Eigen::Index l = 0; l < dict.energy_count(); ++l)
      out << ',' << dict.spectra(c, l).real() << ',' << dict.spectra(c, l).imag();
    out << '\n';
  }
  if (!out)
    throw Error("failed writing dictionary to " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  return cells;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw ParseError("trailing characters in number '" + s + "' at " + where);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("cannot parse number '" + s + "' at " + where);
  }
}

} // namespace detail

inline Dictionary load_dictionary(const std::string& path,
                                  double max_condition = kMaxGramCondition) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open dictionary " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty dictionary file " + path);
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || (header.size() - 1) % 2 != 0)
    throw ParseError("dictionary header must hold a label and re/im pairs: " + path);
  const auto energies = static_cast<Eigen::Index>((header.size() - 1) / 2);

  std::vector<std::string> labels;
  std::vector<std::vector<std::complex<double>>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " columns");
    labels.push_back(cells[0]);
    std::vector<std::complex<double>> row;
    const std::string where = path + ":" + std::to_string(lineno);
    for (Eigen::Index l = 0; l < energies; ++l)
      row.emplace_back(detail::parse_number(cells[1 + 2 * l], where),
                       detail::parse_number(cells[2 + 2 * l], where));
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw ParseError("dictionary has no component rows: " + path);

  Dictionary dict;
  dict.spectra.resize(static_cast<Eigen::Index>(rows.size()), energies);
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (Eigen::Index l = 0; l < energies; ++l)
      dict.spectra(static_cast<Eigen::Index>(c), l) = rows[c][static_cast<std::size_t>(l)];
  dict.labels = std::move(labels);
  dict.energies.resize(static_cast<std::size_t>(energies));
  std::iota(dict.energies.begin(), dict.energies.end(), 0.0);
  // rank check
  (void)pseudo_inverse(dict.spectra, max_condition);
  return dict;
}

/// Random smooth spectra: each component is a positive baseline plus one or two
/// Gaussian absorption peaks placed in its own band of the energy axis, and an
/// imaginary part made of the same peak shapes' derivatives (dispersive profile).
inline Dictionary synthesize_dictionary(Eigen::Index components, Eigen::Index energies,
                                        std::uint64_t seed) {
  if (components < 1 || energies < 1 || components > energies)
    throw ParameterError("synthesize_dictionary needs 1 <= C <= L");
  std::mt19937_64 rng(seed);
  auto uniform = [&](double a, double b) {
    return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };

  for (int attempt = 0; attempt < 4096; ++attempt) {
    Dictionary dict;
    dict.spectra.resize(components, energies);
    const double span = static_cast<double>(std::max<Eigen::Index>(energies - 1, 1));
    for (Eigen::Index c = 0; c < components; ++c) {
      const double band = span / static_cast<double>(components);
      const double base = uniform(0.05, 0.15);
      const int peaks = 1 + static_cast<int>(rng() % 2);
      std::vector<double> re(static_cast<std::size_t>(energies), base);
      std::vector<double> im(static_cast<std::size_t>(energies), 0.0);
      for (int p = 0; p < peaks; ++p) {
        const double centre = band * (static_cast<double>(c) + uniform(0.2, 0.8));
        const double width = uniform(0.6, 1.6) * std::max(1.0, span / 9.0);
        const double height = uniform(0.4, 0.9);
        for (Eigen::Index l = 0; l < energies; ++l) {
          const double t = (static_cast<double>(l) - centre) / width;
          const double g = std::exp(-0.5 * t * t);
          re[static_cast<std::size_t>(l)] += height * g;
          im[static_cast<std::size_t>(l)] += -0.6 * height * t * g;
        }
      }
      for (Eigen::Index l = 0; l < energies; ++l)
        dict.spectra(c, l) = {re[static_cast<std::size_t>(l)], im[static_cast<std::size_t>(l)]};
      dict.labels.push_back("m" + std::to_string(c));
    }
    dict.energies.resize(static_cast<std::size_t>(energies));
    for (Eigen::Index l = 0; l < energies; ++l)
      dict.energies[static_cast<std::size_t>(l)] = 280.0 + 0.5 * static_cast<double>(l);
    if (gram_condition_number(dict.spectra) <= 25.0 &&
        detail::gram_condition(Eigen::MatrixXd(dict.absorption() * dict.absorption().transpose())) <= 100.0)
      return dict;
  }
  throw ParameterError("could not synthesize a well-conditioned dictionary");
}

} // namespace spectro
