#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "spectro/dictionary.hpp"
#include "spectro/field.hpp"

using namespace spectro;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("spectro_test_" + name)).string();
}

} // namespace

TEST(Dictionary, PseudoInverseIsRightInverse) {
  const Dictionary d = synthesize_dictionary(3, 5, 7);
  const auto pinv = pseudo_inverse(d.spectra);
  EXPECT_LT((d.spectra * pinv - Eigen::MatrixXcd::Identity(3, 3)).norm(), 1e-12);
  const auto rp = real_pseudo_inverse(d.absorption());
  EXPECT_LT((d.absorption() * rp - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
}

TEST(Dictionary, SquareDictionaryInverse) {
  Eigen::MatrixXcd d(2, 2);
  d << cd(2, 0), cd(0, 1), cd(1, 0), cd(3, 0);
  EXPECT_LT((pseudo_inverse(d) - d.inverse()).norm(), 1e-12);
}

TEST(Dictionary, RankDeficientThrowsWithCondition) {
  Eigen::MatrixXcd d(2, 3);
  d << 1, 2, 3, 2, 4, 6;
  try {
    pseudo_inverse(d);
    FAIL() << "expected IllConditionedDictionary";
  } catch (const IllConditionedDictionary& e) {
    EXPECT_GT(e.condition(), kMaxGramCondition);
  }
  EXPECT_THROW(pseudo_inverse(Eigen::MatrixXcd::Ones(3, 2)), DimensionError);
}

TEST(Dictionary, GramEigendecompositionReconstructs) {
  const auto f = factorize(synthesize_dictionary(3, 5, 2));
  const Eigen::MatrixXcd gram = f.pinv * f.pinv.adjoint();
  const Eigen::MatrixXcd rebuilt = f.eigenvectors * f.eigenvalues.asDiagonal() * f.eigenvectors.adjoint();
  EXPECT_LT((gram - rebuilt).norm(), 1e-12 * gram.norm());
  EXPECT_LT((f.eigenvectors.adjoint() * f.eigenvectors - Eigen::MatrixXcd::Identity(5, 5)).norm(), 1e-12);
  for (Index k = 1; k < 5; ++k)
    EXPECT_GE(f.eigenvalues(k - 1), f.eigenvalues(k));
  EXPECT_GE(f.eigenvalues.minCoeff(), 0.0);
  // Rank C: exactly L - C eigenvalues vanish.
  EXPECT_LT(f.eigenvalues(3), 1e-12);
  EXPECT_GT(f.eigenvalues(2), 1e-6);
}

TEST(Dictionary, EigenvectorPhaseConvention) {
  const auto f = factorize(synthesize_dictionary(2, 4, 9));
  for (Index k = 0; k < 4; ++k) {
    Index i = 0;
    while (std::abs(f.eigenvectors(i, k)) <= 1e-12)
      ++i;
    EXPECT_NEAR(f.eigenvectors(i, k).imag(), 0.0, 1e-14);
    EXPECT_GT(f.eigenvectors(i, k).real(), 0.0);
  }
}

TEST(Dictionary, SynthesisIsDeterministicAndWellConditioned) {
  const Dictionary a = synthesize_dictionary(3, 5, 1);
  const Dictionary b = synthesize_dictionary(3, 5, 1);
  EXPECT_EQ(a.spectra, b.spectra);
  EXPECT_LE(gram_condition_number(a.spectra), 25.0);
  EXPECT_NE(synthesize_dictionary(3, 5, 2).spectra, a.spectra);
  EXPECT_THROW(synthesize_dictionary(4, 3, 1), ParameterError);
}

TEST(Dictionary, CsvRoundTrip) {
  const Dictionary d = synthesize_dictionary(3, 5, 4);
  const std::string p = temp_path("dict.csv");
  save_dictionary(p, d);
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "label,e0_re,e0_im,e1_re,e1_im,e2_re,e2_im,e3_re,e3_im,e4_re,e4_im");
  const Dictionary r = load_dictionary(p);
  EXPECT_EQ(r.spectra, d.spectra);  // 17 significant digits round-trip exactly
  EXPECT_EQ(r.labels, d.labels);
  std::filesystem::remove(p);
}

TEST(Dictionary, CsvParseErrors) {
  const std::string p = temp_path("bad.csv");
  {
    std::ofstream out(p);
    out << "label,e0_re,e0_im\nm0,1.0\n";
  }
  EXPECT_THROW(load_dictionary(p), ParseError);
  {
    std::ofstream out(p);
    out << "label,e0_re,e0_im\nm0,1.0,abc\n";
  }
  EXPECT_THROW(load_dictionary(p), ParseError);
  {
    std::ofstream out(p);
    out << "label,e0_re\n";
  }
  EXPECT_THROW(load_dictionary(p), ParseError);
  EXPECT_THROW(load_dictionary(temp_path("missing.csv")), ParseError);
  std::filesystem::remove(p);
}
