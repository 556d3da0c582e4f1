#pragma once

// On-disk formats: dataset directories, raw little-endian float64 tensors and
// 8-bit grayscale PNG previews.
//
// Dataset directory:
//   meta.json       simulation spec, scan offsets, frame shape, achieved data SNR
//   frames.bin      L x J x rows x cols float64, row-major
//   dictionary.csv  see save_dictionary
//   phantom.bin     N x C float64 (pixel-major), optional
//   probe.bin       rows x cols complex128 as interleaved (re, im), optional

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <png.h>

#include <Eigen/Dense>
#include <json.hpp>

#include "spectro/dictionary.hpp"
#include "spectro/errors.hpp"
#include "spectro/forward_model.hpp"
#include "spectro/simulation.hpp"

namespace spectro {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in native order and require a little-endian host");

using json = nlohmann::json;

class IoError : public Error {
public:
  using Error::Error;
};

inline void write_doubles(const std::string& path, const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out)
    throw IoError("failed writing " + path);
}

inline std::vector<double> read_doubles(const std::string& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in)
    throw IoError("cannot open " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(double))
    throw IoError(path + ": expected " + std::to_string(expected * sizeof(double)) + " bytes, found " +
                  std::to_string(bytes));
  in.seekg(0);
  std::vector<double> v(expected);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!in)
    throw IoError("failed reading " + path);
  return v;
}

/// N x C matrix stored pixel-major (all components of pixel 0, then pixel 1...).
inline void write_thickness(const std::string& path, const Eigen::MatrixXd& x) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = x;
  write_doubles(path, rm.data(), static_cast<std::size_t>(rm.size()));
}

inline Eigen::MatrixXd read_thickness(const std::string& path, Index pixels, Index components) {
  const auto v = read_doubles(path, static_cast<std::size_t>(pixels * components));
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      v.data(), pixels, components);
}

inline void write_complex_field(const std::string& path, const ComplexField& f) {
  // std::complex<double> is layout-compatible with double[2].
  write_doubles(path, reinterpret_cast<const double*>(f.data()), static_cast<std::size_t>(2 * f.size()));
}

inline ComplexField read_complex_field(const std::string& path, Shape shape) {
  const auto v = read_doubles(path, static_cast<std::size_t>(2 * shape.size()));
  ComplexField f(shape.rows, shape.cols);
  for (Index p = 0; p < f.size(); ++p)
    f(p) = {v[static_cast<std::size_t>(2 * p)], v[static_cast<std::size_t>(2 * p + 1)]};
  return f;
}

inline void write_frames(const std::string& path, const MeasurementSet& m) {
  std::vector<double> buf;
  buf.reserve(m.frames.size() * static_cast<std::size_t>(m.frame_shape().size()));
  for (const auto& f : m.frames)
    buf.insert(buf.end(), f.data(), f.data() + f.size());
  write_doubles(path, buf.data(), buf.size());
}

inline MeasurementSet read_frames(const std::string& path, Index energies, Index positions, Shape frame) {
  const auto v = read_doubles(path, static_cast<std::size_t>(energies * positions * frame.size()));
  MeasurementSet m(energies, positions, frame);
  std::size_t at = 0;
  for (auto& f : m.frames) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(at), f.size(), f.data());
    at += static_cast<std::size_t>(f.size());
  }
  return m;
}

// --- PNG ----------------------------------------------------------------------

struct PngScale {
  double min = 0.0;
  double max = 0.0;
};

inline void write_png_gray(const std::string& path, const std::vector<std::uint8_t>& pixels, Index rows,
                           Index cols) {
  if (static_cast<Index>(pixels.size()) != rows * cols)
    throw DimensionError("write_png_gray: buffer size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp)
    throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index r = 0; r < rows; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * cols));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Min-max scales `img` to 0..255 and writes it; a constant image maps to 0.
template <typename Derived>
PngScale write_scaled_png(const std::string& path, const Eigen::DenseBase<Derived>& img) {
  const auto& a = img.derived();
  PngScale s{a.minCoeff(), a.maxCoeff()};
  const double span = s.max - s.min;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(a.size()));
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      const double t = span > 0.0 ? (a(r, c) - s.min) / span : 0.0;
      px[static_cast<std::size_t>(r * a.cols() + c)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
  write_png_gray(path, px, a.rows(), a.cols());
  return s;
}

// --- dataset ------------------------------------------------------------------

inline const char* probe_model_name(ProbeModel m) {
  return m == ProbeModel::gaussian ? "gaussian" : "zone_plate";
}

inline ProbeModel parse_probe_model(const std::string& s) {
  if (s == "zone_plate")
    return ProbeModel::zone_plate;
  if (s == "gaussian")
    return ProbeModel::gaussian;
  throw ParseError("unknown probe model '" + s + "' (zone_plate | gaussian)");
}

inline json spec_to_json(const SimulationSpec& s) {
  json j;
  j["image"] = {s.image.rows, s.image.cols};
  j["probe_size"] = s.probe_size;
  j["fwhm"] = s.fwhm;
  j["step"] = s.step;
  j["photon_scale"] = s.photon_scale;
  j["data_snr"] = s.target_data_snr ? json(*s.target_data_snr) : json(nullptr);
  j["seed"] = s.seed;
  j["energies"] = s.energies;
  j["components"] = s.components;
  j["probe_model"] = probe_model_name(s.probe_model);
  j["max_contrast"] = s.max_contrast;
  return j;
}

/// Overlays the keys present in `j` onto `s`.
inline SimulationSpec spec_from_json(const json& j, SimulationSpec s = {}) {
  try {
    if (j.contains("image")) {
      const auto& im = j.at("image");
      if (im.is_array() && im.size() == 2)
        s.image = {im[0].get<Index>(), im[1].get<Index>()};
      else
        s.image = {im.get<Index>(), im.get<Index>()};
    }
    if (j.contains("probe_size")) s.probe_size = j.at("probe_size").get<Index>();
    if (j.contains("fwhm")) s.fwhm = j.at("fwhm").get<double>();
    if (j.contains("step")) s.step = j.at("step").get<Index>();
    if (j.contains("photon_scale")) s.photon_scale = j.at("photon_scale").get<double>();
    if (j.contains("data_snr")) {
      if (j.at("data_snr").is_null())
        s.target_data_snr.reset();
      else
        s.target_data_snr = j.at("data_snr").get<double>();
    }
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("energies")) s.energies = j.at("energies").get<Index>();
    if (j.contains("components")) s.components = j.at("components").get<Index>();
    if (j.contains("probe_model")) s.probe_model = parse_probe_model(j.at("probe_model").get<std::string>());
    if (j.contains("max_contrast")) s.max_contrast = j.at("max_contrast").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("simulation config: ") + e.what());
  }
  return s;
}

/// What a dataset directory holds once loaded.
struct Dataset {
  json meta;
  MeasurementSet frames;
  Dictionary dictionary;
  ScanGeometry geometry;
  std::optional<Eigen::MatrixXd> phantom;
  std::optional<ComplexField> probe;
};

inline void save_dataset(const std::filesystem::path& dir, const Experiment& e) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["format"] = "spectro-dataset";
  meta["version"] = 1;
  meta["spec"] = spec_to_json(e.spec);
  meta["seed"] = e.spec.seed;
  meta["photon_scale"] = e.data.photon_scale;
  meta["data_snr"] = e.data.data_snr;
  meta["image"] = {e.geometry.image().rows, e.geometry.image().cols};
  meta["frames_shape"] = {e.data.noisy.energies, e.data.noisy.positions, e.geometry.patch().rows,
                          e.geometry.patch().cols};
  json offsets = json::array();
  for (const auto& o : e.geometry.offsets())
    offsets.push_back({o.row, o.col});
  meta["offsets"] = offsets;
  meta["components"] = e.dictionary.components();
  meta["energies_ev"] = e.dictionary.energies;
  meta["has_phantom"] = true;
  meta["has_probe"] = true;

  std::ofstream out(dir / "meta.json");
  if (!out)
    throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
  out.close();
  write_frames((dir / "frames.bin").string(), e.data.noisy);
  save_dictionary((dir / "dictionary.csv").string(), e.dictionary);
  write_thickness((dir / "phantom.bin").string(), e.phantom);
  write_complex_field((dir / "probe.bin").string(), e.probe);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("dataset directory not found: " + dir.string());
  std::ifstream in(dir / "meta.json");
  if (!in)
    throw IoError("cannot open " + (dir / "meta.json").string());
  Dataset d;
  try {
    d.meta = json::parse(in);
    const auto shape = d.meta.at("frames_shape").get<std::vector<Index>>();
    const auto image = d.meta.at("image").get<std::vector<Index>>();
    if (shape.size() != 4 || image.size() != 2)
      throw ParseError("meta.json: frames_shape needs 4 entries and image 2");
    std::vector<Offset> offsets;
    for (const auto& o : d.meta.at("offsets"))
      offsets.push_back({o.at(0).get<Index>(), o.at(1).get<Index>()});
    if (static_cast<Index>(offsets.size()) != shape[1])
      throw ParseError("meta.json: offset count does not match frames_shape");
    d.geometry = ScanGeometry({image[0], image[1]}, {shape[2], shape[3]}, std::move(offsets));
    d.frames = read_frames((dir / "frames.bin").string(), shape[0], shape[1], {shape[2], shape[3]});
    d.dictionary = load_dictionary((dir / "dictionary.csv").string());
    if (d.dictionary.energy_count() != shape[0])
      throw ParseError("dictionary energy count does not match frames");
    if (d.meta.contains("energies_ev")) {
      auto ev = d.meta.at("energies_ev").get<std::vector<double>>();
      if (static_cast<Index>(ev.size()) == d.dictionary.energy_count())
        d.dictionary.energies = std::move(ev);
    }
    if (std::filesystem::exists(dir / "phantom.bin"))
      d.phantom = read_thickness((dir / "phantom.bin").string(), d.geometry.image().size(),
                                 d.dictionary.components());
    if (std::filesystem::exists(dir / "probe.bin"))
      d.probe = read_complex_field((dir / "probe.bin").string(), d.geometry.patch());
  } catch (const json::exception& e) {
    throw ParseError(std::string("meta.json: ") + e.what());
  }
  return d;
}

} // namespace spectro
