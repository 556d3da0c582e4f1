// spectro: simulate datasets, reconstruct thickness maps, sweep scan steps and
// score reconstructions.
//
//   spectro simulate    --out DIR [--config FILE] [--step N] [--data-snr DB] [--seed S]
//   spectro reconstruct DATASET --out DIR [--mode M] [--iters K] [--lambda L] [--beta B]
//                       [--delta D] [--snr-denominator reconstruction|truth]
//   spectro sweep       --out DIR --step 18 --step 19 [--mode two-step,spa-noreg,spa]
//   spectro evaluate    RESULT DATASET [--snr-denominator ...]
//
// Exit codes: 0 success, 1 solver divergence, 2 usage or I/O error.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spectro/io.hpp"
#include "spectro/solvers.hpp"

namespace fs = std::filesystem;
using namespace spectro;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr double kDefaultTvRatio = 0.02;

enum class Mode { spa, spa_noreg, spia, spia_noreg, two_step, two_step_real };

const std::map<std::string, Mode>& mode_table() {
  static const std::map<std::string, Mode> t = {
      {"spa", Mode::spa},           {"spa-noreg", Mode::spa_noreg},
      {"spia", Mode::spia},         {"spia-noreg", Mode::spia_noreg},
      {"two-step", Mode::two_step}, {"two-step-real", Mode::two_step_real},
  };
  return t;
}

Mode parse_mode(const std::string& s) {
  const auto it = mode_table().find(s);
  if (it == mode_table().end())
    throw ParseError("unknown mode '" + s + "' (spa | spa-noreg | spia | spia-noreg | two-step | two-step-real)");
  return it->second;
}

SnrDenominator parse_denominator(const std::string& s) {
  if (s == "reconstruction")
    return SnrDenominator::reconstruction;
  if (s == "truth")
    return SnrDenominator::truth;
  throw ParseError("unknown SNR denominator '" + s + "' (reconstruction | truth)");
}

const char* denominator_name(SnrDenominator d) {
  return d == SnrDenominator::truth ? "truth" : "reconstruction";
}

struct ExperimentConfig {
  SimulationSpec sim;
  SolverConfig solver;
  std::optional<double> delta;  // absolute TV weight
  double tv_ratio = kDefaultTvRatio;  // delta / beta when delta is unset
  std::string mode = "spa";
  SnrDenominator denominator = SnrDenominator::reconstruction;
  std::vector<Index> sweep_steps;
  std::vector<std::string> sweep_modes = {"two-step", "spa-noreg", "spa"};
};

json solver_to_json(const ExperimentConfig& c) {
  json j;
  j["lambda"] = c.solver.lambda;
  j["beta"] = c.solver.beta ? json(*c.solver.beta) : json(nullptr);
  j["delta"] = c.delta ? json(*c.delta) : json(nullptr);
  j["tv_ratio"] = c.tv_ratio;
  j["iterations"] = c.solver.max_iterations;
  j["stop_tolerance"] = c.solver.stop_tolerance;
  j["tv_inner_iterations"] = c.solver.tv.inner_iterations;
  j["tv_dual_step"] = c.solver.tv.dual_step;
  j["gamma1_factor"] = c.solver.gamma1_factor;
  j["gamma2_factor"] = c.solver.gamma2_factor;
  return j;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["simulation"] = spec_to_json(c.sim);
  j["solver"] = solver_to_json(c);
  j["mode"] = c.mode;
  j["snr_denominator"] = denominator_name(c.denominator);
  j["sweep"] = {{"steps", c.sweep_steps}, {"modes", c.sweep_modes}};
  return j;
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key) && !j.at(key).is_null())
    dst = j.at(key).get<T>();
}

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig c;
  if (path.empty())
    return c;
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config " + path);
  try {
    const json j = json::parse(in, nullptr, true, true);
    if (j.contains("simulation"))
      c.sim = spec_from_json(j.at("simulation"));
    if (j.contains("solver")) {
      const auto& s = j.at("solver");
      take(s, "lambda", c.solver.lambda);
      if (s.contains("beta") && !s.at("beta").is_null())
        c.solver.beta = s.at("beta").get<double>();
      if (s.contains("delta") && !s.at("delta").is_null())
        c.delta = s.at("delta").get<double>();
      take(s, "tv_ratio", c.tv_ratio);
      take(s, "iterations", c.solver.max_iterations);
      take(s, "stop_tolerance", c.solver.stop_tolerance);
      take(s, "tv_inner_iterations", c.solver.tv.inner_iterations);
      take(s, "tv_dual_step", c.solver.tv.dual_step);
      take(s, "gamma1_factor", c.solver.gamma1_factor);
      take(s, "gamma2_factor", c.solver.gamma2_factor);
    }
    take(j, "mode", c.mode);
    if (j.contains("snr_denominator"))
      c.denominator = parse_denominator(j.at("snr_denominator").get<std::string>());
    if (j.contains("sweep")) {
      take(j.at("sweep"), "steps", c.sweep_steps);
      take(j.at("sweep"), "modes", c.sweep_modes);
    }
  } catch (const json::exception& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  parse_mode(c.mode);
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct RunResult {
  Eigen::MatrixXd thickness;
  ComplexField probe;
  ConvergenceTrace trace;
  int iterations = 0;
  double beta = 0.0;
  double delta = 0.0;
  std::vector<double> phases;
  int undefined_alignments = 0;
  double seconds = 0.0;
};

template <typename Factors>
RunResult run_with(const MeasurementSet& frames, const Factors& f, const ScanGeometry& geom,
                   const ExperimentConfig& ec, bool regularised, bool baseline) {
  SolverConfig cfg = ec.solver;
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  if (baseline) {
    auto b = two_step_baseline(frames, f, geom, cfg, true);
    r.thickness = std::move(b.thickness);
    r.probe = std::move(b.probe);
    r.trace = std::move(b.trace);
    r.iterations = static_cast<int>(r.trace.size());
    r.phases = std::move(b.phases);
    r.undefined_alignments = b.undefined_alignments;
  } else {
    // beta is resolved against the seed probe so delta can follow it.
    cfg = resolve_config(cfg, initialize(frames, f, geom), geom);
    cfg.delta = regularised ? ec.delta.value_or(ec.tv_ratio * *cfg.beta) : 0.0;
    auto rec = run_solver(frames, f, geom, cfg);
    r.thickness = std::move(rec.thickness);
    r.probe = std::move(rec.probe);
    r.trace = std::move(rec.trace);
    r.iterations = rec.iterations;
    r.beta = *cfg.beta;
    r.delta = cfg.delta;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

RunResult run_mode(const Dataset& d, const ExperimentConfig& ec, Mode mode) {
  switch (mode) {
  case Mode::spa:
    return run_with(d.frames, factorize(d.dictionary), d.geometry, ec, true, false);
  case Mode::spa_noreg:
    return run_with(d.frames, factorize(d.dictionary), d.geometry, ec, false, false);
  case Mode::spia:
    return run_with(d.frames, factorize_real(d.dictionary), d.geometry, ec, true, false);
  case Mode::spia_noreg:
    return run_with(d.frames, factorize_real(d.dictionary), d.geometry, ec, false, false);
  case Mode::two_step:
    return run_with(d.frames, factorize(d.dictionary), d.geometry, ec, false, true);
  case Mode::two_step_real:
    return run_with(d.frames, factorize_real(d.dictionary), d.geometry, ec, false, true);
  }
  throw ParameterError("unhandled mode");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// --- subcommands --------------------------------------------------------------

int cmd_simulate(const ExperimentConfig& ec, const fs::path& out) {
  const Experiment e = make_experiment(ec.sim);
  save_dataset(out, e);
  std::cout << "wrote " << out.string() << ": J=" << e.geometry.positions() << " L=" << e.spec.energies
            << " photon_scale=" << e.data.photon_scale << " data_snr=" << std::fixed
            << std::setprecision(2) << e.data.data_snr << " dB\n";
  return 0;
}

json reconstruct_into(const Dataset& d, const ExperimentConfig& ec, const fs::path& out,
                      const std::string& source) {
  fs::create_directories(out);
  const RunResult r = run_mode(d, ec, parse_mode(ec.mode));
  if (r.undefined_alignments > 0)
    std::cerr << "warning: phase alignment undefined for " << r.undefined_alignments
              << " energies (theta set to 0)\n";

  const Shape image = d.geometry.image();
  json scales = json::array();
  for (Index c = 0; c < r.thickness.cols(); ++c) {
    Eigen::MatrixXd col = r.thickness.col(c);
    const auto s = write_scaled_png((out / ("thickness_" + std::to_string(c) + ".png")).string(),
                                    channel_image(col, 0, image));
    scales.push_back({{"component", c}, {"min", s.min}, {"max", s.max}});
  }
  write_thickness((out / "thickness.bin").string(), r.thickness);
  const RealField amp = r.probe.abs();
  const auto ps = write_scaled_png((out / "probe.png").string(), amp);
  write_complex_field((out / "probe.bin").string(), r.probe);
  write_trace_csv((out / "convergence.csv").string(), r.trace);

  const json cfg = config_to_json(ec);
  json s;
  s["tool"] = "spectro";
  s["version"] = kVersion;
  s["dataset"] = source;
  s["mode"] = ec.mode;
  s["config"] = cfg;
  s["config_hash"] = hex64(fnv1a(cfg.dump()));
  s["seed"] = d.meta.value("seed", ec.sim.seed);
  s["data_snr"] = d.meta.value("data_snr", json(nullptr));
  s["iterations"] = r.iterations;
  s["beta"] = r.beta;
  s["delta"] = r.delta;
  s["seconds"] = r.seconds;
  s["final_successive_error"] = r.trace.size() ? json(r.trace.successive_error.back()) : json(nullptr);
  s["png_scale"] = scales;
  s["probe_png_scale"] = {{"min", ps.min}, {"max", ps.max}};
  s["phases"] = r.phases;
  s["snr_denominator"] = denominator_name(ec.denominator);
  s["snr"] = nullptr;
  if (d.phantom) {
    try {
      s["snr"] = snr(r.thickness, *d.phantom, ec.denominator);
    } catch (const UndefinedMetric& e) {
      std::cerr << "warning: " << e.what() << '\n';
    }
  }
  write_json(out / "summary.json", s);
  return s;
}

int cmd_reconstruct(const ExperimentConfig& ec, const fs::path& dataset, const fs::path& out) {
  const Dataset d = load_dataset(dataset);
  const json s = reconstruct_into(d, ec, out, dataset.string());
  std::cout << ec.mode << ": " << s["iterations"] << " iterations";
  if (!s["snr"].is_null())
    std::cout << ", SNR " << std::fixed << std::setprecision(2) << s["snr"].get<double>() << " dB";
  std::cout << " -> " << out.string() << '\n';
  return 0;
}

int cmd_sweep(ExperimentConfig ec, const fs::path& out) {
  if (ec.sweep_steps.empty())
    throw ParameterError("sweep needs at least one --step");
  if (ec.sweep_modes.empty())
    throw ParameterError("sweep needs at least one mode");
  for (const auto& m : ec.sweep_modes)
    parse_mode(m);
  fs::create_directories(out);
  std::map<std::pair<std::string, Index>, double> table;
  json cells = json::array();
  for (Index step : ec.sweep_steps) {
    ExperimentConfig cell = ec;
    cell.sim.step = step;
    const Experiment e = make_experiment(cell.sim);
    const fs::path data_dir = out / ("step_" + std::to_string(step)) / "dataset";
    save_dataset(data_dir, e);
    const Dataset d = load_dataset(data_dir);
    for (const auto& m : ec.sweep_modes) {
      cell.mode = m;
      const json s = reconstruct_into(d, cell, out / ("step_" + std::to_string(step)) / m, data_dir.string());
      const double v = s["snr"].is_null() ? std::nan("") : s["snr"].get<double>();
      table[{m, step}] = v;
      cells.push_back({{"step", step}, {"mode", m}, {"snr", s["snr"]}, {"data_snr", e.data.data_snr}});
      std::cout << "step " << step << " " << m << ": SNR " << std::fixed << std::setprecision(2) << v
                << " dB\n";
    }
  }
  std::ofstream csv(out / "sweep.csv");
  std::ofstream md(out / "sweep.md");
  if (!csv || !md)
    throw IoError("cannot write sweep tables in " + out.string());
  csv << "mode";
  md << "| mode |";
  for (Index step : ec.sweep_steps) {
    csv << ",step_" << step;
    md << " step " << step << " |";
  }
  csv << '\n';
  md << "\n|---|";
  for (std::size_t i = 0; i < ec.sweep_steps.size(); ++i)
    md << "---|";
  md << '\n';
  csv << std::setprecision(10);
  for (const auto& m : ec.sweep_modes) {
    csv << m;
    md << "| " << m << " |";
    for (Index step : ec.sweep_steps) {
      csv << ',' << table[{m, step}];
      std::ostringstream v;
      v << std::fixed << std::setprecision(2) << table[{m, step}];
      md << ' ' << v.str() << " |";
    }
    csv << '\n';
    md << '\n';
  }
  write_json(out / "sweep.json", {{"config", config_to_json(ec)}, {"cells", cells}});
  return 0;
}

int cmd_evaluate(const fs::path& result, const fs::path& dataset, SnrDenominator denom) {
  const Dataset d = load_dataset(dataset);
  if (!d.phantom)
    throw IoError("dataset has no phantom.bin to evaluate against");
  const fs::path bin = fs::is_directory(result) ? result / "thickness.bin" : result;
  const Eigen::MatrixXd x = read_thickness(bin.string(), d.geometry.image().size(), d.dictionary.components());
  json j;
  j["reconstruction"] = bin.string();
  j["dataset"] = dataset.string();
  j["snr_denominator"] = denominator_name(denom);
  j["snr"] = snr(x, *d.phantom, denom);
  json per = json::array();
  for (Index c = 0; c < x.cols(); ++c) {
    try {
      per.push_back(snr(x.col(c), d.phantom->col(c), denom));
    } catch (const UndefinedMetric&) {
      per.push_back(nullptr);
    }
  }
  j["snr_per_component"] = per;
  std::cout << j.dump(2) << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thickness-map reconstruction from simulated spectroscopic ptychography"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_dir, mode, denom, dataset, result;
  std::vector<Index> steps;
  std::vector<std::string> modes;
  std::optional<double> data_snr, lambda, beta, delta;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  };
  auto add_sim = [&](CLI::App* sub, bool many_steps) {
    if (many_steps)
      sub->add_option("--step", steps, "scan step in pixels (repeat or comma-separate)")->delimiter(',');
    else
      sub->add_option("--step", steps, "scan step in pixels")->expected(1);
    sub->add_option("--data-snr", data_snr, "calibrate photons to this data SNR (dB)");
    sub->add_option("--seed", seed, "simulation seed");
  };
  auto add_solver = [&](CLI::App* sub) {
    sub->add_option("--iters", iters, "ADMM iterations")->check(CLI::PositiveNumber);
    sub->add_option("--lambda", lambda, "data penalty")->check(CLI::PositiveNumber);
    sub->add_option("--beta", beta, "decomposition penalty")->check(CLI::NonNegativeNumber);
    sub->add_option("--delta", delta, "TV weight")->check(CLI::NonNegativeNumber);
    sub->add_option("--snr-denominator", denom, "reconstruction | truth");
  };

  auto* sim = app.add_subcommand("simulate", "write a synthetic dataset");
  add_common(sim);
  add_sim(sim, false);
  sim->add_option("--out", out_dir, "dataset directory")->required();

  auto* rec = app.add_subcommand("reconstruct", "reconstruct a dataset");
  add_common(rec);
  add_solver(rec);
  rec->add_option("dataset", dataset, "dataset directory")->required();
  rec->add_option("--mode", mode, "spa | spa-noreg | spia | spia-noreg | two-step | two-step-real");
  rec->add_option("--out", out_dir, "result directory")->required();

  auto* swp = app.add_subcommand("sweep", "simulate and reconstruct over scan steps");
  add_common(swp);
  add_sim(swp, true);
  add_solver(swp);
  swp->add_option("--mode", modes, "modes to run (comma-separated)")->delimiter(',');
  swp->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score a reconstruction against a dataset phantom");
  ev->add_option("result", result, "result directory or thickness.bin")->required();
  ev->add_option("dataset", dataset, "dataset directory")->required();
  ev->add_option("--snr-denominator", denom, "reconstruction | truth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig ec = load_config(config_path);
    if (!steps.empty()) {
      ec.sim.step = steps.front();
      ec.sweep_steps = steps;
    }
    if (data_snr) ec.sim.target_data_snr = *data_snr;
    if (seed) ec.sim.seed = *seed;
    if (iters) ec.solver.max_iterations = *iters;
    if (lambda) ec.solver.lambda = *lambda;
    if (beta) ec.solver.beta = *beta;
    if (delta) ec.delta = *delta;
    if (!denom.empty()) ec.denominator = parse_denominator(denom);
    if (!mode.empty()) ec.mode = mode;
    if (!modes.empty()) ec.sweep_modes = modes;
    parse_mode(ec.mode);

    if (*sim)
      return cmd_simulate(ec, out_dir);
    if (*rec)
      return cmd_reconstruct(ec, dataset, out_dir);
    if (*swp)
      return cmd_sweep(ec, out_dir);
    if (*ev)
      return cmd_evaluate(result, dataset, ec.denominator);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
