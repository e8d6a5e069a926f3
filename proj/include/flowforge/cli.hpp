// Copyright 2026 The flowforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The `flowforge` command-line front end. Exit codes: 0 success, 2 bad
// arguments or inputs, 3 numeric failure or a failed verification.

#ifndef FLOWFORGE_CLI_HPP
#define FLOWFORGE_CLI_HPP

#include "flowforge/io.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace flowforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitArgument = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

using io::json;

struct DensityPair {
  GridDensity source;
  GridDensity target;
};

inline DensityPair density_pair(const std::string& name, int resolution, int dim) {
  const auto sine = [](double x) { return 1.0 + 0.5 * std::sin(2.0 * kPi * x); };
  if (name == "sine-uniform") {
    const int m = resolution > 0 ? resolution : 256;
    return {GridDensity::sine1d(m), GridDensity::uniform(1, m)};
  }
  if (name == "uniform-sine") {
    const int m = resolution > 0 ? resolution : 256;
    return {GridDensity::uniform(1, m), GridDensity::sine1d(m)};
  }
  if (name == "product-uniform") {
    const int m = resolution > 0 ? resolution : 64;
    return {GridDensity::product({sine, sine}, m), GridDensity::uniform(2, m)};
  }
  if (name == "uniform-uniform") {
    const int m = resolution > 0 ? resolution : 64;
    return {GridDensity::uniform(dim, m), GridDensity::uniform(dim, m)};
  }
  throw ArgumentError("unknown density pair '" + name + "'");
}

// Interior Halton points, `margin` away from every face.
inline std::vector<Vec> interior_points(int dim, int n, double margin) {
  auto pts = halton_points(dim, static_cast<std::size_t>(n));
  for (auto& p : pts) p = (margin + (1.0 - 2.0 * margin) * p.array()).matrix();
  return pts;
}

inline Mat rotation(double alpha) {
  Mat r(2, 2);
  r << std::cos(alpha), -std::sin(alpha), std::sin(alpha), std::cos(alpha);
  return r;
}

inline void emit(const json& j, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) out << j.dump(2) << "\n";
  else io::write_json_file(out_path, j);
}

struct VerifyArgs {
  std::string suite;
  std::string pair = "sine-uniform";
  int resolution = 0;
  int dim = 1;
  int points = 1000;
  int steps = 100;
  double eps = 1e-3;
  double tolerance = -1.0;
  std::vector<double> angles;
  std::string out;
};

inline BoundCheckResult run_verify(const VerifyArgs& a, std::uint64_t seed, int threads) {
  IntegratorConfig cfg{a.steps, threads};
  if (a.suite == "spectrum" && !a.angles.empty()) {
    const auto pts = interior_points(2, a.points, 0.01);
    double violations = 0.0;
    std::map<std::string, double> per_angle;
    for (double alpha : a.angles) {
      const auto rep = spectrum_check([&](const Vec&) { return rotation(alpha); }, pts);
      const auto n = static_cast<double>(rep.violating_points.size());
      per_angle["violations(alpha=" + io::format_double(alpha) + ")"] = n;
      violations += n;
    }
    auto res = BoundCheckResult::make(violations, 0.0);
    res.details = per_angle;
    return res;
  }

  const auto pair = density_pair(a.pair, a.resolution, a.dim);
  const TriangularMap map(pair.source, pair.target);
  const int d = map.dim();

  if (a.suite == "pushforward") {
    const double tol = a.tolerance > 0.0 ? a.tolerance : (d == 1 ? 1e-3 : 5e-3);
    const double r = pushforward_residual(map, interior_points(d, a.points, 0.01));
    auto res = BoundCheckResult::make(r, tol);
    res.details["residual"] = r;
    return res;
  }
  if (a.suite == "spectrum") {
    const auto rep = spectrum_check(map, interior_points(d, a.points, 0.01));
    auto res = BoundCheckResult::make(static_cast<double>(rep.violating_points.size()), 0.0);
    res.details["min_margin"] = rep.min_real_eigenvalue_margin;
    return res;
  }

  const StraightLineField f(map);
  std::mt19937_64 rng(seed);
  if (a.suite == "gronwall") {
    const PerturbedField g(f, BumpPerturbation::random(d, a.eps, rng));
    return verify_gronwall(f, g, pair.source, cfg);
  }
  if (a.suite == "l2") {
    const PerturbedField g(f, BumpPerturbation::random(d, a.eps, rng));
    L2StabilityOptions opts;
    opts.nodes_per_axis = d == 1 ? 128 : 24;
    return verify_l2_stability(f, g, pair.source, cfg, opts);
  }
  if (a.suite == "energy") {
    const StraightLineField alt(map, TimeProfile::quadratic());
    const int nodes = d == 1 ? 128 : 16;
    const double ke = kinetic_energy(f, pair.source, cfg, nodes);
    const double ke_alt = kinetic_energy(alt, pair.source, cfg, nodes);
    auto res = BoundCheckResult::make(ke, ke_alt);
    res.details["kinetic_energy_straight"] = ke;
    res.details["kinetic_energy_quadratic"] = ke_alt;
    return res;
  }
  throw ArgumentError("unknown suite '" + a.suite + "'");
}

inline int run_impl(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Triangular transport maps and straight-line velocity fields", "flowforge"};
  app.require_subcommand(1, 1);
  // Global options are also accepted after the subcommand name.
  app.fallthrough();
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--seed", seed, "Seed for all randomness")->capture_default_str();
  app.add_option("--threads", threads, "Worker thread cap")->capture_default_str()
      ->check(CLI::PositiveNumber);

  // kr-build
  auto* kr = app.add_subcommand("kr-build", "Build the triangular map between two densities");
  std::string kr_source, kr_target, kr_out;
  kr->add_option("--source", kr_source, "Source density JSON")->required();
  kr->add_option("--target", kr_target, "Target density JSON")->required();
  kr->add_option("--out", kr_out, "Output map JSON")->required();

  // flow-sample
  auto* fs = app.add_subcommand("flow-sample", "Integrate trajectories of a velocity field");
  std::string fs_field, fs_points, fs_out;
  int fs_steps = 100;
  fs->add_option("--field", fs_field, "Field JSON (network weights or straight_line)")->required();
  fs->add_option("--points", fs_points, "Starting points CSV")->required();
  fs->add_option("--out", fs_out, "Trajectory CSV")->required();
  fs->add_option("--steps", fs_steps, "RK4 steps")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a residual-network velocity field");
  std::string tr_config, tr_out, tr_report;
  bool tr_wallclock = false;
  tr->add_option("--config", tr_config, "Training configuration JSON")->required();
  tr->add_option("--out", tr_out, "Output weights JSON")->required();
  tr->add_option("--report", tr_report, "Per-iteration report CSV");
  tr->add_flag("--wallclock", tr_wallclock, "Record wall-clock times in the report");

  // metrics
  auto* me = app.add_subcommand("metrics", "Distances between densities or sample sets");
  std::string me_kind, me_p, me_q, me_ps, me_qs, me_order = "1", me_out;
  me->add_option("--kind", me_kind, "l2 | chi2 | kl | wasserstein")
      ->required()
      ->check(CLI::IsMember({"l2", "chi2", "kl", "wasserstein"}));
  me->add_option("--p", me_p, "First density JSON");
  me->add_option("--q", me_q, "Second density JSON");
  me->add_option("--p-samples", me_ps, "First sample CSV");
  me->add_option("--q-samples", me_qs, "Second sample CSV");
  me->add_option("--order", me_order, "Wasserstein order: 1, 2 or inf")->capture_default_str();
  me->add_option("--out", me_out, "Output JSON (default stdout)");

  // verify
  auto* ve = app.add_subcommand("verify", "Numerical checks of the transport and stability results");
  VerifyArgs va;
  ve->add_option("--suite", va.suite, "gronwall | l2 | energy | pushforward | spectrum")
      ->required()
      ->check(CLI::IsMember({"gronwall", "l2", "energy", "pushforward", "spectrum"}));
  ve->add_option("--density-pair", va.pair,
                 "sine-uniform | uniform-sine | product-uniform | uniform-uniform")
      ->capture_default_str();
  ve->add_option("--resolution", va.resolution, "Grid points per axis");
  ve->add_option("--dim", va.dim, "Dimension for uniform-uniform")->capture_default_str();
  ve->add_option("--points", va.points, "Sample points")->capture_default_str();
  ve->add_option("--steps", va.steps, "RK4 steps")->capture_default_str();
  ve->add_option("--eps", va.eps, "Perturbation size")->capture_default_str();
  ve->add_option("--tolerance", va.tolerance, "Pushforward residual tolerance");
  ve->add_option("--rotation-angle", va.angles, "Check rotation Jacobians instead of a map");
  ve->add_option("--out", va.out, "Output JSON (default stdout)");

  // export-density
  auto* ex = app.add_subcommand("export-density", "Write a density's grid values as CSV");
  std::string ex_density, ex_out;
  ex->add_option("--density", ex_density, "Density JSON")->required();
  ex->add_option("--out", ex_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "flowforge: " << e.what() << "\n";
    return kExitArgument;
  }

  try {
    if (*kr) {
      const auto src = io::density_from_json(io::read_json_file(kr_source));
      const auto tgt = io::density_from_json(io::read_json_file(kr_target));
      io::write_json_file(kr_out, io::map_to_json(kr_construct(src, tgt)));
      return kExitOk;
    }
    if (*fs) {
      const json fj = io::read_json_file(fs_field);
      const auto pts = io::read_points_csv(fs_points);
      const IntegratorConfig cfg{fs_steps, threads};
      std::vector<std::vector<TrajectoryPoint>> trajs(pts.size());
      auto sample = [&](const auto& field) {
        for (const auto& p : pts)
          flowforge::detail::require(p.size() == field.dim(),
                                     "flow-sample: point dimension does not match the field");
        flowforge::detail::parallel_for(pts.size(), threads, [&](std::size_t i) {
          trajs[i] = trajectory(field, pts[i], cfg);
        });
      };
      if (fj.value("kind", std::string()) == "straight_line")
        sample(io::straightline_from_json(fj));
      else
        sample(io::resnet_from_json(fj));
      io::write_text_file(fs_out, io::trajectories_csv(trajs));
      return kExitOk;
    }
    if (*tr) {
      const json cj = io::read_json_file(tr_config);
      TrainConfig cfg = io::train_config_from_json(cj);
      if (app.get_option("--seed")->count() > 0) cfg.seed = seed;
      if (app.get_option("--threads")->count() > 0) cfg.threads = threads;
      cfg.wallclock = tr_wallclock;
      const GridDensity source = io::density_from_json(io::detail::get<json>(cj, "source", "train config"));
      const json init = cj.value("init", json::object());
      std::mt19937_64 init_rng(cfg.seed);
      const ResNetField f0 = ResNetField::random(
          source.dim(), init.value("width", 16), init.value("layers", 2), init_rng,
          init.value("scale", 0.1), init.value("step", 0.0),
          activation_from_string(init.value("activation", std::string("tanh"))),
          init.value("mask", true));
      TrainReport rep;
      if (cfg.direction == Direction::SourceToTarget) {
        rep = train(source, io::density_from_json(io::detail::get<json>(cj, "target", "train config")),
                    f0, cfg);
      } else {
        rep = train(source, io::read_points_csv(io::detail::get<std::string>(cj, "samples", "train config")),
                    f0, cfg);
      }
      io::write_json_file(tr_out, io::resnet_to_json(rep.field));
      if (!tr_report.empty()) io::write_text_file(tr_report, io::report_csv(rep));
      json summary = {{"schema", io::kSchema},
                      {"iterations", rep.history.size()},
                      {"final_kl_estimate", rep.final_kl_estimate},
                      {"final_reg_estimate", rep.final_reg_estimate},
                      {"diverged", rep.diverged},
                      {"outside_evaluations", rep.outside_evaluations}};
      out << summary.dump(2) << "\n";
      if (rep.outside_evaluations > 0)
        err << "flowforge: warning: " << rep.outside_evaluations
            << " endpoint evaluations outside the unit cube used the nearest-point extension\n";
      if (rep.diverged) {
        err << "flowforge: training diverged: " << rep.divergence_message << "\n";
        return kExitNumeric;
      }
      return kExitOk;
    }
    if (*me) {
      double value = 0.0;
      if (me_kind == "wasserstein") {
        if (me_ps.empty() || me_qs.empty())
          throw ArgumentError("metrics: wasserstein needs --p-samples and --q-samples");
        double order = 0.0;
        if (me_order == "inf") order = std::numeric_limits<double>::infinity();
        else if (me_order == "1") order = 1.0;
        else if (me_order == "2") order = 2.0;
        else throw ArgumentError("metrics: --order must be 1, 2 or inf");
        value = wasserstein(io::read_points_csv(me_ps), io::read_points_csv(me_qs), order);
      } else {
        if (me_p.empty() || me_q.empty())
          throw ArgumentError("metrics: --p and --q density files are required");
        const auto p = io::density_from_json(io::read_json_file(me_p));
        const auto q = io::density_from_json(io::read_json_file(me_q));
        if (me_kind == "l2") value = l2_density_distance(p, q);
        else if (me_kind == "chi2") value = chi2_divergence(p, q);
        else value = kl_divergence(p, q);
      }
      json j = {{"schema", io::kSchema}, {"kind", me_kind}, {"value", value}};
      if (me_kind == "wasserstein") j["order"] = me_order;
      emit(j, me_out, out);
      return kExitOk;
    }
    if (*ve) {
      const auto res = run_verify(va, seed, threads);
      json j = io::bound_check_to_json(res);
      j["suite"] = va.suite;
      if (va.angles.empty()) j["density_pair"] = va.pair;
      emit(j, va.out, out);
      if (!res.satisfied) {
        err << "flowforge: verification '" << va.suite << "' failed: measured "
            << io::format_double(res.measured) << " > bound " << io::format_double(res.bound)
            << "\n";
        return kExitNumeric;
      }
      return kExitOk;
    }
    if (*ex) {
      io::write_text_file(ex_out, io::density_csv(io::density_from_json(io::read_json_file(ex_density))));
      return kExitOk;
    }
  } catch (const ArgumentError& e) {
    err << "flowforge: " << e.what() << "\n";
    return kExitArgument;
  } catch (const DomainError& e) {
    err << "flowforge: " << e.what() << "\n";
    return kExitArgument;
  } catch (const io::json::exception& e) {
    err << "flowforge: bad JSON input: " << e.what() << "\n";
    return kExitArgument;
  } catch (const NumericError& e) {
    err << "flowforge: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const CapabilityError& e) {
    err << "flowforge: unsupported: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitArgument;
}

}  // namespace detail

/// Runs one command line; diagnostics go to `err`, reports to `out`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  try {
    return detail::run_impl(argc, argv, out, err);
  } catch (const std::exception& e) {
    err << "flowforge: " << e.what() << "\n";
    return kExitNumeric;
  }
}

}  // namespace flowforge::cli

#endif  // FLOWFORGE_CLI_HPP
