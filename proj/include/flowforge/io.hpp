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

// JSON and CSV formats for densities, maps, network weights, training
// configurations and bound checks. Every JSON document carries "schema": 1.

#ifndef FLOWFORGE_IO_HPP
#define FLOWFORGE_IO_HPP

#include "flowforge/metrics.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>

namespace flowforge::io {

using json = nlohmann::json;

inline constexpr int kSchema = 1;

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArgumentError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ArgumentError("write to '" + path + "' failed");
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

namespace detail {

inline void check_schema(const json& j, const char* what) {
  if (!j.is_object()) throw ArgumentError(std::string(what) + ": expected a JSON object");
  if (j.contains("schema") && j.at("schema") != kSchema)
    throw ArgumentError(std::string(what) + ": unsupported schema " + j.at("schema").dump());
}

template <class T>
T get(const json& j, const char* key, const char* what) {
  if (!j.contains(key))
    throw ArgumentError(std::string(what) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ArgumentError(std::string(what) + ": bad field '" + key + "': " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const char* what) {
  return j.contains(key) ? get<T>(j, key, what) : fallback;
}

inline std::function<double(double)> sine_factor(double amp, int freq) {
  flowforge::detail::require(std::abs(amp) < 1.0, "sine factor: |amplitude| must be < 1");
  return [=](double x) { return 1.0 + amp * std::sin(2.0 * kPi * freq * x); };
}

inline json vec_json(const Vec& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vec vec_from(const json& j, const char* what) {
  try {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  } catch (const json::exception& e) {
    throw ArgumentError(std::string(what) + ": expected a number array: " + e.what());
  }
}

// Matrices are stored as arrays of rows.
inline json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

inline Mat mat_from(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw ArgumentError(std::string(what) + ": expected " + std::to_string(rows) + " rows");
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Vec r = vec_from(j[static_cast<std::size_t>(i)], what);
    if (r.size() != cols)
      throw ArgumentError(std::string(what) + ": expected " + std::to_string(cols) + " columns");
    m.row(i) = r.transpose();
  }
  return m;
}

}  // namespace detail

/// Tabulated form: {"schema", "dim", "resolution", "values"}.
inline json density_to_json(const GridDensity& p) {
  return {{"schema", kSchema},
          {"dim", p.dim()},
          {"resolution", p.resolution()},
          {"values", p.values()}};
}

/// Accepts the tabulated form or a closed-form family:
///   {"kind": "uniform", "dim", "resolution"}
///   {"kind": "sine1d", "resolution", "params": {"amplitude", "frequency"}}
///   {"kind": "product", "resolution", "params": {"factors": [{"amplitude", "frequency"}, ...]}}
/// where factors are 1 + amplitude sin(2 pi frequency x).
inline GridDensity density_from_json(const json& j) {
  constexpr const char* what = "density";
  detail::check_schema(j, what);
  const int m = detail::get<int>(j, "resolution", what);
  if (!j.contains("kind")) {
    return GridDensity(detail::get<int>(j, "dim", what), m,
                       detail::get<std::vector<double>>(j, "values", what));
  }
  const auto kind = detail::get<std::string>(j, "kind", what);
  const json params = j.value("params", json::object());
  if (kind == "uniform") return GridDensity::uniform(detail::get_or<int>(j, "dim", 1, what), m);
  if (kind == "sine1d")
    return GridDensity::sine1d(m, detail::get_or<double>(params, "amplitude", 0.5, what),
                               detail::get_or<int>(params, "frequency", 1, what));
  if (kind == "product") {
    const auto factors = detail::get<json>(params, "factors", what);
    if (!factors.is_array() || factors.empty())
      throw ArgumentError("density: product needs a nonempty 'factors' array");
    std::vector<std::function<double(double)>> fs;
    for (const auto& f : factors)
      fs.push_back(detail::sine_factor(detail::get_or<double>(f, "amplitude", 0.5, what),
                                       detail::get_or<int>(f, "frequency", 1, what)));
    return GridDensity::product(fs, m);
  }
  throw ArgumentError("density: unknown kind '" + kind + "'");
}

/// {"schema", "dim", "resolution", "source", "target", "cdf_tables"} where
/// cdf_tables[k-1] holds {"source", "target"} conditional CDFs F_k at all
/// grid nodes of [0,1]^k, row-major.
inline json map_to_json(const TriangularMap& map) {
  const auto& src = map.source();
  const auto& tgt = map.target();
  json tables = json::array();
  for (int k = 1; k <= map.dim(); ++k) {
    auto tabulate = [k](const GridDensity& p) {
      const int m = p.resolution();
      std::size_t n = 1;
      for (int i = 0; i < k; ++i) n *= static_cast<std::size_t>(m);
      std::vector<double> out(n);
      Vec x = Vec::Zero(p.dim());
      for (std::size_t idx = 0; idx < n; ++idx) {
        std::size_t r = idx;
        for (int i = k - 1; i >= 0; --i) {
          x[i] = p.node(static_cast<int>(r % m));
          r /= m;
        }
        out[idx] = p.conditional_cdf(k, x, x[k - 1]);
      }
      return out;
    };
    tables.push_back({{"source", tabulate(src)}, {"target", tabulate(tgt)}});
  }
  return {{"schema", kSchema},
          {"dim", map.dim()},
          {"resolution", src.resolution()},
          {"source", density_to_json(src)},
          {"target", density_to_json(tgt)},
          {"cdf_tables", tables}};
}

/// The CDF tables are derived data; the map is rebuilt from the densities.
inline TriangularMap map_from_json(const json& j) {
  detail::check_schema(j, "map");
  return TriangularMap(density_from_json(detail::get<json>(j, "source", "map")),
                       density_from_json(detail::get<json>(j, "target", "map")));
}

inline json resnet_to_json(const ResNetField& f) {
  json K = json::array(), b = json::array();
  for (std::size_t i = 0; i < f.K.size(); ++i) {
    K.push_back(detail::mat_json(f.K[i]));
    b.push_back(detail::vec_json(f.b[i]));
  }
  return {{"schema", kSchema},
          {"dim", f.dim()},
          {"width", f.width()},
          {"layers", f.layers()},
          {"step", f.step()},
          {"activation", to_string(f.activation())},
          {"mask", f.cube_mask()},
          {"K", K},
          {"b", b},
          {"output", {{"K", detail::mat_json(f.K_out)}, {"b", detail::vec_json(f.b_out)}}}};
}

inline ResNetField resnet_from_json(const json& j) {
  constexpr const char* what = "resnet";
  detail::check_schema(j, what);
  const int d = detail::get<int>(j, "dim", what);
  const int w = detail::get<int>(j, "width", what);
  const int layers = detail::get<int>(j, "layers", what);
  ResNetField f(d, w, layers, detail::get<double>(j, "step", what),
                activation_from_string(detail::get_or<std::string>(j, "activation", "tanh", what)),
                detail::get_or<bool>(j, "mask", false, what));
  const json K = detail::get<json>(j, "K", what), b = detail::get<json>(j, "b", what);
  if (!K.is_array() || !b.is_array() || K.size() != f.K.size() || b.size() != f.b.size())
    throw ArgumentError("resnet: expected layers+1 entries in 'K' and 'b'");
  for (std::size_t i = 0; i < f.K.size(); ++i) {
    f.K[i] = detail::mat_from(K[i], f.K[i].rows(), f.K[i].cols(), what);
    f.b[i] = detail::vec_from(b[i], what);
    if (f.b[i].size() != w) throw ArgumentError("resnet: bias of wrong length");
  }
  const json out = detail::get<json>(j, "output", what);
  f.K_out = detail::mat_from(detail::get<json>(out, "K", what), d, w, what);
  f.b_out = detail::vec_from(detail::get<json>(out, "b", what), what);
  if (f.b_out.size() != d) throw ArgumentError("resnet: output bias of wrong length");
  return f;
}

inline TimeProfile profile_from_string(const std::string& s) {
  if (s == "linear") return TimeProfile::linear();
  if (s == "quadratic") return TimeProfile::quadratic();
  if (s == "cubic") return TimeProfile::cubic();
  if (s == "sine") return TimeProfile::sine();
  throw ArgumentError("unknown time profile '" + s + "'");
}

/// {"kind": "straight_line", "map": <map> | "source"+"target", "profile"}.
inline StraightLineField straightline_from_json(const json& j) {
  constexpr const char* what = "field";
  detail::check_schema(j, what);
  TriangularMap map = j.contains("map")
                          ? map_from_json(j.at("map"))
                          : TriangularMap(density_from_json(detail::get<json>(j, "source", what)),
                                          density_from_json(detail::get<json>(j, "target", what)));
  return StraightLineField(std::move(map),
                           profile_from_string(detail::get_or<std::string>(j, "profile", "linear", what)));
}

inline std::string to_string(Direction d) {
  return d == Direction::SamplesToSource ? "samples_to_source" : "source_to_target";
}

inline Direction direction_from_string(const std::string& s) {
  if (s == "samples_to_source") return Direction::SamplesToSource;
  if (s == "source_to_target") return Direction::SourceToTarget;
  throw ArgumentError("unknown direction '" + s + "'");
}

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "adam") return Optimizer::Adam;
  throw ArgumentError("unknown optimizer '" + s + "'");
}

inline json train_config_to_json(const TrainConfig& c) {
  return {{"schema", kSchema},
          {"lambda", c.lambda},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_iters", c.max_iters},
          {"integrator", {{"steps", c.integrator.steps}}},
          {"seed", c.seed},
          {"direction", to_string(c.direction)},
          {"optimizer", c.optimizer == Optimizer::Sgd ? "sgd" : "adam"},
          {"threads", c.threads},
          {"holdout_samples", c.holdout_samples}};
}

inline TrainConfig train_config_from_json(const json& j) {
  constexpr const char* what = "train config";
  detail::check_schema(j, what);
  TrainConfig c;
  c.lambda = detail::get_or<double>(j, "lambda", c.lambda, what);
  c.learning_rate = detail::get_or<double>(j, "learning_rate", c.learning_rate, what);
  c.batch_size = detail::get_or<int>(j, "batch_size", c.batch_size, what);
  c.max_iters = detail::get_or<int>(j, "max_iters", c.max_iters, what);
  if (j.contains("integrator"))
    c.integrator.steps = detail::get_or<int>(j.at("integrator"), "steps", c.integrator.steps, what);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed, what);
  c.direction = direction_from_string(
      detail::get_or<std::string>(j, "direction", to_string(c.direction), what));
  c.optimizer = optimizer_from_string(detail::get_or<std::string>(j, "optimizer", "adam", what));
  c.threads = detail::get_or<int>(j, "threads", c.threads, what);
  c.holdout_samples = detail::get_or<int>(j, "holdout_samples", c.holdout_samples, what);
  c.validate();
  return c;
}

inline json bound_check_to_json(const BoundCheckResult& r) {
  json details = json::object();
  for (const auto& [k, v] : r.details) details[k] = v;
  return {{"schema", kSchema},
          {"measured", r.measured},
          {"bound", r.bound},
          {"satisfied", r.satisfied},
          {"slack", r.slack},
          {"details", details}};
}

// ---- CSV ------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// Reads one point per line; a first line that does not parse as numbers
/// is treated as a header.
inline std::vector<Vec> read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  std::vector<Vec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    bool ok = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        vals.push_back(std::stod(cell, &pos));
        if (cell.find_first_not_of(" \t", pos) != std::string::npos) ok = false;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (out.empty() && lineno == 1) continue;  // header
      throw ArgumentError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (!out.empty() && static_cast<Eigen::Index>(vals.size()) != out.front().size())
      throw ArgumentError(path + ":" + std::to_string(lineno) + ": inconsistent column count");
    out.push_back(Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  if (out.empty()) throw ArgumentError("'" + path + "' contains no points");
  return out;
}

inline std::string points_csv(const std::vector<Vec>& pts) {
  std::ostringstream os;
  if (pts.empty()) return "";
  for (Eigen::Index k = 0; k < pts.front().size(); ++k)
    os << (k ? "," : "") << "x_" << (k + 1);
  os << "\n";
  for (const auto& p : pts) {
    for (Eigen::Index k = 0; k < p.size(); ++k) os << (k ? "," : "") << format_double(p[k]);
    os << "\n";
  }
  return os.str();
}

/// Columns point, t, x_1..x_d, l, r; one row per RK4 knot.
inline std::string trajectories_csv(const std::vector<std::vector<TrajectoryPoint>>& trajs) {
  std::ostringstream os;
  if (trajs.empty() || trajs.front().empty()) return "";
  const auto d = trajs.front().front().state.x.size();
  os << "point,t";
  for (Eigen::Index k = 0; k < d; ++k) os << ",x_" << (k + 1);
  os << ",l,r\n";
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (const auto& tp : trajs[i]) {
      os << i << "," << format_double(tp.t);
      for (Eigen::Index k = 0; k < d; ++k) os << "," << format_double(tp.state.x[k]);
      os << "," << format_double(tp.state.l) << "," << format_double(tp.state.r) << "\n";
    }
  }
  return os.str();
}

/// Columns iter, erm_loss, kl_est, reg_est, wallclock_ms.
inline std::string report_csv(const TrainReport& rep) {
  std::ostringstream os;
  os << "iter,erm_loss,kl_est,reg_est,wallclock_ms\n";
  for (const auto& r : rep.history)
    os << r.iter << "," << format_double(r.erm_loss) << "," << format_double(r.kl_estimate)
       << "," << format_double(r.reg_estimate) << "," << format_double(r.wallclock_ms) << "\n";
  return os.str();
}

/// Columns x_1..x_d, value; one row per grid node.
inline std::string density_csv(const GridDensity& p) {
  std::ostringstream os;
  const int d = p.dim(), m = p.resolution();
  for (int k = 0; k < d; ++k) os << "x_" << (k + 1) << ",";
  os << "value\n";
  for (std::size_t idx = 0; idx < p.values().size(); ++idx) {
    std::size_t r = idx;
    std::vector<double> x(d);
    for (int k = d - 1; k >= 0; --k) {
      x[k] = p.node(static_cast<int>(r % m));
      r /= m;
    }
    for (int k = 0; k < d; ++k) os << format_double(x[k]) << ",";
    os << format_double(p.values()[idx]) << "\n";
  }
  return os.str();
}

}  // namespace flowforge::io

#endif  // FLOWFORGE_IO_HPP
