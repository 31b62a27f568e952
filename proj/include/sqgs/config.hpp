#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "optimize.hpp"

namespace sqgs {

/// Everything a CLI run depends on.
struct RunConfig {
  OptimConfig optim;
  std::string stage = "both"; // block | point | both
  int threads = 0;            // 0: hardware concurrency
};

// ---------------------------------------------------------------------------
// Minimal reader/writer for flat TOML: `key = value` lines with integers,
// floats, booleans, strings and one-line arrays of numbers.

using TomlValue = std::variant<bool, long long, double, std::string, std::vector<double>>;

namespace detail {

inline std::string trim(const std::string &s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos)
    return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string strip_comment(const std::string &line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\'))
      in_str = !in_str;
    if (line[i] == '#' && !in_str)
      return line.substr(0, i);
  }
  return line;
}

inline bool parse_number(const std::string &s, TomlValue &out) {
  std::string t;
  for (char c : s)
    if (c != '_')
      t += c;
  if (t.empty())
    return false;
  const bool is_float = t.find_first_of(".eE") != std::string::npos || t == "inf" || t == "nan";
  if (!is_float) {
    long long v = 0;
    const auto r = std::from_chars(t.data() + (t[0] == '+'), t.data() + t.size(), v);
    if (r.ec == std::errc() && r.ptr == t.data() + t.size()) {
      out = v;
      return true;
    }
    return false;
  }
  double v = 0;
  const auto r = std::from_chars(t.data() + (t[0] == '+'), t.data() + t.size(), v);
  if (r.ec == std::errc() && r.ptr == t.data() + t.size()) {
    out = v;
    return true;
  }
  return false;
}

inline TomlValue parse_value(const std::string &raw, int line) {
  const std::string s = trim(raw);
  const std::string where = "config line " + std::to_string(line) + ": ";
  if (s == "true")
    return true;
  if (s == "false")
    return false;
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
    return s.substr(1, s.size() - 2);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
    std::vector<double> arr;
    std::stringstream ss(s.substr(1, s.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty())
        continue;
      TomlValue v;
      if (!parse_number(item, v))
        throw Error(where + "array items must be numbers, got '" + item + "'");
      arr.push_back(std::holds_alternative<long long>(v) ? static_cast<double>(std::get<long long>(v))
                                                         : std::get<double>(v));
    }
    return arr;
  }
  TomlValue v;
  if (!parse_number(s, v))
    throw Error(where + "cannot parse value '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos)
    s += ".0";
  return s;
}

} // namespace detail

inline std::map<std::string, TomlValue> parse_toml(const std::string &text) {
  std::map<std::string, TomlValue> out;
  std::stringstream ss(text);
  std::string line;
  int no = 0;
  while (std::getline(ss, line)) {
    ++no;
    const std::string s = detail::trim(detail::strip_comment(line));
    if (s.empty())
      continue;
    if (s.front() == '[')
      throw Error("config line " + std::to_string(no) + ": tables are not supported, keys must be flat");
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(no) + ": expected 'key = value'");
    const std::string key = detail::trim(s.substr(0, eq));
    if (key.empty())
      throw Error("config line " + std::to_string(no) + ": empty key");
    if (out.count(key))
      throw Error("config line " + std::to_string(no) + ": duplicate key '" + key + "'");
    out[key] = detail::parse_value(s.substr(eq + 1), no);
  }
  return out;
}

namespace detail {

/// Binds every config key to a field; used for both reading and writing.
template <typename Visitor> void visit_config(RunConfig &rc, Visitor &&v) {
  OptimConfig &o = rc.optim;
  v("stage", rc.stage);
  v("threads", rc.threads);
  v("seed", o.seed);
  v("m_init", o.m_init);
  v("m_max", o.m_max);
  v("iters_block", o.iters_block);
  v("iters_point", o.iters_point);
  v("add_iters", o.add_iters);
  v("prune_tau", o.prune_tau);
  v("gamma", o.gamma);
  v("k_overlap", o.k_overlap);
  v("dbscan_eps", o.dbscan_eps);
  v("dbscan_min_pts", o.dbscan_min_pts);
  v("rays_per_view", o.rays_per_view);
  v("samples_per_ray", o.samples_per_ray);
  v("overlap_points", o.overlap_points);
  v("enter_points", o.enter_points);
  v("s_max", o.s_max);
  v("init_points", o.init_points);
  v("checkpoint_every", o.checkpoint_every);
  v("lambda_ssim", o.weights.lambda_ssim);
  v("lambda_cov", o.weights.cov);
  v("lambda_over", o.weights.over);
  v("lambda_par", o.weights.par);
  v("lambda_opa", o.weights.opa);
  v("lambda_enter", o.weights.enter);
  v("lambda_scale", o.weights.scale);
  v("lambda_mask", o.weights.mask);
  v("icosphere_level", o.hybrid.level);
  v("gaussians_per_face", o.hybrid.gaussians_per_face);
  v("c", o.hybrid.c);
  v("sh_degree", o.hybrid.sh_degree);
  v("lr_translation", o.lr.translation);
  v("lr_rotation", o.lr.rotation);
  v("lr_shape", o.lr.shape);
  v("lr_opacity", o.lr.opacity);
  v("lr_sh", o.lr.sh);
  v("lr_point_center", o.lr_point.center);
  v("lr_point_rotation", o.lr_point.rotation);
  v("lr_point_scale", o.lr_point.scale);
  v("lr_point_opacity", o.lr_point.opacity);
  v("lr_point_sh", o.lr_point.sh);
  v("lowpass", o.render.lowpass);
  v("near", o.render.near);
  v("alpha_max", o.render.alpha_max);
  v("min_transmittance", o.render.min_transmittance);
  v("cutoff", o.render.cutoff);
  v("tile", o.render.tile);
}

} // namespace detail

inline void validate_run_config(const RunConfig &rc) {
  require(rc.stage == "block" || rc.stage == "point" || rc.stage == "both", "stage must be block, point or both");
  require(rc.threads >= 0, "threads must be non-negative");
  require(rc.optim.hybrid.level >= 0 && rc.optim.hybrid.level <= 4, "icosphere_level must be in [0, 4]");
  require(rc.optim.hybrid.gaussians_per_face > 0, "gaussians_per_face must be positive");
  require(rc.optim.hybrid.sh_degree >= 0 && rc.optim.hybrid.sh_degree <= 3, "sh_degree must be in [0, 3]");
  require(rc.optim.hybrid.c > 0.0, "c must be positive");
  require(rc.optim.render.tile > 0, "tile must be positive");
  rc.optim.validate();
}

/// Applies the keys of a flat TOML document on top of `rc`; unknown keys are errors.
inline void apply_toml(RunConfig &rc, const std::string &text) {
  auto kv = parse_toml(text);
  detail::visit_config(rc, [&](const std::string &key, auto &field) {
    auto it = kv.find(key);
    if (it == kv.end())
      return;
    using F = std::decay_t<decltype(field)>;
    const TomlValue &v = it->second;
    const std::string bad = "config key '" + key + "' has the wrong type";
    if constexpr (std::is_same_v<F, std::string>) {
      require(std::holds_alternative<std::string>(v), bad);
      field = std::get<std::string>(v);
    } else if constexpr (std::is_same_v<F, std::vector<int>>) {
      require(std::holds_alternative<std::vector<double>>(v), bad);
      field.clear();
      for (double d : std::get<std::vector<double>>(v)) {
        require(d == std::floor(d), "config key '" + key + "' needs integers");
        field.push_back(static_cast<int>(d));
      }
    } else if constexpr (std::is_same_v<F, double>) {
      if (std::holds_alternative<long long>(v))
        field = static_cast<double>(std::get<long long>(v));
      else {
        require(std::holds_alternative<double>(v), bad);
        field = std::get<double>(v);
      }
    } else {
      require(std::holds_alternative<long long>(v), bad);
      const long long x = std::get<long long>(v);
      if constexpr (std::is_unsigned_v<F>)
        require(x >= 0, "config key '" + key + "' must be non-negative");
      field = static_cast<F>(x);
    }
    kv.erase(it);
  });
  if (!kv.empty())
    throw Error("unknown config key '" + kv.begin()->first + "'");
}

inline RunConfig load_run_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig rc;
  apply_toml(rc, ss.str());
  validate_run_config(rc);
  return rc;
}

/// Serializes every key; parsing the result reproduces `rc` exactly.
inline std::string dump_toml(const RunConfig &rc_in) {
  RunConfig rc = rc_in;
  std::ostringstream out;
  detail::visit_config(rc, [&](const std::string &key, auto &field) {
    using F = std::decay_t<decltype(field)>;
    out << key << " = ";
    if constexpr (std::is_same_v<F, std::string>)
      out << '"' << field << '"';
    else if constexpr (std::is_same_v<F, std::vector<int>>) {
      out << '[';
      for (std::size_t i = 0; i < field.size(); ++i)
        out << (i ? ", " : "") << field[i];
      out << ']';
    } else if constexpr (std::is_same_v<F, double>)
      out << detail::format_double(field);
    else
      out << field;
    out << '\n';
  });
  return out.str();
}

} // namespace sqgs
