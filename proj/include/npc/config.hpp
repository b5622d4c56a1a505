#pragma once

// Flat `key = value` run configuration. Lines starting with '#' are comments.
// A `preset` line is applied first wherever it appears; other keys override it.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npc/trainer.hpp"

namespace npc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "toy";  // toy | sine | csv
  std::string train_path, test_path;
  std::size_t series = 64;  // sine training series
  std::size_t test_series = 32;
  std::size_t length = 100;
  double noise = 0.05;
  double drop = 0.0;  // fraction of interior points masked (regression)
  bool normalize = true;
};

struct RunConfig {
  std::string preset;
  ModelConfig model;
  TrainConfig train;
  Method method = Method::kNpc;
  DataConfig data;
  std::uint64_t seed = 0;
  std::string out = "npc-out";
  std::vector<std::size_t> sweep_horizons{2, 3, 4, 5, 6, 7, 8};
  std::vector<double> sweep_drops{0.4, 0.8};

  /// Model config with the seed propagated; input width and class count come from the data.
  ModelConfig model_for(std::size_t input_dim, std::size_t classes) const {
    ModelConfig m = method == Method::kBaseline ? baseline_config(model) : model;
    m.input_dim = input_dim;
    if (m.task == Task::kClassification) m.classes = std::max(m.classes, classes);
    m.seed = seed;
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed + 1;
    return t;
  }

  nlohmann::json to_json() const {
    return {{"preset", preset},
            {"method", to_string(method)},
            {"seed", seed},
            {"model", model.to_json()},
            {"trainer",
             {{"epochs", train.epochs},
              {"batch", train.batch},
              {"inner_steps", train.inner_steps},
              {"lr", train.lr},
              {"lambda", train.lambda},
              {"patience", train.patience},
              {"plateau_tol", train.plateau_tol}}},
            {"data",
             {{"source", data.source},
              {"train", data.train_path},
              {"test", data.test_path},
              {"series", data.series},
              {"test_series", data.test_series},
              {"length", data.length},
              {"noise", data.noise},
              {"drop", data.drop},
              {"normalize", data.normalize}}}};
  }
};

struct Preset {
  const char* name;
  std::size_t window, horizon;
  double lr, lambda;
};

/// Per-dataset hyperparameters (input window, horizons, learning rate,
/// action penalty). `toy` and `sine` are the builtin generators.
inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> p = {
      {"har", 4, 5, 0.001, 0.2},    {"earth", 6, 10, 0.0001, 0.01},   {"ecg", 4, 5, 0.0008, 0.1},
      {"car", 8, 6, 0.003, 0.01},   {"wordsyn", 12, 10, 0.005, 0.01}, {"trace", 10, 8, 0.001, 0.01},
      {"plane", 12, 12, 0.003, 0.005}, {"fish", 14, 14, 0.003, 0.02}, {"symbol", 10, 12, 0.003, 0.03},
      {"syncon", 12, 14, 0.002, 0.01}, {"pv", 10, 4, 0.0002, 0.005},  {"toy", 4, 5, 0.003, 0.2},
      {"sine", 4, 2, 0.005, 0.2},
  };
  return p;
}

inline void apply_preset(RunConfig& c, const std::string& name) {
  const auto& all = presets();
  const auto it = std::find_if(all.begin(), all.end(), [&](const Preset& p) { return name == p.name; });
  if (it == all.end()) throw ConfigError("preset: unknown preset '" + name + "'");
  c.preset = name;
  c.model.window = it->window;
  c.model.horizon = it->horizon;
  c.train.lr = it->lr;
  c.train.lambda = it->lambda;
  if (name == "toy") {
    c.model.task = Task::kClassification;
    c.data.source = "toy";
    c.data.drop = 0.0;
    c.model.hidden = 8;
    c.model.controller_hidden = 8;
    c.model.head_hidden = 16;
    c.model.action_dim = 4;
    c.model.solver.substeps = 1;
    c.train.epochs = 30;
  } else if (name == "sine") {
    c.model.task = Task::kRegression;
    c.model.jumps = false;
    c.data.source = "sine";
    c.data.drop = 0.8;
    c.model.hidden = 16;
    c.model.controller_hidden = 16;
    c.model.head_hidden = 16;
    c.model.action_dim = 4;
    c.model.solver.substeps = 1;
    c.train.epochs = 200;
    c.train.patience = 20;
  } else {
    c.data.source = "csv";
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  if (!v.empty() && v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return parse_number<std::size_t>(key, v);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& v, F&& item) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(item(trim(tok)));
  return out;
}

}  // namespace detail

/// Applies one key. Throws ConfigError naming the key on unknown keys or bad values.
inline void set_key(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  auto count = [&] { return parse_count(key, v); };
  auto real = [&] { return parse_number<double>(key, v); };
  auto wrap = [&](auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  if (key == "preset") wrap([&] { apply_preset(c, v); });
  else if (key == "task") wrap([&] { c.model.task = task_from_string(v); });
  else if (key == "method") wrap([&] { c.method = method_from_string(v); });
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "out") c.out = v;
  else if (key == "data.source") {
    if (v != "toy" && v != "sine" && v != "csv") throw ConfigError(key + ": expected toy, sine or csv, got '" + v + "'");
    c.data.source = v;
  } else if (key == "data.train") c.data.train_path = v;
  else if (key == "data.test") c.data.test_path = v;
  else if (key == "data.series") c.data.series = count();
  else if (key == "data.test_series") c.data.test_series = count();
  else if (key == "data.length") c.data.length = count();
  else if (key == "data.noise") c.data.noise = real();
  else if (key == "data.drop") c.data.drop = real();
  else if (key == "data.normalize") c.data.normalize = parse_bool(key, v);
  else if (key == "model.backend") wrap([&] { c.model.backend = backend_from_string(v); });
  else if (key == "model.hidden") c.model.hidden = count();
  else if (key == "model.fdepth") c.model.fdepth = count();
  else if (key == "model.fwidth") c.model.fwidth = count();
  else if (key == "model.horizon") c.model.horizon = count();
  else if (key == "model.classes") c.model.classes = count();
  else if (key == "controller.window") c.model.window = count();
  else if (key == "controller.hidden") c.model.controller_hidden = count();
  else if (key == "controller.head_hidden") c.model.head_hidden = count();
  else if (key == "controller.action_dim") c.model.action_dim = count();
  else if (key == "ode_rnn.jumps") c.model.jumps = parse_bool(key, v);
  else if (key == "solver.method") wrap([&] { c.model.solver.method = solver_method_from_string(v); });
  else if (key == "solver.substeps") c.model.solver.substeps = static_cast<int>(count());
  else if (key == "trainer.epochs") c.train.epochs = count();
  else if (key == "trainer.batch") c.train.batch = count();
  else if (key == "trainer.inner_steps") c.train.inner_steps = count();
  else if (key == "trainer.lr") c.train.lr = real();
  else if (key == "trainer.patience") c.train.patience = count();
  else if (key == "trainer.plateau_tol") c.train.plateau_tol = real();
  else if (key == "objective.lambda") c.train.lambda = real();
  else if (key == "sweep.horizons") c.sweep_horizons = parse_list<std::size_t>(v, [&](const std::string& s) { return parse_count(key, s); });
  else if (key == "sweep.drops") c.sweep_drops = parse_list<double>(v, [&](const std::string& s) { return parse_number<double>(key, s); });
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Range checks that do not depend on the data.
inline void validate(const RunConfig& c) {
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.train.batch == 0) throw ConfigError("trainer.batch must be positive");
  if (!(c.train.lr > 0)) throw ConfigError("trainer.lr must be positive");
  if (c.train.lambda < 0) throw ConfigError("objective.lambda must be >= 0");
  if (!(c.data.drop >= 0 && c.data.drop < 1)) throw ConfigError("data.drop must lie in [0, 1)");
  if (c.data.source == "csv" && c.data.train_path.empty()) throw ConfigError("data.train is required when data.source = csv");
  if (c.data.source == "sine" && c.model.task != Task::kRegression)
    throw ConfigError("data.source = sine requires task = regression");
  if (c.data.source == "toy" && c.model.task != Task::kClassification)
    throw ConfigError("data.source = toy requires task = classification");
  for (double d : c.sweep_drops)
    if (!(d >= 0 && d < 1)) throw ConfigError("sweep.drops entries must lie in [0, 1)");
  for (std::size_t m : c.sweep_horizons)
    if (m == 0) throw ConfigError("sweep.horizons entries must be positive");
}

inline RunConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
  std::vector<std::pair<std::string, std::string>> kv;
  std::map<std::string, std::size_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (seen.contains(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(seen[key]) + ")");
    seen[key] = lineno;
    kv.emplace_back(key, value);
  }
  RunConfig c;
  auto apply = [&](const std::string& k, const std::string& v) {
    try {
      set_key(c, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(seen[k]) + ": " + e.what());
    }
  };
  if (seen.contains("preset"))
    for (const auto& [k, v] : kv)
      if (k == "preset") apply(k, v);
  for (const auto& [k, v] : kv)
    if (k != "preset") apply(k, v);
  validate(c);
  return c;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(f, path);
}

}  // namespace npc
