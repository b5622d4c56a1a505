// npc: data generation, training, evaluation, sweeps and theory checks.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "npc/npc.hpp"

namespace fs = std::filesystem;
namespace th = npc::theory;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("npc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* lvl = std::getenv("NPC_LOG");
  spdlog::set_level(lvl ? spdlog::level::from_str(lvl) : spdlog::level::info);
}

fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::logic_error&) {
      throw UsageError("expected a comma-separated list of numbers, got '" + s + "'");
    }
  }
  return out;
}

npc::RunConfig config_with_overrides(const std::string& path, const std::optional<std::uint64_t>& seed,
                                     const std::string& out) {
  npc::RunConfig c = path.empty() ? npc::RunConfig{} : npc::load_config(path);
  if (seed) c.seed = *seed;
  if (!out.empty()) c.out = out;
  return c;
}

/// Evaluation data: an explicit CSV, or the test split described by a config.
/// Values are mapped with the checkpoint's normalizer.
std::vector<npc::TimeSeries> evaluation_data(const npc::Checkpoint& ck, const std::string& data, const std::string& config,
                                             double drop, std::uint64_t seed) {
  std::vector<npc::TimeSeries> series;
  if (!data.empty()) {
    series = npc::load_csv(data);
    if (drop > 0) series = npc::drop_observations(std::move(series), drop, seed);
  } else if (!config.empty()) {
    npc::RunConfig c = npc::load_config(config);
    c.data.normalize = false;
    if (drop > 0) c.data.drop = drop;
    series = npc::resolve_data(c).test;
    if (series.empty()) throw UsageError("config '" + config + "' defines no test split");
  } else {
    throw UsageError("pass --data or --config to select evaluation data");
  }
  return ck.norm.apply(std::move(series));
}

int cmd_generate(const std::string& kind, std::uint64_t seed, const std::string& out, std::size_t series,
                 std::size_t length) {
  std::vector<npc::TimeSeries> data;
  if (kind == "toy-train") data = npc::gen_toy_train(seed);
  else if (kind == "toy-test") data = npc::gen_toy_test(seed);
  else if (kind == "sine") data = npc::gen_sine_regression(series, length, seed);
  else throw UsageError("unknown data kind '" + kind + "' (expected toy-train, toy-test or sine)");
  auto f = open_out(out);
  npc::write_csv(f, data);
  spdlog::info("wrote {} series to {}", data.size(), out);
  return 0;
}

int cmd_train(const npc::RunConfig& c) {
  const fs::path dir = ensure_dir(c.out);
  spdlog::info("training {} ({} backend, M={}) on {} data", npc::to_string(c.method), npc::to_string(c.model.backend),
               c.model.horizon, c.data.source);
  npc::RunResult r = npc::train_run(c);
  r.checkpoint.save((dir / "checkpoint.json").string());
  nlohmann::json report = r.report.to_json();
  report["method"] = npc::to_string(c.method);
  report["config"] = c.to_json();
  if (!r.data.test.empty()) report["test"] = npc::evaluate(*r.checkpoint.model, r.data.test, r.data.norm).to_json();
  write_json(dir / "report.json", report);
  spdlog::info("final loss {:.6g} after {} epochs; wrote {}", r.report.epoch_losses.back(), r.report.epochs_run,
               dir.string());
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& config,
                 const std::string& task, double drop, std::uint64_t seed, const std::string& out) {
  const npc::Checkpoint ck = npc::Checkpoint::load(checkpoint);
  if (!task.empty() && npc::task_from_string(task) != ck.model->config().task)
    throw UsageError("checkpoint is a " + std::string(npc::to_string(ck.model->config().task)) + " model, not " + task);
  const auto series = evaluation_data(ck, data, config, drop, seed);
  const npc::MetricsReport m = npc::evaluate(*ck.model, series, ck.norm);
  const nlohmann::json j = m.to_json();
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    const fs::path dir = ensure_dir(out);
    write_json(dir / "metrics.json", j);
    std::ofstream f(dir / "points.csv");
    npc::write_points_csv(f, m.rows);
  }
  return 0;
}

int cmd_interpolate(const std::string& checkpoint, const std::string& data, const std::string& times, double drop,
                    std::uint64_t seed, const std::string& out) {
  const npc::Checkpoint ck = npc::Checkpoint::load(checkpoint);
  if (ck.model->config().task != npc::Task::kRegression) throw UsageError("interpolate needs a regression checkpoint");
  const auto series = evaluation_data(ck, data, "", drop, seed);
  std::vector<npc::PointRow> rows;
  const std::vector<double> query = times.empty() ? std::vector<double>{} : parse_doubles(times);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ts = series[s];
    const auto& q = times.empty() ? ts.times : query;
    const auto pred = npc::interpolate(*ck.model, ts, q);
    for (std::size_t k = 0; k < q.size(); ++k) {
      const auto at = std::find(ts.times.begin(), ts.times.end(), q[k]);
      const bool known = at != ts.times.end();
      const std::size_t row = static_cast<std::size_t>(at - ts.times.begin());
      for (std::size_t d = 0; d < pred[k].size(); ++d)
        rows.push_back({s, q[k], d, known ? ck.norm.invert(ts.values[row][d], d) : std::nan(""),
                        ck.norm.invert(pred[k][d], d), known && ts.observed(row)});
    }
  }
  auto f = open_out(out);
  npc::write_points_csv(f, rows);
  return 0;
}

int cmd_extrapolate(const std::string& checkpoint, const std::string& data, std::size_t steps, double dt,
                    const std::string& out) {
  const npc::Checkpoint ck = npc::Checkpoint::load(checkpoint);
  if (ck.model->config().task != npc::Task::kRegression) throw UsageError("extrapolate needs a regression checkpoint");
  const auto series = evaluation_data(ck, data, "", 0.0, 0);
  auto f = open_out(out);
  f << "series,time,channel,prediction\n";
  f.precision(10);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto obs = series[s].observed_only();
    double step = dt;
    if (!(step > 0)) {
      if (obs.length() < 2) throw UsageError("series " + std::to_string(s) + " is too short to infer a step; pass --dt");
      step = obs.times.back() - obs.times[obs.length() - 2];
    }
    std::vector<double> horizon;
    for (std::size_t k = 1; k <= steps; ++k) horizon.push_back(obs.times.back() + step * static_cast<double>(k));
    const auto pred = npc::extrapolate(*ck.model, series[s], horizon);
    for (std::size_t k = 0; k < pred.size(); ++k)
      for (std::size_t d = 0; d < pred[k].size(); ++d)
        f << s << ',' << horizon[k] << ',' << d << ',' << ck.norm.invert(pred[k][d], d) << '\n';
  }
  return 0;
}

int cmd_sweep(const npc::RunConfig& c, std::size_t jobs) {
  const fs::path dir = ensure_dir(c.out);
  const npc::SweepResult r = npc::sensitivity_sweep(c, jobs);
  std::ofstream f(dir / "sweep.csv");
  npc::write_sweep_csv(f, r);
  nlohmann::json best = nlohmann::json::object();
  for (double d : c.sweep_drops) best[std::to_string(d)] = r.best_horizon(d);
  const bool shift = r.right_shift(c.sweep_drops);
  write_json(dir / "sweep.json", {{"best_horizon_by_drop", best}, {"best_horizon_shifts_right_as_drop_decreases", shift}});
  spdlog::info("best horizon per drop rate: {}; right shift {}", best.dump(), shift ? "observed" : "not observed");
  return 0;
}

th::StateSpaceModel theory_model(const std::string& name, th::Vec& h0) {
  if (name == "scalar") {
    h0 = th::Vec::Ones(1);
    return th::StateSpaceModel::scalar(0.0);
  }
  if (name == "double-integrator") {
    h0 = th::Vec::Ones(2);
    return th::StateSpaceModel::double_integrator();
  }
  std::ifstream f(name);
  if (!f) throw UsageError("unknown theory model '" + name + "' (expected scalar, double-integrator or a JSON file)");
  const nlohmann::json j = nlohmann::json::parse(f);
  auto mat = [&](const char* key) {
    const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw UsageError(std::string("model matrix ") + key + " is empty");
    th::Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw UsageError(std::string("model matrix ") + key + " is ragged");
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
  };
  th::StateSpaceModel m{mat("A"), mat("B"), mat("C"), mat("R")};
  m.validate();
  h0 = th::Vec::Ones(m.states());
  if (j.contains("h0")) {
    const auto v = j.at("h0").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != m.states()) throw UsageError("h0 length does not match A");
    for (std::size_t i = 0; i < v.size(); ++i) h0(static_cast<Eigen::Index>(i)) = v[i];
  }
  return m;
}

nlohmann::json to_json(const th::Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

int cmd_verify_theory(const std::string& model, const std::string& T_list, double tau, const std::string& p0,
                      const std::string& out) {
  th::Vec h0;
  const th::StateSpaceModel m = theory_model(model, h0);
  const auto T_grid = parse_doubles(T_list);
  th::TheoryOptions opt;
  if (p0 == "zero") opt.P0 = th::Mat::Zero(m.states(), m.states());
  else if (p0 != "cost") throw UsageError("--p0 must be cost or zero");
  std::vector<std::pair<double, double>> grid;
  for (double T : T_grid) grid.emplace_back(T, tau);
  const th::Theorem1Report t1 = th::verify_theorem1(m, h0, grid, opt);
  const th::Theorem2Report t2 = th::verify_theorem2(m, h0, tau, T_grid, opt);
  const fs::path dir = ensure_dir(out);
  {
    std::ofstream f(dir / "decay.csv");
    f.precision(10);
    f << "T,tau,mu_hat,mu_inf,fit_points\n";
    for (const auto& r : t1.rows) f << r.T << ',' << r.tau << ',' << r.fit.rate << ',' << t1.mu_inf << ',' << r.fit.points << '\n';
  }
  {
    std::ofstream f(dir / "discrepancy.csv");
    f.precision(10);
    f << "T,state_gap,control_gap,total\n";
    for (const auto& r : t2.rows) f << r.T << ',' << r.state_gap << ',' << r.control_gap << ',' << r.total() << '\n';
  }
  const th::Mat A_inf = th::closed_loop_matrix(m, t1.P_inf);
  const nlohmann::json summary = {{"P_inf", to_json(t1.P_inf)},
                                  {"A_inf", to_json(A_inf)},
                                  {"are_residual", th::are_residual(m, t1.P_inf)},
                                  {"mu_inf", t1.mu_inf},
                                  {"infinite_horizon_rate", t1.infinite_fit.rate},
                                  {"rde_decay_rate", t1.rde_fit.rate},
                                  {"tau", tau},
                                  {"discrepancy_slope", t2.slope},
                                  {"discrepancy_non_increasing", t2.non_increasing}};
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_grad_check(const std::string& component, std::uint64_t seed) {
  std::vector<npc::GradCheckCase> cases;
  if (component == "all" || component == "ops")
    for (auto& c : npc::op_grad_cases(seed)) cases.push_back(std::move(c));
  if (component == "all" || component == "models")
    for (auto& c : npc::model_grad_cases(seed)) cases.push_back(std::move(c));
  if (cases.empty()) {
    for (auto& c : npc::op_grad_cases(seed)) cases.push_back(std::move(c));
    for (auto& c : npc::model_grad_cases(seed)) cases.push_back(std::move(c));
    std::erase_if(cases, [&](const npc::GradCheckCase& c) { return c.name != component; });
    if (cases.empty()) throw UsageError("unknown grad-check component '" + component + "'");
  }
  bool ok = true;
  std::printf("%-32s %14s %8s  %s\n", "case", "max_rel_error", "entries", "status");
  for (const auto& c : cases) {
    const auto r = npc::check_gradients(c.name, c.build, c.inputs);
    ok = ok && r.passed;
    std::printf("%-32s %14.3e %8zu  %s\n", r.name.c_str(), r.max_rel_error, r.entries_checked, r.passed ? "pass" : "FAIL");
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Neural predictive control: training, evaluation and linear-theory checks"};
  app.require_subcommand(1);

  std::string config, out, data, checkpoint, task, kind = "toy-train", times, model = "scalar", T_list = "1,2,4,8",
                                                      p0 = "cost", component = "all";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1, series = 64, length = 100, steps = 1;
  double drop = 0.0, dt = 0.0, tau = 0.5;

  auto* gen = app.add_subcommand("generate-data", "Write a builtin dataset as CSV");
  gen->add_option("--kind", kind, "toy-train, toy-test or sine");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "output CSV path")->required();
  gen->add_option("--series", series, "sine: number of series");
  gen->add_option("--length", length, "sine: points per series");

  auto* tr = app.add_subcommand("train", "Train from a config file");
  tr->add_option("--config", config)->required();
  tr->add_option("--seed", seed);
  tr->add_option("--out", out, "output directory (overrides the config's `out`)");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data, "CSV file to score");
  ev->add_option("--config", config, "score the test split this config describes");
  ev->add_option("--task", task, "expected task; mismatches are rejected");
  ev->add_option("--drop", drop, "mask this fraction of interior points before scoring");
  ev->add_option("--seed", seed);
  ev->add_option("--out", out, "directory for metrics.json and points.csv");

  auto* ip = app.add_subcommand("interpolate", "Readouts at query times within each series");
  ip->add_option("--checkpoint", checkpoint)->required();
  ip->add_option("--data", data)->required();
  ip->add_option("--times", times, "comma-separated query times (default: every row)");
  ip->add_option("--drop", drop);
  ip->add_option("--seed", seed);
  ip->add_option("--out", out, "output CSV path")->required();

  auto* ex = app.add_subcommand("extrapolate", "Forecast up to M steps past each series");
  ex->add_option("--checkpoint", checkpoint)->required();
  ex->add_option("--data", data)->required();
  ex->add_option("--steps", steps);
  ex->add_option("--dt", dt, "step between forecasts (default: last observed spacing)");
  ex->add_option("--out", out, "output CSV path")->required();

  auto* sw = app.add_subcommand("sweep", "RMSE over a horizon x drop-rate grid");
  sw->add_option("--config", config)->required();
  sw->add_option("--seed", seed);
  sw->add_option("--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);
  sw->add_option("--out", out);

  auto* vt = app.add_subcommand("verify-theory", "Riccati and receding-horizon decay checks");
  vt->add_option("--model", model, "scalar, double-integrator or a JSON file with A, B, C, R");
  vt->add_option("--T", T_list, "comma-separated lookahead horizons");
  vt->add_option("--tau", tau, "execution period");
  vt->add_option("--p0", p0, "terminal weight: cost (C'C) or zero");
  vt->add_option("--out", out)->required();

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  gc->add_option("--component", component, "all, ops, models or a case name");
  gc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const std::uint64_t s = seed.value_or(0);
    if (*gen) return cmd_generate(kind, s, out, series, length);
    if (*tr) return cmd_train(config_with_overrides(config, seed, out));
    if (*ev) return cmd_evaluate(checkpoint, data, config, task, drop, s, out);
    if (*ip) return cmd_interpolate(checkpoint, data, times, drop, s, out);
    if (*ex) return cmd_extrapolate(checkpoint, data, steps, dt, out);
    if (*sw) {
      const npc::RunConfig c = config_with_overrides(config, seed, out);
      return cmd_sweep(c, jobs);
    }
    if (*vt) return cmd_verify_theory(model, T_list, tau, p0, out);
    if (*gc) return cmd_grad_check(component, seed.value_or(3));
  } catch (const npc::ConfigError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
