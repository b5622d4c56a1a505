#pragma once

// Dataset resolution, checkpoints, evaluation and the horizon/drop-rate sweep
// on top of the trainer.

#include <atomic>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <ostream>
#include <thread>

#include "npc/config.hpp"

namespace npc {

struct Datasets {
  std::vector<TimeSeries> train, test;
  Normalizer norm;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
};

namespace detail {

inline std::size_t class_count(const std::vector<TimeSeries>& a, const std::vector<TimeSeries>& b) {
  int mx = -1;
  for (const auto* v : {&a, &b})
    for (const auto& s : *v)
      if (s.label) mx = std::max(mx, *s.label);
  return static_cast<std::size_t>(mx + 1);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace detail

/// Builds train/test splits. Drop masks are drawn after generation; the
/// normalizer is fitted on the training split's observed values.
inline Datasets resolve_data(const RunConfig& c) {
  Datasets d;
  const auto& dc = c.data;
  if (dc.source == "toy") {
    d.train = gen_toy_train(detail::mix(c.seed, 1));
    d.test = gen_toy_test(detail::mix(c.seed, 2));
  } else if (dc.source == "sine") {
    SineOptions opt;
    opt.noise = dc.noise;
    d.train = gen_sine_regression(dc.series, dc.length, detail::mix(c.seed, 1), opt);
    d.test = gen_sine_regression(dc.test_series, dc.length, detail::mix(c.seed, 2), opt);
  } else {
    d.train = load_csv(dc.train_path);
    if (!dc.test_path.empty()) d.test = load_csv(dc.test_path);
  }
  if (d.train.empty()) throw std::invalid_argument("training data is empty");
  if (dc.drop > 0) {
    d.train = drop_observations(std::move(d.train), dc.drop, detail::mix(c.seed, 3));
    if (!d.test.empty()) d.test = drop_observations(std::move(d.test), dc.drop, detail::mix(c.seed, 4));
  }
  d.input_dim = d.train.front().dims();
  for (const auto& s : d.test)
    if (s.dims() != d.input_dim)
      throw std::invalid_argument("test data has " + std::to_string(s.dims()) + " channels, training data " +
                                  std::to_string(d.input_dim));
  d.classes = detail::class_count(d.train, d.test);
  if (dc.normalize) {
    d.norm = Normalizer::fit(d.train);
    d.train = d.norm.apply(std::move(d.train));
    d.test = d.norm.apply(std::move(d.test));
  }
  return d;
}

struct Checkpoint {
  Method method = Method::kNpc;
  Normalizer norm;
  nlohmann::json run;  // the RunConfig that produced it, for provenance
  std::unique_ptr<NpcModel> model;

  nlohmann::json to_json() const {
    return {{"format", "npc-checkpoint"},
            {"version", 1},
            {"method", to_string(method)},
            {"model", model->config().to_json()},
            {"normalizer", {{"mean", norm.mean}, {"stddev", norm.stddev}}},
            {"run", run},
            {"params", model->params().to_json()}};
  }

  static Checkpoint from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "npc-checkpoint") throw std::invalid_argument("not an npc checkpoint");
    Checkpoint c;
    c.method = method_from_string(j.at("method").get<std::string>());
    c.norm.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    c.norm.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
    c.run = j.value("run", nlohmann::json::object());
    c.model = std::make_unique<NpcModel>(ModelConfig::from_json(j.at("model")));
    const ParamStore loaded = ParamStore::from_json(j.at("params"));
    ParamStore& p = c.model->params();
    if (loaded.size() != p.size()) throw std::invalid_argument("checkpoint parameter count does not match its model config");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& e = loaded.entry(i);
      if (e.name != p.entry(i).name || e.value.shape() != p.value(i).shape())
        throw std::invalid_argument("checkpoint parameter '" + e.name + "' does not match its model config");
      p.value(i) = e.value;
    }
    return c;
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    f << to_json().dump() << '\n';
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }
};

struct RunResult {
  Checkpoint checkpoint;
  TrainReport report;
  Datasets data;
};

inline RunResult train_run(const RunConfig& c) {
  RunResult r;
  r.data = resolve_data(c);
  r.checkpoint.method = c.method;
  r.checkpoint.norm = r.data.norm;
  r.checkpoint.run = c.to_json();
  r.checkpoint.model = std::make_unique<NpcModel>(c.model_for(r.data.input_dim, r.data.classes));
  r.report = train(*r.checkpoint.model, r.data.train, c.train_config(), c.method);
  return r;
}

/// One row per evaluated point, for plotting.
struct PointRow {
  std::size_t series = 0;
  double time = 0;
  std::size_t channel = 0;
  double truth = 0, prediction = 0;
  bool observed = true;
};

struct MetricsReport {
  Task task = Task::kClassification;
  std::size_t series = 0;
  double accuracy = 0;
  double rmse = 0;
  MapeResult mape;
  std::size_t points = 0;
  double seconds = 0;
  std::vector<PointRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"task", to_string(task)}, {"series", series}, {"seconds", seconds}};
    if (task == Task::kClassification) {
      j["accuracy"] = accuracy;
    } else {
      j["rmse"] = rmse;
      j["mape_percent"] = mape.percent;
      j["mape_excluded"] = mape.excluded;
      j["points"] = points;
    }
    return j;
  }
};

/// Classification: accuracy over labeled series, one row per series holding
/// the true and predicted labels. Regression: RMSE and MAPE at the masked
/// points in original units, with a row for every point.
inline MetricsReport evaluate(const NpcModel& model, const std::vector<TimeSeries>& data, const Normalizer& norm) {
  const auto t0 = std::chrono::steady_clock::now();
  MetricsReport m;
  m.task = model.config().task;
  m.series = data.size();
  if (data.empty()) throw std::invalid_argument("evaluate: no series");
  if (m.task == Task::kClassification) {
    const auto pred = classify_all(model, data);
    std::vector<int> p, y;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!data[i].label) throw std::invalid_argument("evaluate: series " + std::to_string(i) + " has no label");
      p.push_back(pred[i].label);
      y.push_back(*data[i].label);
      m.rows.push_back({i, data[i].times.back(), 0, static_cast<double>(y.back()), static_cast<double>(p.back()), true});
    }
    m.accuracy = accuracy(p, y);
  } else {
    const InterpolationScore s = score_interpolation(model, data, norm);
    m.rmse = s.rmse;
    m.mape = s.mape;
    m.points = s.points;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto pred = interpolate(model, data[i], data[i].times);
      for (std::size_t k = 0; k < data[i].length(); ++k)
        for (std::size_t d = 0; d < pred[k].size(); ++d)
          m.rows.push_back({i, data[i].times[k], d, norm.invert(data[i].values[k][d], d), norm.invert(pred[k][d], d),
                            data[i].observed(k)});
    }
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

inline void write_points_csv(std::ostream& os, const std::vector<PointRow>& rows) {
  os << "series,time,channel,truth,prediction,mask\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.series << ',' << r.time << ',' << r.channel << ',' << r.truth << ',' << r.prediction << ','
       << (r.observed ? 1 : 0) << '\n';
}

struct SweepCell {
  std::size_t horizon = 0;
  double drop = 0;
  double rmse = 0;
  double mape = 0;
  std::size_t points = 0;
  std::size_t epochs = 0;
  double final_loss = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;

  /// Horizon with the lowest RMSE at the given drop rate.
  std::size_t best_horizon(double drop) const {
    const SweepCell* best = nullptr;
    for (const auto& c : cells)
      if (c.drop == drop && (!best || c.rmse < best->rmse)) best = &c;
    if (!best) throw std::invalid_argument("sweep: no cells at drop rate " + std::to_string(drop));
    return best->horizon;
  }

  /// Whether the best horizon is non-decreasing as the drop rate decreases.
  bool right_shift(std::vector<double> drops) const {
    std::sort(drops.begin(), drops.end());
    for (std::size_t i = 1; i < drops.size(); ++i)
      if (best_horizon(drops[i - 1]) < best_horizon(drops[i])) return false;
    return true;
  }
};

/// Trains and scores one model per (horizon, drop) cell. Cells share the
/// generated series for a given drop rate and use independent training seeds;
/// results are ordered by grid position regardless of `jobs`.
inline SweepResult sensitivity_sweep(const RunConfig& base, std::size_t jobs = 1) {
  if (base.model.task != Task::kRegression) throw std::invalid_argument("sweep: requires a regression task");
  if (base.sweep_horizons.empty() || base.sweep_drops.empty()) throw std::invalid_argument("sweep: empty grid");
  struct Job {
    std::size_t horizon;
    double drop;
  };
  std::vector<Job> grid;
  for (double d : base.sweep_drops)
    for (std::size_t m : base.sweep_horizons) grid.push_back({m, d});
  SweepResult res;
  res.cells.resize(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t k; (k = next++) < grid.size();) {
      try {
        RunConfig c = base;
        c.model.horizon = grid[k].horizon;
        c.data.drop = grid[k].drop;
        const Datasets d = resolve_data(c);
        NpcModel model(c.model_for(d.input_dim, d.classes));
        TrainConfig tc = c.train_config();
        tc.seed = detail::mix(base.seed, 100 + k);
        const TrainReport rep = train(model, d.train, tc, c.method);
        const InterpolationScore s = score_interpolation(model, d.test.empty() ? d.train : d.test, d.norm);
        res.cells[k] = {grid[k].horizon, grid[k].drop, s.rmse, s.mape.percent, s.points, rep.epochs_run,
                        rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back()};
        spdlog::info("sweep cell M={} drop={} rmse={:.5f}", grid[k].horizon, grid[k].drop, s.rmse);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, grid.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return res;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "horizon,drop,rmse,mape_percent,points,epochs,final_loss\n";
  os.precision(10);
  for (const auto& c : r.cells)
    os << c.horizon << ',' << c.drop << ',' << c.rmse << ',' << c.mape << ',' << c.points << ',' << c.epochs << ','
       << c.final_loss << '\n';
}

}  // namespace npc
