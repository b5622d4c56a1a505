#pragma once

// Receding-horizon training: at every anchor plan M horizons, take a few
// optimizer steps on the planned objective, then commit a single interval with
// the re-emitted action. Also hosts the single-horizon ODE-RNN baseline and
// inference (classification, interpolation, extrapolation).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "npc/adamax.hpp"
#include "npc/datagen.hpp"
#include "npc/metrics.hpp"
#include "npc/objective.hpp"

namespace npc {

enum class Method { kNpc, kBaseline };

inline Method method_from_string(const std::string& s) {
  if (s == "npc") return Method::kNpc;
  if (s == "baseline") return Method::kBaseline;
  throw std::invalid_argument("unknown method '" + s + "' (expected npc or baseline)");
}
inline const char* to_string(Method m) { return m == Method::kNpc ? "npc" : "baseline"; }

/// Baseline architecture: the same modules with one planned horizon and the ODE-RNN backend.
inline ModelConfig baseline_config(ModelConfig cfg) {
  cfg.horizon = 1;
  cfg.backend = Backend::kOdeRnn;
  return cfg;
}

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t batch = 32;
  std::size_t inner_steps = 1;
  double lr = 2e-3;
  double lambda = 0.2;
  std::size_t patience = 10;
  double plateau_tol = 1e-5;
  std::uint64_t seed = 0;
  bool record_post_objective = false;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

struct TrainReport {
  std::vector<double> epoch_losses;
  std::vector<double> window_objectives;
  std::vector<double> window_post_objectives;
  std::size_t epochs_run = 0;
  std::size_t skipped_series = 0;
  bool early_stopped = false;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch_losses", epoch_losses},   {"windows", window_objectives.size()},
            {"window_objectives", window_objectives},
            {"epochs_run", epochs_run},       {"skipped_series", skipped_series},
            {"early_stopped", early_stopped}, {"seconds", seconds},
            {"final_loss", epoch_losses.empty() ? 0.0 : epoch_losses.back()}};
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t window)
      : std::runtime_error("training diverged: non-finite objective at epoch " + std::to_string(epoch) + ", window " +
                           std::to_string(window)),
        window_(window) {}
  std::size_t window() const { return window_; }

 private:
  std::size_t window_;
};

/// Rows of equal observed length, stacked per time index.
struct Batch {
  std::size_t rows = 0, length = 0, dims = 0;
  RowTimes times;           // [rows][length]
  std::vector<Tensor> x;    // length x [rows, dims]
  std::vector<Tensor> dt;   // length x [rows, 1]
  std::vector<int> labels;  // empty for unlabeled data

  RowTimes window(std::size_t i, std::size_t horizons) const {
    RowTimes w(rows);
    for (std::size_t b = 0; b < rows; ++b)
      w[b].assign(times[b].begin() + static_cast<std::ptrdiff_t>(i),
                  times[b].begin() + static_cast<std::ptrdiff_t>(i + horizons + 1));
    return w;
  }

  WindowTargets targets(std::size_t i, std::size_t horizons) const {
    WindowTargets t;
    t.labels = labels;
    for (std::size_t k = 0; k <= horizons; ++k) t.values.push_back(x[i + k]);
    return t;
  }
};

/// Stacks the observed rows of equally long series.
inline Batch make_batch(const std::vector<const TimeSeries*>& series) {
  if (series.empty()) throw std::invalid_argument("make_batch: empty batch");
  Batch bt;
  bt.rows = series.size();
  bt.dims = series.front()->dims();
  std::vector<TimeSeries> obs;
  for (const auto* s : series) obs.push_back(s->observed_only());
  bt.length = obs.front().length();
  for (const auto& s : obs)
    if (s.length() != bt.length || s.dims() != bt.dims)
      throw std::invalid_argument("make_batch: series differ in observed length or width");
  bt.times.resize(bt.rows);
  for (std::size_t b = 0; b < bt.rows; ++b) bt.times[b] = obs[b].times;
  for (std::size_t i = 0; i < bt.length; ++i) {
    Tensor xi({bt.rows, bt.dims}), di({bt.rows, 1});
    for (std::size_t b = 0; b < bt.rows; ++b) {
      for (std::size_t d = 0; d < bt.dims; ++d) xi[b * bt.dims + d] = obs[b].values[i][d];
      di[b] = i == 0 ? 0.0 : obs[b].times[i] - obs[b].times[i - 1];
    }
    bt.x.push_back(std::move(xi));
    bt.dt.push_back(std::move(di));
  }
  if (obs.front().label) {
    for (const auto& s : obs) {
      if (!s.label) throw std::invalid_argument("make_batch: mixed labeled and unlabeled series");
      bt.labels.push_back(*s.label);
    }
  }
  return bt;
}

/// Groups series indices by observed length and splits groups into chunks of at most `batch`.
/// With an rng the order within each group and the order of chunks are shuffled.
inline std::vector<std::vector<std::size_t>> bucket_batches(const std::vector<TimeSeries>& data,
                                                            const std::vector<std::size_t>& use, std::size_t batch,
                                                            std::mt19937_64* rng) {
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i : use) groups[data[i].observed_count()].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [len, idx] : groups) {
    if (rng) std::shuffle(idx.begin(), idx.end(), *rng);
    for (std::size_t s = 0; s < idx.size(); s += batch)
      out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                       idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + batch)));
  }
  if (rng) std::shuffle(out.begin(), out.end(), *rng);
  return out;
}

namespace detail {

inline std::vector<const TimeSeries*> pick(const std::vector<TimeSeries>& data, const std::vector<std::size_t>& idx) {
  std::vector<const TimeSeries*> p;
  for (std::size_t i : idx) p.push_back(&data[i]);
  return p;
}

inline void check_task(const ModelConfig& cfg, const std::vector<TimeSeries>& data) {
  for (const auto& s : data) {
    if (s.dims() != cfg.input_dim)
      throw std::invalid_argument("series width " + std::to_string(s.dims()) + " but model expects " +
                                  std::to_string(cfg.input_dim));
    if (cfg.task == Task::kClassification) {
      if (!s.label) throw std::invalid_argument("classification needs a label on every series");
      if (*s.label < 0 || static_cast<std::size_t>(*s.label) >= cfg.classes)
        throw std::invalid_argument("label " + std::to_string(*s.label) + " outside [0, classes)");
    }
  }
}

/// Epoch-level plateau detector: stop after `patience` epochs whose loss does
/// not beat the best so far by a relative margin of `tol`.
class Plateau {
 public:
  Plateau(std::size_t patience, double tol) : patience_(patience), tol_(tol) {}
  bool update(double loss) {
    if (loss < best_ - tol_ * std::abs(best_) || !std::isfinite(best_)) {
      best_ = loss;
      stale_ = 0;
    } else {
      ++stale_;
    }
    return patience_ > 0 && stale_ >= patience_;
  }

 private:
  std::size_t patience_;
  double tol_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t stale_ = 0;
};

}  // namespace detail

/// One pass of the receding-horizon procedure over a batch.
inline void npc_train_batch(NpcModel& model, Adamax& opt, const Batch& bt, const TrainConfig& cfg, std::size_t epoch,
                            TrainReport& report) {
  const auto& mc = model.config();
  const Controller& ctrl = model.controller();
  const ContinuousModel& cont = model.continuous();
  const std::size_t N = bt.length;
  std::vector<Tensor> zhist(N, Tensor({bt.rows, mc.controller_hidden}));  // zhist[j]: state before observation j
  Tensor arrived;  // committed state at t_i before the arrival jump

  // h(t_i): the encoder at the first observation, else the committed leg
  // followed by the jump with this anchor's first action.
  auto start_state = [&](ad::Tape& tape, const ParamBinding& bind, std::size_t i, const ad::Var& u0) {
    return i == 0 ? cont.encode(bind, tape.constant(bt.x[0])) : cont.arrive(bind, tape.constant(arrived), u0);
  };
  auto replay = [&](ad::Tape& tape, const ParamBinding& bind, std::size_t i) {
    const std::size_t first = i + 1 >= mc.window ? i + 1 - mc.window : 0;
    ad::Var z = tape.constant(zhist[first]);
    for (std::size_t j = first; j <= i; ++j) z = ctrl.step(bind, z, tape.constant(bt.x[j]), tape.constant(bt.dt[j]));
    return z;
  };

  for (std::size_t i = 0; i + 1 < N; ++i) {
    const std::size_t horizons = std::min(mc.horizon, N - 1 - i);
    const RowTimes wt = bt.window(i, horizons);
    const WindowTargets tg = bt.targets(i, horizons);
    auto forward = [&](ad::Tape& tape, const ParamBinding& bind) {
      const ad::Var z = replay(tape, bind, i);
      const auto U = ctrl.emit(bind, z);
      const HiddenTrajectory H = cont.evolve(bind, start_state(tape, bind, i, U[0]), U, wt);
      return total_objective(model, bind, H, U, tg, cfg.lambda);
    };
    const std::size_t window_index = report.window_objectives.size();
    const std::size_t passes = std::max<std::size_t>(cfg.inner_steps, 1);
    for (std::size_t s = 0; s < passes; ++s) {
      ad::Tape tape;
      tape.set_grad_enabled(cfg.inner_steps > 0);
      const ParamBinding bind(tape, model.params());
      ad::Var obj = [&] {
        try {
          return forward(tape, bind);
        } catch (const SolverBlowUp&) {
          throw TrainingDiverged(epoch, window_index);
        }
      }();
      const double v = obj.value().item();
      if (!std::isfinite(v)) throw TrainingDiverged(epoch, window_index);
      if (s == 0) report.window_objectives.push_back(v);
      if (cfg.inner_steps == 0) break;
      tape.backward(obj);
      try {
        opt.step(model.params(), bind.gradients());
      } catch (const NonFiniteGradient&) {
        throw TrainingDiverged(epoch, window_index);
      }
    }
    if (cfg.record_post_objective) {
      ad::Tape tape;
      tape.set_grad_enabled(false);
      const ParamBinding bind(tape, model.params());
      report.window_post_objectives.push_back(forward(tape, bind).value().item());
    }
    // Execute one interval with actions re-emitted under the updated parameters;
    // the jump at t_{i+1} waits for the next anchor's first action.
    ad::Tape tape;
    tape.set_grad_enabled(false);
    const ParamBinding bind(tape, model.params());
    const ad::Var z = replay(tape, bind, i);
    zhist[i + 1] = z.value();
    const auto U = ctrl.emit(bind, z);
    arrived = cont.leg(bind, start_state(tape, bind, i, U[0]), U[0], U[1], bt.window(i, 1)).value();
  }
}

/// Single-horizon ODE-RNN loss over a full batch, differentiated end to end.
inline ad::Var baseline_loss(const NpcModel& model, const ParamBinding& bind, ad::Tape& tape, const Batch& bt) {
  const auto& mc = model.config();
  const Controller& ctrl = model.controller();
  const ContinuousModel& cont = model.continuous();
  ad::Var z = ctrl.step(bind, ctrl.zero_state(tape, bt.rows), tape.constant(bt.x[0]), tape.constant(bt.dt[0]));
  std::vector<ad::Var> U = ctrl.emit(bind, z);
  ad::Var h = cont.encode(bind, tape.constant(bt.x[0]));
  std::optional<ad::Var> reg;
  if (mc.task == Task::kRegression) reg = *masked_mse(cont.readout(bind, h), bt.x[0], {});
  for (std::size_t i = 0; i + 1 < bt.length; ++i) {
    const ad::Var flowed = cont.leg(bind, h, U[0], U[1], bt.window(i, 1));
    if (reg) reg = ad::add(*reg, *masked_mse(cont.readout(bind, flowed), bt.x[i + 1], {}));
    z = ctrl.step(bind, z, tape.constant(bt.x[i + 1]), tape.constant(bt.dt[i + 1]));
    U = ctrl.emit(bind, z);
    h = cont.arrive(bind, flowed, U[0]);
  }
  if (reg) return ad::scale(*reg, 1.0 / static_cast<double>(bt.length));
  return ad::softmax_cross_entropy(cont.readout(bind, h), bt.labels);
}

/// Trains in place. Method kNpc runs the receding-horizon procedure; kBaseline
/// takes one optimizer step per batch on the single-horizon loss.
inline TrainReport train(NpcModel& model, const std::vector<TimeSeries>& data, const TrainConfig& cfg,
                         Method method = Method::kNpc) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& mc = model.config();
  if (cfg.batch == 0) throw std::invalid_argument("train: batch must be positive");
  if (cfg.lambda < 0) throw std::invalid_argument("train: lambda must be >= 0");
  if (method == Method::kBaseline && mc.backend != Backend::kOdeRnn)
    throw std::invalid_argument("train: the baseline uses the ode_rnn backend");
  detail::check_task(mc, data);
  TrainReport report;
  std::vector<std::size_t> use;
  const std::size_t min_len = method == Method::kNpc ? mc.horizon + 1 : 2;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].observed_count() < min_len) {
      spdlog::warn("skipping series {}: {} observations, need at least {}", i, data[i].observed_count(), min_len);
      ++report.skipped_series;
    } else {
      use.push_back(i);
    }
  }
  if (use.empty()) throw std::invalid_argument("train: no usable series");

  AdamaxConfig ac;
  ac.lr = cfg.lr;
  Adamax opt(ac);
  std::mt19937_64 rng(cfg.seed);
  detail::Plateau plateau(cfg.patience, cfg.plateau_tol);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::size_t before = report.window_objectives.size();
    double batch_sum = 0;
    std::size_t batch_count = 0;
    for (const auto& idx : bucket_batches(data, use, cfg.batch, &rng)) {
      const Batch bt = make_batch(detail::pick(data, idx));
      if (method == Method::kNpc) {
        npc_train_batch(model, opt, bt, cfg, epoch, report);
        continue;
      }
      ad::Tape tape;
      tape.set_grad_enabled(cfg.inner_steps > 0);
      const ParamBinding bind(tape, model.params());
      ad::Var loss = [&] {
        try {
          return baseline_loss(model, bind, tape, bt);
        } catch (const SolverBlowUp&) {
          throw TrainingDiverged(epoch, report.window_objectives.size());
        }
      }();
      const double v = loss.value().item();
      if (!std::isfinite(v)) throw TrainingDiverged(epoch, report.window_objectives.size());
      report.window_objectives.push_back(v);
      batch_sum += v;
      ++batch_count;
      if (cfg.inner_steps > 0) {
        tape.backward(loss);
        opt.step(model.params(), bind.gradients());
      }
    }
    double loss = 0;
    if (method == Method::kNpc) {
      for (std::size_t w = before; w < report.window_objectives.size(); ++w) loss += report.window_objectives[w];
      loss /= static_cast<double>(std::max<std::size_t>(report.window_objectives.size() - before, 1));
    } else {
      loss = batch_sum / static_cast<double>(std::max<std::size_t>(batch_count, 1));
    }
    report.epoch_losses.push_back(loss);
    report.epochs_run = epoch + 1;
    spdlog::debug("epoch {} loss {:.6g}", epoch, loss);
    if (cfg.on_epoch) cfg.on_epoch(epoch, loss);
    if (plateau.update(loss)) {
      report.early_stopped = true;
      break;
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// Committed inference pass over a batch: h[i] is the state at observation i,
/// u[i] and next[i] the action pair executed on [t_i, t_{i+1}], and plan the
/// full action sequence emitted at the last observation. Both training methods
/// share this pass.
struct Rollout {
  std::vector<Tensor> h, u, next;
  std::vector<Tensor> plan;
};

inline Rollout rollout(const NpcModel& model, const Batch& bt) {
  if (bt.length == 0) throw std::invalid_argument("rollout: empty series");
  const Controller& ctrl = model.controller();
  const ContinuousModel& cont = model.continuous();
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const ParamBinding bind(tape, model.params());
  Rollout r;
  ad::Var z = ctrl.step(bind, ctrl.zero_state(tape, bt.rows), tape.constant(bt.x[0]), tape.constant(bt.dt[0]));
  std::vector<ad::Var> U = ctrl.emit(bind, z);
  ad::Var h = cont.encode(bind, tape.constant(bt.x[0]));
  for (std::size_t i = 0;; ++i) {
    r.h.push_back(h.value());
    if (i + 1 == bt.length) break;
    r.u.push_back(U[0].value());
    r.next.push_back(U[1].value());
    const ad::Var flowed = cont.leg(bind, h, U[0], U[1], bt.window(i, 1));
    z = ctrl.step(bind, z, tape.constant(bt.x[i + 1]), tape.constant(bt.dt[i + 1]));
    U = ctrl.emit(bind, z);
    h = cont.arrive(bind, flowed, U[0]);
  }
  for (const auto& a : U) r.plan.push_back(a.value());
  return r;
}

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

/// Softmax of the terminal readout; ties go to the lowest class index.
inline Prediction predict_from_logits(const double* logits, std::size_t classes) {
  Prediction p;
  const double mx = *std::max_element(logits, logits + classes);
  double z = 0;
  for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[c] - mx);
  for (std::size_t c = 0; c < classes; ++c) p.probabilities.push_back(std::exp(logits[c] - mx) / z);
  for (std::size_t c = 1; c < classes; ++c)
    if (p.probabilities[c] > p.probabilities[static_cast<std::size_t>(p.label)]) p.label = static_cast<int>(c);
  return p;
}

inline std::vector<Prediction> classify_all(const NpcModel& model, const std::vector<TimeSeries>& data,
                                            std::size_t batch = 256) {
  if (model.config().task != Task::kClassification) throw std::invalid_argument("classify: model is not a classifier");
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (data[i].observed_count() == 0) throw std::invalid_argument("classify: empty series");
    all[i] = i;
  }
  std::vector<Prediction> out(data.size());
  const std::size_t C = model.config().classes;
  for (const auto& idx : bucket_batches(data, all, batch, nullptr)) {
    const Batch bt = make_batch(detail::pick(data, idx));
    const Rollout r = rollout(model, bt);
    ad::Tape tape;
    tape.set_grad_enabled(false);
    const ParamBinding bind(tape, model.params());
    const Tensor logits = model.continuous().readout(bind, tape.constant(r.h.back())).value();
    for (std::size_t b = 0; b < idx.size(); ++b) out[idx[b]] = predict_from_logits(logits.data() + b * C, C);
  }
  return out;
}

inline Prediction classify(const NpcModel& model, const TimeSeries& s) {
  return classify_all(model, {s}).front();
}

/// Readout at query times within the observed span. Queries at observed times
/// return the readout of the committed state there; others flow from the
/// preceding observation with the executed action.
inline std::vector<std::vector<double>> interpolate(const NpcModel& model, const TimeSeries& series,
                                                    const std::vector<double>& query) {
  if (query.empty()) return {};
  const TimeSeries obs = series.observed_only();
  if (obs.length() == 0) throw std::invalid_argument("interpolate: empty series");
  for (double q : query)
    if (!(q >= obs.times.front() && q <= obs.times.back()))
      throw std::out_of_range("interpolate: query time " + std::to_string(q) + " outside observed range");
  const Batch bt = make_batch({&obs});
  const Rollout r = rollout(model, bt);
  const ContinuousModel& cont = model.continuous();
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const ParamBinding bind(tape, model.params());
  std::vector<std::vector<double>> out;
  for (double q : query) {
    const auto it = std::upper_bound(obs.times.begin(), obs.times.end(), q);
    const std::size_t i = static_cast<std::size_t>(it - obs.times.begin()) - 1;
    ad::Var h = tape.constant(r.h[i]);
    if (q != obs.times[i])
      h = cont.flow_partial(bind, h, tape.constant(r.u[i]), tape.constant(r.next[i]), obs.times[i], obs.times[i + 1], q);
    out.push_back(cont.readout(bind, h).value().values());
  }
  return out;
}

/// Plans from the final observation and reads out at up to M future times.
inline std::vector<std::vector<double>> extrapolate(const NpcModel& model, const TimeSeries& series,
                                                    const std::vector<double>& horizon_times) {
  if (horizon_times.empty()) return {};
  const TimeSeries obs = series.observed_only();
  if (obs.length() == 0) throw std::invalid_argument("extrapolate: empty series");
  if (horizon_times.size() > model.config().horizon)
    throw std::invalid_argument("extrapolate: " + std::to_string(horizon_times.size()) + " horizons requested but the controller plans " +
                                std::to_string(model.config().horizon));
  RowTimes times{{obs.times.back()}};
  for (double t : horizon_times) {
    if (!(t > times[0].back())) throw std::invalid_argument("extrapolate: horizon times must increase beyond the last observation");
    times[0].push_back(t);
  }
  const Batch bt = make_batch({&obs});
  const Rollout r = rollout(model, bt);
  ad::Tape tape;
  tape.set_grad_enabled(false);
  const ParamBinding bind(tape, model.params());
  std::vector<ad::Var> U;
  for (const auto& a : r.plan) U.push_back(tape.constant(a));
  const ContinuousModel& cont = model.continuous();
  const HiddenTrajectory H = cont.evolve(bind, tape.constant(r.h.back()), U, times);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 1; k < H.states.size(); ++k) out.push_back(cont.readout(bind, H.states[k]).value().values());
  return out;
}

struct InterpolationScore {
  double rmse = 0.0;
  MapeResult mape;
  std::size_t points = 0;
  std::vector<double> truth, prediction;
};

/// Scores readouts at the masked (dropped) points of each series, in the original units.
inline InterpolationScore score_interpolation(const NpcModel& model, const std::vector<TimeSeries>& data,
                                              const Normalizer& norm) {
  InterpolationScore s;
  for (const auto& series : data) {
    std::vector<double> q;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < series.length(); ++i)
      if (!series.observed(i)) {
        q.push_back(series.times[i]);
        rows.push_back(i);
      }
    const auto pred = interpolate(model, series, q);
    for (std::size_t j = 0; j < q.size(); ++j)
      for (std::size_t d = 0; d < pred[j].size(); ++d) {
        s.prediction.push_back(norm.invert(pred[j][d], d));
        s.truth.push_back(norm.invert(series.values[rows[j]][d], d));
      }
  }
  s.points = s.truth.size();
  s.rmse = npc::rmse(s.prediction, s.truth);
  s.mape = npc::mape(s.prediction, s.truth);
  return s;
}

}  // namespace npc
