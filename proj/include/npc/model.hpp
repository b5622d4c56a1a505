#pragma once

#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "npc/continuous.hpp"
#include "npc/controller.hpp"

namespace npc {

enum class Task { kClassification, kRegression };

inline Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw std::invalid_argument("unknown task '" + s + "' (expected classification or regression)");
}
inline const char* to_string(Task t) { return t == Task::kClassification ? "classification" : "regression"; }

struct ModelConfig {
  Task task = Task::kClassification;
  Backend backend = Backend::kOdeRnn;
  std::size_t input_dim = 1;
  std::size_t classes = 2;
  std::size_t controller_hidden = 16;
  std::size_t head_hidden = 16;
  std::size_t action_dim = 4;
  std::size_t hidden = 16;
  std::size_t fdepth = 2;
  std::size_t fwidth = 0;
  std::size_t horizon = 5;  // M
  std::size_t window = 4;   // N1
  bool jumps = true;
  SolverOptions solver{SolverMethod::kRk4, 2};
  std::uint64_t seed = 0;

  std::size_t readout_width() const { return task == Task::kClassification ? classes : input_dim; }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw std::invalid_argument(std::string(key) + " must be positive");
    };
    positive(input_dim, "model.input_dim");
    positive(controller_hidden, "controller.hidden");
    positive(head_hidden, "controller.head_hidden");
    positive(action_dim, "controller.action_dim");
    positive(hidden, "model.hidden");
    positive(horizon, "model.horizon");
    positive(window, "controller.window");
    if (task == Task::kClassification && classes < 2) throw std::invalid_argument("model.classes must be >= 2");
    if (solver.substeps < 1) throw std::invalid_argument("solver.substeps must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"task", to_string(task)},
            {"backend", to_string(backend)},
            {"input_dim", input_dim},
            {"classes", classes},
            {"controller_hidden", controller_hidden},
            {"head_hidden", head_hidden},
            {"action_dim", action_dim},
            {"hidden", hidden},
            {"fdepth", fdepth},
            {"fwidth", fwidth},
            {"horizon", horizon},
            {"window", window},
            {"jumps", jumps},
            {"solver", to_string(solver.method)},
            {"substeps", solver.substeps},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.task = task_from_string(j.at("task").get<std::string>());
    c.backend = backend_from_string(j.at("backend").get<std::string>());
    c.input_dim = j.at("input_dim");
    c.classes = j.at("classes");
    c.controller_hidden = j.at("controller_hidden");
    c.head_hidden = j.at("head_hidden");
    c.action_dim = j.at("action_dim");
    c.hidden = j.at("hidden");
    c.fdepth = j.at("fdepth");
    c.fwidth = j.at("fwidth");
    c.horizon = j.at("horizon");
    c.window = j.at("window");
    c.jumps = j.at("jumps");
    c.solver.method = solver_method_from_string(j.at("solver").get<std::string>());
    c.solver.substeps = j.at("substeps");
    c.seed = j.at("seed");
    return c;
  }
};

/// Controller (psi) and continuous backend (phi) over one parameter store.
class NpcModel {
 public:
  explicit NpcModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    ControllerConfig cc;
    cc.input_dim = cfg_.input_dim;
    cc.hidden = cfg_.controller_hidden;
    cc.head_hidden = cfg_.head_hidden;
    cc.action_dim = cfg_.action_dim;
    cc.horizon = cfg_.horizon;
    cc.readout_width = cfg_.readout_width();
    controller_ = Controller::create(store_, cc, rng);
    ContinuousConfig mc;
    mc.backend = cfg_.backend;
    mc.input_dim = cfg_.input_dim;
    mc.hidden = cfg_.hidden;
    mc.fdepth = cfg_.fdepth;
    mc.fwidth = cfg_.fwidth;
    mc.action_dim = cfg_.action_dim;
    mc.readout_width = cfg_.readout_width();
    mc.jumps = cfg_.jumps;
    mc.solver = cfg_.solver;
    continuous_ = ContinuousModel::create(store_, mc, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const Controller& controller() const { return controller_; }
  const ContinuousModel& continuous() const { return continuous_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Controller controller_;
  ContinuousModel continuous_;
};

}  // namespace npc
