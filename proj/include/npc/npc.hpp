#pragma once

#include "npc/adamax.hpp"
#include "npc/autodiff.hpp"
#include "npc/config.hpp"
#include "npc/continuous.hpp"
#include "npc/control_path.hpp"
#include "npc/controller.hpp"
#include "npc/datagen.hpp"
#include "npc/gradcheck.hpp"
#include "npc/gradcheck_models.hpp"
#include "npc/layers.hpp"
#include "npc/linear_theory.hpp"
#include "npc/metrics.hpp"
#include "npc/model.hpp"
#include "npc/objective.hpp"
#include "npc/ode_solver.hpp"
#include "npc/param_store.hpp"
#include "npc/run.hpp"
#include "npc/tensor.hpp"
#include "npc/trainer.hpp"
