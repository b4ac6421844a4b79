#pragma once

// Everything: dynamics, networks, parity tasks, training, analysis,
// checkpoints and the experiment commands.

#include "modgrow/analysis/perturbation.hpp"
#include "modgrow/analysis/timescales.hpp"
#include "modgrow/analysis/weights.hpp"
#include "modgrow/checkpoint.hpp"
#include "modgrow/dynamics.hpp"
#include "modgrow/experiment/commands.hpp"
#include "modgrow/experiment/config.hpp"
#include "modgrow/experiment/csv.hpp"
#include "modgrow/forward.hpp"
#include "modgrow/network.hpp"
#include "modgrow/parity.hpp"
#include "modgrow/rng.hpp"
#include "modgrow/trainer.hpp"
