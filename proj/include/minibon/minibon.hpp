// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "minibon/calibration.hpp"
#include "minibon/choice_model.hpp"
#include "minibon/estimator.hpp"
#include "minibon/evaluation.hpp"
#include "minibon/experiment.hpp"
#include "minibon/inference.hpp"
#include "minibon/io.hpp"
#include "minibon/mathutil.hpp"
#include "minibon/parallel.hpp"
#include "minibon/rng.hpp"
#include "minibon/synthetic_world.hpp"

//! Outside-option choice modeling, reward-model estimation, and guardrailed
//! best-of-N inference over a synthetic world.
namespace minibon {}
