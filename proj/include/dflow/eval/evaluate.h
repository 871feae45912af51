// Copyright 2026 The dflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DFLOW_EVAL_EVALUATE_H_
#define DFLOW_EVAL_EVALUATE_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/common/rng.h"
#include "dflow/data/env.h"
#include "dflow/dfdir/dir.h"
#include "dflow/flow/flow.h"
#include "json.hpp"

namespace dflow {

// 100 * (R - R_random) / (R_expert - R_random). Throws DomainError when the
// reference returns coincide.
double NormalizedScore(double ret, double random_return, double expert_return);

// Maps a state to an action; may draw from `rng` (the episode's stream).
using ActionFn = std::function<Vec(const Vec& state, Rng& rng)>;

ActionFn FlowActionFn(const FlowPolicy& policy, const FlowTimeGrid& grid);

struct EpisodeResult {
  double ret = 0.0;
  int steps = 0;
  std::vector<Vec> actions;
  std::vector<Vec> states;
};

// Runs episode `episode` with its own stream Rng::Stream(seed, episode), so
// the result does not depend on which other episodes run or in what order.
EpisodeResult RunEpisode(const ActionFn& act, std::string_view env_id,
                         uint64_t seed, int episode);

// Bandit actions grouped by the nearest mode center of their state; actions
// farther than kModeRadius from both centers count as "other".
inline constexpr double kModeRadius = 0.3;

struct ModeCoverage {
  int primary = 0;
  int secondary = 0;
  int other = 0;
};

ModeCoverage ClassifyBanditAction(const Vec& state, const Vec& action);

struct EvalReport {
  std::string env;
  int episodes = 0;
  std::vector<double> returns;
  double mean_return = 0.0;
  double std_return = 0.0;
  double normalized_score = 0.0;
  std::optional<ModeCoverage> modes;        // bandit only
  std::vector<double> monotonicity;         // per tau, when computed
  std::optional<CosineStats> alignment;     // dir variant, when computed

  std::string ToText() const;
  nlohmann::json ToJson() const;
};

// Throws ConfigError if episodes < 1.
EvalReport Evaluate(const ActionFn& act, std::string_view env_id, int episodes,
                    uint64_t seed);

// Throws SchemaError when the policy's widths do not match the environment.
EvalReport EvaluatePolicy(const FlowPolicy& policy, std::string_view env_id,
                          int episodes, uint64_t seed,
                          const FlowTimeGrid& grid);

}  // namespace dflow

#endif  // DFLOW_EVAL_EVALUATE_H_
