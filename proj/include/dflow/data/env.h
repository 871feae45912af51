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

#ifndef DFLOW_DATA_ENV_H_
#define DFLOW_DATA_ENV_H_

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"

namespace dflow {

struct EnvSpec {
  std::string id;
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 1;
  std::string reward_description;
  // Mean episode returns of the uniform-random policy and of the scripted
  // expert, used for normalized scores.
  double random_return = 0.0;
  double expert_return = 1.0;
};

// "bandit" or "pointmass". Throws ConfigError for anything else.
EnvSpec MakeEnvSpec(std::string_view id);

// --- bandit ---------------------------------------------------------------
//
// One-step task on s in [-1, 1]^2 with a strong mode m1(s) (peak 1.0) and a
// weaker mode m2(s) (peak 0.6):
//   r(s, a) = max(exp(-|a - m1|^2 / 0.08), 0.6 exp(-|a - m2|^2 / 0.08))
//   m1(s) = (0.6, 0.6) + 0.2 s,  m2(s) = (-0.6, -0.6) + 0.2 s.

inline constexpr double kBanditWidth = 0.08;
inline constexpr double kBanditSecondaryPeak = 0.6;

struct BanditModes {
  Vec primary;
  Vec secondary;
};

BanditModes BanditModeCenters(const Vec& state);
double BanditReward(const Vec& state, const Vec& action);

// --- pointmass ------------------------------------------------------------
//
// Planar point in [-1, 1]^2 driven toward the goal (0.8, 0.8):
//   s' = clamp(s + 0.1 clip(a, -1, 1), -1, 1),  r = -|s' - goal|,
// terminal after 30 steps or once |s' - goal| < 0.05.

inline constexpr int kPointmassHorizon = 30;
inline constexpr double kPointmassStepScale = 0.1;
inline constexpr double kPointmassGoalRadius = 0.05;

Vec PointmassGoal();

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool terminal = false;
};

// `step` is the 0-based index of this step within the episode.
StepResult PointmassStep(const Vec& state, const Vec& action, int step);

// Heads straight for the goal at full speed.
Vec PointmassOptimalAction(const Vec& state);
// Full-speed heading rotated 50 degrees off the goal bearing; spirals in and
// typically does not arrive within the horizon.
Vec PointmassDetourAction(const Vec& state);

// --- episodic interface ---------------------------------------------------

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vec Reset(Rng& rng) = 0;
  virtual StepResult Step(const Vec& action) = 0;
};

std::unique_ptr<Environment> MakeEnvironment(std::string_view id);

struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;
};

// Mean returns of the uniform-random and scripted-expert policies. The
// constants frozen into MakeEnvSpec were produced with 10^4 episodes and
// kReferenceSeed.
inline constexpr uint64_t kReferenceSeed = 20240601;
ReferenceReturns ComputeReferenceReturns(std::string_view env_id, int episodes,
                                         uint64_t seed);

// Scripted expert for either environment.
Vec ExpertAction(std::string_view env_id, const Vec& state);

}  // namespace dflow

#endif  // DFLOW_DATA_ENV_H_
