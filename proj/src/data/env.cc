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

#include "dflow/data/env.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

Vec Vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

class BanditEnv : public Environment {
 public:
  BanditEnv() : spec_(MakeEnvSpec("bandit")) {}
  const EnvSpec& spec() const override { return spec_; }

  Vec Reset(Rng& rng) override {
    state_ = rng.UniformMatrix(2, 1, -1.0, 1.0).col(0);
    return state_;
  }

  StepResult Step(const Vec& action) override {
    if (action.size() != 2) throw ShapeError("bandit action must be 2-D");
    return {state_, BanditReward(state_, action), true};
  }

 private:
  EnvSpec spec_;
  Vec state_ = Vec::Zero(2);
};

class PointmassEnv : public Environment {
 public:
  PointmassEnv() : spec_(MakeEnvSpec("pointmass")) {}
  const EnvSpec& spec() const override { return spec_; }

  Vec Reset(Rng& rng) override {
    state_ = Vec2(-0.8, -0.8) + rng.UniformMatrix(2, 1, -0.1, 0.1).col(0);
    step_ = 0;
    return state_;
  }

  StepResult Step(const Vec& action) override {
    if (action.size() != 2) throw ShapeError("pointmass action must be 2-D");
    StepResult result = PointmassStep(state_, action, step_);
    state_ = result.next_state;
    ++step_;
    return result;
  }

 private:
  EnvSpec spec_;
  Vec state_ = Vec::Zero(2);
  int step_ = 0;
};

}  // namespace

EnvSpec MakeEnvSpec(std::string_view id) {
  EnvSpec spec;
  spec.id = std::string(id);
  spec.state_dim = 2;
  spec.action_dim = 2;
  if (id == "bandit") {
    spec.horizon = 1;
    spec.reward_description =
        "max(exp(-|a-m1(s)|^2/0.08), 0.6*exp(-|a-m2(s)|^2/0.08)), "
        "m1=(0.6,0.6)+0.2s, m2=(-0.6,-0.6)+0.2s";
    spec.random_return = 0.092771418750379434;
    spec.expert_return = 1.0;
  } else if (id == "pointmass") {
    spec.horizon = kPointmassHorizon;
    spec.reward_description =
        "-|s'-goal|, goal=(0.8,0.8), s'=clamp(s+0.1*clip(a)), terminal at "
        "step 30 or |s'-goal|<0.05";
    spec.random_return = -66.359233735477133;
    spec.expert_return = -17.039173924396685;
  } else {
    throw ConfigError("unknown environment '" + std::string(id) + "'");
  }
  return spec;
}

BanditModes BanditModeCenters(const Vec& state) {
  if (state.size() != 2) throw ShapeError("bandit state must be 2-D");
  return {Vec2(0.6, 0.6) + 0.2 * state, Vec2(-0.6, -0.6) + 0.2 * state};
}

double BanditReward(const Vec& state, const Vec& action) {
  if (action.size() != 2) throw ShapeError("bandit action must be 2-D");
  const BanditModes modes = BanditModeCenters(state);
  const double primary =
      std::exp(-(action - modes.primary).squaredNorm() / kBanditWidth);
  const double secondary =
      kBanditSecondaryPeak *
      std::exp(-(action - modes.secondary).squaredNorm() / kBanditWidth);
  return std::max(primary, secondary);
}

Vec PointmassGoal() { return Vec2(0.8, 0.8); }

StepResult PointmassStep(const Vec& state, const Vec& action, int step) {
  if (state.size() != 2 || action.size() != 2) {
    throw ShapeError("pointmass state and action must be 2-D");
  }
  const Vec clipped = action.cwiseMax(-1.0).cwiseMin(1.0);
  StepResult result;
  result.next_state =
      (state + kPointmassStepScale * clipped).cwiseMax(-1.0).cwiseMin(1.0);
  const double distance = (result.next_state - PointmassGoal()).norm();
  result.reward = -distance;
  result.terminal =
      step + 1 >= kPointmassHorizon || distance < kPointmassGoalRadius;
  return result;
}

Vec PointmassOptimalAction(const Vec& state) {
  return ((PointmassGoal() - state) / kPointmassStepScale)
      .cwiseMax(-1.0)
      .cwiseMin(1.0);
}

Vec PointmassDetourAction(const Vec& state) {
  const Vec offset = PointmassGoal() - state;
  const double norm = offset.norm();
  if (norm < 1e-12) return Vec::Zero(2);
  const double angle = 50.0 * std::numbers::pi / 180.0;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Vec dir = offset / norm;
  return Vec2(c * dir[0] - s * dir[1], s * dir[0] + c * dir[1]);
}

std::unique_ptr<Environment> MakeEnvironment(std::string_view id) {
  if (id == "bandit") return std::make_unique<BanditEnv>();
  if (id == "pointmass") return std::make_unique<PointmassEnv>();
  throw ConfigError("unknown environment '" + std::string(id) + "'");
}

Vec ExpertAction(std::string_view env_id, const Vec& state) {
  if (env_id == "bandit") return BanditModeCenters(state).primary;
  if (env_id == "pointmass") return PointmassOptimalAction(state);
  throw ConfigError("unknown environment '" + std::string(env_id) + "'");
}

ReferenceReturns ComputeReferenceReturns(std::string_view env_id, int episodes,
                                         uint64_t seed) {
  if (episodes < 1) throw ConfigError("reference returns need >= 1 episode");
  auto env = MakeEnvironment(env_id);
  ReferenceReturns out;
  for (int policy = 0; policy < 2; ++policy) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
      Rng rng = Rng::Stream(seed + policy, static_cast<uint64_t>(e));
      Vec s = env->Reset(rng);
      for (;;) {
        const Vec a = policy == 0
                          ? rng.UniformMatrix(env->spec().action_dim, 1, -1.0, 1.0)
                                .col(0)
                          : ExpertAction(env_id, s);
        const StepResult step = env->Step(a);
        total += step.reward;
        s = step.next_state;
        if (step.terminal) break;
      }
    }
    (policy == 0 ? out.random : out.expert) = total / episodes;
  }
  return out;
}

}  // namespace dflow
