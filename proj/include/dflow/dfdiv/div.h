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

// Divergence-oriented variant. Generation is a nested MDP over flow states
// [a_prev, s, a_t]: each Euler step pays d = |u_theta - u_behavior|_2 and
// the last step earns Q(s, a_1). The flow value V(a_prev, s, a_t, t) is
// regressed onto Monte-Carlo returns
//
//   g = Q(s, a_1) - sum_{tau = tau0}^{T-1} d_tau
//
// of the current policy rolled out from a path-sampled a_t, and the policy
// minimizes d(s, a_t, t) - V(a_prev, s, a_t + dt u_theta, t + dt).

#ifndef DFLOW_DFDIV_DIV_H_
#define DFLOW_DFDIV_DIV_H_

#include <cstdint>
#include <string>
#include <vector>

#include "dflow/approx/checkpoint.h"
#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"
#include "dflow/data/dataset.h"
#include "dflow/dfdir/dir.h"
#include "dflow/flow/flow.h"

namespace dflow {

class DivFlowCritic {
 public:
  // With use_prev_action false the prev_action segment has width zero, so
  // the network never sees a_prev.
  DivFlowCritic(int state_dim, int action_dim, const std::vector<int>& hidden,
                uint64_t seed, bool use_prev_action = true,
                int time_frequencies = 0);

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  bool use_prev_action() const { return prev_dim_ > 0; }

  RowVec Value(const Mat& prev_actions, const Mat& states, const Mat& actions,
               const RowVec& times, Mlp::Tape* tape = nullptr) const;

  // Rows of the a_t segment within the stacked input.
  int action_row() const { return prev_dim_ + state_dim_; }

  void Save(Checkpoint& ckpt, const std::string& prefix) const;
  void Load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  int prev_dim_;
  int state_dim_;
  int action_dim_;
  TimeEncoding time_;
  Mlp net_;
};

struct FlowRollout {
  int start = 0;                    // tau0
  std::vector<Vec> actions;         // a_tau0 .. a_T
  std::vector<double> divergences;  // d_tau0 .. d_{T-1}
  double terminal_value = 0.0;      // Q(s, a_1)
};

// Q(s, a_1) minus the summed divergences.
double McTarget(const FlowRollout& rollout);

// Rolls u_theta from `action` at grid index `start` to t = 1, recording the
// divergence to u_behavior at every visited point.
FlowRollout RolloutFlow(const FlowPolicy& policy, const FlowPolicy& behavior,
                        const ActionValueFn& q_value, const Vec& state,
                        const Vec& action, int start, const FlowTimeGrid& grid);

struct McTargets {
  RowVec targets;
  std::vector<bool> valid;  // false where the rollout went non-finite
  int dropped = 0;
};

// Batched MC targets; column j starts at grid index starts[j].
McTargets ComputeMcTargets(const FlowPolicy& policy, const FlowPolicy& behavior,
                           const ActionValueFn& q_value, const Mat& states,
                           const Mat& actions, const std::vector<int>& starts,
                           const FlowTimeGrid& grid);

struct DivCriticLossResult {
  double loss = 0.0;
  Vec grad;
  int dropped = 0;
  double mean_target = 0.0;
};

// Per column draws tau0 uniformly from {0, ..., T} (or {0, ..., T-1} when
// include_terminal is false), then x0 ~ N(0, I), sets a_t on the path to the
// dataset action and regresses V onto the MC return with 1/2 squared error.
// Columns whose rollout diverges are dropped and counted.
DivCriticLossResult DivCriticLoss(const DivFlowCritic& critic,
                                  const FlowPolicy& policy,
                                  const FlowPolicy& behavior,
                                  const ActionValueFn& q_value,
                                  const TransitionBatch& batch,
                                  const FlowTimeGrid& grid, Rng& rng,
                                  bool include_terminal = true);

struct DivPolicyLossResult {
  double loss = 0.0;
  Vec grad;
  double divergence = 0.0;  // mean d
  double next_value = 0.0;  // mean V at the stepped point
};

// tau ~ U{0, ..., T-1}, a_t path-sampled, gradient through the Euler step.
DivPolicyLossResult DivPolicyLoss(const FlowPolicy& policy,
                                  const DivFlowCritic& critic,
                                  const FlowPolicy& behavior,
                                  const TransitionBatch& batch,
                                  const FlowTimeGrid& grid, Rng& rng);

struct TelescopingReport {
  // mean |V(a_t, t) + d_t - V(a_{t+dt}, t + dt)|
  double residual = 0.0;
  // mean |V(a_t, t) - g| at the same points
  double fit_error = 0.0;
  // mean |V(a_1, 1) - Q(s, a_1)| at the rollout endpoints
  double terminal_fit_error = 0.0;
  int samples = 0;
};

// Evaluates the one-step consistency of a fitted critic on held-out
// transitions with tau0 ~ U{0, ..., T-1}.
TelescopingReport TelescopingResidual(const DivFlowCritic& critic,
                                      const FlowPolicy& policy,
                                      const FlowPolicy& behavior,
                                      const ActionValueFn& q_value,
                                      const TransitionBatch& batch,
                                      const FlowTimeGrid& grid, Rng& rng);

}  // namespace dflow

#endif  // DFLOW_DFDIV_DIV_H_
