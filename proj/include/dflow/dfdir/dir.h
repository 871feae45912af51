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

// Direction-oriented variant. The generation step is treated as a decision
// with flow state [s, a_t] and flow action u(s, a_t, t). Two flow critics
// are regressed onto the RL critic value of the dataset action:
//
//   Qf(s, a_t, u, t)      velocity-conditioned (magnitude and direction)
//   Vf(s, a_t, u/|u|, t)  direction-conditioned
//
// and the policy minimizes
//
//   -(Qf(s, a_t, u_theta, t) - Vf(s, a_t, u_theta/|u_theta|, t))
//       + rho * |u_theta - u_behavior|_2
//
// with gradients flowing through u_theta into both critic inputs.

#ifndef DFLOW_DFDIR_DIR_H_
#define DFLOW_DFDIR_DIR_H_

#include <cstdint>
#include <functional>
#include <vector>

#include "dflow/approx/checkpoint.h"
#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"
#include "dflow/critic/iql.h"
#include "dflow/data/dataset.h"
#include "dflow/flow/flow.h"

namespace dflow {

// Batched action-value oracle: one value per (state, action) column.
using ActionValueFn = std::function<RowVec(const Mat& states, const Mat& actions)>;

ActionValueFn CriticValueFn(const CriticSet& critics, bool use_target = false);

// Velocity fed to the flow critics while regressing them.
enum class DirCriticVelocity {
  // u_theta(s, a_t, t) of the current policy.
  kPolicy,
  // x1 - x0 of the sampled conditional path, the velocity that carries a_t
  // to the dataset action.
  kConditional,
};

class DirFlowCritics {
 public:
  DirFlowCritics(int state_dim, int action_dim, const std::vector<int>& hidden,
                 uint64_t seed, int time_frequencies = 0);

  Mlp& q_flow() { return q_flow_; }
  const Mlp& q_flow() const { return q_flow_; }
  Mlp& v_flow() { return v_flow_; }
  const Mlp& v_flow() const { return v_flow_; }

  // Qf over (state, action, velocity, time).
  RowVec QFlow(const Mat& states, const Mat& actions, const Mat& velocities,
               const RowVec& times, Mlp::Tape* tape = nullptr) const;
  // Vf over (state, action, direction, time).
  RowVec VFlow(const Mat& states, const Mat& actions, const Mat& directions,
               const RowVec& times, Mlp::Tape* tape = nullptr) const;

  // Rows of the velocity/direction segment within the stacked input.
  int velocity_row() const { return state_dim_ + action_dim_; }
  int action_dim() const { return action_dim_; }

  void Save(Checkpoint& ckpt, const std::string& prefix) const;
  void Load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  Mat Stack(const Mat& states, const Mat& actions, const Mat& velocities,
            const RowVec& times) const;

  int state_dim_;
  int action_dim_;
  TimeEncoding time_;
  Mlp q_flow_;
  Mlp v_flow_;
};

// Normalizes each column; degenerate columns become zero and are counted.
Mat NormalizeColumns(const Mat& velocities, int* degenerate = nullptr);

struct DirCriticLosses {
  double q_loss = 0.0;
  double v_loss = 0.0;
  Vec q_grad;
  Vec v_grad;
};

// Per column draws t ~ U[0, 1) then x0 ~ N(0, I), forms a_t on the path to
// the dataset action, and regresses both flow critics onto Q(s, a). The
// target and the policy receive no gradient.
DirCriticLosses DirCriticLoss(const DirFlowCritics& critics,
                              const FlowPolicy& policy,
                              const ActionValueFn& q_value,
                              const TransitionBatch& batch, Rng& rng,
                              DirCriticVelocity velocity =
                                  DirCriticVelocity::kPolicy);

struct DirPolicyLossResult {
  double loss = 0.0;
  Vec grad;
  double advantage = 0.0;      // mean Qf - Vf
  double advantage_abs = 0.0;  // mean |Qf - Vf|
  double divergence = 0.0;     // mean |u_theta - u_behavior|
  int degenerate = 0;          // columns with |u_theta| < kVelocityEpsilon
};

// Samples (s, a, t, a_t) exactly as DirCriticLoss does. Critic parameters are
// read-only here.
DirPolicyLossResult DirPolicyLoss(const FlowPolicy& policy,
                                  const DirFlowCritics& critics,
                                  const FlowPolicy& behavior, double rho,
                                  const TransitionBatch& batch, Rng& rng);

struct CosineStats {
  int count = 0;
  double mean = 0.0;
  double q10 = 0.0;
  double median = 0.0;
  double q90 = 0.0;
};

struct AlignmentReport {
  std::vector<CosineStats> per_step;  // one entry per grid index tau
  CosineStats overall;
  int degenerate = 0;  // excluded points: |grad Q| or |u| below epsilon
};

// Cosine similarity between u/|u| and the central finite-difference action
// gradient of `q_value` at every intermediate action of generated paths.
AlignmentReport DirectionAlignmentReport(const FlowPolicy& policy,
                                         const ActionValueFn& q_value,
                                         const Mat& states,
                                         const FlowTimeGrid& grid, Rng& rng,
                                         double fd_step = 1e-4,
                                         double gradient_floor = 1e-8);

struct MonotonicityReport {
  std::vector<double> per_step;  // fraction of non-decreasing steps per tau
  double overall = 0.0;
  int steps = 0;
};

// Fraction of generation steps with Q(s, a_{tau+1}) >= Q(s, a_tau) - tol.
MonotonicityReport QMonotonicity(const FlowPolicy& policy,
                                 const ActionValueFn& q_value,
                                 const Mat& states, const FlowTimeGrid& grid,
                                 Rng& rng, double tolerance = 1e-3);

}  // namespace dflow

#endif  // DFLOW_DFDIR_DIR_H_
