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

// Expectile state-value regression and Bellman Q regression against a
// target network:
//
//   L_V = E[ L2^tau(V(s) - Qbar(s, a)) ]
//   L_Q = E[ (r + gamma (1 - done) V(s') - Q(s, a))^2 ]
//   L2^tau(y) = |tau - 1(y < 0)| y^2
//
// The V residual is V - Qbar as written above; with tau = 0.5 it coincides
// with the more common Qbar - V convention.

#ifndef DFLOW_CRITIC_IQL_H_
#define DFLOW_CRITIC_IQL_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "dflow/approx/checkpoint.h"
#include "dflow/approx/mlp.h"
#include "dflow/approx/optimizer.h"
#include "dflow/common/rng.h"
#include "dflow/data/dataset.h"
#include "dflow/flow/flow.h"

namespace dflow {

struct CriticConfig {
  std::vector<int> hidden = {256, 256, 256};
  double expectile = 0.5;
  double discount = 0.99;
  double kappa = 0.005;
  // Multiplies dataset rewards inside the Bellman target.
  double reward_scale = 1.0;
  bool twin_q = false;
  // Conservative bootstrap: subtracts
  //   alt_q_alpha * (logsumexp_k Qbar(s', a_k) - log K),  a_k ~ U[-1, 1]^d
  // from the next-state value in the Q target.
  bool alt_q = false;
  double alt_q_alpha = 0.1;
  int alt_q_samples = 8;
  uint64_t seed = 0;

  void Validate() const;
};

double ExpectileLoss(double y, double tau);
// d/dy of ExpectileLoss.
double ExpectileLossSlope(double y, double tau);

class CriticSet {
 public:
  CriticSet(int state_dim, int action_dim, CriticConfig config);

  const CriticConfig& config() const { return config_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  Mlp& q() { return q_; }
  const Mlp& q() const { return q_; }
  Mlp& v() { return v_; }
  const Mlp& v() const { return v_; }
  const TargetNetwork& q_target() const { return q_target_; }
  TargetNetwork& q_target() { return q_target_; }
  bool has_twin() const { return q2_.has_value(); }
  Mlp& q2() { return *q2_; }
  const Mlp& q2() const { return *q2_; }
  const TargetNetwork& q2_target() const { return *q2_target_; }

  // Q(s, a) per column; with twin heads the minimum of the two.
  RowVec Q(const Mat& states, const Mat& actions, bool use_target) const;
  RowVec V(const Mat& states) const;

  // Polyak update of every target head.
  void UpdateTargets();

  void Save(Checkpoint& ckpt, const std::string& prefix) const;
  void Load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  CriticConfig config_;
  int state_dim_;
  int action_dim_;
  Mlp q_;
  Mlp v_;
  TargetNetwork q_target_;
  std::optional<Mlp> q2_;
  std::optional<TargetNetwork> q2_target_;
};

// Scalar critic value for one (s, a).
double QValue(const CriticSet& critics, const Vec& state, const Vec& action,
              bool use_target);

// Mean expectile loss of V(s) - Qbar(s, a); gradient w.r.t. V only.
LossGrad VLoss(const CriticSet& critics, const TransitionBatch& batch);

struct QLossResult {
  double loss = 0.0;
  Vec grad;       // w.r.t. q()
  Vec twin_grad;  // w.r.t. q2(); empty without twin heads
  RowVec targets;
};

// Mean squared Bellman error with the target held constant. `rng` is only
// drawn from when alt_q is enabled.
QLossResult QLoss(const CriticSet& critics, const TransitionBatch& batch,
                  Rng& rng);

}  // namespace dflow

#endif  // DFLOW_CRITIC_IQL_H_
