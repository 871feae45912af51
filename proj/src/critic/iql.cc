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

#include "dflow/critic/iql.h"

#include <cmath>
#include <string>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

MlpSpec QSpec(int state_dim, int action_dim, const CriticConfig& config,
              uint64_t seed) {
  return {{{"state", state_dim}, {"action", action_dim}},
          config.hidden,
          1,
          Activation::kRelu,
          seed};
}

MlpSpec VSpec(int state_dim, const CriticConfig& config, uint64_t seed) {
  return {{{"state", state_dim}}, config.hidden, 1, Activation::kRelu, seed};
}

Mat StackStateAction(const Mat& states, const Mat& actions) {
  Mat x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

}  // namespace

void CriticConfig::Validate() const {
  if (!(expectile > 0.0 && expectile < 1.0)) {
    throw ConfigError("expectile must lie in (0, 1)");
  }
  if (!(discount > 0.0 && discount <= 1.0)) {
    throw ConfigError("discount must lie in (0, 1]");
  }
  if (!(kappa > 0.0 && kappa <= 1.0)) {
    throw ConfigError("target tracking coefficient must lie in (0, 1]");
  }
  if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be positive");
  if (alt_q && (alt_q_samples < 1 || !(alt_q_alpha >= 0.0))) {
    throw ConfigError("alt_q needs samples >= 1 and alpha >= 0");
  }
}

double ExpectileLoss(double y, double tau) {
  const double weight = std::abs(tau - (y < 0.0 ? 1.0 : 0.0));
  return weight * y * y;
}

double ExpectileLossSlope(double y, double tau) {
  const double weight = std::abs(tau - (y < 0.0 ? 1.0 : 0.0));
  return 2.0 * weight * y;
}

CriticSet::CriticSet(int state_dim, int action_dim, CriticConfig config)
    : config_(std::move(config)),
      state_dim_(state_dim),
      action_dim_(action_dim),
      q_(QSpec(state_dim, action_dim, config_, SplitSeed(config_.seed, 1))),
      v_(VSpec(state_dim, config_, SplitSeed(config_.seed, 2))),
      q_target_(q_, config_.kappa) {
  config_.Validate();
  if (config_.twin_q) {
    q2_.emplace(QSpec(state_dim, action_dim, config_, SplitSeed(config_.seed, 3)));
    q2_target_.emplace(*q2_, config_.kappa);
  }
}

RowVec CriticSet::Q(const Mat& states, const Mat& actions,
                    bool use_target) const {
  const Mat x = StackStateAction(states, actions);
  RowVec out = (use_target ? q_target_.net() : q_).Forward(x).row(0);
  if (q2_) {
    const RowVec other = (use_target ? q2_target_->net() : *q2_).Forward(x).row(0);
    out = out.cwiseMin(other);
  }
  return out;
}

RowVec CriticSet::V(const Mat& states) const { return v_.Forward(states).row(0); }

void CriticSet::UpdateTargets() {
  q_target_.Update(q_);
  if (q2_) q2_target_->Update(*q2_);
}

void CriticSet::Save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.PutNetwork(prefix + "q", q_);
  ckpt.PutNetwork(prefix + "q_target", q_target_.net());
  ckpt.PutNetwork(prefix + "v", v_);
  if (q2_) {
    ckpt.PutNetwork(prefix + "q2", *q2_);
    ckpt.PutNetwork(prefix + "q2_target", q2_target_->net());
  }
}

void CriticSet::Load(const Checkpoint& ckpt, const std::string& prefix) {
  auto load = [&](Mlp& dst, const std::string& name) {
    Mlp src = ckpt.GetNetwork(prefix + name);
    if (src.spec().LayerWidths() != dst.spec().LayerWidths()) {
      throw SchemaError("critic '" + name + "' architecture mismatch");
    }
    dst.set_params(src.params());
  };
  load(q_, "q");
  load(q_target_.mutable_net(), "q_target");
  load(v_, "v");
  if (q2_) {
    load(*q2_, "q2");
    load(q2_target_->mutable_net(), "q2_target");
  }
}

double QValue(const CriticSet& critics, const Vec& state, const Vec& action,
              bool use_target) {
  if (state.size() != critics.state_dim() ||
      action.size() != critics.action_dim()) {
    throw ShapeError("q_value dimension mismatch");
  }
  return critics.Q(Mat(state), Mat(action), use_target)[0];
}

LossGrad VLoss(const CriticSet& critics, const TransitionBatch& batch) {
  const int n = batch.size();
  if (n == 0) throw ShapeError("v_loss needs a non-empty batch");
  const RowVec q_target = critics.Q(batch.states, batch.actions, true);
  Mlp::Tape tape;
  const RowVec v = critics.v().Forward(batch.states, &tape).row(0);
  const double tau = critics.config().expectile;

  LossGrad out;
  Mat upstream(1, n);
  for (int j = 0; j < n; ++j) {
    const double y = v[j] - q_target[j];
    out.loss += ExpectileLoss(y, tau);
    upstream(0, j) = ExpectileLossSlope(y, tau) / n;
  }
  out.loss /= n;
  out.grad = Vec::Zero(critics.v().param_count());
  critics.v().Backward(tape, upstream, &out.grad, nullptr);
  return out;
}

QLossResult QLoss(const CriticSet& critics, const TransitionBatch& batch,
                  Rng& rng) {
  const int n = batch.size();
  if (n == 0) throw ShapeError("q_loss needs a non-empty batch");
  const CriticConfig& config = critics.config();

  RowVec next_value = critics.V(batch.next_states);
  if (config.alt_q) {
    const int k = config.alt_q_samples;
    Mat repeated_states(critics.state_dim(), n * k);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < k; ++i) {
        repeated_states.col(j * k + i) = batch.next_states.col(j);
      }
    }
    const Mat sampled =
        rng.UniformMatrix(critics.action_dim(), n * k, -1.0, 1.0);
    const RowVec q_sampled = critics.Q(repeated_states, sampled, true);
    for (int j = 0; j < n; ++j) {
      const auto seg = q_sampled.segment(j * k, k);
      const double peak = seg.maxCoeff();
      const double lse = peak + std::log((seg.array() - peak).exp().sum());
      next_value[j] -= config.alt_q_alpha * (lse - std::log(double(k)));
    }
  }

  QLossResult out;
  out.targets = (config.reward_scale * batch.rewards.transpose()).array() +
                config.discount *
                    (1.0 - batch.terminals.transpose().array()) *
                    next_value.array();

  const Mat x = StackStateAction(batch.states, batch.actions);
  auto head_loss = [&](const Mlp& head, Vec* grad) {
    Mlp::Tape tape;
    const RowVec residual = head.Forward(x, &tape).row(0) - out.targets;
    *grad = Vec::Zero(head.param_count());
    head.Backward(tape, Mat((2.0 / n) * residual), grad, nullptr);
    return residual.squaredNorm() / n;
  };
  out.loss = head_loss(critics.q(), &out.grad);
  if (critics.has_twin()) out.loss += head_loss(critics.q2(), &out.twin_grad);
  return out;
}

}  // namespace dflow
