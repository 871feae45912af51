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

#include "dflow/flow/flow.h"

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include "dflow/common/errors.h"

namespace dflow {

FlowTimeGrid::FlowTimeGrid(int steps) : steps_(steps) {
  if (steps < 1) throw ConfigError("flow step count T must be >= 1");
  dt_ = 1.0 / steps;
}

double FlowTimeGrid::TimeAt(int tau) const {
  if (tau < 0 || tau > steps_) {
    throw DomainError("grid index " + std::to_string(tau) + " outside [0, " +
                      std::to_string(steps_) + "]");
  }
  if (tau == steps_) return 1.0;
  return tau * dt_;
}

PathSample SamplePath(const Vec& x0, const Vec& x1, double t) {
  if (x0.size() != x1.size()) throw ShapeError("path endpoints differ in size");
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("path time " + std::to_string(t) + " outside [0, 1]");
  }
  PathSample sample;
  sample.x0 = x0;
  sample.x1 = x1;
  sample.t = t;
  sample.xt = (1.0 - t) * x0 + t * x1;
  sample.u_cond = x1 - x0;
  return sample;
}

Mat InterpolatePath(const Mat& x0, const Mat& x1, const RowVec& t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() ||
      t.size() != x0.cols()) {
    throw ShapeError("batched path shapes disagree");
  }
  Mat xt(x0.rows(), x0.cols());
  for (Eigen::Index j = 0; j < x0.cols(); ++j) {
    xt.col(j) = (1.0 - t[j]) * x0.col(j) + t[j] * x1.col(j);
  }
  return xt;
}

Vec EulerStep(const Vec& x, const Vec& u, double dt) {
  if (x.size() != u.size()) throw ShapeError("euler step dimension mismatch");
  if (!(dt > 0.0)) throw DomainError("euler step size must be positive");
  return x + dt * u;
}

NormalizedVelocity NormalizeVelocity(const Vec& u) {
  const double norm = u.norm();
  if (!(norm >= kVelocityEpsilon)) {
    return {Vec::Zero(u.size()), true};
  }
  return {u / norm, false};
}

Mat NormalizeVelocityBackward(const Mat& u, const Mat& direction_grad) {
  Mat grad = Mat::Zero(u.rows(), u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const double norm = u.col(j).norm();
    if (!(norm >= kVelocityEpsilon)) continue;
    const Vec dir = u.col(j) / norm;
    const Vec g = direction_grad.col(j);
    grad.col(j) = (g - dir * dir.dot(g)) / norm;
  }
  return grad;
}

Mat TimeEncoding::Encode(const RowVec& t) const {
  Mat out(dim(), t.size());
  out.row(0) = t;
  for (int k = 1; k <= frequencies; ++k) {
    const double w = 2.0 * std::numbers::pi * k;
    out.row(2 * k - 1) = (w * t.array()).sin().matrix();
    out.row(2 * k) = (w * t.array()).cos().matrix();
  }
  return out;
}

MlpSpec FlowPolicySpec(int state_dim, int action_dim,
                       const std::vector<int>& hidden, uint64_t seed,
                       int time_frequencies) {
  MlpSpec spec;
  spec.inputs = {{"state", state_dim},
                 {"action", action_dim},
                 {"time", TimeEncoding{time_frequencies}.dim()}};
  spec.hidden = hidden;
  spec.output_dim = action_dim;
  spec.activation = Activation::kSilu;
  spec.seed = seed;
  return spec;
}

FlowPolicy::FlowPolicy(int state_dim, int action_dim,
                       const std::vector<int>& hidden, uint64_t seed,
                       int time_frequencies)
    : FlowPolicy(Mlp(FlowPolicySpec(state_dim, action_dim, hidden, seed,
                                    time_frequencies))) {}

FlowPolicy::FlowPolicy(Mlp net) : net_(std::move(net)) {
  const auto& inputs = net_.spec().inputs;
  if (inputs.size() != 3 || inputs[0].name != "state" ||
      inputs[1].name != "action" || inputs[2].name != "time") {
    throw SchemaError("flow policy network must take state, action, time");
  }
  state_dim_ = inputs[0].dim;
  action_dim_ = inputs[1].dim;
  if (net_.output_dim() != action_dim_) {
    throw SchemaError("flow policy output width must equal action width");
  }
  if (inputs[2].dim < 1 || inputs[2].dim % 2 == 0) {
    throw SchemaError("flow policy time input must have odd width");
  }
  time_.frequencies = (inputs[2].dim - 1) / 2;
}

Vec FlowPolicy::Velocity(const Vec& state, const Vec& action, double t) const {
  RowVec times(1);
  times[0] = t;
  return Velocity(Mat(state), Mat(action), times).col(0);
}

Mat FlowPolicy::Velocity(const Mat& states, const Mat& actions,
                         const RowVec& times, Mlp::Tape* tape) const {
  if (states.rows() != state_dim_ || actions.rows() != action_dim_) {
    throw ShapeError("flow policy expects state width " +
                     std::to_string(state_dim_) + " and action width " +
                     std::to_string(action_dim_));
  }
  if (states.cols() != actions.cols() || times.size() != actions.cols()) {
    throw ShapeError("flow policy batch sizes disagree");
  }
  Mat stacked(net_.input_dim(), actions.cols());
  stacked.topRows(state_dim_) = states;
  stacked.middleRows(state_dim_, action_dim_) = actions;
  stacked.bottomRows(time_.dim()) = time_.Encode(times);
  return net_.Forward(stacked, tape);
}

void FlowPolicy::Backward(const Mlp::Tape& tape, const Mat& upstream,
                          Vec* param_grad, Mat* action_grad) const {
  if (action_grad == nullptr) {
    net_.Backward(tape, upstream, param_grad, nullptr);
    return;
  }
  Mat input_grad;
  net_.Backward(tape, upstream, param_grad, &input_grad);
  *action_grad = input_grad.middleRows(state_dim_, action_dim_);
}

LossGrad CfmLoss(const FlowPolicy& policy, const Mat& states,
                 const Mat& actions, Rng& rng) {
  const Eigen::Index batch = actions.cols();
  if (batch == 0) throw ShapeError("cfm loss needs a non-empty batch");
  if (actions.rows() != policy.action_dim() || states.cols() != batch) {
    throw ShapeError("cfm batch shape mismatch");
  }
  RowVec t(batch);
  for (Eigen::Index j = 0; j < batch; ++j) t[j] = rng.Uniform(0.0, 1.0);
  const Mat x0 = rng.NormalMatrix(policy.action_dim(), batch);
  const Mat xt = InterpolatePath(x0, actions, t);
  const Mat target = actions - x0;

  Mlp::Tape tape;
  const Mat residual = policy.Velocity(states, xt, t, &tape) - target;

  LossGrad out;
  out.loss = residual.squaredNorm() / batch;
  out.grad = Vec::Zero(policy.net().param_count());
  policy.Backward(tape, (2.0 / batch) * residual, &out.grad, nullptr);
  return out;
}

Generation GenerateAction(const FlowPolicy& policy, const Vec& state,
                          const FlowTimeGrid& grid, Rng& rng,
                          bool record_path) {
  Generation gen;
  Vec a = rng.NormalMatrix(policy.action_dim(), 1).col(0);
  if (record_path) gen.path.reserve(grid.steps());
  for (int tau = 0; tau < grid.steps(); ++tau) {
    Vec u = policy.Velocity(state, a, grid.TimeAt(tau));
    Vec next = EulerStep(a, u, grid.dt());
    if (!next.allFinite()) {
      throw GenerationDivergenceError(
          tau, "non-finite action at generation step " + std::to_string(tau));
    }
    if (record_path) gen.path.push_back({a, std::move(u)});
    a = std::move(next);
  }
  gen.action = std::move(a);
  return gen;
}

Mat IntegrateFrom(const FlowPolicy& policy, const Mat& states, Mat actions,
                  int start, const FlowTimeGrid& grid) {
  if (start < 0 || start > grid.steps()) {
    throw DomainError("integration start outside the flow grid");
  }
  for (int tau = start; tau < grid.steps(); ++tau) {
    const RowVec t = RowVec::Constant(actions.cols(), grid.TimeAt(tau));
    actions += grid.dt() * policy.Velocity(states, actions, t);
    if (!actions.allFinite()) {
      throw GenerationDivergenceError(
          tau, "non-finite action at generation step " + std::to_string(tau));
    }
  }
  return actions;
}

BatchPath GeneratePaths(const FlowPolicy& policy, const Mat& states,
                        const FlowTimeGrid& grid, Rng& rng) {
  BatchPath path;
  path.actions.push_back(rng.NormalMatrix(policy.action_dim(), states.cols()));
  for (int tau = 0; tau < grid.steps(); ++tau) {
    const RowVec t = RowVec::Constant(states.cols(), grid.TimeAt(tau));
    path.velocities.push_back(policy.Velocity(states, path.actions.back(), t));
    Mat next = path.actions.back() + grid.dt() * path.velocities.back();
    if (!next.allFinite()) {
      throw GenerationDivergenceError(
          tau, "non-finite action at generation step " + std::to_string(tau));
    }
    path.actions.push_back(std::move(next));
  }
  return path;
}

Mat GenerateActions(const FlowPolicy& policy, const Mat& states,
                    const FlowTimeGrid& grid, Rng& rng) {
  Mat a0 = rng.NormalMatrix(policy.action_dim(), states.cols());
  return IntegrateFrom(policy, states, std::move(a0), 0, grid);
}

}  // namespace dflow
