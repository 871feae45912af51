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

#include "dflow/dfdiv/div.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

struct GridDraw {
  std::vector<int> tau;
  RowVec t;
  Mat xt;
};

// tau for every column first, then the noise matrix.
GridDraw DrawGridPath(const Mat& actions, const FlowTimeGrid& grid,
                      int max_tau, Rng& rng) {
  GridDraw draw;
  const Eigen::Index n = actions.cols();
  draw.tau.resize(n);
  draw.t.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    draw.tau[j] = static_cast<int>(rng.UniformInt(0, max_tau));
    draw.t[j] = grid.TimeAt(draw.tau[j]);
  }
  const Mat x0 = rng.NormalMatrix(actions.rows(), n);
  draw.xt = InterpolatePath(x0, actions, draw.t);
  return draw;
}

}  // namespace

DivFlowCritic::DivFlowCritic(int state_dim, int action_dim,
                             const std::vector<int>& hidden, uint64_t seed,
                             bool use_prev_action, int time_frequencies)
    : prev_dim_(use_prev_action ? action_dim : 0),
      state_dim_(state_dim),
      action_dim_(action_dim),
      time_{time_frequencies},
      net_([&] {
        MlpSpec spec;
        spec.inputs = {{"prev_action", use_prev_action ? action_dim : 0},
                       {"state", state_dim},
                       {"action", action_dim},
                       {"time", TimeEncoding{time_frequencies}.dim()}};
        spec.hidden = hidden;
        spec.output_dim = 1;
        spec.activation = Activation::kRelu;
        spec.seed = SplitSeed(seed, 1);
        return Mlp(std::move(spec));
      }()) {}

RowVec DivFlowCritic::Value(const Mat& prev_actions, const Mat& states,
                            const Mat& actions, const RowVec& times,
                            Mlp::Tape* tape) const {
  const Eigen::Index n = actions.cols();
  if (states.rows() != state_dim_ || actions.rows() != action_dim_) {
    throw ShapeError("flow value input widths disagree with construction");
  }
  if (states.cols() != n || times.size() != n) {
    throw ShapeError("flow value batch sizes disagree");
  }
  Mat stacked(net_.input_dim(), n);
  if (prev_dim_ > 0) {
    if (prev_actions.rows() != prev_dim_ || prev_actions.cols() != n) {
      throw ShapeError("prev_action block has the wrong shape");
    }
    stacked.topRows(prev_dim_) = prev_actions;
  }
  stacked.middleRows(prev_dim_, state_dim_) = states;
  stacked.middleRows(action_row(), action_dim_) = actions;
  stacked.bottomRows(time_.dim()) = time_.Encode(times);
  return net_.Forward(stacked, tape).row(0);
}

void DivFlowCritic::Save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.PutNetwork(prefix + "v_div", net_);
}

void DivFlowCritic::Load(const Checkpoint& ckpt, const std::string& prefix) {
  Mlp src = ckpt.GetNetwork(prefix + "v_div");
  if (src.spec().inputs != net_.spec().inputs ||
      src.spec().LayerWidths() != net_.spec().LayerWidths()) {
    throw SchemaError("flow value architecture mismatch");
  }
  net_.set_params(src.params());
}

double McTarget(const FlowRollout& rollout) {
  double g = rollout.terminal_value;
  for (double d : rollout.divergences) g -= d;
  return g;
}

FlowRollout RolloutFlow(const FlowPolicy& policy, const FlowPolicy& behavior,
                        const ActionValueFn& q_value, const Vec& state,
                        const Vec& action, int start,
                        const FlowTimeGrid& grid) {
  if (start < 0 || start > grid.steps()) {
    throw DomainError("rollout start outside the flow grid");
  }
  FlowRollout rollout;
  rollout.start = start;
  rollout.actions.push_back(action);
  for (int tau = start; tau < grid.steps(); ++tau) {
    const Vec& a = rollout.actions.back();
    const double t = grid.TimeAt(tau);
    const Vec u = policy.Velocity(state, a, t);
    const Vec u_b = behavior.Velocity(state, a, t);
    rollout.divergences.push_back((u - u_b).norm());
    Vec next = a + grid.dt() * u;
    if (!next.allFinite()) {
      throw GenerationDivergenceError(
          tau, "non-finite action at generation step " + std::to_string(tau));
    }
    rollout.actions.push_back(std::move(next));
  }
  rollout.terminal_value = q_value(Mat(state), Mat(rollout.actions.back()))[0];
  return rollout;
}

McTargets ComputeMcTargets(const FlowPolicy& policy, const FlowPolicy& behavior,
                           const ActionValueFn& q_value, const Mat& states,
                           const Mat& actions, const std::vector<int>& starts,
                           const FlowTimeGrid& grid) {
  const Eigen::Index n = actions.cols();
  if (static_cast<Eigen::Index>(starts.size()) != n || states.cols() != n) {
    throw ShapeError("MC target batch sizes disagree");
  }
  int first = grid.steps();
  for (int s : starts) {
    if (s < 0 || s > grid.steps()) {
      throw DomainError("rollout start outside the flow grid");
    }
    first = std::min(first, s);
  }
  Mat a = actions;
  RowVec cost = RowVec::Zero(n);
  McTargets out;
  out.valid.assign(n, true);
  for (int tau = first; tau < grid.steps(); ++tau) {
    const RowVec t = RowVec::Constant(n, grid.TimeAt(tau));
    const Mat u = policy.Velocity(states, a, t);
    const Mat u_b = behavior.Velocity(states, a, t);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (starts[j] > tau || !out.valid[j]) continue;
      cost[j] += (u.col(j) - u_b.col(j)).norm();
      a.col(j) += grid.dt() * u.col(j);
      if (!a.col(j).allFinite()) {
        out.valid[j] = false;
        a.col(j).setZero();
      }
    }
  }
  const RowVec terminal = q_value(states, a);
  out.targets = terminal - cost;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (out.valid[j] && !std::isfinite(out.targets[j])) out.valid[j] = false;
    if (!out.valid[j]) {
      out.targets[j] = 0.0;
      ++out.dropped;
    }
  }
  return out;
}

DivCriticLossResult DivCriticLoss(const DivFlowCritic& critic,
                                  const FlowPolicy& policy,
                                  const FlowPolicy& behavior,
                                  const ActionValueFn& q_value,
                                  const TransitionBatch& batch,
                                  const FlowTimeGrid& grid, Rng& rng,
                                  bool include_terminal) {
  const Eigen::Index n = batch.actions.cols();
  if (n == 0) throw ShapeError("flow value loss needs a non-empty batch");
  const int max_tau = include_terminal ? grid.steps() : grid.steps() - 1;
  const GridDraw draw = DrawGridPath(batch.actions, grid, max_tau, rng);
  const McTargets mc = ComputeMcTargets(policy, behavior, q_value, batch.states,
                                        draw.xt, draw.tau, grid);

  DivCriticLossResult out;
  out.dropped = mc.dropped;
  out.grad = Vec::Zero(critic.net().param_count());
  const int kept = static_cast<int>(n) - mc.dropped;
  if (kept == 0) return out;

  Mlp::Tape tape;
  const RowVec v =
      critic.Value(batch.prev_actions, batch.states, draw.xt, draw.t, &tape);
  RowVec upstream = RowVec::Zero(n);
  double sq = 0.0;
  double target_sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!mc.valid[j]) continue;
    const double r = v[j] - mc.targets[j];
    sq += r * r;
    target_sum += mc.targets[j];
    upstream[j] = r / kept;
  }
  out.loss = 0.5 * sq / kept;
  out.mean_target = target_sum / kept;
  critic.net().Backward(tape, upstream, &out.grad, nullptr);
  return out;
}

DivPolicyLossResult DivPolicyLoss(const FlowPolicy& policy,
                                  const DivFlowCritic& critic,
                                  const FlowPolicy& behavior,
                                  const TransitionBatch& batch,
                                  const FlowTimeGrid& grid, Rng& rng) {
  const Eigen::Index n = batch.actions.cols();
  if (n == 0) throw ShapeError("policy loss needs a non-empty batch");
  const GridDraw draw = DrawGridPath(batch.actions, grid, grid.steps() - 1, rng);

  Mlp::Tape pi_tape;
  const Mat u = policy.Velocity(batch.states, draw.xt, draw.t, &pi_tape);
  const Mat u_b = behavior.Velocity(batch.states, draw.xt, draw.t);
  const Mat diff = u - u_b;
  const RowVec dist = diff.colwise().norm();

  const Mat next = draw.xt + grid.dt() * u;
  RowVec t_next(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t_next[j] = grid.TimeAt(draw.tau[j] + 1);
  }
  Mlp::Tape v_tape;
  const RowVec v =
      critic.Value(batch.prev_actions, batch.states, next, t_next, &v_tape);

  DivPolicyLossResult out;
  out.loss = (dist.sum() - v.sum()) / n;
  out.divergence = dist.mean();
  out.next_value = v.mean();

  Mat v_in;
  critic.net().Backward(v_tape, RowVec::Constant(n, 1.0 / n), nullptr, &v_in);
  Mat du = -grid.dt() * v_in.middleRows(critic.action_row(), u.rows());
  // Zero subgradient of |u - u_b| where the two velocities coincide.
  for (Eigen::Index j = 0; j < n; ++j) {
    if (dist[j] > 0.0) du.col(j) += diff.col(j) / (dist[j] * n);
  }
  out.grad = Vec::Zero(policy.net().param_count());
  policy.Backward(pi_tape, du, &out.grad, nullptr);
  return out;
}

TelescopingReport TelescopingResidual(const DivFlowCritic& critic,
                                      const FlowPolicy& policy,
                                      const FlowPolicy& behavior,
                                      const ActionValueFn& q_value,
                                      const TransitionBatch& batch,
                                      const FlowTimeGrid& grid, Rng& rng) {
  const Eigen::Index n = batch.actions.cols();
  TelescopingReport report;
  if (n == 0) return report;
  const GridDraw draw = DrawGridPath(batch.actions, grid, grid.steps() - 1, rng);

  const Mat u = policy.Velocity(batch.states, draw.xt, draw.t);
  const Mat u_b = behavior.Velocity(batch.states, draw.xt, draw.t);
  const RowVec dist = (u - u_b).colwise().norm();
  const Mat next = draw.xt + grid.dt() * u;
  RowVec t_next(n);
  for (Eigen::Index j = 0; j < n; ++j) t_next[j] = grid.TimeAt(draw.tau[j] + 1);

  const RowVec v_now =
      critic.Value(batch.prev_actions, batch.states, draw.xt, draw.t);
  const RowVec v_next =
      critic.Value(batch.prev_actions, batch.states, next, t_next);
  const McTargets mc = ComputeMcTargets(policy, behavior, q_value, batch.states,
                                        draw.xt, draw.tau, grid);

  // Endpoints of the same rollouts for the terminal condition.
  Mat ends = draw.xt;
  for (int tau = 0; tau < grid.steps(); ++tau) {
    const RowVec t = RowVec::Constant(n, grid.TimeAt(tau));
    const Mat step_u = policy.Velocity(batch.states, ends, t);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (draw.tau[j] <= tau) ends.col(j) += grid.dt() * step_u.col(j);
    }
  }
  const RowVec v_end = critic.Value(batch.prev_actions, batch.states, ends,
                                    RowVec::Constant(n, 1.0));
  const RowVec q_end = q_value(batch.states, ends);

  for (Eigen::Index j = 0; j < n; ++j) {
    if (!mc.valid[j]) continue;
    report.residual += std::abs(v_now[j] + dist[j] - v_next[j]);
    report.fit_error += std::abs(v_now[j] - mc.targets[j]);
    report.terminal_fit_error += std::abs(v_end[j] - q_end[j]);
    ++report.samples;
  }
  if (report.samples > 0) {
    report.residual /= report.samples;
    report.fit_error /= report.samples;
    report.terminal_fit_error /= report.samples;
  }
  return report;
}

}  // namespace dflow
