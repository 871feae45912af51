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

#include "dflow/dfdir/dir.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

MlpSpec FlowCriticSpec(int state_dim, int action_dim, const char* velocity_name,
                       const std::vector<int>& hidden, uint64_t seed,
                       int time_frequencies) {
  MlpSpec spec;
  spec.inputs = {{"state", state_dim},
                 {"action", action_dim},
                 {velocity_name, action_dim},
                 {"time", TimeEncoding{time_frequencies}.dim()}};
  spec.hidden = hidden;
  spec.output_dim = 1;
  spec.activation = Activation::kRelu;
  spec.seed = seed;
  return spec;
}

struct PathDraw {
  RowVec t;
  Mat x0;
  Mat xt;
};

// Shared by the critic and policy losses so both see the same sampling
// distribution: t for every column first, then the noise matrix.
PathDraw DrawPath(const Mat& actions, Rng& rng) {
  PathDraw draw;
  draw.t.resize(actions.cols());
  for (Eigen::Index j = 0; j < actions.cols(); ++j) {
    draw.t[j] = rng.Uniform(0.0, 1.0);
  }
  draw.x0 = rng.NormalMatrix(actions.rows(), actions.cols());
  draw.xt = InterpolatePath(draw.x0, actions, draw.t);
  return draw;
}

double Quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * (sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - lo;
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

CosineStats Summarize(std::vector<double> values) {
  CosineStats stats;
  stats.count = static_cast<int>(values.size());
  if (values.empty()) return stats;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  stats.mean = sum / values.size();
  stats.q10 = Quantile(values, 0.1);
  stats.median = Quantile(values, 0.5);
  stats.q90 = Quantile(values, 0.9);
  return stats;
}

}  // namespace

ActionValueFn CriticValueFn(const CriticSet& critics, bool use_target) {
  return [&critics, use_target](const Mat& states, const Mat& actions) {
    return critics.Q(states, actions, use_target);
  };
}

DirFlowCritics::DirFlowCritics(int state_dim, int action_dim,
                               const std::vector<int>& hidden, uint64_t seed,
                               int time_frequencies)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      time_{time_frequencies},
      q_flow_(FlowCriticSpec(state_dim, action_dim, "velocity", hidden,
                             SplitSeed(seed, 1), time_frequencies)),
      v_flow_(FlowCriticSpec(state_dim, action_dim, "direction", hidden,
                             SplitSeed(seed, 2), time_frequencies)) {}

Mat DirFlowCritics::Stack(const Mat& states, const Mat& actions,
                          const Mat& velocities, const RowVec& times) const {
  const Eigen::Index batch = actions.cols();
  if (states.rows() != state_dim_ || actions.rows() != action_dim_ ||
      velocities.rows() != action_dim_) {
    throw ShapeError("flow critic input widths disagree with construction");
  }
  if (states.cols() != batch || velocities.cols() != batch ||
      times.size() != batch) {
    throw ShapeError("flow critic batch sizes disagree");
  }
  Mat stacked(q_flow_.input_dim(), batch);
  stacked.topRows(state_dim_) = states;
  stacked.middleRows(state_dim_, action_dim_) = actions;
  stacked.middleRows(velocity_row(), action_dim_) = velocities;
  stacked.bottomRows(time_.dim()) = time_.Encode(times);
  return stacked;
}

RowVec DirFlowCritics::QFlow(const Mat& states, const Mat& actions,
                             const Mat& velocities, const RowVec& times,
                             Mlp::Tape* tape) const {
  return q_flow_.Forward(Stack(states, actions, velocities, times), tape).row(0);
}

RowVec DirFlowCritics::VFlow(const Mat& states, const Mat& actions,
                             const Mat& directions, const RowVec& times,
                             Mlp::Tape* tape) const {
  return v_flow_.Forward(Stack(states, actions, directions, times), tape).row(0);
}

void DirFlowCritics::Save(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.PutNetwork(prefix + "q_flow", q_flow_);
  ckpt.PutNetwork(prefix + "v_flow", v_flow_);
}

void DirFlowCritics::Load(const Checkpoint& ckpt, const std::string& prefix) {
  auto load = [&](Mlp& dst, const std::string& name) {
    Mlp src = ckpt.GetNetwork(prefix + name);
    if (src.spec().LayerWidths() != dst.spec().LayerWidths()) {
      throw SchemaError("flow critic '" + name + "' architecture mismatch");
    }
    dst.set_params(src.params());
  };
  load(q_flow_, "q_flow");
  load(v_flow_, "v_flow");
}

Mat NormalizeColumns(const Mat& velocities, int* degenerate) {
  Mat out(velocities.rows(), velocities.cols());
  int count = 0;
  for (Eigen::Index j = 0; j < velocities.cols(); ++j) {
    NormalizedVelocity n = NormalizeVelocity(velocities.col(j));
    out.col(j) = n.direction;
    count += n.degenerate ? 1 : 0;
  }
  if (degenerate != nullptr) *degenerate = count;
  return out;
}

DirCriticLosses DirCriticLoss(const DirFlowCritics& critics,
                              const FlowPolicy& policy,
                              const ActionValueFn& q_value,
                              const TransitionBatch& batch, Rng& rng,
                              DirCriticVelocity velocity) {
  const Eigen::Index n = batch.actions.cols();
  if (n == 0) throw ShapeError("flow critic loss needs a non-empty batch");
  const PathDraw draw = DrawPath(batch.actions, rng);
  const RowVec target = q_value(batch.states, batch.actions);

  Mat u;
  if (velocity == DirCriticVelocity::kPolicy) {
    u = policy.Velocity(batch.states, draw.xt, draw.t);
  } else {
    u = batch.actions - draw.x0;
  }
  const Mat direction = NormalizeColumns(u);

  DirCriticLosses out;
  Mlp::Tape q_tape;
  const RowVec q_res =
      critics.QFlow(batch.states, draw.xt, u, draw.t, &q_tape) - target;
  out.q_loss = q_res.squaredNorm() / n;
  out.q_grad = Vec::Zero(critics.q_flow().param_count());
  critics.q_flow().Backward(q_tape, (2.0 / n) * q_res, &out.q_grad, nullptr);

  Mlp::Tape v_tape;
  const RowVec v_res =
      critics.VFlow(batch.states, draw.xt, direction, draw.t, &v_tape) - target;
  out.v_loss = v_res.squaredNorm() / n;
  out.v_grad = Vec::Zero(critics.v_flow().param_count());
  critics.v_flow().Backward(v_tape, (2.0 / n) * v_res, &out.v_grad, nullptr);
  return out;
}

DirPolicyLossResult DirPolicyLoss(const FlowPolicy& policy,
                                  const DirFlowCritics& critics,
                                  const FlowPolicy& behavior, double rho,
                                  const TransitionBatch& batch, Rng& rng) {
  if (!(rho >= 0.0)) throw ConfigError("behavior tradeoff rho must be >= 0");
  const Eigen::Index n = batch.actions.cols();
  if (n == 0) throw ShapeError("policy loss needs a non-empty batch");
  const PathDraw draw = DrawPath(batch.actions, rng);

  Mlp::Tape pi_tape;
  const Mat u = policy.Velocity(batch.states, draw.xt, draw.t, &pi_tape);
  const Mat u_b = behavior.Velocity(batch.states, draw.xt, draw.t);
  DirPolicyLossResult out;
  const Mat direction = NormalizeColumns(u, &out.degenerate);

  Mlp::Tape q_tape;
  Mlp::Tape v_tape;
  const RowVec qf = critics.QFlow(batch.states, draw.xt, u, draw.t, &q_tape);
  const RowVec vf =
      critics.VFlow(batch.states, draw.xt, direction, draw.t, &v_tape);

  const Mat diff = u - u_b;
  const RowVec dist = diff.colwise().norm();
  const RowVec adv = qf - vf;
  out.loss = (-adv.sum() + rho * dist.sum()) / n;
  out.advantage = adv.mean();
  out.advantage_abs = adv.cwiseAbs().mean();
  out.divergence = dist.mean();

  const int a_dim = critics.action_dim();
  const Mat ones = RowVec::Constant(n, 1.0 / n);
  Mat q_in;
  critics.q_flow().Backward(q_tape, -ones, nullptr, &q_in);
  Mat v_in;
  critics.v_flow().Backward(v_tape, ones, nullptr, &v_in);

  Mat du = q_in.middleRows(critics.velocity_row(), a_dim) +
           NormalizeVelocityBackward(u, v_in.middleRows(critics.velocity_row(),
                                                        a_dim));
  // |u - u_b| is not differentiable at zero; use the zero subgradient there.
  for (Eigen::Index j = 0; j < n; ++j) {
    if (dist[j] > 0.0) du.col(j) += (rho / n) * diff.col(j) / dist[j];
  }
  out.grad = Vec::Zero(policy.net().param_count());
  policy.Backward(pi_tape, du, &out.grad, nullptr);
  return out;
}

AlignmentReport DirectionAlignmentReport(const FlowPolicy& policy,
                                         const ActionValueFn& q_value,
                                         const Mat& states,
                                         const FlowTimeGrid& grid, Rng& rng,
                                         double fd_step,
                                         double gradient_floor) {
  if (!(fd_step > 0.0)) throw ConfigError("finite-difference step must be > 0");
  const BatchPath path = GeneratePaths(policy, states, grid, rng);
  const int a_dim = policy.action_dim();
  const Eigen::Index n = states.cols();

  AlignmentReport report;
  std::vector<double> all;
  for (int tau = 0; tau < grid.steps(); ++tau) {
    const Mat& a = path.actions[tau];
    const Mat& u = path.velocities[tau];
    Mat grad(a_dim, n);
    for (int k = 0; k < a_dim; ++k) {
      Mat plus = a;
      Mat minus = a;
      plus.row(k).array() += fd_step;
      minus.row(k).array() -= fd_step;
      grad.row(k) = (q_value(states, plus) - q_value(states, minus)) /
                    (2.0 * fd_step);
    }
    std::vector<double> cosines;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double gn = grad.col(j).norm();
      const double un = u.col(j).norm();
      if (!(gn >= gradient_floor) || !(un >= kVelocityEpsilon)) {
        ++report.degenerate;
        continue;
      }
      cosines.push_back(grad.col(j).dot(u.col(j)) / (gn * un));
    }
    all.insert(all.end(), cosines.begin(), cosines.end());
    report.per_step.push_back(Summarize(std::move(cosines)));
  }
  report.overall = Summarize(std::move(all));
  return report;
}

MonotonicityReport QMonotonicity(const FlowPolicy& policy,
                                 const ActionValueFn& q_value,
                                 const Mat& states, const FlowTimeGrid& grid,
                                 Rng& rng, double tolerance) {
  const BatchPath path = GeneratePaths(policy, states, grid, rng);
  MonotonicityReport report;
  long total_ok = 0;
  RowVec prev = q_value(states, path.actions[0]);
  for (int tau = 0; tau < grid.steps(); ++tau) {
    const RowVec next = q_value(states, path.actions[tau + 1]);
    long ok = 0;
    for (Eigen::Index j = 0; j < next.size(); ++j) {
      if (next[j] >= prev[j] - tolerance) ++ok;
    }
    total_ok += ok;
    report.per_step.push_back(states.cols() > 0
                                  ? static_cast<double>(ok) / states.cols()
                                  : 0.0);
    prev = next;
  }
  report.steps = grid.steps() * static_cast<int>(states.cols());
  report.overall =
      report.steps > 0 ? static_cast<double>(total_ok) / report.steps : 0.0;
  return report;
}

}  // namespace dflow
