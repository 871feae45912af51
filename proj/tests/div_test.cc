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

#include <algorithm>
#include <cmath>
#include <vector>

#include "dflow/approx/optimizer.h"
#include "dflow/dfdiv/div.h"
#include "gtest/gtest.h"

namespace dflow {
namespace {

Vec V2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

FlowPolicy ConstantPolicy(const Vec& c) {
  MlpSpec spec = FlowPolicySpec(2, 2, {}, 0);
  Vec p = Vec::Zero(spec.ParameterCount());
  p.tail(2) = c;
  return FlowPolicy(Mlp(spec, p));
}

void MakeConstant(Mlp& net, double c) {
  Vec p = Vec::Zero(net.param_count());
  p[p.size() - 1] = c;
  net.set_params(p);
}

TransitionBatch RandomBatch(int n, uint64_t seed) {
  Rng rng(seed);
  TransitionBatch b;
  b.prev_actions = rng.NormalMatrix(2, n);
  b.states = rng.UniformMatrix(2, n, -1, 1);
  b.actions = rng.NormalMatrix(2, n);
  b.next_states = b.states;
  b.rewards = Vec::Zero(n);
  b.terminals = Vec::Ones(n);
  return b;
}

ActionValueFn ConstantQ(double c) {
  return [c](const Mat&, const Mat& a) { return RowVec::Constant(a.cols(), c); };
}

ActionValueFn SmoothQ() {
  return [](const Mat& s, const Mat& a) {
    RowVec out(a.cols());
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out[j] = std::exp(-(a.col(j) - V2(0.5, 0.5) - 0.2 * s.col(j)).squaredNorm());
    }
    return out;
  };
}

TEST(McTargetTest, Examples) {
  FlowRollout empty;
  empty.start = 10;
  empty.terminal_value = 3.25;
  EXPECT_EQ(McTarget(empty), 3.25);
  FlowRollout one;
  one.start = 9;
  one.divergences = {0.5};
  one.terminal_value = 5.0;
  EXPECT_DOUBLE_EQ(McTarget(one), 4.5);
}

TEST(RolloutTest, ShapeAndNonNegativeDivergences) {
  const FlowPolicy policy(2, 2, {8}, 1);
  const FlowPolicy behavior(2, 2, {8}, 2);
  const FlowTimeGrid grid(10);
  for (int start : {0, 4, 10}) {
    const FlowRollout r = RolloutFlow(policy, behavior, SmoothQ(), V2(0.1, 0.2),
                                      V2(-0.3, 0.4), start, grid);
    EXPECT_EQ(r.start, start);
    EXPECT_EQ(r.actions.size(), static_cast<size_t>(10 - start + 1));
    EXPECT_EQ(r.divergences.size(), static_cast<size_t>(10 - start));
    for (double d : r.divergences) EXPECT_GE(d, 0.0);
  }
  const FlowRollout terminal = RolloutFlow(policy, behavior, SmoothQ(), V2(0.1, 0.2),
                                           V2(-0.3, 0.4), 10, grid);
  Mat s(2, 1), a(2, 1);
  s << 0.1, 0.2;
  a << -0.3, 0.4;
  EXPECT_EQ(McTarget(terminal), SmoothQ()(s, a)[0]);
}

TEST(RolloutTest, MatchesIndependentResimulation) {
  const FlowPolicy policy(2, 2, {16, 16}, 3);
  const FlowPolicy behavior(2, 2, {16, 16}, 4);
  const FlowTimeGrid grid(10);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec s = rng.UniformMatrix(2, 1, -1, 1).col(0);
    const Vec a0 = rng.NormalMatrix(2, 1).col(0);
    const FlowRollout r = RolloutFlow(policy, behavior, SmoothQ(), s, a0, 0, grid);

    // Brute force: step the policy, recompute every divergence.
    Vec a = a0;
    double sum = 0.0;
    for (int tau = 0; tau < 10; ++tau) {
      const double t = tau * 0.1;
      const Vec u = policy.Velocity(s, a, t);
      sum += (u - behavior.Velocity(s, a, t)).norm();
      a = a + 0.1 * u;
    }
    const double q = std::exp(-(a - V2(0.5, 0.5) - 0.2 * s).squaredNorm());
    EXPECT_NEAR(McTarget(r), q - sum, 1e-10);
  }
}

TEST(RolloutTest, BatchedTargetsAreBitwiseReproducible) {
  const FlowPolicy policy(2, 2, {16}, 3);
  const FlowPolicy behavior(2, 2, {16}, 4);
  Rng rng(6);
  const Mat s = rng.UniformMatrix(2, 30, -1, 1);
  const Mat a = rng.NormalMatrix(2, 30);
  std::vector<int> starts(30);
  for (int j = 0; j < 30; ++j) starts[j] = j % 11;
  const McTargets x =
      ComputeMcTargets(policy, behavior, SmoothQ(), s, a, starts, FlowTimeGrid(10));
  const McTargets y =
      ComputeMcTargets(policy, behavior, SmoothQ(), s, a, starts, FlowTimeGrid(10));
  EXPECT_EQ(x.targets, y.targets);
  EXPECT_EQ(x.dropped, 0);
  for (int j = 0; j < 30; ++j) {
    const FlowRollout r = RolloutFlow(policy, behavior, SmoothQ(), s.col(j),
                                      a.col(j), starts[j], FlowTimeGrid(10));
    EXPECT_NEAR(x.targets[j], McTarget(r), 1e-12);
  }
}

TEST(DivCriticLossTest, ZeroWhenCriticEqualsTarget) {
  // Identical policies give zero divergence, so every target is Q = 1.5.
  const FlowPolicy policy(2, 2, {8}, 1);
  DivFlowCritic critic(2, 2, {8}, 2);
  MakeConstant(critic.net(), 1.5);
  Rng rng(3);
  const DivCriticLossResult r = DivCriticLoss(critic, policy, policy, ConstantQ(1.5),
                                              RandomBatch(16, 4), FlowTimeGrid(10), rng);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.mean_target, 1.5);
  EXPECT_EQ(r.dropped, 0);
}

TEST(DivCriticLossTest, HalfSquaredError) {
  const FlowPolicy policy(2, 2, {8}, 1);
  DivFlowCritic critic(2, 2, {8}, 2);
  MakeConstant(critic.net(), 0.0);
  Rng rng(3);
  const DivCriticLossResult r = DivCriticLoss(critic, policy, policy, ConstantQ(2.0),
                                              RandomBatch(5, 4), FlowTimeGrid(10), rng);
  EXPECT_DOUBLE_EQ(r.loss, 2.0);
}

TEST(DivPolicyLossTest, Examples) {
  DivFlowCritic critic(2, 2, {8}, 2);
  MakeConstant(critic.net(), 0.0);
  const FlowPolicy behavior(2, 2, {8}, 5);
  Rng r1(1);
  EXPECT_EQ(DivPolicyLoss(behavior, critic, behavior, RandomBatch(8, 1),
                          FlowTimeGrid(10), r1)
                .loss,
            0.0);

  MakeConstant(critic.net(), 2.0);
  Rng r2(1);
  const DivPolicyLossResult r =
      DivPolicyLoss(ConstantPolicy(V2(0.3, 0.0)), critic, ConstantPolicy(V2(0, 0)),
                    RandomBatch(8, 1), FlowTimeGrid(10), r2);
  EXPECT_NEAR(r.loss, -1.7, 1e-12);
  EXPECT_NEAR(r.divergence, 0.3, 1e-12);
  EXPECT_NEAR(r.next_value, 2.0, 1e-12);
}

TEST(DivPolicyLossTest, GradientThroughEulerStep) {
  const FlowPolicy policy(2, 2, {6, 6}, 7);
  const FlowPolicy behavior(2, 2, {6, 6}, 8);
  const DivFlowCritic critic(2, 2, {8, 8}, 9);
  const TransitionBatch b = RandomBatch(9, 10);
  Rng rng(11);
  const DivPolicyLossResult r =
      DivPolicyLoss(policy, critic, behavior, b, FlowTimeGrid(10), rng);
  Rng pick(12);
  for (int i = 0; i < 120; ++i) {
    const int k = pick.UniformInt(0, static_cast<int>(r.grad.size()) - 1);
    auto at = [&](double delta) {
      FlowPolicy p = policy;
      Vec params = p.net().params();
      params[k] += delta;
      p.mutable_net().set_params(params);
      Rng again(11);
      return DivPolicyLoss(p, critic, behavior, b, FlowTimeGrid(10), again).loss;
    };
    const double fd = (at(1e-5) - at(-1e-5)) / 2e-5;
    const double scale = std::max({std::abs(fd), std::abs(r.grad[k]), 1e-6});
    EXPECT_LT(std::abs(fd - r.grad[k]) / scale, 1e-3) << "param " << k;
  }
}

TEST(DivFlowCriticTest, AblatedCriticIgnoresPrevAction) {
  const DivFlowCritic critic(2, 2, {8}, 3, /*use_prev_action=*/false);
  EXPECT_FALSE(critic.use_prev_action());
  EXPECT_EQ(critic.action_row(), 2);
  Rng rng(1);
  const Mat s = rng.NormalMatrix(2, 5);
  const Mat a = rng.NormalMatrix(2, 5);
  const RowVec t = RowVec::Constant(5, 0.3);
  EXPECT_EQ(critic.Value(rng.NormalMatrix(2, 5), s, a, t),
            critic.Value(rng.NormalMatrix(2, 5), s, a, t));
  const DivFlowCritic full(2, 2, {8}, 3);
  EXPECT_TRUE(full.use_prev_action());
  EXPECT_NE(full.Value(rng.NormalMatrix(2, 5), s, a, t),
            full.Value(rng.NormalMatrix(2, 5), s, a, t));
}

TEST(DivFlowCriticTest, CheckpointRoundTrip) {
  const DivFlowCritic a(2, 2, {8}, 3);
  DivFlowCritic b(2, 2, {8}, 4);
  Checkpoint ckpt;
  a.Save(ckpt, "flow/");
  b.Load(ckpt, "flow/");
  EXPECT_EQ(b.net().params(), a.net().params());
}

TEST(DivFitTest, TerminalConditionOnHeldOutSamples) {
  const FlowPolicy policy(2, 2, {16}, 21);
  const FlowPolicy behavior(2, 2, {16}, 22);
  const FlowTimeGrid grid(10);
  DivFlowCritic critic(2, 2, {64, 64}, 23);
  AdamState adam(critic.net().param_count(), AdamConfig{1e-3});
  Rng rng(24);
  for (int i = 0; i < 8000; ++i) {
    const TransitionBatch b = RandomBatch(128, 1000 + i);
    AdamStep(critic.net(),
             DivCriticLoss(critic, policy, behavior, SmoothQ(), b, grid, rng).grad,
             adam);
  }
  const TransitionBatch held = RandomBatch(500, 99);
  Rng erng(25);
  const TelescopingReport rep =
      TelescopingResidual(critic, policy, behavior, SmoothQ(), held, grid, erng);

  // Observed Q range over held-out endpoints.
  const Mat a1 = IntegrateFrom(policy, held.states, held.actions, 0, grid);
  const RowVec q = SmoothQ()(held.states, a1);
  const double range = q.maxCoeff() - q.minCoeff();
  // At t = 1 the critic also sees dataset actions directly.
  const RowVec vd = critic.Value(held.prev_actions, held.states, held.actions,
                                 RowVec::Constant(500, 1.0));
  const RowVec qd = SmoothQ()(held.states, held.actions);
  EXPECT_LE(rep.terminal_fit_error, 0.05 * range);
  EXPECT_LE((vd - qd).cwiseAbs().mean(), 0.05 * (qd.maxCoeff() - qd.minCoeff()));
  EXPECT_LE(rep.residual, 2.0 * rep.fit_error);
}

}  // namespace
}  // namespace dflow
