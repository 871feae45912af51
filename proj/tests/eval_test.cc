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
#include <numeric>
#include <vector>

#include "dflow/common/errors.h"
#include "dflow/data/dataset.h"
#include "dflow/data/env.h"
#include "dflow/eval/checks.h"
#include "dflow/eval/evaluate.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace dflow {
namespace {

FlowPolicy ZeroPolicy() {
  MlpSpec spec = FlowPolicySpec(2, 2, {}, 0);
  return FlowPolicy(Mlp(spec, Vec::Zero(spec.ParameterCount())));
}

TEST(NormalizedScoreTest, Examples) {
  EXPECT_DOUBLE_EQ(NormalizedScore(50, 0, 100), 50.0);
  EXPECT_DOUBLE_EQ(NormalizedScore(7.5, -2, 7.5), 100.0);
  EXPECT_DOUBLE_EQ(NormalizedScore(-2, -2, 7.5), 0.0);
  EXPECT_THROW(NormalizedScore(1, 3, 3), DomainError);
}

TEST(NormalizedScoreTest, AffineInvariance) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double r = rng.Uniform(-10, 10);
    const double lo = rng.Uniform(-10, 0);
    const double hi = rng.Uniform(1, 10);
    const double a = std::exp(rng.Uniform(-3, 3));
    const double b = rng.Uniform(-50, 50);
    EXPECT_NEAR(NormalizedScore(a * r + b, a * lo + b, a * hi + b),
                NormalizedScore(r, lo, hi), 1e-9);
  }
}

TEST(EvaluateTest, ZeroVelocityPolicyMatchesNormalActionOracle) {
  const EvalReport rep =
      EvaluatePolicy(ZeroPolicy(), "bandit", 40000, 3, FlowTimeGrid(10));
  EXPECT_NEAR(rep.mean_return, oracle::BanditNormalActionReward(1000000, 17), 0.01);
}

TEST(EvaluateTest, ReportConsistency) {
  const FlowPolicy policy(2, 2, {8}, 4);
  const EvalReport rep = EvaluatePolicy(policy, "bandit", 300, 5, FlowTimeGrid(10));
  EXPECT_EQ(rep.episodes, 300);
  ASSERT_EQ(rep.returns.size(), 300u);
  const double mean =
      std::accumulate(rep.returns.begin(), rep.returns.end(), 0.0) / 300.0;
  EXPECT_NEAR(rep.mean_return, mean, 1e-12);
  const EnvSpec spec = MakeEnvSpec("bandit");
  EXPECT_NEAR(rep.normalized_score,
              100 * (mean - spec.random_return) /
                  (spec.expert_return - spec.random_return),
              1e-9);
  ASSERT_TRUE(rep.modes.has_value());
  EXPECT_EQ(rep.modes->primary + rep.modes->secondary + rep.modes->other, 300);
  const nlohmann::json j = rep.ToJson();
  EXPECT_EQ(j.at("episodes").get<int>(), 300);
  EXPECT_DOUBLE_EQ(j.at("mean_return").get<double>(), rep.mean_return);
  EXPECT_NE(rep.ToText().find("normalized"), std::string::npos);
}

TEST(EvaluateTest, SameSeedGivesIdenticalReports) {
  const FlowPolicy policy(2, 2, {8}, 4);
  const EvalReport a = EvaluatePolicy(policy, "pointmass", 1, 9, FlowTimeGrid(10));
  const EvalReport b = EvaluatePolicy(policy, "pointmass", 1, 9, FlowTimeGrid(10));
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_EQ(a.ToJson(), b.ToJson());
}

TEST(EvaluateTest, EpisodeOrderDoesNotMatter) {
  const FlowPolicy policy(2, 2, {8}, 6);
  const ActionFn act = FlowActionFn(policy, FlowTimeGrid(10));
  const EvalReport rep = Evaluate(act, "pointmass", 12, 11);
  std::vector<int> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::swap(order[2], order[7]);
  for (int e : order) {
    EXPECT_EQ(RunEpisode(act, "pointmass", 11, e).ret, rep.returns[e]) << e;
  }
}

TEST(EvaluateTest, ScriptedControllerMatchesDatasetReturn) {
  const BehaviorMixture optimal{{{"optimal", 1.0, 0.0}}};
  const Dataset d = GenerateDataset(MakeEnvSpec("pointmass"), optimal, 200, 21);
  double total = 0.0;
  for (const Transition& t : d.transitions) total += t.reward;
  const double dataset_return = total / 200.0;
  const ActionFn scripted = [](const Vec& s, Rng&) {
    return PointmassOptimalAction(s);
  };
  const EvalReport rep = Evaluate(scripted, "pointmass", 200, 22);
  EXPECT_NEAR(rep.mean_return, dataset_return, 0.02 * std::abs(dataset_return));
}

TEST(EvaluateTest, Errors) {
  const FlowPolicy policy(2, 2, {8}, 4);
  EXPECT_THROW(EvaluatePolicy(policy, "bandit", 0, 1, FlowTimeGrid(10)),
               ConfigError);
  const FlowPolicy wide(3, 2, {8}, 4);
  EXPECT_THROW(EvaluatePolicy(wide, "bandit", 5, 1, FlowTimeGrid(10)), SchemaError);
  EXPECT_THROW(EvaluatePolicy(policy, "hopper", 5, 1, FlowTimeGrid(10)),
               ConfigError);
}

TEST(ModeCoverageTest, Classification) {
  Vec s(2);
  s << 0.5, -0.5;
  const BanditModes m = BanditModeCenters(s);
  EXPECT_EQ(ClassifyBanditAction(s, m.primary).primary, 1);
  EXPECT_EQ(ClassifyBanditAction(s, m.secondary).secondary, 1);
  Vec far(2);
  far << 3.0, -3.0;
  EXPECT_EQ(ClassifyBanditAction(s, far).other, 1);
}

class CheckSuiteTest : public ::testing::TestWithParam<std::string> {};

TEST_P(CheckSuiteTest, Passes) {
  const CheckReport report = RunCheckSuite(GetParam(), 0);
  EXPECT_TRUE(report.passed()) << report.ToText();
}

INSTANTIATE_TEST_SUITE_P(AllSuites, CheckSuiteTest,
                         ::testing::ValuesIn(CheckSuites()),
                         [](const auto& info) {
                           std::string name = info.param;
                           std::replace(name.begin(), name.end(), '-', '_');
                           return name;
                         });

TEST(CheckSuiteTest, UnknownSuiteIsConfigError) {
  EXPECT_THROW(RunCheckSuite("lint", 0), ConfigError);
}

}  // namespace
}  // namespace dflow
