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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dflow/common/errors.h"
#include "dflow/data/dataset.h"
#include "dflow/data/env.h"
#include "gtest/gtest.h"
#include "oracles.h"

namespace dflow {
namespace {

namespace fs = std::filesystem;

Vec V2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::string TempPath(const std::string& name) {
  return (fs::temp_directory_path() / ("dflow_data_test_" + name)).string();
}

std::vector<std::string> ReadLines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

void WriteLines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
}

TEST(BanditTest, PeakOfPrimaryMode) {
  const Vec s = V2(0.3, -0.5);
  EXPECT_DOUBLE_EQ(BanditReward(s, BanditModeCenters(s).primary), 1.0);
}

TEST(BanditTest, SecondaryPeak) {
  const Vec s = V2(0, 0);
  const Vec m2 = BanditModeCenters(s).secondary;
  // The primary bump evaluated at m2 is exp(-2.88 / 0.08).
  EXPECT_LT(std::exp(-(m2 - BanditModeCenters(s).primary).squaredNorm() / 0.08),
            1e-3);
  EXPECT_NEAR(BanditReward(s, m2), 0.6, 1e-12);
}

TEST(BanditTest, FarActionIsNearZero) {
  EXPECT_LT(BanditReward(V2(0, 0), V2(10, 0)), 1e-6);
  EXPECT_LT(BanditReward(V2(1, 1), V2(-7.07, 7.07)), 1e-6);
}

TEST(BanditTest, MatchesIndependentFormula) {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const Vec s = rng.UniformMatrix(2, 1, -1, 1).col(0);
    const Vec a = rng.NormalMatrix(2, 1).col(0);
    EXPECT_NEAR(BanditReward(s, a), oracle::BanditReward(s[0], s[1], a[0], a[1]),
                1e-14);
  }
}

TEST(BanditTest, EpisodeIsOneStep) {
  auto env = MakeEnvironment("bandit");
  Rng rng(2);
  const Vec s = env->Reset(rng);
  EXPECT_TRUE((s.array().abs() <= 1.0).all());
  const StepResult r = env->Step(BanditModeCenters(s).primary);
  EXPECT_TRUE(r.terminal);
  EXPECT_DOUBLE_EQ(r.reward, 1.0);
  EXPECT_THROW(env->Step(Vec::Zero(3)), ShapeError);
}

TEST(PointmassTest, ZeroActionStays) {
  const Vec s = V2(-0.3, 0.2);
  const StepResult r = PointmassStep(s, Vec::Zero(2), 0);
  EXPECT_EQ(r.next_state, s);
  EXPECT_DOUBLE_EQ(r.reward, -(s - PointmassGoal()).norm());
  EXPECT_FALSE(r.terminal);
}

TEST(PointmassTest, AtGoalIsTerminal) {
  const StepResult r = PointmassStep(PointmassGoal(), V2(0.01, -0.02), 3);
  EXPECT_TRUE(r.terminal);
}

TEST(PointmassTest, ClipsActionsAndPositions) {
  const StepResult r = PointmassStep(V2(0.95, 0.0), V2(5.0, -3.0), 0);
  EXPECT_DOUBLE_EQ(r.next_state[0], 1.0);
  EXPECT_NEAR(r.next_state[1], -0.1, 1e-15);
}

TEST(PointmassTest, HorizonTerminates) {
  EXPECT_FALSE(PointmassStep(V2(-0.8, -0.8), Vec::Zero(2), 28).terminal);
  EXPECT_TRUE(PointmassStep(V2(-0.8, -0.8), Vec::Zero(2), 29).terminal);
}

TEST(PointmassTest, ScriptedControllerReachesGoal) {
  // Straight-line controller written independently: unit steps toward the
  // goal, clipped per coordinate.
  Vec s = V2(-0.8, -0.8);
  int steps = 0;
  bool reached = false;
  for (; steps < kPointmassHorizon && !reached; ++steps) {
    Vec a = (V2(0.8, 0.8) - s) / 0.1;
    a = a.cwiseMax(-1.0).cwiseMin(1.0);
    const StepResult r = PointmassStep(s, a, steps);
    s = r.next_state;
    reached = (s - V2(0.8, 0.8)).norm() < 0.05;
  }
  EXPECT_TRUE(reached);
  EXPECT_LE(steps, 30);
}

TEST(EnvSpecTest, ReferenceReturnsOrdered) {
  for (const char* id : {"bandit", "pointmass"}) {
    const EnvSpec spec = MakeEnvSpec(id);
    EXPECT_GT(spec.expert_return, spec.random_return) << id;
  }
  EXPECT_THROW(MakeEnvSpec("cartpole"), ConfigError);
}

TEST(EnvSpecTest, FrozenReferencesMatchRecomputation) {
  const ReferenceReturns r =
      ComputeReferenceReturns("bandit", 2000, kReferenceSeed + 7);
  const EnvSpec spec = MakeEnvSpec("bandit");
  EXPECT_NEAR(r.random, spec.random_return, 0.01);
  EXPECT_DOUBLE_EQ(r.expert, spec.expert_return);
}

TEST(MixtureTest, Validation) {
  BehaviorMixture m = BehaviorMixture::DefaultFor("bandit");
  EXPECT_NO_THROW(m.Validate("bandit"));
  EXPECT_THROW(m.Validate("pointmass"), ConfigError);
  m.components[0].weight = 0.5;
  EXPECT_THROW(m.Validate("bandit"), ConfigError);
  EXPECT_THROW(BehaviorMixture{}.Validate("bandit"), ConfigError);
  BehaviorMixture neg{{{"uniform", 1.0, -0.1}}};
  EXPECT_THROW(neg.Validate("bandit"), ConfigError);
  EXPECT_THROW(BehaviorMixture::FromJson(nlohmann::json::parse("[{\"w\":1}]")),
               ConfigError);
  const BehaviorMixture p = BehaviorMixture::DefaultFor("pointmass");
  EXPECT_EQ(BehaviorMixture::FromJson(p.ToJson()).components, p.components);
}

TEST(GenerateDatasetTest, ZeroEpisodes) {
  const Dataset d = GenerateDataset(MakeEnvSpec("bandit"),
                                    BehaviorMixture::DefaultFor("bandit"), 0, 1);
  EXPECT_TRUE(d.transitions.empty());
  EXPECT_EQ(d.manifest.episodes, 0);
  EXPECT_EQ(d.manifest.transitions, 0);
  EXPECT_EQ(d.manifest.action_dim, 2);
  EXPECT_EQ(d.manifest.env, "bandit");
  const std::string path = TempPath("empty.jsonl");
  SaveDataset(d, path);
  EXPECT_TRUE(LoadDataset(path).transitions.empty());
  fs::remove(path);
}

TEST(GenerateDatasetTest, InvalidMixtureIsConfigError) {
  BehaviorMixture bad{{{"mode1", 0.7, 0.1}}};
  EXPECT_THROW(GenerateDataset(MakeEnvSpec("bandit"), bad, 3, 1), ConfigError);
  EXPECT_THROW(GenerateDataset(MakeEnvSpec("bandit"),
                               BehaviorMixture::DefaultFor("bandit"), -1, 1),
               ConfigError);
}

TEST(GenerateDatasetTest, PointmassPrevActionChain) {
  const Dataset d = GenerateDataset(MakeEnvSpec("pointmass"),
                                    BehaviorMixture::DefaultFor("pointmass"), 1, 4);
  ASSERT_FALSE(d.transitions.empty());
  EXPECT_EQ(d.transitions[0].prev_action, Vec::Zero(2));
  for (size_t k = 1; k < d.transitions.size(); ++k) {
    EXPECT_EQ(d.transitions[k].prev_action, d.transitions[k - 1].action);
    EXPECT_EQ(d.transitions[k].step, static_cast<int>(k));
    EXPECT_EQ(d.transitions[k].state, d.transitions[k - 1].next_state);
  }
  EXPECT_TRUE(d.transitions.back().terminal);
  EXPECT_NO_THROW(CheckPrevActionChain(d));
}

TEST(GenerateDatasetTest, RewardRangesAndManifest) {
  const Dataset b = GenerateDataset(MakeEnvSpec("bandit"),
                                    BehaviorMixture::DefaultFor("bandit"), 500, 2);
  const Dataset p = GenerateDataset(MakeEnvSpec("pointmass"),
                                    BehaviorMixture::DefaultFor("pointmass"), 50, 2);
  double lo = 1e300, hi = -1e300;
  for (const Transition& t : b.transitions) {
    EXPECT_GE(t.reward, 0.0);
    EXPECT_LE(t.reward, 1.0);
    lo = std::min(lo, t.reward);
    hi = std::max(hi, t.reward);
  }
  EXPECT_EQ(b.manifest.reward_min, lo);
  EXPECT_EQ(b.manifest.reward_max, hi);
  for (const Transition& t : p.transitions) {
    EXPECT_TRUE(std::isfinite(t.reward));
    EXPECT_LE(t.reward, 0.0);
  }
  EXPECT_NO_THROW(CheckPrevActionChain(p));
}

TEST(GenerateDatasetTest, BitwiseReproducible) {
  const auto make = [](uint64_t seed) {
    return GenerateDataset(MakeEnvSpec("pointmass"),
                           BehaviorMixture::DefaultFor("pointmass"), 20, seed);
  };
  EXPECT_EQ(make(9).transitions, make(9).transitions);
  EXPECT_NE(make(9).transitions, make(10).transitions);
}

TEST(GenerateDatasetTest, BanditClustersNearFortyFivePercent) {
  const Dataset d = GenerateDataset(MakeEnvSpec("bandit"),
                                    BehaviorMixture::DefaultFor("bandit"), 10000, 0);
  int near1 = 0, near2 = 0;
  for (const Transition& t : d.transitions) {
    const Vec m1 = V2(0.6, 0.6) + 0.2 * t.state;
    const Vec m2 = V2(-0.6, -0.6) + 0.2 * t.state;
    // Assign to the nearest mode, counting only points inside the 3-sigma
    // cluster radius so uniform draws that land far away do not count.
    const double d1 = (t.action - m1).norm();
    const double d2 = (t.action - m2).norm();
    if (std::min(d1, d2) > 0.3) continue;
    (d1 < d2 ? near1 : near2)++;
  }
  const double n = static_cast<double>(d.transitions.size());
  EXPECT_NEAR(near1 / n, 0.45, 0.03);
  EXPECT_NEAR(near2 / n, 0.45, 0.03);
}

TEST(DatasetIoTest, RoundTripIsLossless) {
  const Dataset d = GenerateDataset(MakeEnvSpec("pointmass"),
                                    BehaviorMixture::DefaultFor("pointmass"), 5, 3);
  const std::string path = TempPath("roundtrip.jsonl");
  SaveDataset(d, path);
  const Dataset back = LoadDataset(path);
  EXPECT_EQ(back.transitions, d.transitions);
  EXPECT_EQ(back.manifest.seed, d.manifest.seed);
  EXPECT_EQ(back.manifest.reward_min, d.manifest.reward_min);
  EXPECT_EQ(back.manifest.mixture.components, d.manifest.mixture.components);
  fs::remove(path);
}

TEST(DatasetIoTest, TruncatedFileIsParseError) {
  const Dataset d = GenerateDataset(MakeEnvSpec("bandit"),
                                    BehaviorMixture::DefaultFor("bandit"), 10, 3);
  const std::string path = TempPath("trunc.jsonl");
  SaveDataset(d, path);
  std::vector<std::string> lines = ReadLines(path);
  lines.resize(6);
  WriteLines(path, lines);
  EXPECT_THROW(LoadDataset(path), ParseError);

  // A line cut mid-record names its line number.
  lines = ReadLines(path);
  lines[3] = lines[3].substr(0, lines[3].size() / 2);
  WriteLines(path, lines);
  try {
    LoadDataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
  fs::remove(path);
}

TEST(DatasetIoTest, WrongManifestDimsIsSchemaError) {
  const Dataset d = GenerateDataset(MakeEnvSpec("bandit"),
                                    BehaviorMixture::DefaultFor("bandit"), 4, 3);
  const std::string path = TempPath("schema.jsonl");
  SaveDataset(d, path);
  std::vector<std::string> lines = ReadLines(path);
  nlohmann::json manifest = nlohmann::json::parse(lines[0]);
  manifest["action_dim"] = 3;
  lines[0] = manifest.dump();
  WriteLines(path, lines);
  EXPECT_THROW(LoadDataset(path), SchemaError);
  fs::remove(path);
}

TEST(DatasetIoTest, BrokenChainIsSchemaError) {
  Dataset d = GenerateDataset(MakeEnvSpec("pointmass"),
                              BehaviorMixture::DefaultFor("pointmass"), 1, 5);
  ASSERT_GT(d.transitions.size(), 2u);
  d.transitions[2].prev_action[0] += 1.0;
  EXPECT_THROW(CheckPrevActionChain(d), SchemaError);
  const std::string path = TempPath("chain.jsonl");
  SaveDataset(d, path);
  EXPECT_THROW(LoadDataset(path), SchemaError);
  fs::remove(path);
}

TEST(DatasetIoTest, MissingFile) {
  EXPECT_ANY_THROW(LoadDataset(TempPath("does_not_exist.jsonl")));
}

TEST(BatchTest, ColumnsFollowIndices) {
  const Dataset d = GenerateDataset(MakeEnvSpec("pointmass"),
                                    BehaviorMixture::DefaultFor("pointmass"), 2, 6);
  const std::vector<int> idx = {3, 0, 3};
  const TransitionBatch b = MakeBatch(d, idx);
  ASSERT_EQ(b.size(), 3);
  for (int j = 0; j < 3; ++j) {
    const Transition& t = d.transitions[idx[j]];
    EXPECT_EQ(Vec(b.states.col(j)), t.state);
    EXPECT_EQ(Vec(b.actions.col(j)), t.action);
    EXPECT_EQ(Vec(b.prev_actions.col(j)), t.prev_action);
    EXPECT_EQ(Vec(b.next_states.col(j)), t.next_state);
    EXPECT_EQ(b.rewards[j], t.reward);
    EXPECT_EQ(b.terminals[j], t.terminal ? 1.0 : 0.0);
  }
  Rng rng(1);
  EXPECT_EQ(SampleBatch(d, 16, rng).size(), 16);
  const Dataset empty = GenerateDataset(MakeEnvSpec("bandit"),
                                        BehaviorMixture::DefaultFor("bandit"), 0, 1);
  EXPECT_THROW(SampleBatch(empty, 4, rng), ConfigError);
}

}  // namespace
}  // namespace dflow
