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

#include "dflow/approx/checkpoint.h"
#include "dflow/common/errors.h"
#include "dflow/data/dataset.h"
#include "dflow/data/env.h"
#include "dflow/train/trainer.h"
#include "gtest/gtest.h"

namespace dflow {
namespace {

namespace fs = std::filesystem;

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dflow_trainer_" +
             std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    dataset_ = GenerateDataset(MakeEnvSpec("pointmass"),
                               BehaviorMixture::DefaultFor("pointmass"), 20, 1);
  }
  void TearDown() override { fs::remove_all(root_); }

  TrainConfig Tiny(Variant variant, const std::string& dir) const {
    TrainConfig c;
    c.variant = variant;
    c.env = "pointmass";
    c.out_dir = (root_ / dir).string();
    c.seed = 5;
    c.iterations = 4;
    c.pretrain_iterations = 10;
    c.batch_size = 16;
    c.flow_steps = 4;
    c.policy_hidden = {8};
    c.critic_hidden = {8};
    c.dir_critic_hidden = {8};
    c.div_critic_hidden = {8};
    c.eval_every = 0;
    c.eval_episodes = 0;
    c.checkpoint_every = 0;
    return c;
  }

  // Pretrains a behavior policy once and points the config at it.
  TrainConfig WithBehavior(TrainConfig c) const {
    TrainConfig pre = c;
    pre.out_dir = (root_ / "behavior").string();
    if (!fs::exists(pre.BehaviorOutputPath())) PretrainBehavior(pre, dataset_);
    c.behavior_checkpoint = pre.BehaviorOutputPath();
    return c;
  }

  fs::path root_;
  Dataset dataset_;
};

TEST_F(TrainerTest, UpdateOrderPerIteration) {
  for (Variant v : {Variant::kDir, Variant::kDiv}) {
    TrainConfig c = WithBehavior(Tiny(v, std::string(VariantName(v))));
    c.iterations = 3;
    c.eval_every = 2;
    c.eval_episodes = 2;
    c.checkpoint_every = 2;
    std::vector<std::string> events;
    Train(c, dataset_, false, [&](std::string_view e, long it) {
      events.push_back(std::to_string(it) + ":" + std::string(e));
    });
    const std::vector<std::string> expected = {
        "1:v_update",     "1:q_update",           "1:target_update",
        "1:flow_critic_update", "1:policy_update",
        "2:v_update",     "2:q_update",           "2:target_update",
        "2:flow_critic_update", "2:policy_update", "2:evaluate",
        "2:checkpoint",
        "3:v_update",     "3:q_update",           "3:target_update",
        "3:flow_critic_update", "3:policy_update", "3:checkpoint",
        "3:evaluate"};
    EXPECT_EQ(events, expected) << VariantName(v);
  }
}

TEST_F(TrainerTest, BehaviorVariantEqualsPretraining) {
  TrainConfig c = Tiny(Variant::kBehavior, "b");
  c.iterations = 7;
  TrainConfig p = c;
  p.pretrain_iterations = 7;
  const FlowPolicy trained = Train(c, dataset_).policy;
  const FlowPolicy pretrained = PretrainBehavior(p, dataset_, false);
  EXPECT_EQ(trained.net().params(), pretrained.net().params());

  TrainConfig no_mdp = Tiny(Variant::kDiv, "nomdp");
  no_mdp.no_flow_mdp = true;
  no_mdp.iterations = 7;
  EXPECT_EQ(no_mdp.EffectiveVariant(), Variant::kBehavior);
  EXPECT_EQ(Train(no_mdp, dataset_).policy.net().params(), trained.net().params());
}

TEST_F(TrainerTest, ZeroIterationPretrainSavesInitialization) {
  TrainConfig c = Tiny(Variant::kBehavior, "zero");
  c.pretrain_iterations = 0;
  int updates = 0;
  const FlowPolicy p = PretrainBehavior(c, dataset_, true, [&](std::string_view e, long) {
    if (e == "cfm_update") ++updates;
  });
  EXPECT_EQ(updates, 0);
  const Checkpoint ckpt = Checkpoint::Load(c.BehaviorOutputPath());
  EXPECT_EQ(ckpt.GetNetwork("policy").params(), p.net().params());
  const FlowPolicy fresh(2, 2, c.policy_hidden, 0);
  EXPECT_EQ(p.net().spec().hidden, fresh.net().spec().hidden);
  c.pretrain_iterations = 1;
  EXPECT_NE(PretrainBehavior(c, dataset_, false).net().params(), p.net().params());
}

TEST_F(TrainerTest, ConstantActionDatasetConcentrates) {
  Dataset d = GenerateDataset(MakeEnvSpec("bandit"),
                              BehaviorMixture::DefaultFor("bandit"), 500, 2);
  Vec target(2);
  target << 0.3, -0.2;
  for (Transition& t : d.transitions) t.action = target;
  TrainConfig c = Tiny(Variant::kBehavior, "const");
  c.env = "bandit";
  c.pretrain_iterations = 1500;
  c.batch_size = 64;
  c.flow_steps = 10;
  c.policy_hidden = {32, 32};
  c.learning_rate = 3e-3;
  const FlowPolicy p = PretrainBehavior(c, d, false);
  Rng rng(3);
  const Mat states = rng.UniformMatrix(2, 500, -1, 1);
  const Mat a = GenerateActions(p, states, FlowTimeGrid(10), rng);
  const Vec mean = a.rowwise().mean();
  EXPECT_LT((mean - target).cwiseAbs().maxCoeff(), 0.05);
  const Mat centered = a.colwise() - mean;
  const Vec sd = (centered.array().square().rowwise().sum() / 499.0).sqrt();
  EXPECT_LE(sd.maxCoeff(), 0.1);
}

TEST_F(TrainerTest, MetricsAreBitwiseReproducible) {
  for (Variant v : {Variant::kDir, Variant::kDiv}) {
    TrainConfig a = WithBehavior(Tiny(v, "a"));
    TrainConfig b = a;
    b.out_dir = (root_ / "b").string();
    a.eval_every = b.eval_every = 2;
    a.eval_episodes = b.eval_episodes = 3;
    Train(a, dataset_);
    Train(b, dataset_);
    const std::string ma = ReadFile(a.MetricsPath());
    EXPECT_FALSE(ma.empty());
    EXPECT_EQ(ma, ReadFile(b.MetricsPath())) << VariantName(v);
  }
}

TEST_F(TrainerTest, ResumeMatchesUninterruptedRun) {
  for (Variant v : {Variant::kDir, Variant::kDiv}) {
    TrainConfig full = WithBehavior(Tiny(v, "full"));
    full.iterations = 6;
    Train(full, dataset_);

    TrainConfig part = full;
    part.out_dir = (root_ / "part").string();
    part.iterations = 3;
    Train(part, dataset_);
    part.iterations = 6;
    Train(part, dataset_, /*resume=*/true);
    EXPECT_EQ(ReadFile(full.MetricsPath()), ReadFile(part.MetricsPath()))
        << VariantName(v);
    EXPECT_EQ(Checkpoint::Load(full.CheckpointPath()).GetNetwork("policy").params(),
              Checkpoint::Load(part.CheckpointPath()).GetNetwork("policy").params());
  }
}

TEST_F(TrainerTest, ResumeRejectsDifferentRun) {
  TrainConfig c = WithBehavior(Tiny(Variant::kDir, "r"));
  Train(c, dataset_);
  TrainConfig other = c;
  other.variant = Variant::kDiv;
  EXPECT_THROW(Train(other, dataset_, true), ConfigError);
}

TEST_F(TrainerTest, NonFiniteLossAbortsAndKeepsCheckpoint) {
  TrainConfig c = WithBehavior(Tiny(Variant::kDir, "nan"));
  c.iterations = 2;
  Train(c, dataset_);
  const std::string good = ReadFile(c.CheckpointPath());
  // Continue on data whose rewards are NaN.
  Dataset poisoned = dataset_;
  for (Transition& t : poisoned.transitions) t.reward = std::nan("");
  c.iterations = 50;
  c.checkpoint_every = 10;
  EXPECT_THROW(Train(c, poisoned, /*resume=*/true), DivergenceError);
  EXPECT_EQ(ReadFile(c.CheckpointPath()), good);
  EXPECT_EQ(Checkpoint::Load(c.CheckpointPath()).meta().at("iteration").get<long>(), 2);
}

TEST_F(TrainerTest, MetricsFormat) {
  TrainConfig c = WithBehavior(Tiny(Variant::kDiv, "m"));
  c.eval_every = 2;
  c.eval_episodes = 2;
  Train(c, dataset_);
  std::ifstream in(c.MetricsPath());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, MetricsHeader());
  EXPECT_EQ(header,
            "iteration,cfm_loss,v_loss,q_loss,flow_q_loss,flow_v_loss,policy_loss,"
            "advantage,divergence,objective,wall_clock,eval_return");
  long prev = 0;
  int rows = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    const long it = std::stol(cells[0]);
    EXPECT_GT(it, prev);
    prev = it;
    for (size_t k = 1; k < 11; ++k) EXPECT_TRUE(std::isfinite(std::stod(cells[k])));
    EXPECT_EQ(it % 2 == 0, cells.size() == 12u) << line;
  }
  EXPECT_EQ(rows, 4);
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.no_prev_action = true;
  c.variant = Variant::kDir;
  EXPECT_THROW(c.Validate(), ConfigError);
  c.variant = Variant::kDiv;
  EXPECT_NO_THROW(c.Validate());
  TrainConfig bad;
  bad.flow_steps = 0;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = TrainConfig();
  bad.rho = -1;
  EXPECT_THROW(bad.Validate(), ConfigError);
  bad = TrainConfig();
  bad.gamma = 1.5;
  EXPECT_THROW(bad.Validate(), ConfigError);

  const TrainConfig back = TrainConfig::FromJson(c.ToJson());
  EXPECT_EQ(back.ToJson(), c.ToJson());
  EXPECT_THROW(TrainConfig::FromJson(nlohmann::json{{"learning_rat", 1e-3}}),
               ConfigError);
  EXPECT_THROW(TrainConfig::FromJson(nlohmann::json{{"rho", "high"}}), ConfigError);
  EXPECT_EQ(ParseVariant("behavior-only"), Variant::kBehavior);
  EXPECT_THROW(ParseVariant("awac"), ConfigError);

  TrainConfig base;
  base.seed = 77;
  const TrainConfig over = TrainConfig::FromJson(nlohmann::json{{"rho", 0.5}}, base);
  EXPECT_EQ(over.seed, 77u);
  EXPECT_EQ(over.rho, 0.5);
}

TEST(TrainConfigTest, DefaultHyperparameters) {
  const TrainConfig c;
  EXPECT_EQ(c.rho, 1.0);
  EXPECT_EQ(c.gamma, 0.99);
  EXPECT_EQ(c.expectile, 0.5);
  EXPECT_EQ(c.flow_steps, 10);
  EXPECT_EQ(c.dir_critic_hidden, (std::vector<int>{256, 256, 128, 128}));
  EXPECT_EQ(c.div_critic_hidden, (std::vector<int>{256, 256, 256}));
  EXPECT_EQ(c.critic_hidden, (std::vector<int>{256, 256, 256}));
  EXPECT_EQ(c.iterations, 20000);
  EXPECT_EQ(c.eval_every, 1000);
  EXPECT_EQ(c.eval_episodes, 50);
}

TEST_F(TrainerTest, StartupErrors) {
  TrainConfig c = Tiny(Variant::kDir, "err");
  EXPECT_THROW(Train(c, dataset_), ConfigError);  // no behavior checkpoint
  c = WithBehavior(c);
  c.env = "bandit";
  EXPECT_THROW(Train(c, dataset_), ConfigError);  // dataset env mismatch
  TrainConfig no_data = Tiny(Variant::kBehavior, "nd");
  EXPECT_THROW(Train(no_data, false), ConfigError);
}

TEST_F(TrainerTest, AblationReportsEveryEntry) {
  const std::string path = (root_ / "data.jsonl").string();
  SaveDataset(dataset_, path);
  TrainConfig base = WithBehavior(Tiny(Variant::kDiv, "abl"));
  base.dataset = path;
  base.eval_episodes = 3;
  TrainConfig ablated = base;
  ablated.no_prev_action = true;
  TrainConfig alt = base;
  alt.alt_q = true;
  const std::vector<AblationEntry> out =
      Ablate({{"div", base}, {"no_prev_action", ablated}, {"alt_q", alt}}, dataset_);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].delta, 0.0);
  for (const AblationEntry& e : out) {
    EXPECT_TRUE(std::isfinite(e.mean_return));
    EXPECT_DOUBLE_EQ(e.delta, e.mean_return - out[0].mean_return);
    EXPECT_TRUE(fs::exists(fs::path(base.out_dir) / e.name / "metrics.csv"));
  }
  const std::string table = FormatAblationTable(out);
  EXPECT_NE(table.find("no_prev_action"), std::string::npos);

  TrainConfig other = base;
  other.seed = 6;
  EXPECT_THROW(Ablate({{"a", base}, {"b", other}}, dataset_), ConfigError);
  EXPECT_THROW(Ablate({{"a", base}}, dataset_), ConfigError);
  EXPECT_THROW(Ablate({{"a", base}, {"a", ablated}}, dataset_), ConfigError);
}

}  // namespace
}  // namespace dflow
