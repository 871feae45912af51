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

#ifndef DFLOW_TRAIN_TRAINER_H_
#define DFLOW_TRAIN_TRAINER_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/critic/iql.h"
#include "dflow/data/dataset.h"
#include "dflow/dfdir/dir.h"
#include "dflow/eval/evaluate.h"
#include "dflow/flow/flow.h"
#include "json.hpp"

namespace dflow {

enum class Variant { kDir, kDiv, kBehavior };

std::string_view VariantName(Variant variant);
// Accepts "dir", "div", "behavior" and "behavior-only".
Variant ParseVariant(std::string_view name);

struct TrainConfig {
  Variant variant = Variant::kDir;
  std::string env = "bandit";
  std::string dataset;              // JSONL transitions
  std::string behavior_checkpoint;  // required unless variant is behavior
  std::string out_dir = "run";
  uint64_t seed = 0;

  int iterations = 20000;
  int pretrain_iterations = 20000;
  int batch_size = 256;
  int flow_steps = 10;
  double rho = 1.0;
  double gamma = 0.99;
  double expectile = 0.5;
  double kappa = 0.005;
  // One rate shared by every network.
  double learning_rate = 3e-4;
  double reward_scale = 1.0;

  std::vector<int> policy_hidden = {256, 256, 256};
  std::vector<int> critic_hidden = {256, 256, 256};
  std::vector<int> dir_critic_hidden = {256, 256, 128, 128};
  std::vector<int> div_critic_hidden = {256, 256, 256};
  int time_frequencies = 0;
  // "policy" or "conditional"; see DirCriticVelocity.
  std::string dir_critic_velocity = "policy";

  bool no_prev_action = false;
  bool no_flow_mdp = false;
  bool alt_q = false;
  bool twin_q = false;

  int eval_every = 1000;  // 0 disables scheduled evaluation
  int eval_episodes = 50;
  int checkpoint_every = 1000;
  bool log_wall_clock = false;

  // Throws ConfigError naming the first violated invariant.
  void Validate() const;
  // no_flow_mdp collapses either variant to behavior cloning.
  Variant EffectiveVariant() const;

  nlohmann::json ToJson() const;
  // Starts from `base` and overwrites every key present in `j`. Unknown keys
  // are rejected.
  static TrainConfig FromJson(const nlohmann::json& j,
                              const TrainConfig& base);
  static TrainConfig FromJson(const nlohmann::json& j);

  std::string MetricsPath() const;
  std::string CheckpointPath() const;
  std::string BehaviorOutputPath() const;
};

TrainConfig LoadTrainConfig(const std::string& path);

struct MetricsRow {
  long iteration = 0;
  double cfm_loss = 0.0;
  double v_loss = 0.0;
  double q_loss = 0.0;
  double flow_q_loss = 0.0;  // dir: Qf, div: flow value
  double flow_v_loss = 0.0;  // dir: Vf
  double policy_loss = 0.0;
  double advantage = 0.0;    // dir: mean |Qf - Vf|
  double divergence = 0.0;   // mean |u_theta - u_behavior|
  double objective = 0.0;    // div: mean -d + V at the stepped point
  double wall_clock = 0.0;
  std::optional<double> eval_return;
};

std::string MetricsHeader();
std::string FormatMetricsRow(const MetricsRow& row);

// Called with "v_update", "q_update", "target_update", "flow_critic_update",
// "policy_update", "cfm_update", "evaluate" and "checkpoint" as each happens.
using TrainObserver = std::function<void(std::string_view event, long iteration)>;

struct TrainResult {
  FlowPolicy policy;
  std::vector<MetricsRow> metrics;
  std::optional<EvalReport> final_eval;
};

// Conditional flow matching on the dataset; saves the frozen policy to
// config.BehaviorOutputPath() when `save` is set.
FlowPolicy PretrainBehavior(const TrainConfig& config, const Dataset& dataset,
                            bool save = true,
                            const TrainObserver& observer = nullptr);

// Algorithm loop with metrics and checkpoints under config.out_dir. With
// `resume` set, continues from config.CheckpointPath() and rewrites metrics
// rows past the checkpoint.
TrainResult Train(const TrainConfig& config, const Dataset& dataset,
                  bool resume = false, const TrainObserver& observer = nullptr);

// Loads the dataset named in the config.
TrainResult Train(const TrainConfig& config, bool resume = false);

struct AblationEntry {
  std::string name;
  TrainConfig config;
  double mean_return = 0.0;
  double delta = 0.0;  // relative to the first entry
};

// Runs every config (each in out_dir/<name>) and reports final returns.
// Throws ConfigError unless there are at least two configs sharing env,
// dataset and seed.
std::vector<AblationEntry> Ablate(const std::vector<AblationEntry>& entries,
                                  const Dataset& dataset);
std::string FormatAblationTable(const std::vector<AblationEntry>& entries);

}  // namespace dflow

#endif  // DFLOW_TRAIN_TRAINER_H_
