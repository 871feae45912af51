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

// dflow: dataset generation, training, evaluation and property checks.
//
// Exit status: 0 success, 1 check failure, 2 usage or config error,
// 3 numerical divergence.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dflow/approx/checkpoint.h"
#include "dflow/common/errors.h"
#include "dflow/critic/iql.h"
#include "dflow/data/dataset.h"
#include "dflow/data/env.h"
#include "dflow/dfdir/dir.h"
#include "dflow/eval/checks.h"
#include "dflow/eval/evaluate.h"
#include "dflow/train/trainer.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;

struct GlobalFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
};

nlohmann::json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dflow::ConfigError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw dflow::ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

dflow::TrainConfig BaseConfig(const GlobalFlags& flags) {
  dflow::TrainConfig config;
  if (!flags.config.empty()) config = dflow::LoadTrainConfig(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.out_dir = flags.out;
  return config;
}

int GenData(const GlobalFlags& flags, const std::string& env, int episodes,
            const std::string& mixture_path) {
  const dflow::EnvSpec spec = dflow::MakeEnvSpec(env);
  dflow::BehaviorMixture mixture = dflow::BehaviorMixture::DefaultFor(env);
  if (!mixture_path.empty()) {
    mixture = dflow::BehaviorMixture::FromJson(ReadJsonFile(mixture_path));
  }
  if (flags.out.empty()) throw dflow::ConfigError("gen-data needs --out");
  const dflow::Dataset data =
      dflow::GenerateDataset(spec, mixture, episodes, flags.seed.value_or(0));
  dflow::SaveDataset(data, flags.out);
  std::cout << "wrote " << data.transitions.size() << " transitions ("
            << episodes << " episodes) to " << flags.out << "\n";
  return kExitOk;
}

int Pretrain(dflow::TrainConfig config) {
  if (config.dataset.empty()) throw dflow::ConfigError("pretrain needs a dataset");
  const dflow::Dataset data = dflow::LoadDataset(config.dataset);
  dflow::PretrainBehavior(config, data);
  std::cout << "behavior policy written to " << config.BehaviorOutputPath()
            << "\n";
  return kExitOk;
}

int TrainCmd(const dflow::TrainConfig& config, bool resume) {
  const dflow::TrainResult result = dflow::Train(config, resume);
  std::cout << "metrics: " << config.MetricsPath() << "\n"
            << "checkpoint: " << config.CheckpointPath() << "\n";
  if (result.final_eval) std::cout << result.final_eval->ToText();
  return kExitOk;
}

int EvalCmd(const GlobalFlags& flags, const std::string& checkpoint,
            std::string env, int episodes, int rollouts,
            const std::string& json_path) {
  const dflow::Checkpoint ckpt = dflow::Checkpoint::Load(checkpoint);
  const dflow::FlowPolicy policy(ckpt.GetNetwork("policy"));
  const auto& meta = ckpt.meta();
  dflow::TrainConfig run;
  if (meta.contains("config")) run = dflow::TrainConfig::FromJson(meta["config"]);
  if (env.empty()) env = meta.value("env", std::string("bandit"));
  const dflow::FlowTimeGrid grid(meta.value("flow_steps", 10));
  const uint64_t seed = flags.seed.value_or(0);

  dflow::EvalReport report =
      dflow::EvaluatePolicy(policy, env, episodes, seed, grid);
  if (ckpt.HasNetwork("critic/q") && rollouts > 0) {
    const dflow::EnvSpec spec = dflow::MakeEnvSpec(env);
    dflow::CriticConfig cc;
    cc.hidden = run.critic_hidden;
    cc.twin_q = run.twin_q;
    dflow::CriticSet critics(spec.state_dim, spec.action_dim, cc);
    critics.Load(ckpt, "critic/");
    const dflow::ActionValueFn q_value = dflow::CriticValueFn(critics);
    dflow::Rng rng = dflow::Rng::Stream(seed, 1);
    dflow::Mat states(spec.state_dim, rollouts);
    for (int j = 0; j < rollouts; ++j) {
      states.col(j) = dflow::MakeEnvironment(env)->Reset(rng);
    }
    report.monotonicity =
        dflow::QMonotonicity(policy, q_value, states, grid, rng).per_step;
    if (meta.value("variant", "") == "dir") {
      report.alignment =
          dflow::DirectionAlignmentReport(policy, q_value, states, grid, rng)
              .overall;
    }
  }
  std::cout << report.ToText();
  if (!json_path.empty()) {
    std::ofstream(json_path) << report.ToJson().dump(2) << "\n";
  }
  return kExitOk;
}

// Ablation file: {"base": {...config...},
//                 "entries": [{"name": "...", "overrides": {...}}, ...]}
int AblateCmd(const GlobalFlags& flags, const std::string& spec_path) {
  const nlohmann::json spec = ReadJsonFile(spec_path);
  dflow::TrainConfig base = dflow::TrainConfig::FromJson(
      spec.value("base", nlohmann::json::object()));
  if (flags.seed) base.seed = *flags.seed;
  if (!flags.out.empty()) base.out_dir = flags.out;
  std::vector<dflow::AblationEntry> entries;
  for (const auto& e : spec.value("entries", nlohmann::json::array())) {
    dflow::AblationEntry entry;
    entry.name = e.value("name", std::string());
    entry.config = dflow::TrainConfig::FromJson(
        e.value("overrides", nlohmann::json::object()), base);
    entries.push_back(entry);
  }
  if (base.dataset.empty()) throw dflow::ConfigError("ablation base needs a dataset");
  const dflow::Dataset data = dflow::LoadDataset(base.dataset);
  const auto table = dflow::Ablate(entries, data);
  std::cout << dflow::FormatAblationTable(table);
  return kExitOk;
}

int CheckCmd(const GlobalFlags& flags, const std::string& suite) {
  const dflow::CheckReport report =
      dflow::RunCheckSuite(suite, flags.seed.value_or(0));
  std::cout << report.ToText();
  return report.passed() ? kExitOk : kExitCheckFailed;
}

int ReferenceCmd(const GlobalFlags& flags, const std::string& env,
                 int episodes) {
  const dflow::ReferenceReturns r = dflow::ComputeReferenceReturns(
      env, episodes, flags.seed.value_or(dflow::kReferenceSeed));
  std::printf("%s random %.17g expert %.17g\n", env.c_str(), r.random,
              r.expert);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision Flow offline RL toolkit"};
  app.require_subcommand(1);
  GlobalFlags flags;
  app.add_option("--config", flags.config, "JSON config file");
  app.add_option("--seed", flags.seed, "random seed");
  app.add_option("--out", flags.out, "output path or directory");
  app.fallthrough();

  std::string env = "bandit";
  int episodes = 0;
  std::string mixture;
  auto* gen = app.add_subcommand("gen-data", "generate an offline dataset");
  gen->add_option("--env", env, "bandit or pointmass");
  gen->add_option("--episodes", episodes, "episode count")->required();
  gen->add_option("--mixture", mixture, "behavior mixture JSON");

  std::string dataset;
  std::optional<int> iterations;
  auto* pre = app.add_subcommand("pretrain", "train the behavior flow policy");
  pre->add_option("--dataset", dataset, "dataset JSONL");
  pre->add_option("--iterations", iterations, "CFM iterations");

  std::string variant;
  std::string behavior;
  bool resume = false;
  auto* train = app.add_subcommand("train", "run Decision Flow training");
  train->add_option("--variant", variant, "dir, div or behavior")
      ->check(CLI::IsMember({"dir", "div", "behavior", "behavior-only"}));
  train->add_option("--dataset", dataset, "dataset JSONL");
  train->add_option("--behavior", behavior, "behavior checkpoint");
  train->add_option("--iterations", iterations, "training iterations");
  train->add_flag("--resume", resume, "continue from the run checkpoint");

  std::string checkpoint;
  std::string eval_env;
  int eval_episodes = 50;
  int rollouts = 500;
  std::string json_path;
  auto* eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--env", eval_env, "environment (default: from checkpoint)");
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--rollouts", rollouts,
                   "generation rollouts for critic diagnostics (0 disables)");
  eval->add_option("--json", json_path, "write the report as JSON");

  std::string ablation;
  auto* ablate = app.add_subcommand("ablate", "compare configurations");
  ablate->add_option("--spec", ablation, "ablation JSON")->required();

  std::string suite;
  auto* check = app.add_subcommand("check", "run a property suite");
  check->add_option("--suite", suite, "suite id")
      ->required()
      ->check(CLI::IsMember(dflow::CheckSuites()));

  auto* ref = app.add_subcommand("reference", "compute reference returns");
  ref->add_option("--env", env, "bandit or pointmass");
  ref->add_option("--episodes", episodes, "episode count")->default_val(10000);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return GenData(flags, env, episodes, mixture);
    if (*ref) return ReferenceCmd(flags, env, episodes);
    if (*eval) {
      return EvalCmd(flags, checkpoint, eval_env, eval_episodes, rollouts,
                     json_path);
    }
    if (*ablate) return AblateCmd(flags, ablation);
    if (*check) return CheckCmd(flags, suite);
    dflow::TrainConfig config = BaseConfig(flags);
    if (!dataset.empty()) config.dataset = dataset;
    if (*pre) {
      if (iterations) config.pretrain_iterations = *iterations;
      return Pretrain(config);
    }
    if (!variant.empty()) config.variant = dflow::ParseVariant(variant);
    if (!behavior.empty()) config.behavior_checkpoint = behavior;
    if (iterations) config.iterations = *iterations;
    return TrainCmd(config, resume);
  } catch (const dflow::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
