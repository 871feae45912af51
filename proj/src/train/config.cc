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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dflow/common/errors.h"
#include "dflow/data/env.h"
#include "dflow/train/trainer.h"

namespace dflow {
namespace {

void CheckHidden(const std::vector<int>& hidden, const char* name) {
  for (int w : hidden) {
    if (w < 1) throw ConfigError(std::string(name) + " widths must be >= 1");
  }
}

}  // namespace

std::string_view VariantName(Variant variant) {
  switch (variant) {
    case Variant::kDir:
      return "dir";
    case Variant::kDiv:
      return "div";
    case Variant::kBehavior:
      return "behavior";
  }
  return "unknown";
}

Variant ParseVariant(std::string_view name) {
  if (name == "dir") return Variant::kDir;
  if (name == "div") return Variant::kDiv;
  if (name == "behavior" || name == "behavior-only") return Variant::kBehavior;
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

void TrainConfig::Validate() const {
  MakeEnvSpec(env);
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (pretrain_iterations < 0) {
    throw ConfigError("pretrain_iterations must be >= 0");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (flow_steps < 1) throw ConfigError("flow_steps T must be >= 1");
  if (!(rho >= 0.0)) throw ConfigError("rho must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(expectile > 0.0 && expectile < 1.0)) {
    throw ConfigError("expectile must lie in (0, 1)");
  }
  if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in (0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be > 0");
  if (time_frequencies < 0) throw ConfigError("time_frequencies must be >= 0");
  CheckHidden(policy_hidden, "policy_hidden");
  CheckHidden(critic_hidden, "critic_hidden");
  CheckHidden(dir_critic_hidden, "dir_critic_hidden");
  CheckHidden(div_critic_hidden, "div_critic_hidden");
  if (dir_critic_velocity != "policy" && dir_critic_velocity != "conditional") {
    throw ConfigError("dir_critic_velocity must be 'policy' or 'conditional'");
  }
  if (no_prev_action && variant != Variant::kDiv) {
    throw ConfigError("no_prev_action is only valid with variant=div");
  }
  if (eval_every < 0 || checkpoint_every < 0) {
    throw ConfigError("schedules must be >= 0");
  }
  if (eval_episodes < 0) throw ConfigError("eval_episodes must be >= 0");
}

Variant TrainConfig::EffectiveVariant() const {
  return no_flow_mdp ? Variant::kBehavior : variant;
}

nlohmann::json TrainConfig::ToJson() const {
  return {
      {"variant", VariantName(variant)},
      {"env", env},
      {"dataset", dataset},
      {"behavior_checkpoint", behavior_checkpoint},
      {"out_dir", out_dir},
      {"seed", seed},
      {"iterations", iterations},
      {"pretrain_iterations", pretrain_iterations},
      {"batch_size", batch_size},
      {"flow_steps", flow_steps},
      {"rho", rho},
      {"gamma", gamma},
      {"expectile", expectile},
      {"kappa", kappa},
      {"learning_rate", learning_rate},
      {"reward_scale", reward_scale},
      {"policy_hidden", policy_hidden},
      {"critic_hidden", critic_hidden},
      {"dir_critic_hidden", dir_critic_hidden},
      {"div_critic_hidden", div_critic_hidden},
      {"time_frequencies", time_frequencies},
      {"dir_critic_velocity", dir_critic_velocity},
      {"no_prev_action", no_prev_action},
      {"no_flow_mdp", no_flow_mdp},
      {"alt_q", alt_q},
      {"twin_q", twin_q},
      {"eval_every", eval_every},
      {"eval_episodes", eval_episodes},
      {"checkpoint_every", checkpoint_every},
      {"log_wall_clock", log_wall_clock},
  };
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j,
                                  const TrainConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c = base;
  const nlohmann::json known = c.ToJson();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) {
      throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) {
        field = j.at(key).get<std::decay_t<decltype(field)>>();
      }
    };
    if (j.contains("variant")) {
      c.variant = ParseVariant(j.at("variant").get<std::string>());
    }
    get("env", c.env);
    get("dataset", c.dataset);
    get("behavior_checkpoint", c.behavior_checkpoint);
    get("out_dir", c.out_dir);
    get("seed", c.seed);
    get("iterations", c.iterations);
    get("pretrain_iterations", c.pretrain_iterations);
    get("batch_size", c.batch_size);
    get("flow_steps", c.flow_steps);
    get("rho", c.rho);
    get("gamma", c.gamma);
    get("expectile", c.expectile);
    get("kappa", c.kappa);
    get("learning_rate", c.learning_rate);
    get("reward_scale", c.reward_scale);
    get("policy_hidden", c.policy_hidden);
    get("critic_hidden", c.critic_hidden);
    get("dir_critic_hidden", c.dir_critic_hidden);
    get("div_critic_hidden", c.div_critic_hidden);
    get("time_frequencies", c.time_frequencies);
    get("dir_critic_velocity", c.dir_critic_velocity);
    get("no_prev_action", c.no_prev_action);
    get("no_flow_mdp", c.no_flow_mdp);
    get("alt_q", c.alt_q);
    get("twin_q", c.twin_q);
    get("eval_every", c.eval_every);
    get("eval_episodes", c.eval_episodes);
    get("checkpoint_every", c.checkpoint_every);
    get("log_wall_clock", c.log_wall_clock);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  return FromJson(j, TrainConfig());
}

std::string TrainConfig::MetricsPath() const {
  return (std::filesystem::path(out_dir) / "metrics.csv").string();
}

std::string TrainConfig::CheckpointPath() const {
  return (std::filesystem::path(out_dir) / "checkpoint.ckpt").string();
}

std::string TrainConfig::BehaviorOutputPath() const {
  return (std::filesystem::path(out_dir) / "behavior.ckpt").string();
}

TrainConfig LoadTrainConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buffer.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return TrainConfig::FromJson(j);
}

}  // namespace dflow
