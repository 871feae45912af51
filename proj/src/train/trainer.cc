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

#include "dflow/train/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include "dflow/approx/checkpoint.h"
#include "dflow/approx/optimizer.h"
#include "dflow/common/errors.h"
#include "dflow/dfdiv/div.h"

namespace dflow {
namespace {

// Stream ids derived from the run seed.
constexpr uint64_t kBehaviorInitStream = 11;
constexpr uint64_t kBehaviorRngStream = 12;
constexpr uint64_t kTrainRngStream = 21;
constexpr uint64_t kCriticSeedStream = 22;
constexpr uint64_t kFlowCriticSeedStream = 23;
constexpr uint64_t kEvalSeedStream = 31;

void CheckFinite(double value, const char* what, long iteration) {
  if (!std::isfinite(value)) {
    throw DivergenceError(std::string("non-finite ") + what +
                          " at iteration " + std::to_string(iteration));
  }
}

FlowPolicy LoadBehavior(const TrainConfig& config, const EnvSpec& env) {
  if (config.behavior_checkpoint.empty()) {
    throw ConfigError("variant " + std::string(VariantName(config.variant)) +
                      " needs behavior_checkpoint");
  }
  const Checkpoint ckpt = Checkpoint::Load(config.behavior_checkpoint);
  FlowPolicy behavior(ckpt.GetNetwork("policy"));
  if (behavior.state_dim() != env.state_dim ||
      behavior.action_dim() != env.action_dim) {
    throw SchemaError("behavior checkpoint widths do not match env '" +
                      env.id + "'");
  }
  return behavior;
}

// Owns every mutable parameter of one run.
class Session {
 public:
  Session(const TrainConfig& config, const Dataset& dataset, Variant variant,
          const TrainObserver& observer)
      : config_(config),
        dataset_(dataset),
        variant_(variant),
        env_(MakeEnvSpec(config.env)),
        grid_(config.flow_steps),
        observer_(observer),
        adam_{config.learning_rate},
        policy_(env_.state_dim, env_.action_dim, config.policy_hidden,
                SplitSeed(config.seed, kBehaviorInitStream),
                config.time_frequencies) {
    if (dataset.manifest.env != env_.id) {
      throw ConfigError("dataset env '" + dataset.manifest.env +
                        "' does not match config env '" + env_.id + "'");
    }
    if (dataset.transitions.empty()) throw ConfigError("dataset is empty");
    if (variant_ == Variant::kBehavior) {
      rng_ = Rng::Stream(config.seed, kBehaviorRngStream);
    } else {
      rng_ = Rng::Stream(config.seed, kTrainRngStream);
      behavior_.emplace(LoadBehavior(config, env_));
      policy_ = *behavior_;
      CriticConfig cc;
      cc.hidden = config.critic_hidden;
      cc.expectile = config.expectile;
      cc.discount = config.gamma;
      cc.kappa = config.kappa;
      cc.reward_scale = config.reward_scale;
      cc.twin_q = config.twin_q;
      cc.alt_q = config.alt_q;
      cc.seed = SplitSeed(config.seed, kCriticSeedStream);
      critics_.emplace(env_.state_dim, env_.action_dim, cc);
      v_adam_ = AdamState(critics_->v().param_count(), adam_);
      q_adam_ = AdamState(critics_->q().param_count(), adam_);
      if (critics_->has_twin()) {
        q2_adam_ = AdamState(critics_->q2().param_count(), adam_);
      }
      const uint64_t fseed = SplitSeed(config.seed, kFlowCriticSeedStream);
      if (variant_ == Variant::kDir) {
        dir_.emplace(env_.state_dim, env_.action_dim, config.dir_critic_hidden,
                     fseed, config.time_frequencies);
        fq_adam_ = AdamState(dir_->q_flow().param_count(), adam_);
        fv_adam_ = AdamState(dir_->v_flow().param_count(), adam_);
      } else {
        div_.emplace(env_.state_dim, env_.action_dim, config.div_critic_hidden,
                     fseed, !config.no_prev_action, config.time_frequencies);
        fq_adam_ = AdamState(div_->net().param_count(), adam_);
      }
    }
    policy_adam_ = AdamState(policy_.net().param_count(), adam_);
  }

  const FlowPolicy& policy() const { return policy_; }

  MetricsRow Step(long it) {
    MetricsRow row;
    row.iteration = it;
    const TransitionBatch batch = SampleBatch(dataset_, config_.batch_size, rng_);
    if (variant_ == Variant::kBehavior) {
      const LossGrad cfm =
          CfmLoss(policy_, batch.states, batch.actions, rng_);
      CheckFinite(cfm.loss, "cfm loss", it);
      Apply(policy_.mutable_net(), cfm.grad, policy_adam_, it);
      Notify("cfm_update", it);
      row.cfm_loss = cfm.loss;
      return row;
    }

    // RL critic: v, then q, then the target average.
    const LossGrad v = VLoss(*critics_, batch);
    CheckFinite(v.loss, "v loss", it);
    Apply(critics_->v(), v.grad, v_adam_, it);
    Notify("v_update", it);
    const QLossResult q = QLoss(*critics_, batch, rng_);
    CheckFinite(q.loss, "q loss", it);
    Apply(critics_->q(), q.grad, q_adam_, it);
    if (critics_->has_twin()) Apply(critics_->q2(), q.twin_grad, q2_adam_, it);
    Notify("q_update", it);
    critics_->UpdateTargets();
    Notify("target_update", it);
    row.v_loss = v.loss;
    row.q_loss = q.loss;

    const ActionValueFn q_value = CriticValueFn(*critics_);
    if (variant_ == Variant::kDir) {
      const DirCriticVelocity vel = config_.dir_critic_velocity == "conditional"
                                        ? DirCriticVelocity::kConditional
                                        : DirCriticVelocity::kPolicy;
      const DirCriticLosses fc =
          DirCriticLoss(*dir_, policy_, q_value, batch, rng_, vel);
      CheckFinite(fc.q_loss + fc.v_loss, "flow critic loss", it);
      Apply(dir_->q_flow(), fc.q_grad, fq_adam_, it);
      Apply(dir_->v_flow(), fc.v_grad, fv_adam_, it);
      Notify("flow_critic_update", it);
      const DirPolicyLossResult pl =
          DirPolicyLoss(policy_, *dir_, *behavior_, config_.rho, batch, rng_);
      CheckFinite(pl.loss, "policy loss", it);
      Apply(policy_.mutable_net(), pl.grad, policy_adam_, it);
      Notify("policy_update", it);
      row.flow_q_loss = fc.q_loss;
      row.flow_v_loss = fc.v_loss;
      row.policy_loss = pl.loss;
      row.advantage = pl.advantage_abs;
      row.divergence = pl.divergence;
    } else {
      const DivCriticLossResult fc = DivCriticLoss(
          *div_, policy_, *behavior_, q_value, batch, grid_, rng_);
      CheckFinite(fc.loss, "flow value loss", it);
      Apply(div_->net(), fc.grad, fq_adam_, it);
      Notify("flow_critic_update", it);
      const DivPolicyLossResult pl =
          DivPolicyLoss(policy_, *div_, *behavior_, batch, grid_, rng_);
      CheckFinite(pl.loss, "policy loss", it);
      Apply(policy_.mutable_net(), pl.grad, policy_adam_, it);
      Notify("policy_update", it);
      row.flow_q_loss = fc.loss;
      row.policy_loss = pl.loss;
      row.divergence = pl.divergence;
      row.objective = -pl.loss;
    }
    return row;
  }

  EvalReport Evaluate(long it) {
    Notify("evaluate", it);
    return EvaluatePolicy(policy_, env_.id, config_.eval_episodes,
                          SplitSeed(config_.seed, kEvalSeedStream), grid_);
  }

  void Save(const std::string& path, long it) {
    Checkpoint ckpt;
    ckpt.meta()["iteration"] = it;
    ckpt.meta()["variant"] = VariantName(variant_);
    ckpt.meta()["env"] = env_.id;
    ckpt.meta()["seed"] = config_.seed;
    ckpt.meta()["flow_steps"] = config_.flow_steps;
    ckpt.meta()["rng"] = rng_.SaveState();
    ckpt.meta()["config"] = config_.ToJson();
    ckpt.PutNetwork("policy", policy_.net());
    ckpt.PutAdam("adam/policy", policy_adam_);
    if (behavior_) ckpt.PutNetwork("behavior", behavior_->net());
    if (critics_) {
      critics_->Save(ckpt, "critic/");
      ckpt.PutAdam("adam/v", v_adam_);
      ckpt.PutAdam("adam/q", q_adam_);
      if (critics_->has_twin()) ckpt.PutAdam("adam/q2", q2_adam_);
    }
    if (dir_) {
      dir_->Save(ckpt, "flow/");
      ckpt.PutAdam("adam/q_flow", fq_adam_);
      ckpt.PutAdam("adam/v_flow", fv_adam_);
    }
    if (div_) {
      div_->Save(ckpt, "flow/");
      ckpt.PutAdam("adam/v_div", fq_adam_);
    }
    ckpt.Save(path);
    Notify("checkpoint", it);
  }

  long Restore(const std::string& path) {
    const Checkpoint ckpt = Checkpoint::Load(path);
    const auto& meta = ckpt.meta();
    if (meta.value("variant", "") != VariantName(variant_) ||
        meta.value("env", "") != env_.id ||
        meta.value("seed", uint64_t{0}) != config_.seed) {
      throw ConfigError("checkpoint '" + path +
                        "' was written by a different variant, env or seed");
    }
    auto load_net = [&](Mlp& dst, const std::string& name) {
      Mlp src = ckpt.GetNetwork(name);
      if (src.spec().LayerWidths() != dst.spec().LayerWidths()) {
        throw SchemaError("checkpoint network '" + name +
                          "' architecture mismatch");
      }
      dst.set_params(src.params());
    };
    load_net(policy_.mutable_net(), "policy");
    policy_adam_ = ckpt.GetAdam("adam/policy");
    if (critics_) {
      critics_->Load(ckpt, "critic/");
      v_adam_ = ckpt.GetAdam("adam/v");
      q_adam_ = ckpt.GetAdam("adam/q");
      if (critics_->has_twin()) q2_adam_ = ckpt.GetAdam("adam/q2");
    }
    if (dir_) {
      dir_->Load(ckpt, "flow/");
      fq_adam_ = ckpt.GetAdam("adam/q_flow");
      fv_adam_ = ckpt.GetAdam("adam/v_flow");
    }
    if (div_) {
      div_->Load(ckpt, "flow/");
      fq_adam_ = ckpt.GetAdam("adam/v_div");
    }
    rng_.LoadState(meta.at("rng").get<std::string>());
    return meta.at("iteration").get<long>();
  }

 private:
  void Notify(std::string_view event, long it) const {
    if (observer_) observer_(event, it);
  }

  static void Apply(Mlp& net, const Vec& grad, AdamState& state, long it) {
    try {
      AdamStep(net, grad, state);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " at iteration " +
                            std::to_string(it));
    }
  }

  const TrainConfig& config_;
  const Dataset& dataset_;
  Variant variant_;
  EnvSpec env_;
  FlowTimeGrid grid_;
  TrainObserver observer_;
  AdamConfig adam_;
  Rng rng_;
  FlowPolicy policy_;
  AdamState policy_adam_;
  std::optional<FlowPolicy> behavior_;
  std::optional<CriticSet> critics_;
  AdamState v_adam_;
  AdamState q_adam_;
  AdamState q2_adam_;
  std::optional<DirFlowCritics> dir_;
  std::optional<DivFlowCritic> div_;
  AdamState fq_adam_;
  AdamState fv_adam_;
};

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Keeps the header and every row up to `last_iteration`.
std::vector<std::string> ReadMetricsPrefix(const std::string& path,
                                           long last_iteration) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const long it = std::stol(line.substr(0, line.find(',')));
    if (it <= last_iteration) lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::string MetricsHeader() {
  return "iteration,cfm_loss,v_loss,q_loss,flow_q_loss,flow_v_loss,"
         "policy_loss,advantage,divergence,objective,wall_clock,eval_return";
}

std::string FormatMetricsRow(const MetricsRow& row) {
  std::string out = std::to_string(row.iteration);
  for (double v : {row.cfm_loss, row.v_loss, row.q_loss, row.flow_q_loss,
                   row.flow_v_loss, row.policy_loss, row.advantage,
                   row.divergence, row.objective, row.wall_clock}) {
    out += ',';
    out += FormatDouble(v);
  }
  out += ',';
  if (row.eval_return) out += FormatDouble(*row.eval_return);
  return out;
}

FlowPolicy PretrainBehavior(const TrainConfig& config, const Dataset& dataset,
                            bool save, const TrainObserver& observer) {
  config.Validate();
  Session session(config, dataset, Variant::kBehavior, observer);
  for (long it = 1; it <= config.pretrain_iterations; ++it) session.Step(it);
  if (save) {
    std::filesystem::create_directories(config.out_dir);
    session.Save(config.BehaviorOutputPath(), config.pretrain_iterations);
  }
  return session.policy();
}

TrainResult Train(const TrainConfig& config, const Dataset& dataset,
                  bool resume, const TrainObserver& observer) {
  config.Validate();
  const Variant variant = config.EffectiveVariant();
  Session session(config, dataset, variant, observer);
  std::filesystem::create_directories(config.out_dir);

  long start = 1;
  std::vector<std::string> kept_rows;
  if (resume) {
    start = session.Restore(config.CheckpointPath()) + 1;
    kept_rows = ReadMetricsPrefix(config.MetricsPath(), start - 1);
  }
  std::ofstream metrics(config.MetricsPath(), std::ios::trunc);
  if (!metrics) {
    throw ConfigError("cannot write metrics to '" + config.MetricsPath() + "'");
  }
  metrics << MetricsHeader() << "\n";
  for (const std::string& line : kept_rows) metrics << line << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result{session.policy(), {}, std::nullopt};
  for (long it = start; it <= config.iterations; ++it) {
    MetricsRow row;
    try {
      row = session.Step(it);
    } catch (const DivergenceError&) {
      metrics.flush();
      throw;
    }
    if (config.log_wall_clock) {
      row.wall_clock = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    }
    if (config.eval_every > 0 && config.eval_episodes > 0 &&
        it % config.eval_every == 0) {
      row.eval_return = session.Evaluate(it).mean_return;
    }
    metrics << FormatMetricsRow(row) << "\n";
    result.metrics.push_back(row);
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0) {
      metrics.flush();
      session.Save(config.CheckpointPath(), it);
    }
  }
  metrics.flush();
  const long last = std::max<long>(config.iterations, start - 1);
  session.Save(config.CheckpointPath(), last);
  if (config.eval_episodes > 0) result.final_eval = session.Evaluate(last);
  result.policy = session.policy();
  return result;
}

TrainResult Train(const TrainConfig& config, bool resume) {
  if (config.dataset.empty()) throw ConfigError("config names no dataset");
  const Dataset dataset = LoadDataset(config.dataset);
  return Train(config, dataset, resume);
}

std::vector<AblationEntry> Ablate(const std::vector<AblationEntry>& entries,
                                  const Dataset& dataset) {
  if (entries.size() < 2) throw ConfigError("ablation needs at least two configs");
  std::set<std::string> names;
  for (const AblationEntry& e : entries) {
    const TrainConfig& c = e.config;
    const TrainConfig& first = entries.front().config;
    if (c.env != first.env || c.dataset != first.dataset ||
        c.seed != first.seed) {
      throw ConfigError("ablation configs must share env, dataset and seed ('" +
                        e.name + "' differs)");
    }
    if (e.name.empty() || !names.insert(e.name).second) {
      throw ConfigError("ablation entries need distinct non-empty names");
    }
  }
  std::vector<AblationEntry> out = entries;
  for (AblationEntry& e : out) {
    TrainConfig c = e.config;
    c.out_dir = (std::filesystem::path(c.out_dir) / e.name).string();
    if (c.eval_episodes < 1) c.eval_episodes = 50;
    const TrainResult r = Train(c, dataset);
    e.mean_return = r.final_eval->mean_return;
  }
  for (AblationEntry& e : out) e.delta = e.mean_return - out.front().mean_return;
  return out;
}

std::string FormatAblationTable(const std::vector<AblationEntry>& entries) {
  std::ostringstream out;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-24s %-9s %14s %12s\n", "name", "variant",
                "mean_return", "delta");
  out << buf;
  for (const AblationEntry& e : entries) {
    std::snprintf(buf, sizeof(buf), "%-24s %-9s %14.6f %+12.6f\n",
                  e.name.c_str(),
                  std::string(VariantName(e.config.EffectiveVariant())).c_str(),
                  e.mean_return, e.delta);
    out << buf;
  }
  return out.str();
}

}  // namespace dflow
