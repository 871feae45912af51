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

#include "dflow/eval/evaluate.h"

#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "dflow/common/errors.h"

namespace dflow {

double NormalizedScore(double ret, double random_return, double expert_return) {
  if (expert_return == random_return) {
    throw DomainError("normalized score needs distinct reference returns");
  }
  return 100.0 * (ret - random_return) / (expert_return - random_return);
}

ActionFn FlowActionFn(const FlowPolicy& policy, const FlowTimeGrid& grid) {
  return [&policy, grid](const Vec& state, Rng& rng) {
    return GenerateAction(policy, state, grid, rng).action;
  };
}

EpisodeResult RunEpisode(const ActionFn& act, std::string_view env_id,
                         uint64_t seed, int episode) {
  std::unique_ptr<Environment> env = MakeEnvironment(env_id);
  Rng rng = Rng::Stream(seed, static_cast<uint64_t>(episode));
  EpisodeResult result;
  Vec state = env->Reset(rng);
  for (int step = 0; step < env->spec().horizon; ++step) {
    Vec action = act(state, rng);
    const StepResult next = env->Step(action);
    result.states.push_back(state);
    result.actions.push_back(std::move(action));
    result.ret += next.reward;
    ++result.steps;
    state = next.next_state;
    if (next.terminal) break;
  }
  return result;
}

ModeCoverage ClassifyBanditAction(const Vec& state, const Vec& action) {
  const BanditModes modes = BanditModeCenters(state);
  const double d1 = (action - modes.primary).norm();
  const double d2 = (action - modes.secondary).norm();
  ModeCoverage c;
  if (d1 <= d2 && d1 <= kModeRadius) {
    c.primary = 1;
  } else if (d2 < d1 && d2 <= kModeRadius) {
    c.secondary = 1;
  } else {
    c.other = 1;
  }
  return c;
}

EvalReport Evaluate(const ActionFn& act, std::string_view env_id, int episodes,
                    uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  const EnvSpec spec = MakeEnvSpec(env_id);
  EvalReport report;
  report.env = spec.id;
  report.episodes = episodes;
  if (spec.id == "bandit") report.modes = ModeCoverage{};
  double sum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const EpisodeResult ep = RunEpisode(act, env_id, seed, e);
    report.returns.push_back(ep.ret);
    sum += ep.ret;
    if (report.modes) {
      for (size_t i = 0; i < ep.actions.size(); ++i) {
        const ModeCoverage c = ClassifyBanditAction(ep.states[i], ep.actions[i]);
        report.modes->primary += c.primary;
        report.modes->secondary += c.secondary;
        report.modes->other += c.other;
      }
    }
  }
  report.mean_return = sum / episodes;
  double var = 0.0;
  for (double r : report.returns) {
    var += (r - report.mean_return) * (r - report.mean_return);
  }
  report.std_return = std::sqrt(var / episodes);
  report.normalized_score =
      NormalizedScore(report.mean_return, spec.random_return,
                      spec.expert_return);
  return report;
}

EvalReport EvaluatePolicy(const FlowPolicy& policy, std::string_view env_id,
                          int episodes, uint64_t seed,
                          const FlowTimeGrid& grid) {
  const EnvSpec spec = MakeEnvSpec(env_id);
  if (policy.state_dim() != spec.state_dim ||
      policy.action_dim() != spec.action_dim) {
    throw SchemaError("policy widths do not match environment '" + spec.id +
                      "'");
  }
  return Evaluate(FlowActionFn(policy, grid), env_id, episodes, seed);
}

std::string EvalReport::ToText() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "env %s  episodes %d\nreturn %.6f +- %.6f  normalized %.3f\n",
                env.c_str(), episodes, mean_return, std_return,
                normalized_score);
  out << buf;
  if (modes) {
    out << "modes primary " << modes->primary << "  secondary "
        << modes->secondary << "  other " << modes->other << "\n";
  }
  if (!monotonicity.empty()) {
    out << "monotone fraction per step";
    for (double m : monotonicity) {
      std::snprintf(buf, sizeof(buf), " %.3f", m);
      out << buf;
    }
    out << "\n";
  }
  if (alignment) {
    std::snprintf(buf, sizeof(buf),
                  "direction cosine mean %.4f  q10 %.4f  median %.4f  q90 "
                  "%.4f  (n=%d)\n",
                  alignment->mean, alignment->q10, alignment->median,
                  alignment->q90, alignment->count);
    out << buf;
  }
  return out.str();
}

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json j;
  j["env"] = env;
  j["episodes"] = episodes;
  j["mean_return"] = mean_return;
  j["std_return"] = std_return;
  j["normalized_score"] = normalized_score;
  j["returns"] = returns;
  if (modes) {
    j["modes"] = {{"primary", modes->primary},
                  {"secondary", modes->secondary},
                  {"other", modes->other}};
  }
  if (!monotonicity.empty()) j["monotonicity"] = monotonicity;
  if (alignment) {
    j["alignment"] = {{"count", alignment->count},
                      {"mean", alignment->mean},
                      {"q10", alignment->q10},
                      {"median", alignment->median},
                      {"q90", alignment->q90}};
  }
  return j;
}

}  // namespace dflow
