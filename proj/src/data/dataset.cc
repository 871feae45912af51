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

#include "dflow/data/dataset.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

using nlohmann::json;

bool KindAllowed(std::string_view env_id, std::string_view kind) {
  if (kind == "uniform") return true;
  if (env_id == "bandit") return kind == "mode1" || kind == "mode2";
  if (env_id == "pointmass") return kind == "optimal" || kind == "detour";
  return false;
}

const MixtureComponent& PickComponent(const BehaviorMixture& mixture,
                                      double u) {
  double cumulative = 0.0;
  for (const auto& c : mixture.components) {
    cumulative += c.weight;
    if (u < cumulative) return c;
  }
  return mixture.components.back();
}

Vec BehaviorAction(const MixtureComponent& component, const Vec& state,
                   Rng& rng) {
  const int dim = static_cast<int>(state.size());
  if (component.kind == "uniform") {
    return rng.UniformMatrix(dim, 1, -1.0, 1.0).col(0);
  }
  Vec base;
  if (component.kind == "mode1") {
    base = BanditModeCenters(state).primary;
  } else if (component.kind == "mode2") {
    base = BanditModeCenters(state).secondary;
  } else if (component.kind == "optimal") {
    base = PointmassOptimalAction(state);
  } else {
    base = PointmassDetourAction(state);
  }
  if (component.noise > 0.0) {
    base += component.noise * rng.NormalMatrix(dim, 1).col(0);
  }
  return base;
}

json VecToJson(const Vec& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vec VecFromJson(const json& j, int expected_dim, long line,
                const char* field) {
  if (!j.is_array()) {
    throw ParseError(line, std::string("field '") + field +
                               "' is not an array on line " +
                               std::to_string(line));
  }
  if (static_cast<int>(j.size()) != expected_dim) {
    throw SchemaError(std::string("field '") + field + "' on line " +
                      std::to_string(line) + " has " +
                      std::to_string(j.size()) + " entries, manifest says " +
                      std::to_string(expected_dim));
  }
  Vec v(expected_dim);
  for (int i = 0; i < expected_dim; ++i) {
    if (!j[i].is_number()) {
      throw ParseError(line, std::string("non-numeric entry in '") + field +
                                 "' on line " + std::to_string(line));
    }
    v[i] = j[i].get<double>();
  }
  return v;
}

}  // namespace

BehaviorMixture BehaviorMixture::DefaultFor(std::string_view env_id) {
  if (env_id == "bandit") {
    return {{{"mode1", 0.45, 0.1}, {"mode2", 0.45, 0.1}, {"uniform", 0.1, 0.0}}};
  }
  if (env_id == "pointmass") {
    return {{{"optimal", 0.5, 0.2}, {"detour", 0.5, 0.0}}};
  }
  throw ConfigError("no default mixture for '" + std::string(env_id) + "'");
}

BehaviorMixture BehaviorMixture::FromJson(const json& j) {
  BehaviorMixture mixture;
  try {
    for (const auto& c : j) {
      mixture.components.push_back({c.at("kind").get<std::string>(),
                                    c.at("weight").get<double>(),
                                    c.value("noise", 0.0)});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad mixture description: ") + e.what());
  }
  return mixture;
}

json BehaviorMixture::ToJson() const {
  json out = json::array();
  for (const auto& c : components) {
    out.push_back({{"kind", c.kind}, {"weight", c.weight}, {"noise", c.noise}});
  }
  return out;
}

void BehaviorMixture::Validate(std::string_view env_id) const {
  if (components.empty()) throw ConfigError("behavior mixture is empty");
  double total = 0.0;
  for (const auto& c : components) {
    if (!KindAllowed(env_id, c.kind)) {
      throw ConfigError("mixture component '" + c.kind + "' is not valid for " +
                        std::string(env_id));
    }
    if (!(c.weight >= 0.0) || !(c.noise >= 0.0)) {
      throw ConfigError("mixture weights and noise must be non-negative");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("mixture weights sum to " + std::to_string(total) +
                      ", expected 1");
  }
}

Dataset GenerateDataset(const EnvSpec& env, const BehaviorMixture& mixture,
                        int episodes, uint64_t seed) {
  if (episodes < 0) throw ConfigError("episode count must be non-negative");
  mixture.Validate(env.id);
  Dataset dataset;
  auto& m = dataset.manifest;
  m.env = env.id;
  m.state_dim = env.state_dim;
  m.action_dim = env.action_dim;
  m.episodes = episodes;
  m.seed = seed;
  m.mixture = mixture;

  auto environment = MakeEnvironment(env.id);
  for (int e = 0; e < episodes; ++e) {
    Rng rng = Rng::Stream(seed, static_cast<uint64_t>(e));
    const MixtureComponent& component = PickComponent(mixture, rng.Uniform());
    Vec state = environment->Reset(rng);
    Vec prev = Vec::Zero(env.action_dim);
    for (int step = 0;; ++step) {
      Vec action = BehaviorAction(component, state, rng);
      const StepResult result = environment->Step(action);
      dataset.transitions.push_back({prev, state, action, result.reward,
                                     result.next_state, result.terminal, e,
                                     step});
      prev = std::move(action);
      state = result.next_state;
      if (result.terminal) break;
    }
  }
  m.transitions = static_cast<long>(dataset.transitions.size());
  if (!dataset.transitions.empty()) {
    m.reward_min = std::numeric_limits<double>::infinity();
    m.reward_max = -std::numeric_limits<double>::infinity();
    for (const auto& t : dataset.transitions) {
      m.reward_min = std::min(m.reward_min, t.reward);
      m.reward_max = std::max(m.reward_max, t.reward);
    }
  }
  return dataset;
}

void SaveDataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const auto& m = dataset.manifest;
  json manifest = {{"env", m.env},
                   {"state_dim", m.state_dim},
                   {"action_dim", m.action_dim},
                   {"episodes", m.episodes},
                   {"transitions", m.transitions},
                   {"reward_min", m.reward_min},
                   {"reward_max", m.reward_max},
                   {"seed", m.seed},
                   {"mixture", m.mixture.ToJson()}};
  out << manifest.dump() << '\n';
  for (const auto& t : dataset.transitions) {
    json line = {{"prev_action", VecToJson(t.prev_action)},
                 {"state", VecToJson(t.state)},
                 {"action", VecToJson(t.action)},
                 {"reward", t.reward},
                 {"next_state", VecToJson(t.next_state)},
                 {"terminal", t.terminal},
                 {"episode", t.episode},
                 {"step", t.step}};
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Dataset LoadDataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);

  auto parse_line = [](const std::string& text, long line) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error&) {
      throw ParseError(line, "malformed JSON on line " + std::to_string(line));
    }
    if (!j.is_object()) {
      throw ParseError(line, "line " + std::to_string(line) +
                                 " is not a JSON object");
    }
    return j;
  };

  std::string text;
  long line = 0;
  if (!std::getline(in, text)) throw ParseError(1, "missing manifest line");
  ++line;
  const json manifest = parse_line(text, line);

  Dataset dataset;
  auto& m = dataset.manifest;
  try {
    m.env = manifest.at("env").get<std::string>();
    m.state_dim = manifest.at("state_dim").get<int>();
    m.action_dim = manifest.at("action_dim").get<int>();
    m.episodes = manifest.at("episodes").get<int>();
    m.transitions = manifest.at("transitions").get<long>();
    m.reward_min = manifest.at("reward_min").get<double>();
    m.reward_max = manifest.at("reward_max").get<double>();
    m.seed = manifest.at("seed").get<uint64_t>();
    m.mixture = BehaviorMixture::FromJson(manifest.at("mixture"));
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("bad manifest: ") + e.what());
  }
  const EnvSpec env = MakeEnvSpec(m.env);
  if (m.state_dim != env.state_dim || m.action_dim != env.action_dim) {
    throw SchemaError("manifest dims (" + std::to_string(m.state_dim) + ", " +
                      std::to_string(m.action_dim) + ") do not match env " +
                      m.env);
  }

  dataset.transitions.reserve(static_cast<size_t>(std::max(0L, m.transitions)));
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) throw ParseError(line, "empty line " + std::to_string(line));
    const json j = parse_line(text, line);
    Transition t;
    try {
      t.prev_action = VecFromJson(j.at("prev_action"), m.action_dim, line,
                                  "prev_action");
      t.state = VecFromJson(j.at("state"), m.state_dim, line, "state");
      t.action = VecFromJson(j.at("action"), m.action_dim, line, "action");
      t.reward = j.at("reward").get<double>();
      t.next_state =
          VecFromJson(j.at("next_state"), m.state_dim, line, "next_state");
      t.terminal = j.at("terminal").get<bool>();
      t.episode = j.at("episode").get<int>();
      t.step = j.at("step").get<int>();
    } catch (const json::exception& e) {
      throw ParseError(line, "bad transition on line " + std::to_string(line) +
                                 ": " + e.what());
    }
    dataset.transitions.push_back(std::move(t));
  }
  if (static_cast<long>(dataset.transitions.size()) != m.transitions) {
    throw ParseError(line + 1, "truncated dataset: manifest declares " +
                                   std::to_string(m.transitions) +
                                   " transitions, found " +
                                   std::to_string(dataset.transitions.size()));
  }
  if (!dataset.transitions.empty()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& t : dataset.transitions) {
      lo = std::min(lo, t.reward);
      hi = std::max(hi, t.reward);
    }
    if (lo != m.reward_min || hi != m.reward_max) {
      throw SchemaError("manifest reward range disagrees with transitions");
    }
  }
  CheckPrevActionChain(dataset);
  return dataset;
}

void CheckPrevActionChain(const Dataset& dataset) {
  const auto& ts = dataset.transitions;
  for (size_t i = 0; i < ts.size(); ++i) {
    const Transition& t = ts[i];
    const bool starts_episode = i == 0 || ts[i - 1].episode != t.episode;
    if (starts_episode) {
      if (t.step != 0) {
        throw SchemaError("episode " + std::to_string(t.episode) +
                          " does not start at step 0");
      }
      if (!t.prev_action.isZero(0.0)) {
        throw SchemaError("episode " + std::to_string(t.episode) +
                          " starts with a non-zero prev_action");
      }
    } else {
      if (t.step != ts[i - 1].step + 1) {
        throw SchemaError("non-contiguous steps in episode " +
                          std::to_string(t.episode));
      }
      if (t.prev_action != ts[i - 1].action) {
        throw SchemaError("prev_action chain broken at episode " +
                          std::to_string(t.episode) + " step " +
                          std::to_string(t.step));
      }
    }
  }
}

TransitionBatch MakeBatch(const Dataset& dataset,
                          std::span<const int> indices) {
  const auto& m = dataset.manifest;
  const int n = static_cast<int>(indices.size());
  TransitionBatch batch;
  batch.prev_actions.resize(m.action_dim, n);
  batch.states.resize(m.state_dim, n);
  batch.actions.resize(m.action_dim, n);
  batch.next_states.resize(m.state_dim, n);
  batch.rewards.resize(n);
  batch.terminals.resize(n);
  for (int j = 0; j < n; ++j) {
    const Transition& t = dataset.transitions.at(static_cast<size_t>(indices[j]));
    batch.prev_actions.col(j) = t.prev_action;
    batch.states.col(j) = t.state;
    batch.actions.col(j) = t.action;
    batch.next_states.col(j) = t.next_state;
    batch.rewards[j] = t.reward;
    batch.terminals[j] = t.terminal ? 1.0 : 0.0;
  }
  return batch;
}

TransitionBatch SampleBatch(const Dataset& dataset, int batch_size, Rng& rng) {
  if (dataset.transitions.empty()) {
    throw ConfigError("cannot sample from an empty dataset");
  }
  std::vector<int> indices(static_cast<size_t>(batch_size));
  const int last = static_cast<int>(dataset.transitions.size()) - 1;
  for (auto& i : indices) i = rng.UniformInt(0, last);
  return MakeBatch(dataset, indices);
}

}  // namespace dflow
