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

#ifndef DFLOW_DATA_DATASET_H_
#define DFLOW_DATA_DATASET_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"
#include "dflow/data/env.h"
#include "json.hpp"

namespace dflow {

struct Transition {
  Vec prev_action;  // action of the previous step; zero at episode start
  Vec state;
  Vec action;       // as executed, before any environment clipping
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
  int episode = 0;
  int step = 0;

  bool operator==(const Transition&) const = default;
};

// Behavior policy used to generate a dataset.
//   bandit:    "mode1", "mode2" (Gaussian noise around a mode), "uniform"
//   pointmass: "optimal", "detour" (scripted controllers plus noise),
//              "uniform"
struct MixtureComponent {
  std::string kind;
  double weight = 0.0;
  double noise = 0.0;

  bool operator==(const MixtureComponent&) const = default;
};

struct BehaviorMixture {
  std::vector<MixtureComponent> components;

  // bandit: 45% mode1, 45% mode2 (sigma 0.1), 10% uniform.
  // pointmass: 50% optimal (sigma 0.2), 50% detour.
  static BehaviorMixture DefaultFor(std::string_view env_id);
  static BehaviorMixture FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;

  // Throws ConfigError unless weights are non-negative and sum to 1 and
  // every kind is known for `env_id`.
  void Validate(std::string_view env_id) const;
};

struct DatasetManifest {
  std::string env;
  int state_dim = 0;
  int action_dim = 0;
  int episodes = 0;
  long transitions = 0;
  double reward_min = 0.0;  // both 0 for an empty dataset
  double reward_max = 0.0;
  uint64_t seed = 0;
  BehaviorMixture mixture;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Transition> transitions;
};

// Deterministic in `seed`; episode e uses the stream Rng::Stream(seed, e).
Dataset GenerateDataset(const EnvSpec& env, const BehaviorMixture& mixture,
                        int episodes, uint64_t seed);

// JSON Lines: the manifest object, then one transition per line.
void SaveDataset(const Dataset& dataset, const std::string& path);
// Throws ParseError (with line number) on malformed or missing lines and
// SchemaError when content disagrees with the manifest.
Dataset LoadDataset(const std::string& path);

// Throws SchemaError if any episode breaks prev_action chaining or step
// contiguity.
void CheckPrevActionChain(const Dataset& dataset);

// Column-major batch of transitions.
struct TransitionBatch {
  Mat prev_actions;
  Mat states;
  Mat actions;
  Mat next_states;
  Vec rewards;
  Vec terminals;  // 1.0 for terminal, 0.0 otherwise

  int size() const { return static_cast<int>(actions.cols()); }
};

TransitionBatch MakeBatch(const Dataset& dataset, std::span<const int> indices);
// Uniform sampling with replacement.
TransitionBatch SampleBatch(const Dataset& dataset, int batch_size, Rng& rng);

}  // namespace dflow

#endif  // DFLOW_DATA_DATASET_H_
