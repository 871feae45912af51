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

#ifndef DFLOW_APPROX_CHECKPOINT_H_
#define DFLOW_APPROX_CHECKPOINT_H_

#include <map>
#include <string>
#include <vector>

#include "dflow/approx/mlp.h"
#include "dflow/approx/optimizer.h"
#include "json.hpp"

namespace dflow {

// Checkpoint file layout:
//
//   line 1   JSON header terminated by '\n':
//            {"format":"dflow-checkpoint","version":1,"meta":{...},
//             "networks":{name:{"inputs":[...],"layers":[...],
//                               "activation":"relu","seed":N}},
//             "blocks":[{"name":...,"length":N}, ...]}
//   then     for every block in header order: uint64 length followed by
//            `length` IEEE-754 doubles, all little-endian.
class Checkpoint {
 public:
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void PutVector(const std::string& name, const Vec& values);
  const Vec& GetVector(const std::string& name) const;
  bool HasVector(const std::string& name) const;

  // Stores the network description and its parameters under `name`.
  void PutNetwork(const std::string& name, const Mlp& net);
  Mlp GetNetwork(const std::string& name) const;
  bool HasNetwork(const std::string& name) const;

  void PutAdam(const std::string& name, const AdamState& state);
  AdamState GetAdam(const std::string& name) const;

  void Save(const std::string& path) const;
  static Checkpoint Load(const std::string& path);

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, nlohmann::json> networks_;
  std::vector<std::string> order_;
  std::map<std::string, Vec> vectors_;
};

nlohmann::json MlpSpecToJson(const MlpSpec& spec);
MlpSpec MlpSpecFromJson(const nlohmann::json& j);

}  // namespace dflow

#endif  // DFLOW_APPROX_CHECKPOINT_H_
