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

#include "dflow/approx/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

constexpr char kFormat[] = "dflow-checkpoint";
constexpr int kVersion = 1;

void WriteU64(std::ostream& out, uint64_t value) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>(value >> (8 * i));
  out.write(bytes, 8);
}

uint64_t ReadU64(std::istream& in, const std::string& what) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) throw ParseError(0, "truncated checkpoint in " + what);
  uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

nlohmann::json MlpSpecToJson(const MlpSpec& spec) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& segment : spec.inputs) {
    inputs.push_back({{"name", segment.name}, {"dim", segment.dim}});
  }
  return {{"inputs", inputs},
          {"layers", spec.LayerWidths()},
          {"activation", std::string(ActivationName(spec.activation))},
          {"seed", spec.seed}};
}

MlpSpec MlpSpecFromJson(const nlohmann::json& j) {
  try {
    MlpSpec spec;
    for (const auto& segment : j.at("inputs")) {
      spec.inputs.push_back(
          {segment.at("name").get<std::string>(), segment.at("dim").get<int>()});
    }
    const auto layers = j.at("layers").get<std::vector<int>>();
    if (layers.size() < 2) throw SchemaError("network needs at least 2 layers");
    if (layers.front() != spec.input_dim()) {
      throw SchemaError("input layer width disagrees with input segments");
    }
    spec.hidden.assign(layers.begin() + 1, layers.end() - 1);
    spec.output_dim = layers.back();
    spec.activation = ParseActivation(j.at("activation").get<std::string>());
    spec.seed = j.at("seed").get<uint64_t>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad network header: ") + e.what());
  }
}

void Checkpoint::PutVector(const std::string& name, const Vec& values) {
  if (!vectors_.contains(name)) order_.push_back(name);
  vectors_[name] = values;
}

const Vec& Checkpoint::GetVector(const std::string& name) const {
  auto it = vectors_.find(name);
  if (it == vectors_.end()) {
    throw SchemaError("checkpoint has no block '" + name + "'");
  }
  return it->second;
}

bool Checkpoint::HasVector(const std::string& name) const {
  return vectors_.contains(name);
}

void Checkpoint::PutNetwork(const std::string& name, const Mlp& net) {
  networks_[name] = MlpSpecToJson(net.spec());
  PutVector(name, net.params());
}

Mlp Checkpoint::GetNetwork(const std::string& name) const {
  auto it = networks_.find(name);
  if (it == networks_.end()) {
    throw SchemaError("checkpoint has no network '" + name + "'");
  }
  MlpSpec spec = MlpSpecFromJson(it->second);
  const Vec& params = GetVector(name);
  if (params.size() != spec.ParameterCount()) {
    throw SchemaError("network '" + name + "' parameter count disagrees with "
                      "its layer widths");
  }
  return Mlp(std::move(spec), params);
}

bool Checkpoint::HasNetwork(const std::string& name) const {
  return networks_.contains(name);
}

void Checkpoint::PutAdam(const std::string& name, const AdamState& state) {
  PutVector(name + ".m", state.first_moment);
  PutVector(name + ".v", state.second_moment);
  meta_["optimizers"][name] = {{"step", state.step},
                               {"learning_rate", state.config.learning_rate},
                               {"beta1", state.config.beta1},
                               {"beta2", state.config.beta2},
                               {"epsilon", state.config.epsilon}};
}

AdamState Checkpoint::GetAdam(const std::string& name) const {
  try {
    const auto& j = meta_.at("optimizers").at(name);
    AdamConfig config{j.at("learning_rate").get<double>(),
                      j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                      j.at("epsilon").get<double>()};
    AdamState state(GetVector(name + ".m").size(), config);
    state.first_moment = GetVector(name + ".m");
    state.second_moment = GetVector(name + ".v");
    state.step = j.at("step").get<int64_t>();
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("missing optimizer state '" + name + "': " + e.what());
  }
}

void Checkpoint::Save(const std::string& path) const {
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["meta"] = meta_;
  header["networks"] = nlohmann::json::object();
  for (const auto& [name, spec] : networks_) header["networks"][name] = spec;
  header["blocks"] = nlohmann::json::array();
  for (const auto& name : order_) {
    header["blocks"].push_back(
        {{"name", name}, {"length", vectors_.at(name).size()}});
  }

  // Write-then-rename so a crash never replaces a good checkpoint with a
  // partial one.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out << header.dump() << '\n';
    for (const auto& name : order_) {
      const Vec& values = vectors_.at(name);
      WriteU64(out, static_cast<uint64_t>(values.size()));
      for (double v : values) WriteU64(out, std::bit_cast<uint64_t>(v));
    }
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty checkpoint " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != kFormat) {
    throw SchemaError(path + " is not a dflow checkpoint");
  }
  if (header.value("version", 0) != kVersion) {
    throw SchemaError("unsupported checkpoint version");
  }

  Checkpoint ckpt;
  ckpt.meta_ = header.value("meta", nlohmann::json::object());
  for (const auto& [name, spec] : header.at("networks").items()) {
    ckpt.networks_[name] = spec;
  }
  for (const auto& block : header.at("blocks")) {
    const auto name = block.at("name").get<std::string>();
    const auto declared = block.at("length").get<uint64_t>();
    const uint64_t length = ReadU64(in, name);
    if (length != declared) {
      throw SchemaError("block '" + name + "' length disagrees with header");
    }
    Vec values(static_cast<Eigen::Index>(length));
    for (uint64_t i = 0; i < length; ++i) {
      values[static_cast<Eigen::Index>(i)] =
          std::bit_cast<double>(ReadU64(in, name));
    }
    ckpt.PutVector(name, values);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(0, "trailing bytes after last checkpoint block");
  }
  return ckpt;
}

}  // namespace dflow
