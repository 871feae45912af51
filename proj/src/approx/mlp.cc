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

#include "dflow/approx/mlp.h"

#include <cmath>
#include <random>
#include <utility>

#include "dflow/common/errors.h"

namespace dflow {
namespace {

Mat Activate(Activation activation, const Mat& z) {
  switch (activation) {
    case Activation::kIdentity:
      return z;
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kSilu:
      return z.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
    case Activation::kTanh:
      return z.array().tanh().matrix();
  }
  return z;
}

// Elementwise derivative of the activation at pre-activation z.
Mat ActivationSlope(Activation activation, const Mat& z) {
  switch (activation) {
    case Activation::kIdentity:
      return Mat::Ones(z.rows(), z.cols());
    case Activation::kRelu:
      return z.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::kSilu:
      return z.unaryExpr([](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
    case Activation::kTanh:
      return z.unaryExpr([](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
  }
  return Mat::Ones(z.rows(), z.cols());
}

}  // namespace

std::string_view ActivationName(Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kSilu:
      return "silu";
    case Activation::kTanh:
      return "tanh";
  }
  return "identity";
}

Activation ParseActivation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

int MlpSpec::input_dim() const {
  int total = 0;
  for (const auto& segment : inputs) total += segment.dim;
  return total;
}

std::vector<int> MlpSpec::LayerWidths() const {
  std::vector<int> widths;
  widths.reserve(hidden.size() + 2);
  widths.push_back(input_dim());
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(output_dim);
  return widths;
}

int64_t MlpSpec::ParameterCount() const {
  const auto widths = LayerWidths();
  int64_t count = 0;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    count += static_cast<int64_t>(widths[i] + 1) * widths[i + 1];
  }
  return count;
}

Mlp::Mlp(MlpSpec spec) : Mlp(spec, Vec()) {
  std::mt19937_64 engine(spec_.seed);
  for (const auto& layer : layers_) {
    const double bound = 1.0 / std::sqrt(std::max(layer.fan_in, 1));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const int64_t n = static_cast<int64_t>(layer.fan_in + 1) * layer.fan_out;
    for (int64_t i = 0; i < n; ++i) params_[layer.offset + i] = dist(engine);
  }
}

Mlp::Mlp(MlpSpec spec, Vec params) : spec_(std::move(spec)) {
  for (const auto& segment : spec_.inputs) {
    if (segment.dim < 0) throw ConfigError("negative input segment width");
  }
  for (int width : spec_.hidden) {
    if (width <= 0) throw ConfigError("hidden widths must be positive");
  }
  if (spec_.output_dim <= 0) throw ConfigError("output width must be positive");

  const auto widths = spec_.LayerWidths();
  int64_t offset = 0;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.push_back({offset, widths[i], widths[i + 1]});
    offset += static_cast<int64_t>(widths[i] + 1) * widths[i + 1];
  }
  if (params.size() == 0) {
    params_ = Vec::Zero(offset);
  } else {
    if (params.size() != offset) {
      throw ShapeError("parameter vector has length " +
                       std::to_string(params.size()) + ", expected " +
                       std::to_string(offset));
    }
    params_ = std::move(params);
  }
}

void Mlp::set_params(const Vec& params) {
  if (params.size() != params_.size()) {
    throw ShapeError("parameter length mismatch in set_params");
  }
  params_ = params;
}

Eigen::Map<const Mat> Mlp::Weights(const LayerView& layer) const {
  return Eigen::Map<const Mat>(params_.data() + layer.offset, layer.fan_out,
                               layer.fan_in);
}

Eigen::Map<const Vec> Mlp::Bias(const LayerView& layer) const {
  return Eigen::Map<const Vec>(
      params_.data() + layer.offset +
          static_cast<int64_t>(layer.fan_in) * layer.fan_out,
      layer.fan_out);
}

Mat Mlp::Stack(const NamedInputs& inputs) const {
  if (inputs.size() != spec_.inputs.size()) {
    for (const auto& [name, value] : inputs) {
      bool known = false;
      for (const auto& segment : spec_.inputs) known |= segment.name == name;
      if (!known) throw ShapeError("unknown input segment '" + name + "'");
    }
  }
  long batch = -1;
  for (const auto& segment : spec_.inputs) {
    auto it = inputs.find(segment.name);
    if (it == inputs.end()) {
      throw ShapeError("missing input segment '" + segment.name + "'");
    }
    if (it->second.rows() != segment.dim) {
      throw ShapeError("input segment '" + segment.name + "' has " +
                       std::to_string(it->second.rows()) + " rows, expected " +
                       std::to_string(segment.dim));
    }
    if (batch < 0) batch = it->second.cols();
    if (it->second.cols() != batch) {
      throw ShapeError("inconsistent batch size across input segments");
    }
  }
  Mat stacked(input_dim(), std::max<long>(batch, 0));
  int row = 0;
  for (const auto& segment : spec_.inputs) {
    if (segment.dim > 0) {
      stacked.middleRows(row, segment.dim) = inputs.find(segment.name)->second;
    }
    row += segment.dim;
  }
  return stacked;
}

NamedInputs Mlp::Split(const Mat& stacked) const {
  if (stacked.rows() != input_dim()) {
    throw ShapeError("stacked input row count mismatch");
  }
  NamedInputs out;
  int row = 0;
  for (const auto& segment : spec_.inputs) {
    out[segment.name] = stacked.middleRows(row, segment.dim);
    row += segment.dim;
  }
  return out;
}

Mat Mlp::Forward(const NamedInputs& inputs) const {
  return Forward(Stack(inputs));
}

Mat Mlp::Forward(const Mat& stacked, Tape* tape) const {
  if (stacked.rows() != input_dim()) {
    throw ShapeError("network expects " + std::to_string(input_dim()) +
                     " input rows, got " + std::to_string(stacked.rows()));
  }
  if (tape != nullptr) {
    tape->layer_inputs.clear();
    tape->pre_activations.clear();
    tape->layer_inputs.push_back(stacked);
  }
  Mat a = stacked;
  for (size_t l = 0; l < layers_.size(); ++l) {
    Mat z = Weights(layers_[l]) * a;
    z.colwise() += Bias(layers_[l]);
    if (l + 1 == layers_.size()) return z;
    a = Activate(spec_.activation, z);
    if (tape != nullptr) {
      tape->pre_activations.push_back(std::move(z));
      tape->layer_inputs.push_back(a);
    }
  }
  return a;
}

Mlp::Gradients Mlp::Backward(const NamedInputs& inputs,
                             const Mat& upstream) const {
  Tape tape;
  Forward(Stack(inputs), &tape);
  Gradients grads;
  grads.params = Vec::Zero(params_.size());
  Mat input_grad;
  Backward(tape, upstream, &grads.params, &input_grad);
  grads.inputs = Split(input_grad);
  return grads;
}

void Mlp::Backward(const Tape& tape, const Mat& upstream, Vec* param_grad,
                   Mat* input_grad) const {
  if (tape.layer_inputs.size() != layers_.size()) {
    throw ShapeError("tape does not belong to this network");
  }
  const long batch = tape.layer_inputs[0].cols();
  if (upstream.rows() != output_dim() || upstream.cols() != batch) {
    throw ShapeError("upstream gradient must be " +
                     std::to_string(output_dim()) + " x " +
                     std::to_string(batch));
  }
  if (param_grad != nullptr && param_grad->size() != params_.size()) {
    throw ShapeError("parameter gradient buffer has wrong length");
  }
  Mat delta = upstream;
  for (size_t l = layers_.size(); l-- > 0;) {
    const LayerView& layer = layers_[l];
    if (param_grad != nullptr) {
      Eigen::Map<Mat> gw(param_grad->data() + layer.offset, layer.fan_out,
                         layer.fan_in);
      gw.noalias() += delta * tape.layer_inputs[l].transpose();
      Eigen::Map<Vec> gb(param_grad->data() + layer.offset +
                             static_cast<int64_t>(layer.fan_in) * layer.fan_out,
                         layer.fan_out);
      gb += delta.rowwise().sum();
    }
    if (l == 0 && input_grad == nullptr) break;
    Mat back = Weights(layer).transpose() * delta;
    if (l > 0) {
      delta = back.cwiseProduct(
          ActivationSlope(spec_.activation, tape.pre_activations[l - 1]));
    } else {
      *input_grad = std::move(back);
    }
  }
}

}  // namespace dflow
