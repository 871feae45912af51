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

#ifndef DFLOW_APPROX_MLP_H_
#define DFLOW_APPROX_MLP_H_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// Hidden-layer nonlinearity. The output layer is always affine.
enum class Activation { kIdentity, kRelu, kSilu, kTanh };

std::string_view ActivationName(Activation activation);
Activation ParseActivation(std::string_view name);

// A named slice of the network input, e.g. {"state", 2}. Zero-width
// segments are allowed so ablations can drop an input without changing
// call sites.
struct InputSegment {
  std::string name;
  int dim = 0;

  bool operator==(const InputSegment&) const = default;
};

struct MlpSpec {
  std::vector<InputSegment> inputs;
  std::vector<int> hidden;
  int output_dim = 1;
  Activation activation = Activation::kRelu;
  uint64_t seed = 0;

  int input_dim() const;
  // input, hidden..., output
  std::vector<int> LayerWidths() const;
  // Sum over layers of (fan_in + 1) * fan_out.
  int64_t ParameterCount() const;

  bool operator==(const MlpSpec&) const = default;
};

// Batched inputs keyed by segment name; every matrix is (dim x batch).
using NamedInputs = std::map<std::string, Mat, std::less<>>;

// Fully connected network over a flat parameter vector. Parameters are laid
// out layer by layer as the column-major weight matrix (fan_out x fan_in)
// followed by the bias.
class Mlp {
 public:
  // Activations recorded by a forward pass, consumed by backward.
  struct Tape {
    std::vector<Mat> layer_inputs;  // [0] is the stacked network input
    std::vector<Mat> pre_activations;
  };

  struct Gradients {
    Vec params;
    NamedInputs inputs;
  };

  // Fan-in scaled uniform initialization, deterministic in spec.seed.
  explicit Mlp(MlpSpec spec);
  Mlp(MlpSpec spec, Vec params);

  const MlpSpec& spec() const { return spec_; }
  const Vec& params() const { return params_; }
  void set_params(const Vec& params);
  int input_dim() const { return spec_.input_dim(); }
  int output_dim() const { return spec_.output_dim; }
  int64_t param_count() const { return params_.size(); }

  // Stacks named inputs in declared order. Throws ShapeError on a missing
  // segment, an unknown name, a row mismatch or inconsistent batch sizes.
  Mat Stack(const NamedInputs& inputs) const;
  NamedInputs Split(const Mat& stacked) const;

  Mat Forward(const NamedInputs& inputs) const;
  Mat Forward(const Mat& stacked, Tape* tape = nullptr) const;

  // Gradients of sum_j <upstream_j, output_j> over the batch columns.
  Gradients Backward(const NamedInputs& inputs, const Mat& upstream) const;

  // Adds the parameter gradient into *param_grad (must be sized) and writes
  // the stacked input gradient into *input_grad. Either may be null.
  void Backward(const Tape& tape, const Mat& upstream, Vec* param_grad,
                Mat* input_grad) const;

 private:
  struct LayerView {
    int64_t offset;
    int fan_in;
    int fan_out;
  };

  Eigen::Map<const Mat> Weights(const LayerView& layer) const;
  Eigen::Map<const Vec> Bias(const LayerView& layer) const;

  MlpSpec spec_;
  std::vector<LayerView> layers_;
  Vec params_;
};

}  // namespace dflow

#endif  // DFLOW_APPROX_MLP_H_
