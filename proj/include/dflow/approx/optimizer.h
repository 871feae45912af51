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

#ifndef DFLOW_APPROX_OPTIMIZER_H_
#define DFLOW_APPROX_OPTIMIZER_H_

#include <cstdint>

#include "dflow/approx/mlp.h"

namespace dflow {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates for one parameter vector.
struct AdamState {
  AdamState() = default;
  AdamState(int64_t size, AdamConfig config);

  AdamConfig config;
  Vec first_moment;
  Vec second_moment;
  int64_t step = 0;
};

// One bias-corrected adaptive-moment update of `net` in place.
// Throws DivergenceError if `grad` has a non-finite entry; the network and
// state are left untouched in that case.
void AdamStep(Mlp& net, const Vec& grad, AdamState& state);

// Slowly tracking copy of an online network:
//   target <- (1 - kappa) * target + kappa * online.
class TargetNetwork {
 public:
  // kappa must lie in (0, 1]; the target starts as an exact copy.
  TargetNetwork(const Mlp& online, double kappa);

  void Update(const Mlp& online);

  const Mlp& net() const { return net_; }
  Mlp& mutable_net() { return net_; }
  double kappa() const { return kappa_; }

 private:
  Mlp net_;
  double kappa_;
};

}  // namespace dflow

#endif  // DFLOW_APPROX_OPTIMIZER_H_
