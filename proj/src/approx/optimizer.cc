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

#include "dflow/approx/optimizer.h"

#include <cmath>
#include <string>

#include "dflow/common/errors.h"

namespace dflow {

AdamState::AdamState(int64_t size, AdamConfig config)
    : config(config),
      first_moment(Vec::Zero(size)),
      second_moment(Vec::Zero(size)) {
  if (!(config.learning_rate >= 0.0)) {
    throw ConfigError("learning rate must be non-negative");
  }
  if (!(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 &&
        config.beta2 < 1.0)) {
    throw ConfigError("moment decay rates must lie in (0, 1)");
  }
}

void AdamStep(Mlp& net, const Vec& grad, AdamState& state) {
  if (grad.size() != net.param_count() ||
      state.first_moment.size() != net.param_count()) {
    throw ShapeError("gradient length " + std::to_string(grad.size()) +
                     " does not match parameter length " +
                     std::to_string(net.param_count()));
  }
  if (!grad.allFinite()) {
    throw DivergenceError("non-finite gradient entry");
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grad;
  state.second_moment = c.beta2 * state.second_moment +
                        (1.0 - c.beta2) * grad.cwiseAbs2();
  const double correction1 = 1.0 - std::pow(c.beta1, state.step);
  const double correction2 = 1.0 - std::pow(c.beta2, state.step);
  const double step_size = c.learning_rate / correction1;
  Vec denom = (state.second_moment / correction2).cwiseSqrt().array() +
              c.epsilon;
  net.set_params(net.params() -
                 step_size * state.first_moment.cwiseQuotient(denom));
}

TargetNetwork::TargetNetwork(const Mlp& online, double kappa)
    : net_(online), kappa_(kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) {
    throw ConfigError("target tracking coefficient must lie in (0, 1], got " +
                      std::to_string(kappa));
  }
}

void TargetNetwork::Update(const Mlp& online) {
  if (online.param_count() != net_.param_count()) {
    throw ShapeError("target and online parameter lengths differ");
  }
  if (kappa_ == 1.0) {
    net_.set_params(online.params());
    return;
  }
  net_.set_params((1.0 - kappa_) * net_.params() + kappa_ * online.params());
}

}  // namespace dflow
