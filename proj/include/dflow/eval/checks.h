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

// Runtime property suites behind `dflow check`.

#ifndef DFLOW_EVAL_CHECKS_H_
#define DFLOW_EVAL_CHECKS_H_

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"

namespace dflow {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckReport {
  std::string suite;
  std::vector<CheckResult> results;

  bool passed() const;
  std::string ToText() const;
};

// Suite ids accepted by RunCheckSuite.
const std::vector<std::string>& CheckSuites();

// Throws ConfigError for an unknown suite id.
CheckReport RunCheckSuite(std::string_view suite, uint64_t seed);

// Central-difference gradient check of a scalar loss over `probes` randomly
// chosen coordinates of `params`. A probe passes when
//   |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|, abs_floor).
struct GradCheckResult {
  int probes = 0;
  int failures = 0;
  double worst_error = 0.0;  // largest |analytic - numeric| / scale
};

GradCheckResult CheckGradient(const std::function<double(const Vec&)>& loss,
                              const Vec& params, const Vec& analytic,
                              int probes, Rng& rng, double step = 1e-5,
                              double rel_tol = 1e-3, double abs_floor = 1e-6);

}  // namespace dflow

#endif  // DFLOW_EVAL_CHECKS_H_
