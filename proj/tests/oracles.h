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

// Reference computations used only by tests. None of these call into the
// library code they check.

#ifndef DFLOW_TESTS_ORACLES_H_
#define DFLOW_TESTS_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dflow::oracle {

// 1-D linear path with x0 ~ N(0, 1), x1 ~ N(mu, var).
struct GaussianCase {
  double mu = 2.0;
  double var = 0.25;
};

// E[x1 - x0 | x_t] by self-normalized importance sampling: draw x1 from its
// prior, recover x0 = (x_t - t x1) / (1 - t) and weight by its N(0, 1)
// density. Valid for t in [0, 1).
inline double McConditionalVelocity(const GaussianCase& g, double xt, double t,
                                    int samples, uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> x1_dist(g.mu, std::sqrt(g.var));
  double num = 0.0;
  double den = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double x1 = x1_dist(engine);
    const double x0 = (xt - t * x1) / (1.0 - t);
    const double w = std::exp(-0.5 * x0 * x0);
    num += w * (x1 - x0);
    den += w;
  }
  return num / den;
}

// Closed form of the same conditional mean from joint Gaussian conditioning:
//   Cov(u, x_t) = t var - (1 - t),  Var(x_t) = (1 - t)^2 + t^2 var.
inline double AnalyticConditionalVelocity(const GaussianCase& g, double xt,
                                          double t) {
  const double cov = t * g.var - (1.0 - t);
  const double var_xt = (1.0 - t) * (1.0 - t) + t * t * g.var;
  return g.mu + cov / var_xt * (xt - t * g.mu);
}

// Bandit reward written out independently of the environment module.
inline double BanditReward(double s0, double s1, double a0, double a1) {
  const double m1x = 0.6 + 0.2 * s0, m1y = 0.6 + 0.2 * s1;
  const double m2x = -0.6 + 0.2 * s0, m2y = -0.6 + 0.2 * s1;
  const double d1 = (a0 - m1x) * (a0 - m1x) + (a1 - m1y) * (a1 - m1y);
  const double d2 = (a0 - m2x) * (a0 - m2x) + (a1 - m2y) * (a1 - m2y);
  return std::max(std::exp(-d1 / 0.08), 0.6 * std::exp(-d2 / 0.08));
}

// Mean bandit reward of a ~ N(0, I) with s ~ U[-1, 1]^2, by plain Monte
// Carlo.
inline double BanditNormalActionReward(int samples, uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<double> s_dist(-1.0, 1.0);
  std::normal_distribution<double> a_dist(0.0, 1.0);
  double sum = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double s0 = s_dist(engine), s1 = s_dist(engine);
    const double a0 = a_dist(engine), a1 = a_dist(engine);
    sum += BanditReward(s0, s1, a0, a1);
  }
  return sum / samples;
}

}  // namespace dflow::oracle

#endif  // DFLOW_TESTS_ORACLES_H_
