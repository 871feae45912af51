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

#ifndef DFLOW_COMMON_RNG_H_
#define DFLOW_COMMON_RNG_H_

#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace dflow {

// Mixes (seed, stream) into a fresh 64-bit seed (splitmix64 finalizer).
uint64_t SplitSeed(uint64_t seed, uint64_t stream);

// Seeded random source. Distributions are constructed per draw so the
// generator state alone determines every future sample, which keeps
// serialized state sufficient for exact resume.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Independent stream derived from `seed` by counter.
  static Rng Stream(uint64_t seed, uint64_t stream) {
    return Rng(SplitSeed(seed, stream));
  }

  // Uniform in [lo, hi).
  double Uniform(double lo = 0.0, double hi = 1.0);
  double Normal();
  int UniformInt(int lo, int hi);  // inclusive range
  uint64_t NextU64() { return engine_(); }

  Eigen::MatrixXd NormalMatrix(int rows, int cols);
  Eigen::MatrixXd UniformMatrix(int rows, int cols, double lo, double hi);

  std::string SaveState() const;
  void LoadState(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dflow

#endif  // DFLOW_COMMON_RNG_H_
