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

#ifndef DFLOW_FLOW_FLOW_H_
#define DFLOW_FLOW_FLOW_H_

#include <cstdint>
#include <vector>

#include "dflow/approx/mlp.h"
#include "dflow/common/rng.h"

namespace dflow {

// Uniform discretization of flow time [0, 1] into `steps` Euler steps.
// Grid point tau maps to t = tau * dt.
class FlowTimeGrid {
 public:
  explicit FlowTimeGrid(int steps);

  int steps() const { return steps_; }
  double dt() const { return dt_; }
  double TimeAt(int tau) const;

 private:
  int steps_;
  double dt_;
};

// A point on the linear conditional path between noise x0 and data x1.
struct PathSample {
  Vec x0;
  Vec x1;
  double t = 0.0;
  Vec xt;      // (1 - t) x0 + t x1
  Vec u_cond;  // x1 - x0
};

PathSample SamplePath(const Vec& x0, const Vec& x1, double t);

// Column-wise x_t for batched endpoints; `t` holds one time per column.
Mat InterpolatePath(const Mat& x0, const Mat& x1, const RowVec& t);

Vec EulerStep(const Vec& x, const Vec& u, double dt);

inline constexpr double kVelocityEpsilon = 1e-8;

struct NormalizedVelocity {
  Vec direction;
  bool degenerate = false;
};

// u / |u|. Below kVelocityEpsilon returns the zero vector with the
// degenerate flag set instead of throwing.
NormalizedVelocity NormalizeVelocity(const Vec& u);

// Backpropagates d(loss)/d(direction) through u -> u/|u| for each column.
// Degenerate columns receive a zero gradient.
Mat NormalizeVelocityBackward(const Mat& u, const Mat& direction_grad);

// Flow time fed to networks: t itself, optionally followed by
// sin(2 pi k t), cos(2 pi k t) for k = 1..frequencies.
struct TimeEncoding {
  int frequencies = 0;

  int dim() const { return 1 + 2 * frequencies; }
  Mat Encode(const RowVec& t) const;
};

// Velocity field u(s, a_t, t) over inputs "state", "action", "time".
class FlowPolicy {
 public:
  FlowPolicy(int state_dim, int action_dim, const std::vector<int>& hidden,
             uint64_t seed, int time_frequencies = 0);
  // Wraps an existing network; its inputs must be state/action/time and its
  // output width must equal the action width.
  explicit FlowPolicy(Mlp net);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const TimeEncoding& time_encoding() const { return time_; }
  const Mlp& net() const { return net_; }
  Mlp& mutable_net() { return net_; }

  Vec Velocity(const Vec& state, const Vec& action, double t) const;
  Mat Velocity(const Mat& states, const Mat& actions, const RowVec& times,
               Mlp::Tape* tape = nullptr) const;

  // Given d(loss)/d(velocity), accumulates into *param_grad and writes
  // d(loss)/d(action input) into *action_grad. Either may be null.
  void Backward(const Mlp::Tape& tape, const Mat& upstream, Vec* param_grad,
                Mat* action_grad) const;

 private:
  Mlp net_;
  int state_dim_;
  int action_dim_;
  TimeEncoding time_;
};

MlpSpec FlowPolicySpec(int state_dim, int action_dim,
                       const std::vector<int>& hidden, uint64_t seed,
                       int time_frequencies = 0);

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

// Conditional flow matching on dataset pairs (columns of `states`,
// `actions`). Per column draws t ~ U[0, 1) then x0 ~ N(0, I) and regresses
// u(s, x_t, t) onto x1 - x0. Returns the batch mean of the squared L2 error
// and its exact parameter gradient.
LossGrad CfmLoss(const FlowPolicy& policy, const Mat& states,
                 const Mat& actions, Rng& rng);

struct GenerationStep {
  Vec action;    // a_tau
  Vec velocity;  // u(s, a_tau, tau * dt)
};

struct Generation {
  Vec action;  // a_1
  std::vector<GenerationStep> path;
};

// Euler integration from a_0 ~ N(0, I) over every grid step.
// Throws GenerationDivergenceError naming the first non-finite step.
Generation GenerateAction(const FlowPolicy& policy, const Vec& state,
                          const FlowTimeGrid& grid, Rng& rng,
                          bool record_path = false);

// Batched variant: one column per state, noise drawn as a single
// (action_dim x batch) matrix.
Mat GenerateActions(const FlowPolicy& policy, const Mat& states,
                    const FlowTimeGrid& grid, Rng& rng);

// Every intermediate action a_0..a_T and velocity u_0..u_{T-1} for a batch
// of states; a_{tau+1} = a_tau + dt * u_tau column-wise.
struct BatchPath {
  std::vector<Mat> actions;
  std::vector<Mat> velocities;
};

BatchPath GeneratePaths(const FlowPolicy& policy, const Mat& states,
                        const FlowTimeGrid& grid, Rng& rng);

// Integrates columns of `actions`, currently at grid index `start`, to t = 1.
Mat IntegrateFrom(const FlowPolicy& policy, const Mat& states, Mat actions,
                  int start, const FlowTimeGrid& grid);

}  // namespace dflow

#endif  // DFLOW_FLOW_FLOW_H_
