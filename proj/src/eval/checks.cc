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

#include "dflow/eval/checks.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dflow/approx/optimizer.h"
#include "dflow/common/errors.h"
#include "dflow/critic/iql.h"
#include "dflow/data/dataset.h"
#include "dflow/data/env.h"
#include "dflow/dfdir/dir.h"
#include "dflow/dfdiv/div.h"
#include "dflow/flow/flow.h"

namespace dflow {
namespace {

constexpr int kProbes = 120;

std::string Fmt(const char* format, double a, double b = 0.0) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), format, a, b);
  return buf;
}

CheckResult FromGrad(const std::string& name, const GradCheckResult& g) {
  CheckResult r;
  r.name = name;
  r.passed = g.failures == 0 && g.probes >= 100;
  r.detail = std::to_string(g.probes) + " probes, " +
             std::to_string(g.failures) + " failures, worst " +
             Fmt("%.2e", g.worst_error);
  return r;
}

CheckResult Expect(const std::string& name, bool ok, std::string detail = "") {
  return {name, ok, std::move(detail)};
}

TransitionBatch PointmassBatch(int n, uint64_t seed) {
  const Dataset data = GenerateDataset(MakeEnvSpec("pointmass"),
                                       BehaviorMixture::DefaultFor("pointmass"),
                                       4, seed);
  Rng rng(seed);
  return SampleBatch(data, n, rng);
}

// Tiny networks keep finite differences away from ReLU kinks.
CriticConfig TinyCritic(uint64_t seed) {
  CriticConfig c;
  c.hidden = {8, 8};
  c.seed = seed;
  c.expectile = 0.7;
  return c;
}

std::vector<CheckResult> GradcheckSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng probe_rng(SplitSeed(seed, 100));
  const TransitionBatch batch = PointmassBatch(6, seed);
  const FlowTimeGrid grid(4);

  {
    const FlowPolicy policy(2, 2, {8, 8}, SplitSeed(seed, 1), 1);
    auto loss = [&](const Vec& p) {
      FlowPolicy q = policy;
      q.mutable_net().set_params(p);
      Rng rng(seed);
      return CfmLoss(q, batch.states, batch.actions, rng).loss;
    };
    Rng rng(seed);
    const LossGrad lg = CfmLoss(policy, batch.states, batch.actions, rng);
    out.push_back(FromGrad("cfm_loss", CheckGradient(loss, policy.net().params(),
                                                     lg.grad, kProbes, probe_rng)));
  }

  for (int variant = 0; variant < 3; ++variant) {
    CriticConfig cc = TinyCritic(SplitSeed(seed, 2));
    cc.twin_q = variant == 1;
    cc.alt_q = variant == 2;
    CriticSet critics(2, 2, cc);
    // Move the target away from the online net so V residuals are generic.
    critics.q_target().mutable_net().set_params(
        critics.q().params() * 0.5 + Vec::Constant(critics.q().param_count(), 0.01));
    const std::string tag =
        variant == 0 ? "" : (variant == 1 ? "[twin]" : "[alt_q]");
    if (variant == 0) {
      auto vloss = [&](const Vec& p) {
        CriticSet c = critics;
        c.v().set_params(p);
        return VLoss(c, batch).loss;
      };
      out.push_back(FromGrad("v_loss", CheckGradient(vloss, critics.v().params(),
                                                     VLoss(critics, batch).grad,
                                                     kProbes, probe_rng)));
    }
    Rng rng(seed);
    const QLossResult q = QLoss(critics, batch, rng);
    auto qloss = [&](const Vec& p) {
      CriticSet c = critics;
      c.q().set_params(p);
      Rng r(seed);
      return QLoss(c, batch, r).loss;
    };
    out.push_back(FromGrad("q_loss" + tag,
                           CheckGradient(qloss, critics.q().params(), q.grad,
                                         kProbes, probe_rng)));
    if (critics.has_twin()) {
      auto q2loss = [&](const Vec& p) {
        CriticSet c = critics;
        c.q2().set_params(p);
        Rng r(seed);
        return QLoss(c, batch, r).loss;
      };
      out.push_back(FromGrad("q_loss[twin head]",
                             CheckGradient(q2loss, critics.q2().params(),
                                           q.twin_grad, kProbes, probe_rng)));
    }
  }

  const FlowPolicy behavior(2, 2, {8}, SplitSeed(seed, 3));
  const FlowPolicy policy(2, 2, {8}, SplitSeed(seed, 4));
  CriticSet critics(2, 2, TinyCritic(SplitSeed(seed, 5)));
  const ActionValueFn q_value = CriticValueFn(critics);

  {
    const DirFlowCritics flow(2, 2, {8, 8}, SplitSeed(seed, 6));
    Rng rng(seed);
    const DirCriticLosses l = DirCriticLoss(flow, policy, q_value, batch, rng);
    auto qf = [&](const Vec& p) {
      DirFlowCritics f = flow;
      f.q_flow().set_params(p);
      Rng r(seed);
      return DirCriticLoss(f, policy, q_value, batch, r).q_loss;
    };
    auto vf = [&](const Vec& p) {
      DirFlowCritics f = flow;
      f.v_flow().set_params(p);
      Rng r(seed);
      return DirCriticLoss(f, policy, q_value, batch, r).v_loss;
    };
    out.push_back(FromGrad("dir_critic_loss[Qf]",
                           CheckGradient(qf, flow.q_flow().params(), l.q_grad,
                                         kProbes, probe_rng)));
    out.push_back(FromGrad("dir_critic_loss[Vf]",
                           CheckGradient(vf, flow.v_flow().params(), l.v_grad,
                                         kProbes, probe_rng)));
    Rng prng(seed);
    const DirPolicyLossResult pl =
        DirPolicyLoss(policy, flow, behavior, 1.0, batch, prng);
    auto ploss = [&](const Vec& p) {
      FlowPolicy q = policy;
      q.mutable_net().set_params(p);
      Rng r(seed);
      return DirPolicyLoss(q, flow, behavior, 1.0, batch, r).loss;
    };
    out.push_back(FromGrad("dir_policy_loss",
                           CheckGradient(ploss, policy.net().params(), pl.grad,
                                         kProbes, probe_rng)));
  }

  for (bool prev : {true, false}) {
    const DivFlowCritic critic(2, 2, {8, 8}, SplitSeed(seed, 7), prev);
    const std::string tag = prev ? "" : "[no_prev_action]";
    Rng rng(seed);
    const DivCriticLossResult l =
        DivCriticLoss(critic, policy, behavior, q_value, batch, grid, rng);
    auto closs = [&](const Vec& p) {
      DivFlowCritic c = critic;
      c.net().set_params(p);
      Rng r(seed);
      return DivCriticLoss(c, policy, behavior, q_value, batch, grid, r).loss;
    };
    out.push_back(FromGrad("div_critic_loss" + tag,
                           CheckGradient(closs, critic.net().params(), l.grad,
                                         kProbes, probe_rng)));
    Rng prng(seed);
    const DivPolicyLossResult pl =
        DivPolicyLoss(policy, critic, behavior, batch, grid, prng);
    auto ploss = [&](const Vec& p) {
      FlowPolicy q = policy;
      q.mutable_net().set_params(p);
      Rng r(seed);
      return DivPolicyLoss(q, critic, behavior, batch, grid, r).loss;
    };
    out.push_back(FromGrad("div_policy_loss" + tag,
                           CheckGradient(ploss, policy.net().params(), pl.grad,
                                         kProbes, probe_rng)));
  }
  return out;
}

std::vector<CheckResult> FlowcoreSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  double start_err = 0.0;
  double end_err = 0.0;
  double vel_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec x0 = rng.NormalMatrix(3, 1).col(0);
    const Vec x1 = rng.NormalMatrix(3, 1).col(0);
    start_err = std::max(start_err, (SamplePath(x0, x1, 0.0).xt - x0).norm());
    end_err = std::max(end_err, (SamplePath(x0, x1, 1.0).xt - x1).norm());
    const double t = rng.Uniform();
    const double h = 1e-6;
    const Vec fd = (SamplePath(x0, x1, std::min(t + h, 1.0)).xt -
                    SamplePath(x0, x1, std::max(t - h, 0.0)).xt) /
                   (std::min(t + h, 1.0) - std::max(t - h, 0.0));
    vel_err = std::max(vel_err, (fd - SamplePath(x0, x1, t).u_cond).norm());
  }
  out.push_back(Expect("path start is noise", start_err == 0.0,
                       Fmt("max error %.2e", start_err)));
  out.push_back(Expect("path end is data", end_err <= 1e-15,
                       Fmt("max error %.2e", end_err)));
  out.push_back(Expect("path derivative is x1 - x0", vel_err <= 1e-6,
                       Fmt("max error %.2e", vel_err)));

  const FlowTimeGrid grid(10);
  out.push_back(Expect("grid reaches t = 1 exactly", grid.TimeAt(10) == 1.0));

  bool scale_ok = true;
  for (int i = 0; i < 100; ++i) {
    const Vec u = rng.NormalMatrix(4, 1).col(0);
    const double c = std::exp(rng.Uniform(-5.0, 5.0));
    const Vec a = NormalizeVelocity(u).direction;
    const Vec b = NormalizeVelocity(c * u).direction;
    scale_ok = scale_ok && (a - b).norm() <= 1e-12 && std::abs(a.norm() - 1) < 1e-12;
  }
  out.push_back(Expect("normalization is scale invariant and unit", scale_ok));
  const NormalizedVelocity z = NormalizeVelocity(Vec::Zero(2));
  out.push_back(Expect("zero velocity is flagged, not an error",
                       z.degenerate && z.direction.norm() == 0.0));

  const FlowPolicy policy(2, 2, {16}, SplitSeed(seed, 1));
  const Vec s = Vec::Constant(2, 0.3);
  Rng r1(seed);
  Rng r2(seed);
  const Generation g1 = GenerateAction(policy, s, grid, r1, true);
  const Generation g2 = GenerateAction(policy, s, grid, r2, true);
  out.push_back(Expect("generation is reproducible", g1.action == g2.action));
  double euler_err = 0.0;
  for (size_t i = 0; i + 1 < g1.path.size(); ++i) {
    euler_err = std::max(euler_err, (g1.path[i + 1].action -
                                     (g1.path[i].action +
                                      grid.dt() * g1.path[i].velocity))
                                        .norm());
  }
  out.push_back(Expect("recorded path follows Euler steps", euler_err <= 1e-14,
                       Fmt("max error %.2e", euler_err)));
  return out;
}

std::vector<CheckResult> CriticSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  bool half_ok = true;
  bool asym_ok = true;
  for (int i = 0; i < 100; ++i) {
    const double y = rng.Uniform(-3.0, 3.0);
    half_ok = half_ok && std::abs(ExpectileLoss(y, 0.5) - 0.5 * y * y) < 1e-12;
    const double tau = rng.Uniform(0.05, 0.95);
    asym_ok = asym_ok && std::abs(ExpectileLoss(y, tau) -
                                  ExpectileLoss(-y, 1.0 - tau)) < 1e-12;
  }
  out.push_back(Expect("expectile at 0.5 is half squared error", half_ok));
  out.push_back(Expect("expectile mirror identity", asym_ok));

  CriticConfig cc = TinyCritic(seed);
  cc.kappa = 1.0;
  CriticSet critics(2, 2, cc);
  critics.q().set_params(critics.q().params() * 2.0);
  critics.UpdateTargets();
  out.push_back(Expect("kappa = 1 target copies the online net",
                       critics.q_target().net().params() == critics.q().params()));

  const TransitionBatch batch = PointmassBatch(16, seed);
  Rng qrng(seed);
  const QLossResult q = QLoss(critics, batch, qrng);
  const RowVec v_next = critics.V(batch.next_states);
  double err = 0.0;
  for (int j = 0; j < batch.size(); ++j) {
    const double target = batch.rewards[j] + cc.discount *
                                                 (1.0 - batch.terminals[j]) *
                                                 v_next[j];
    err = std::max(err, std::abs(target - q.targets[j]));
  }
  out.push_back(Expect("bellman target r + gamma (1 - done) V(s')", err < 1e-12,
                       Fmt("max error %.2e", err)));
  return out;
}

std::vector<CheckResult> DirSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  const DirFlowCritics critics(2, 2, {16, 16}, seed);
  const Mat s = rng.NormalMatrix(2, 64);
  const Mat a = rng.NormalMatrix(2, 64);
  const Mat u = rng.NormalMatrix(2, 64);
  const RowVec t = rng.UniformMatrix(1, 64, 0.0, 1.0).row(0);
  double diff = 0.0;
  for (double c : {0.01, 3.0, 250.0}) {
    diff = std::max(diff, (critics.VFlow(s, a, NormalizeColumns(u), t) -
                           critics.VFlow(s, a, NormalizeColumns(c * u), t))
                              .cwiseAbs()
                              .maxCoeff());
  }
  out.push_back(Expect("Vf ignores velocity magnitude", diff < 1e-12,
                       Fmt("max change %.2e", diff)));

  // Hand-set affine policy u = c - a, which is exactly grad Q for
  // Q(a) = -|a - c|^2 / 2.
  MlpSpec spec = FlowPolicySpec(2, 2, {}, 0);
  Vec params = Vec::Zero(spec.ParameterCount());
  Eigen::Map<Mat> w(params.data(), 2, 5);
  w.block(0, 2, 2, 2) = -Mat::Identity(2, 2);
  params.segment(10, 2) = Vec::Constant(2, 0.5);
  const FlowPolicy follow(Mlp(spec, params));
  const Vec center = Vec::Constant(2, 0.5);
  ActionValueFn quad = [center](const Mat&, const Mat& actions) {
    return RowVec(-0.5 * (actions.colwise() - center).colwise().squaredNorm());
  };
  Rng arng(seed);
  const AlignmentReport rep =
      DirectionAlignmentReport(follow, quad, s, FlowTimeGrid(10), arng);
  out.push_back(Expect("gradient-following policy has cosine 1",
                       std::abs(rep.overall.mean - 1.0) < 1e-3 &&
                           rep.overall.q10 > 1.0 - 1e-3,
                       Fmt("mean %.6f", rep.overall.mean)));

  ActionValueFn flat = [](const Mat&, const Mat& actions) {
    return RowVec(RowVec::Constant(actions.cols(), 2.0));
  };
  Rng frng(seed);
  const AlignmentReport flat_rep =
      DirectionAlignmentReport(follow, flat, s, FlowTimeGrid(10), frng);
  out.push_back(Expect("constant Q points are reported degenerate",
                       flat_rep.degenerate == 64 * 10 &&
                           flat_rep.overall.count == 0));
  return out;
}

std::vector<CheckResult> DivSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  const FlowTimeGrid grid(10);
  const FlowPolicy behavior(2, 2, {16}, SplitSeed(seed, 1));
  const FlowPolicy policy(2, 2, {16}, SplitSeed(seed, 2));
  ActionValueFn q_value = [](const Mat& states, const Mat& actions) {
    RowVec r(actions.cols());
    for (Eigen::Index j = 0; j < actions.cols(); ++j) {
      r[j] = BanditReward(states.col(j), actions.col(j));
    }
    return r;
  };

  FlowRollout empty;
  empty.start = grid.steps();
  empty.terminal_value = 5.0;
  out.push_back(Expect("empty rollout returns the terminal value",
                       McTarget(empty) == 5.0));

  Rng rng(seed);
  const Mat s = rng.UniformMatrix(2, 32, -1.0, 1.0);
  const Mat a = rng.NormalMatrix(2, 32);
  std::vector<int> starts(32);
  for (int& v : starts) v = rng.UniformInt(0, grid.steps());
  const McTargets batched =
      ComputeMcTargets(policy, behavior, q_value, s, a, starts, grid);
  double err = 0.0;
  for (int j = 0; j < 32; ++j) {
    const FlowRollout r =
        RolloutFlow(policy, behavior, q_value, s.col(j), a.col(j), starts[j], grid);
    err = std::max(err, std::abs(McTarget(r) - batched.targets[j]));
  }
  out.push_back(Expect("batched MC targets match single rollouts", err < 1e-10,
                       Fmt("max error %.2e", err)));

  const McTargets same =
      ComputeMcTargets(policy, policy, q_value, s, a, starts, grid);
  bool collapse = true;
  for (int j = 0; j < 32; ++j) {
    const FlowRollout r =
        RolloutFlow(policy, policy, q_value, s.col(j), a.col(j), starts[j], grid);
    collapse = collapse && r.terminal_value == McTarget(r) &&
               std::abs(same.targets[j] - r.terminal_value) < 1e-12;
  }
  out.push_back(Expect("identical policies give zero divergence", collapse));

  // Fit a small critic on the frozen pair, then compare the one-step
  // residual against its fit error on fresh data.
  const Dataset data = GenerateDataset(MakeEnvSpec("bandit"),
                                       BehaviorMixture::DefaultFor("bandit"),
                                       2000, seed);
  DivFlowCritic critic(2, 2, {64, 64}, SplitSeed(seed, 3));
  AdamState adam(critic.net().param_count(), AdamConfig{1e-3});
  Rng train_rng(SplitSeed(seed, 4));
  for (int it = 0; it < 3000; ++it) {
    const TransitionBatch b = SampleBatch(data, 128, train_rng);
    const DivCriticLossResult l =
        DivCriticLoss(critic, policy, behavior, q_value, b, grid, train_rng);
    AdamStep(critic.net(), l.grad, adam);
  }
  Rng eval_rng(SplitSeed(seed, 5));
  const TransitionBatch held = SampleBatch(data, 2000, eval_rng);
  const TelescopingReport tel = TelescopingResidual(
      critic, policy, behavior, q_value, held, grid, eval_rng);
  out.push_back(Expect("telescoping residual within 2x fit error",
                       tel.residual <= 2.0 * tel.fit_error,
                       Fmt("residual %.4f, fit error %.4f", tel.residual,
                           tel.fit_error)));
  return out;
}

std::vector<CheckResult> DatasetSuite(uint64_t seed) {
  std::vector<CheckResult> out;
  for (const char* env : {"bandit", "pointmass"}) {
    const Dataset a = GenerateDataset(MakeEnvSpec(env),
                                      BehaviorMixture::DefaultFor(env), 20, seed);
    const Dataset b = GenerateDataset(MakeEnvSpec(env),
                                      BehaviorMixture::DefaultFor(env), 20, seed);
    out.push_back(Expect(std::string(env) + " generation is reproducible",
                         a.transitions == b.transitions));
    bool chain = true;
    try {
      CheckPrevActionChain(a);
    } catch (const SchemaError&) {
      chain = false;
    }
    out.push_back(Expect(std::string(env) + " prev_action chain holds", chain));
    const std::string path =
        (std::filesystem::temp_directory_path() /
         ("dflow_check_" + std::string(env) + "_" + std::to_string(seed) +
          ".jsonl"))
            .string();
    SaveDataset(a, path);
    const Dataset c = LoadDataset(path);
    std::filesystem::remove(path);
    out.push_back(Expect(std::string(env) + " save/load round trip",
                         c.transitions == a.transitions &&
                             c.manifest.transitions == a.manifest.transitions));
  }
  return out;
}

}  // namespace

bool CheckReport::passed() const {
  return std::all_of(results.begin(), results.end(),
                     [](const CheckResult& r) { return r.passed; });
}

std::string CheckReport::ToText() const {
  std::ostringstream out;
  out << "suite " << suite << "\n";
  for (const CheckResult& r : results) {
    out << (r.passed ? "  PASS " : "  FAIL ") << r.name;
    if (!r.detail.empty()) out << "  (" << r.detail << ")";
    out << "\n";
  }
  out << (passed() ? "suite passed" : "suite FAILED") << "\n";
  return out.str();
}

const std::vector<std::string>& CheckSuites() {
  static const std::vector<std::string> suites = {
      "gradcheck", "flowcore", "critic", "dir-props", "div-props", "dataset"};
  return suites;
}

CheckReport RunCheckSuite(std::string_view suite, uint64_t seed) {
  CheckReport report;
  report.suite = std::string(suite);
  if (suite == "gradcheck") {
    report.results = GradcheckSuite(seed);
  } else if (suite == "flowcore") {
    report.results = FlowcoreSuite(seed);
  } else if (suite == "critic") {
    report.results = CriticSuite(seed);
  } else if (suite == "dir-props") {
    report.results = DirSuite(seed);
  } else if (suite == "div-props") {
    report.results = DivSuite(seed);
  } else if (suite == "dataset") {
    report.results = DatasetSuite(seed);
  } else {
    throw ConfigError("unknown check suite '" + std::string(suite) + "'");
  }
  return report;
}

GradCheckResult CheckGradient(const std::function<double(const Vec&)>& loss,
                              const Vec& params, const Vec& analytic,
                              int probes, Rng& rng, double step, double rel_tol,
                              double abs_floor) {
  if (analytic.size() != params.size()) {
    throw ShapeError("analytic gradient length differs from parameters");
  }
  GradCheckResult result;
  Vec x = params;
  for (int i = 0; i < probes; ++i) {
    const int k = rng.UniformInt(0, static_cast<int>(params.size()) - 1);
    x[k] = params[k] + step;
    const double up = loss(x);
    x[k] = params[k] - step;
    const double down = loss(x);
    x[k] = params[k];
    const double numeric = (up - down) / (2.0 * step);
    const double scale =
        std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
    const double err = std::abs(analytic[k] - numeric) / scale;
    result.worst_error = std::max(result.worst_error, err);
    ++result.probes;
    if (err > rel_tol) ++result.failures;
  }
  return result;
}

}  // namespace dflow
