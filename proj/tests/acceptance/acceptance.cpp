// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The bnnkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any selected criterion fails.
//
//   acceptance [--only A7,A9] [--out-dir DIR] [--known-fail A13]
//
// A criterion listed in --known-fail still prints FAIL but does not change the
// exit status; if it passes, that is reported and does count as a failure so
// the list gets pruned.
//
// Trained models and datasets are shared between criteria and built on first
// use. Bench CSVs (power, time, BER) and the trained models are written to
// the output directory.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bnnkit/bench.hpp"
#include "bnnkit/bnn.hpp"
#include "bnnkit/channel.hpp"
#include "bnnkit/compress.hpp"
#include "bnnkit/errors.hpp"
#include "bnnkit/nn.hpp"
#include "bnnkit/solvers.hpp"
#include "../oracles.hpp"

using namespace bnnkit;
using channel::ChannelSample;
using channel::Dataset;
using channel::ProblemTag;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[2048];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Everything printed also goes to <out-dir>/acceptance_report.txt.
std::FILE* g_report = nullptr;

void emit(const std::string& line) {
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
  if (g_report) {
    std::fprintf(g_report, "%s\n", line.c_str());
    std::fflush(g_report);
  }
}

void note(const std::string& s) { emit("  .. " + s); }

nn::TrainConfig schedule(int epochs, double lr, std::uint64_t seed = 1) {
  nn::TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 64;
  c.learning_rate = lr;
  c.lr_decay = std::pow(0.05, 1.0 / std::max(epochs, 1));
  c.seed = seed;
  return c;
}

ChannelSample random_instance(int N, int K, std::mt19937_64& rng, double dbm_lo = 0.0,
                              double dbm_hi = 30.0) {
  std::uniform_real_distribution<double> dbm(dbm_lo, dbm_hi);
  return channel::generate_channel(N, K, {}, 1e-13, channel::dbm_to_watts(dbm(rng)), rng());
}

// ---------------------------------------------------------------- artifacts

struct Artifacts {
  std::string out_dir;

  // power-min, N=8 K=7, 5 dB targets
  std::optional<Dataset> pm_train, pm_test;
  std::shared_ptr<bnn::Pipeline> pm_model;
  std::optional<std::vector<bench::BenchRecord>> pm_bench;

  // balance, N=K=4
  std::optional<Dataset> bal_train, bal_test;
  std::shared_ptr<bnn::Pipeline> bal_model;

  static constexpr double kBalanceDbmMin = -10.0, kBalanceDbmMax = 20.0;

  const Dataset& power_train() {
    if (!pm_train) {
      const auto t0 = Clock::now();
      channel::DatasetConfig c;
      c.problem = ProblemTag::kPowerMin;
      c.sizes = {{8, 7}};
      c.count = 50000;
      c.seed = 7001;
      pm_train = channel::build_dataset(c);
      c.count = 5000;
      c.seed = 7002;
      pm_test = channel::build_dataset(c);
      note(fmt("power-min 8x7 datasets (50000 + 5000) in %.1f s", since(t0)));
    }
    return *pm_train;
  }
  const Dataset& power_test() {
    power_train();
    return *pm_test;
  }

  std::shared_ptr<bnn::Pipeline> power_model() {
    if (!pm_model) {
      const Dataset& tr = power_train();
      const auto t0 = Clock::now();
      pm_model = std::make_shared<bnn::Pipeline>(bnn::make_pipeline(
          ProblemTag::kPowerMin, 8, 7, nn::default_architecture(8, 7, 2, 64), 11));
      const auto h = bnn::train_supervised(*pm_model, tr, schedule(20, 2e-3, 11));
      note(fmt("power-min model trained in %.1f s, final loss %.4g", since(t0), h.loss.back()));
      bnn::save_pipeline(*pm_model, out_dir + "/power_min_8x7.bnn");
    }
    return pm_model;
  }

  const std::vector<bench::BenchRecord>& power_bench() {
    if (!pm_bench) {
      auto model = power_model();
      const auto t0 = Clock::now();
      pm_bench = bench::bench_power(
          power_test(),
          {bench::optimal_power_method(1e-4), bench::zf_power_method(),
           bench::bnn_method(model)},
          7002);
      note(fmt("power bench over %zu instances in %.1f s", power_test().size(), since(t0)));
      bench::write_csv(out_dir + "/power.csv", *pm_bench);
      bench::write_csv(out_dir + "/time.csv", bench::timing_rows(*pm_bench, 7002));
    }
    return *pm_bench;
  }

  std::shared_ptr<bnn::Pipeline> balance_model() {
    if (!bal_model) {
      auto t0 = Clock::now();
      channel::DatasetConfig c;
      c.problem = ProblemTag::kSinrBalance;
      c.sizes = {{4, 4}};
      c.power_budget_dbm_min = kBalanceDbmMin;
      c.power_budget_dbm_max = kBalanceDbmMax;
      c.count = 50000;
      c.seed = 8001;
      bal_train = channel::build_dataset(c);
      c.count = 5000;
      c.seed = 8002;
      bal_test = channel::build_dataset(c);
      c.count = 1000;
      c.seed = 8003;
      const Dataset val = channel::build_dataset(c);
      note(fmt("balance 4x4 datasets in %.1f s", since(t0)));
      t0 = Clock::now();
      bal_model = std::make_shared<bnn::Pipeline>(
          bnn::make_pipeline(ProblemTag::kSinrBalance, 4, 4, nn::default_architecture(4, 4), 21));
      bnn::HybridConfig hc;
      hc.supervised = schedule(30, 2e-3, 21);
      hc.unsupervised = schedule(5, 5e-4, 22);
      hc.unsupervised.lr_decay = std::pow(0.1, 1.0 / 5);
      const auto r = bnn::train_hybrid(*bal_model, *bal_train, val, hc);
      note(fmt("balance model trained in %.1f s, validation min-SINR %.4g -> %.4g (stage 2 %s)",
               since(t0), r.objective_supervised, r.objective_hybrid,
               r.kept_stage2 ? "kept" : "dropped"));
      bnn::save_pipeline(*bal_model, out_dir + "/balance_4x4.bnn");
    }
    return bal_model;
  }
  const Dataset& balance_test() {
    balance_model();
    return *bal_test;
  }
};

// ---------------------------------------------------------------- A1..A6

Verdict a1_duality(Artifacts&) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const int Ns[] = {2, 4, 8};
  double worst_c = 0.0, worst_p = 0.0;
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const int N = Ns[i % 3];
    const int K = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(N));
    const auto s = random_instance(N, K, rng);
    const auto r = solvers::sinr_balance_solve(s, 1e-12, 10000);
    const double dl = solvers::downlink_sinr(s.H, r.W, s.noise_power).minCoeff();
    const double ec = std::abs(r.C - dl) / r.C;
    const double ep = std::abs(r.q.sum() - r.p.sum()) / s.power_budget;
    worst_c = std::max(worst_c, ec);
    worst_p = std::max(worst_p, ep);
    if (ec > 1e-8 || ep > 1e-8) ++bad;
  }
  const double t = since(t0);
  return {bad == 0 && t < 60.0,
          fmt("1000 instances, worst |C-minSINR|/C %.2e, worst |sum q - sum p|/P %.2e, "
              "%d violations, %.2f s",
              worst_c, worst_p, bad, t)};
}

Verdict a2_oracle(Artifacts&) {
  double worst_bal = 0.0, worst_pm = 0.0;
  int bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = channel::generate_channel(2, 2, {}, 1e-13, 1e-3, 2000 + trial);
    const double P = s.power_budget, s2 = s.noise_power;
    const double best = oracle::search_directions(
        2, 1000000, 2100 + trial, [&](const CVector& w1, const CVector& w2) {
          return oracle::two_user_balanced_closed(oracle::two_user(s.H, w1, w2), P, s2);
        });
    const double C = solvers::sinr_balance_solve(s, 1e-10).C;
    const double gap = std::abs(C - best) / best;
    worst_bal = std::max(worst_bal, gap);
    if (gap > 0.01) ++bad;
  }
  int checked = 0;
  for (int trial = 0; checked < 20; ++trial) {
    auto s = channel::generate_channel(2, 2, {}, 1e-13, 1.0, 2200 + trial);
    s.sinr_targets = RVector::Constant(2, channel::db_to_linear(5.0));
    solvers::PowerMinResult r;
    try {
      r = solvers::power_min_solve(s, 1e-12);
    } catch (const InfeasibleError&) {
      continue;
    }
    const double t = (*s.sinr_targets)[0], s2 = s.noise_power;
    const double best = -oracle::search_directions(
        2, 1000000, 2300 + trial, [&](const CVector& w1, const CVector& w2) {
          return -oracle::two_user_min_power(oracle::two_user(s.H, w1, w2), t, t, s2);
        });
    const double gap = std::abs(r.total_power - best) / best;
    worst_pm = std::max(worst_pm, gap);
    if (gap > 0.01) ++bad;
    ++checked;
  }
  return {bad == 0, fmt("N=K=2, 1e6 candidates: worst balance gap %.2e, worst power gap %.2e "
                        "over 20 + 20 instances",
                        worst_bal, worst_pm)};
}

Verdict a3_qos(Artifacts&) {
  std::mt19937_64 rng(301);
  double worst = 0.0;
  int bad = 0, solved = 0, skipped = 0;
  while (solved < 1000) {
    const int N = 2 + static_cast<int>(rng() % 7);
    const int K = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(N));
    auto s = random_instance(N, K, rng);
    s.sinr_targets = RVector::Constant(K, channel::db_to_linear(5.0));
    solvers::PowerMinResult r;
    try {
      r = solvers::power_min_solve(s, 1e-10);
    } catch (const InfeasibleError&) {
      ++skipped;
      continue;
    }
    ++solved;
    const RVector g = solvers::downlink_sinr(s.H, r.W, s.noise_power);
    for (int k = 0; k < K; ++k) worst = std::max(worst, rel(g[k], (*s.sinr_targets)[k]));
    const double zf = solvers::zf_beamformer(s, solvers::ZfMode::kTargets).squaredNorm();
    if (zf < r.total_power * (1.0 - 1e-9)) ++bad;
  }
  return {worst <= 1e-8 && bad == 0,
          fmt("1000 instances (%d infeasible draws skipped): worst target error %.2e, "
              "ZF below optimal on %d",
              skipped, worst, bad)};
}

Verdict a4_wmmse(Artifacts&) {
  std::mt19937_64 rng(401);
  int drops = 0;
  double worst_drop = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int N = 2 + static_cast<int>(rng() % 7);
    const int K = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(N));
    const auto s = random_instance(N, K, rng, -10.0, 20.0);
    const auto r = solvers::wmmse_sum_rate(s, 1e-10);
    for (std::size_t t = 1; t < r.trace.size(); ++t) {
      const double d = (r.trace[t - 1] - r.trace[t]) / std::max(std::abs(r.trace[t - 1]), 1.0);
      worst_drop = std::max(worst_drop, d);
      if (d > 1e-9) ++drops;
    }
  }
  double worst_k1 = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto s = random_instance(1 + i % 8, 1, rng);
    const double cap = std::log2(1.0 + s.power_budget * s.H.squaredNorm() / s.noise_power);
    worst_k1 = std::max(worst_k1, rel(solvers::wmmse_sum_rate(s, 1e-12).sum_rate, cap));
  }
  return {drops == 0 && worst_k1 <= 1e-10,
          fmt("100 traces, %d decreases beyond slack (largest %.1e); K=1 worst error %.1e", drops,
              worst_drop, worst_k1)};
}

double grad_check(const nn::ModelSpec& spec, Eigen::Index batch, std::uint64_t seed) {
  nn::Model m = nn::init_model(spec, seed);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (nn::Param* p : m.params())
    if (!p->prunable)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
  std::normal_distribution<double> nd;
  RMatrix X(spec.input.size(), batch), Y(m.output_dim(), batch);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = nd(rng);
  return nn::gradient_check(m, X, Y, nn::LossKind::kMse, 1e-6).max_rel_error;
}

Verdict a5_gradients(Artifacts&) {
  using nn::LayerSpec;
  using nn::Shape;
  std::vector<std::pair<std::string, nn::ModelSpec>> cases;
  const Shape planes = Shape::planes(2, 4, 3);
  cases.push_back({"conv2d", {planes, {LayerSpec::conv(3, 3, 3)}}});
  cases.push_back({"conv2d-even", {planes, {LayerSpec::conv(2, 2, 4)}}});
  cases.push_back({"batchnorm-planes", {planes, {LayerSpec::batch_norm()}}});
  cases.push_back({"batchnorm-vector", {Shape::vector(5), {LayerSpec::batch_norm()}}});
  cases.push_back({"relu", {Shape::vector(6), {LayerSpec::act(nn::ActivationKind::kRelu)}}});
  cases.push_back(
      {"softplus", {Shape::vector(6), {LayerSpec::act(nn::ActivationKind::kSoftplus)}}});
  cases.push_back({"abs", {Shape::vector(6), {LayerSpec::act(nn::ActivationKind::kAbs)}}});
  cases.push_back({"flatten", {planes, {LayerSpec::flatten(), LayerSpec::dense(3)}}});
  cases.push_back({"dense", {Shape::vector(5), {LayerSpec::dense(4)}}});
  cases.push_back({"dense-to-planes",
                   {Shape::vector(5), {LayerSpec::dense_to(Shape::planes(2, 3, 2)),
                                       LayerSpec::conv(2, 3, 3)}}});
  cases.push_back({"default-4x4", nn::default_architecture(4, 4, 4, 16)});
  cases.push_back({"default-8x7", nn::default_architecture(8, 7, 2, 64)});
  double worst = 0.0;
  std::string worst_name, failed;
  std::uint64_t seed = 500;
  for (const auto& [name, spec] : cases) {
    const double e = grad_check(spec, 3, seed++);
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
    if (!(e < 1e-5)) failed += " " + name;
  }
  return {failed.empty(), fmt("%zu models, worst relative error %.2e (%s)%s%s", cases.size(), worst,
                              worst_name.c_str(), failed.empty() ? "" : "; failed:",
                              failed.c_str())};
}

Verdict a6_sp_lossless(Artifacts&) {
  std::mt19937_64 rng(601);
  double worst[3] = {0, 0, 0};
  int bad = 0;
  auto size = [&] {
    const int N = 2 + static_cast<int>(rng() % 7);
    return std::pair{N, 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(N))};
  };
  for (int i = 0; i < 1000; ++i) {
    const auto [N, K] = size();
    const auto s = random_instance(N, K, rng);
    const auto r = solvers::sinr_balance_solve(s, 1e-12, 10000);
    const ProblemTag tag = ProblemTag::kSinrBalance;
    const auto c = bnn::sp_module(tag, s, bnn::feature_from_key(tag, s, r.q));
    const double e = c.metrics.feasible ? rel(c.metrics.min_sinr, r.C) : INFINITY;
    worst[0] = std::max(worst[0], e);
    if (e > 1e-8) ++bad;
  }
  for (int n = 0; n < 1000;) {
    const auto [N, K] = size();
    auto s = random_instance(N, K, rng);
    s.sinr_targets = RVector::Constant(K, channel::db_to_linear(5.0));
    solvers::PowerMinResult r;
    try {
      r = solvers::power_min_solve(s, 1e-12, 100000);
    } catch (const InfeasibleError&) {
      continue;
    }
    ++n;
    const ProblemTag tag = ProblemTag::kPowerMin;
    const auto c = bnn::sp_module(tag, s, bnn::feature_from_key(tag, s, r.q));
    const double e = c.metrics.feasible ? rel(c.metrics.total_power, r.total_power) : INFINITY;
    worst[1] = std::max(worst[1], e);
    if (e > 1e-8) ++bad;
  }
  for (int i = 0; i < 1000; ++i) {
    const auto [N, K] = size();
    const auto s = random_instance(N, K, rng, 0.0, 10.0);
    const auto w = solvers::wmmse_sum_rate(s, 1e-12, 100000);
    const RVector lam = w.virtual_powers * (s.power_budget / w.virtual_powers.sum());
    const ProblemTag tag = ProblemTag::kSumRate;
    const auto c = bnn::sp_module(tag, s, bnn::feature_from_key(tag, s, lam));
    const double e = c.metrics.feasible ? rel(c.metrics.sum_rate, w.sum_rate) : INFINITY;
    worst[2] = std::max(worst[2], e);
    if (e > 1e-8) ++bad;
  }
  return {bad == 0, fmt("1000 instances per problem: worst relative error balance %.1e, "
                        "power-min %.1e, sum-rate %.1e",
                        worst[0], worst[1], worst[2])};
}

// ---------------------------------------------------------------- A7..A14

struct PowerAverages {
  double opt = 0, zf = 0, bnn = 0;
  std::size_t n = 0, bnn_infeasible = 0, total = 0;
};

PowerAverages power_averages(const std::vector<bench::BenchRecord>& rs) {
  const auto opt = bench::filter(rs, "optimal@0.0001"), zf = bench::filter(rs, "zf"),
             bnn = bench::filter(rs, "bnn");
  PowerAverages a;
  a.total = bnn.size();
  for (std::size_t i = 0; i < bnn.size(); ++i) {
    if (!bnn[i].feasible) ++a.bnn_infeasible;
    if (!bnn[i].feasible || !opt[i].feasible || !zf[i].feasible) continue;
    a.opt += opt[i].metric_value;
    a.zf += zf[i].metric_value;
    a.bnn += bnn[i].metric_value;
    ++a.n;
  }
  if (a.n) {
    a.opt /= static_cast<double>(a.n);
    a.zf /= static_cast<double>(a.n);
    a.bnn /= static_cast<double>(a.n);
  }
  return a;
}

Verdict a7_power(Artifacts& art) {
  const auto a = power_averages(art.power_bench());
  const double feas = 1.0 - static_cast<double>(a.bnn_infeasible) / static_cast<double>(a.total);
  return {feas >= 0.99 && a.bnn <= a.zf && a.bnn <= 1.10 * a.opt,
          fmt("feasibility %.4f; mean power W: bnn %.4g, optimal %.4g (ratio %.3f), zf %.4g "
              "(ratio %.3f)",
              feas, a.bnn, a.opt, a.bnn / a.opt, a.zf, a.zf / a.opt)};
}

Verdict a8_balance(Artifacts& art) {
  auto model = art.balance_model();
  const auto rs = bench::run_methods(
      art.balance_test(),
      {bench::optimal_balance_method(1e-8), bench::zf_balance_method(), bench::bnn_method(model)},
      8002);
  const auto s = bench::summarize(rs);
  auto mean = [&](const std::string& id) {
    for (const auto& m : s)
      if (m.method == id) return m.mean_metric;
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double opt = mean("optimal@1e-08"), zf = mean("zf"), b = mean("bnn");
  return {b >= 0.90 * opt && b >= zf,
          fmt("5000 instances at %.0f..%.0f dBm: mean min-SINR bnn %.4g, optimal %.4g "
              "(ratio %.3f), zf %.4g",
              Artifacts::kBalanceDbmMin, Artifacts::kBalanceDbmMax, b, opt, b / opt, zf)};
}

Verdict a9_timing(Artifacts& art) {
  const auto s = bench::summarize(art.power_bench());
  double opt = NAN, b = NAN, ob = NAN, bb = NAN;
  for (const auto& m : s) {
    if (m.method == "optimal@0.0001") opt = m.mean_time_s, ob = m.median_time_s;
    if (m.method == "bnn") b = m.mean_time_s, bb = m.median_time_s;
  }
  return {b <= 0.1 * opt,
          fmt("N=8 K=7, 5000 samples: mean bnn %.2f us, optimal@1e-4 %.2f us, ratio %.1fx "
              "(medians %.2f / %.2f us)",
              b * 1e6, opt * 1e6, opt / b, bb * 1e6, ob * 1e6)};
}

Verdict a10_hybrid(Artifacts&) {
  auto t0 = Clock::now();
  channel::DatasetConfig c;
  c.problem = ProblemTag::kSumRate;
  c.sizes = {{4, 4}};
  c.power_budget_dbm_min = 0.0;
  c.power_budget_dbm_max = 10.0;
  c.count = 20000;
  c.seed = 10001;
  const Dataset train = channel::build_dataset(c);
  c.count = 1000;
  c.seed = 10002;
  const Dataset val = channel::build_dataset(c);
  note(fmt("sum-rate 4x4 datasets in %.1f s", since(t0)));
  t0 = Clock::now();
  auto p = bnn::make_pipeline(ProblemTag::kSumRate, 4, 4, nn::default_architecture(4, 4), 31);
  bnn::HybridConfig hc;
  hc.supervised = schedule(20, 2e-3, 31);
  hc.unsupervised = schedule(60, 2e-3, 32);
  hc.unsupervised.lr_decay = std::pow(0.1, 1.0 / 60);
  const auto r = bnn::train_hybrid(p, train, val, hc);
  note(fmt("hybrid training in %.1f s, %zu conversion failures", since(t0), r.failures));
  double wmmse = 0.0;
  for (const auto& e : val.samples) wmmse += solvers::wmmse_sum_rate(e.sample, 1e-10).sum_rate;
  wmmse /= static_cast<double>(val.size());
  return {r.objective_hybrid >= r.objective_supervised && r.objective_hybrid >= 0.95 * wmmse,
          fmt("validation sum rate bit/s/Hz: supervised %.4g, hybrid %.4g, WMMSE %.4g "
              "(ratio %.3f), stage 2 %s",
              r.objective_supervised, r.objective_hybrid, wmmse, r.objective_hybrid / wmmse,
              r.kept_stage2 ? "kept" : "dropped")};
}

Verdict a11_augmentation(Artifacts&) {
  std::vector<std::pair<int, int>> sizes;
  for (int N = 1; N <= 8; ++N)
    for (int K = 1; K <= std::min(N, 7); ++K) sizes.push_back({N, K});
  auto t0 = Clock::now();
  channel::DatasetConfig c;
  c.problem = ProblemTag::kPowerMin;
  c.sizes = sizes;
  c.count = 100000;
  c.seed = 11001;
  const Dataset train = channel::build_dataset(c);
  auto p = bnn::make_pipeline(ProblemTag::kPowerMin, 8, 7, nn::default_architecture(8, 7, 4, 64),
                              41);
  bnn::train_supervised(p, train, schedule(20, 2e-3, 41));
  note(fmt("augmented model on %zu sizes trained in %.1f s", sizes.size(), since(t0)));
  const auto aug = std::make_shared<const bnn::Pipeline>(std::move(p));

  t0 = Clock::now();
  double sum_aug = 0.0, sum_per = 0.0, worst = 0.0;
  std::size_t feasible = 0, total = 0;
  std::string worst_size;
  for (const auto& [N, K] : sizes) {
    channel::DatasetConfig cs = c;
    cs.sizes = {{N, K}};
    cs.count = 5000;
    cs.seed = 11100 + static_cast<std::uint64_t>(10 * N + K);
    const Dataset d = channel::build_dataset(cs);
    auto q = bnn::make_pipeline(ProblemTag::kPowerMin, N, K,
                                nn::default_architecture(N, K, 4, 64), 42);
    bnn::train_supervised(q, d, schedule(20, 2e-3, 42));
    cs.count = 200;
    cs.seed = 11200 + static_cast<std::uint64_t>(10 * N + K);
    const Dataset te = channel::build_dataset(cs);
    const auto per = std::make_shared<const bnn::Pipeline>(std::move(q));
    const auto rs = bench::run_methods(
        te, {bench::bnn_method(aug, "augmented"), bench::bnn_method(per, "per-size")}, 0, 0);
    const auto a = bench::filter(rs, "augmented"), b = bench::filter(rs, "per-size");
    double la = 0.0, lb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ++total;
      if (a[i].feasible) ++feasible;
      if (a[i].feasible && b[i].feasible) {
        la += a[i].metric_value;
        lb += b[i].metric_value;
      }
    }
    sum_aug += la;
    sum_per += lb;
    if (la / lb > worst) {
      worst = la / lb;
      worst_size = fmt("(%d,%d)", N, K);
    }
  }
  note(fmt("35 per-size models trained and evaluated in %.1f s", since(t0)));
  const double feas = static_cast<double>(feasible) / static_cast<double>(total);
  const double ratio = sum_aug / sum_per;
  return {feas >= 0.95 && ratio <= 1.15,
          fmt("%zu sizes x 200 instances: feasibility %.4f, mean power augmented / per-size "
              "%.3f (worst size %s at %.3f)",
              sizes.size(), feas, ratio, worst_size.c_str(), worst)};
}

Verdict a12_compression(Artifacts& art) {
  auto model = art.power_model();
  Dataset val = art.power_test();
  val.samples.resize(1000);
  const nlohmann::json meta = bnn::pipeline_meta(*model);
  compress::Objective obj;
  obj.higher_is_better = false;
  obj.evaluate = [&](const nn::Model& m) {
    bnn::Pipeline p = *model;
    p.model = m;
    return bnn::mean_objective(p, val);
  };
  const std::string path = art.out_dir + "/power_min.bnnz";
  const auto r = compress::compress_pipeline(model->model, 1e-3, 6, path, obj, meta, 1);

  Rng rng(1201);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng() % 400;
    const std::uint32_t alphabet = 1 + static_cast<std::uint32_t>(rng() % 100);
    const double skew = 0.2 + static_cast<double>(rng() % 100) / 25.0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::uint32_t> s(n);
    for (auto& v : s)
      v = std::min(alphabet - 1, static_cast<std::uint32_t>(alphabet * std::pow(u(rng), skew)));
    if (compress::huffman_decode(compress::huffman_encode(s)) != s) ++mismatches;
  }
  return {r.ratio >= 4.0 && r.degradation <= 0.05 && mismatches == 0,
          fmt("%zu -> %zu bytes (%.2fx), sparsity %.3f, mean power %.5g -> %.5g "
              "(degradation %.2f%%), Huffman fuzz mismatches %d / 10000",
              r.original_bytes, r.compressed_bytes, r.ratio, r.prune.sparsity, r.metric_before,
              r.metric_after, 100.0 * r.degradation, mismatches)};
}

std::map<std::string, double> top_half_ber(const std::vector<bench::BenchRecord>& rows,
                                           std::size_t points) {
  std::map<std::string, double> sum;
  std::map<std::string, int> cnt;
  for (const auto& r : rows) {
    if (r.metric_name != "ber") continue;
    if (static_cast<std::size_t>(r.instance) < (points + 1) / 2) continue;
    sum[r.method] += r.metric_value;
    ++cnt[r.method];
  }
  for (auto& [m, v] : sum) v /= cnt[m];
  return sum;
}

Verdict a13_ber(Artifacts& art) {
  auto model = art.balance_model();
  bench::BerConfig cfg;
  cfg.power_dbm = {-10, -5, 0, 5, 10, 15, 20};
  cfg.symbols_per_point = 100000;
  cfg.seed = 1301;
  auto t0 = Clock::now();
  const auto st = bench::ber_sim(cfg, model.get());
  cfg.dynamic = true;
  cfg.seed = 1302;
  const auto dy = bench::ber_sim(cfg, model.get());
  note(fmt("BER sweeps in %.1f s", since(t0)));
  bench::write_csv(art.out_dir + "/ber_static.csv", st);
  bench::write_csv(art.out_dir + "/ber_dynamic.csv", dy);
  auto s = top_half_ber(st, cfg.power_dbm.size());
  auto d = top_half_ber(dy, cfg.power_dbm.size());
  std::string broken;
  auto need = [&](const char* cond, std::map<std::string, double>& m, const char* a,
                  const char* b, bool strict) {
    const bool ok = strict ? m[a] < m[b] : m[a] <= m[b];
    if (!ok) broken += fmt(" %s %s %s %s;", cond, a, strict ? "<" : "<=", b);
    return ok;
  };
  bool ok = need("static", s, "optimal", "bnn", false);
  ok &= need("static", s, "bnn", "rzf", false);
  ok &= need("static", s, "rzf", "zf", false);
  ok &= need("dynamic", d, "bnn", "optimal", true);
  ok &= need("dynamic", d, "bnn", "zf", true);
  ok &= need("dynamic", d, "bnn", "rzf", true);
  if (!broken.empty()) broken.pop_back();
  return {ok, fmt("mean BER over 10..20 dBm; static optimal %.3e bnn %.3e rzf %.3e zf %.3e; "
                  "dynamic optimal %.3e bnn %.3e rzf %.3e zf %.3e%s%s",
                  s["optimal"], s["bnn"], s["rzf"], s["zf"], d["optimal"], d["bnn"], d["rzf"],
                  d["zf"], broken.empty() ? "" : "; violated:", broken.c_str())};
}

Verdict a14_transfer(Artifacts& art) {
  auto base = art.power_model();
  channel::DatasetConfig c;
  c.problem = ProblemTag::kPowerMin;
  c.sizes = {{4, 4}};
  c.count = 2000;
  c.seed = 14001;
  const Dataset val = channel::build_dataset(c);
  int wins = 0;
  std::string cells;
  for (int r = 0; r < 10; ++r) {
    c.count = 1000;
    c.seed = 14100 + static_cast<std::uint64_t>(r);
    const Dataset d = channel::build_dataset(c);
    bnn::FineTuneConfig fc;
    fc.seed = 1 + static_cast<std::uint64_t>(r);
    fc.train = schedule(30, 2e-3, 1 + static_cast<std::uint64_t>(r));
    nn::TrainHistory hf;
    (void)bnn::fine_tune(*base, d, fc, &val, &hf);
    auto scratch = bnn::make_pipeline(ProblemTag::kPowerMin, 4, 4,
                                      nn::default_architecture(4, 4, 2, 64), fc.seed);
    const auto hs = bnn::train_supervised(scratch, d, fc.train, &val);
    const double a = hf.validation_loss.back(), b = hs.validation_loss.back();
    if (a < b) ++wins;
    cells += fmt(" %.3g/%.3g", a, b);
  }
  return {wins >= 8, fmt("fine-tune beats scratch in %d of 10 (validation MSE fine/scratch:%s)",
                         wins, cells.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bnnkit acceptance run"};
  std::string only, known, out_dir = ".";
  app.add_option("--only", only, "comma-separated criteria, e.g. A7,A9");
  app.add_option("--known-fail", known, "comma-separated criteria expected to fail");
  app.add_option("--out-dir", out_dir, "directory for bench CSVs and the compressed model");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict(Artifacts&)>>> criteria{
      {"A1", a1_duality},       {"A2", a2_oracle},      {"A3", a3_qos},
      {"A4", a4_wmmse},         {"A5", a5_gradients},   {"A6", a6_sp_lossless},
      {"A7", a7_power},         {"A8", a8_balance},     {"A9", a9_timing},
      {"A10", a10_hybrid},      {"A11", a11_augmentation}, {"A12", a12_compression},
      {"A13", a13_ber},         {"A14", a14_transfer}};

  auto split = [](const std::string& list) {
    std::set<std::string> out;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.insert(item);
    return out;
  };
  const std::set<std::string> selected = split(only), known_fail = split(known);
  std::set<std::string> named = selected;
  named.insert(known_fail.begin(), known_fail.end());
  for (const auto& s : named)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == s; })) {
      std::fprintf(stderr, "unknown criterion %s\n", s.c_str());
      return 2;
    }

  std::filesystem::create_directories(out_dir);
  Artifacts art;
  art.out_dir = out_dir;
  g_report = std::fopen((out_dir + "/acceptance_report.txt").c_str(), "w");
  int failed = 0, known_failed = 0;
  const auto t_all = Clock::now();
  for (const auto& [name, run] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = run(art);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const bool known_case = known_fail.count(name) > 0;
    std::string tag;
    if (!v.pass && known_case) {
      ++known_failed;
      tag = " (known failure, not counted)";
    } else if (!v.pass) {
      ++failed;
    } else if (known_case) {
      ++failed;
      tag = " (listed as a known failure but passed)";
    }
    emit(fmt("%s %s ", name.c_str(), v.pass ? "PASS" : "FAIL") + v.detail +
         fmt(" [%.1f s]", since(t0)) + tag);
    std::fflush(stdout);
  }
  emit(fmt("%d failed, %d known failures, total %.1f s", failed, known_failed, since(t_all)));
  if (g_report) std::fclose(g_report);
  return failed == 0 ? 0 : 1;
}
