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

#ifndef BNNKIT_BENCH_HPP
#define BNNKIT_BENCH_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnnkit/bnn.hpp"
#include "bnnkit/channel.hpp"

namespace bnnkit::bench {

using channel::ChannelSample;
using channel::Dataset;

// One CSV row: method,instance,N,K,metric_name,metric_value,feasible,wall_time_s,seed
struct BenchRecord {
  std::string method;
  long long instance = 0;
  int N = 0;
  int K = 0;
  std::string metric_name;
  double metric_value = 0.0;  // +inf allowed for infeasible rows
  bool feasible = true;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const BenchRecord&) const = default;
};

extern const char* const kCsvHeader;

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records);
void write_csv(const std::string& path, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> read_csv(std::istream& in);
std::vector<BenchRecord> read_csv(const std::string& path);

struct Outcome {
  double metric = 0.0;
  bool feasible = true;
};

struct Method {
  std::string id;
  std::string metric_name;
  std::function<Outcome(const ChannelSample&)> solve;
};

// Power-min methods (metric: total power in W).
Method optimal_power_method(double tol, const std::string& id = "");
Method zf_power_method();
// Balance methods (metric: min SINR, linear).
Method optimal_balance_method(double tol = 1e-6);
Method zf_balance_method();
Method rzf_balance_method();
// Sum-rate methods (metric: bit/s/Hz).
Method wmmse_method(double tol = 1e-8);
// Objective of the pipeline's problem; the pipeline is shared, not copied.
Method bnn_method(std::shared_ptr<const bnn::Pipeline> pipeline, const std::string& id = "bnn");
// Returns immediately; its timing is the measurement overhead.
Method noop_method();

// Every method on every instance, interleaved per instance. `warmup` untimed
// calls per method on the first instance precede the measurement.
std::vector<BenchRecord> run_methods(const Dataset& dataset, const std::vector<Method>& methods,
                                     std::uint64_t seed, int warmup = 1);

// run_methods on a power-min dataset (targets required).
std::vector<BenchRecord> bench_power(const Dataset& dataset, const std::vector<Method>& methods,
                                     std::uint64_t seed);

struct MethodSummary {
  std::string method;
  std::size_t count = 0;
  std::size_t feasible = 0;
  double mean_metric = 0.0;  // over feasible rows
  double mean_time_s = 0.0;
  double median_time_s = 0.0;
};

// In order of first appearance.
std::vector<MethodSummary> summarize(const std::vector<BenchRecord>& records);

// Timing rows (metric mean_time_s / median_time_s, instance -1) per method.
std::vector<BenchRecord> bench_time(const Dataset& dataset, const std::vector<Method>& methods,
                                    std::uint64_t seed);
std::vector<BenchRecord> timing_rows(const std::vector<BenchRecord>& records, std::uint64_t seed);

double feasibility_rate(const std::vector<BenchRecord>& records);
std::vector<BenchRecord> filter(const std::vector<BenchRecord>& records, const std::string& method);

// Ascending power series, truncated once a term drops below 1e-12; the
// standard library's cylindrical Bessel function for |x| > 12.
double bessel_j0(double x);

// Clarke model with f_d = 0.423 / T_c.
class FadingProcess {
 public:
  explicit FadingProcess(double coherence_ms);
  double coherence_ms() const { return coherence_ms_; }
  double correlation(double delay_ms) const;
  // h(t+tau) = rho h(t) + sqrt(1 - rho^2) e, e ~ CN(0, beta_k I) per column.
  CMatrix evolve(const CMatrix& H, const RVector& beta, double delay_ms, Rng& rng) const;
  // Same law with a caller-supplied unit-variance innovation.
  static CMatrix evolve_with(const CMatrix& H, const RVector& beta, double rho,
                             const CMatrix& innovation);

 private:
  double coherence_ms_;
};

// Large-scale gains beta_k from the sample's user distances.
RVector large_scale_gains(const ChannelSample& sample);

struct BerConfig {
  int N = 4;
  int K = 4;
  std::vector<double> power_dbm{-10, -5, 0, 5, 10, 15, 20};
  std::size_t symbols_per_point = 100000;  // per user
  int block_symbols = 100;                 // symbols per channel realization
  bool dynamic = false;
  double coherence_ms = 15.0;
  std::vector<std::string> methods{"optimal", "bnn", "zf", "rzf"};
  std::map<std::string, double> delays_ms{{"optimal", 20.0}, {"bnn", 0.5}, {"zf", 0.1}, {"rzf", 0.1}};
  double optimal_tol = 1e-4;
  double noise_power = 1e-13;
  channel::DistanceRange distances;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const BerConfig& config);
BerConfig ber_config_from_json(const nlohmann::json& j);

// Rows per (power point, method): metric "ber", instance = point index,
// wall_time_s = mean beamformer computation time per realization. One extra
// row per point with method "sweep" and metric "tx_power_dbm". The "bnn"
// method needs a balance pipeline.
std::vector<BenchRecord> ber_sim(const BerConfig& config,
                                 const bnn::Pipeline* pipeline = nullptr);

}  // namespace bnnkit::bench

#endif  // BNNKIT_BENCH_HPP
