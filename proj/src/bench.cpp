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

#include "bnnkit/bench.hpp"

#include <algorithm>
#include <cstdlib>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "bnnkit/errors.hpp"
#include "bnnkit/solvers.hpp"

namespace bnnkit::bench {

using nlohmann::json;
using ProblemTag = channel::ProblemTag;

const char* const kCsvHeader =
    "method,instance,N,K,metric_name,metric_value,feasible,wall_time_s,seed";

namespace {

using Clock = std::chrono::steady_clock;

// Floor at one clock tick so that a measured duration is never zero.
double seconds_since(Clock::time_point t0) {
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  return std::max(s, 1e-9);
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos)
    throw DomainError("csv field contains a separator: " + s);
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  // strtod rather than stod: subnormal values are valid here
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("bad number '" + s + "'");
  return v;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + n / 2));
}

Outcome from_metrics(ProblemTag tag, const bnn::Metrics& m) {
  if (tag == ProblemTag::kPowerMin && !m.feasible)
    return {std::numeric_limits<double>::infinity(), false};
  return {m.objective(tag), m.feasible};
}

std::string metric_for(ProblemTag tag) {
  switch (tag) {
    case ProblemTag::kSinrBalance: return "min_sinr";
    case ProblemTag::kPowerMin: return "total_power_w";
    case ProblemTag::kSumRate: return "sum_rate";
  }
  return "";
}

std::string tol_id(const std::string& base, double tol) {
  std::ostringstream os;
  os << base << "@" << tol;
  return os.str();
}

}  // namespace

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << kCsvHeader << "\n";
  for (const auto& r : records) {
    check_field(r.method);
    check_field(r.metric_name);
    out << r.method << ',' << r.instance << ',' << r.N << ',' << r.K << ',' << r.metric_name << ','
        << format_double(r.metric_value) << ',' << (r.feasible ? 1 : 0) << ','
        << format_double(r.wall_time_s) << ',' << r.seed << "\n";
  }
  if (!out) throw std::runtime_error("write_csv: stream error");
}

void write_csv(const std::string& path, const std::vector<BenchRecord>& records) {
  if (path == "-") {
    std::ostringstream os;
    write_csv(os, records);
    std::fwrite(os.str().data(), 1, os.str().size(), stdout);
    return;
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(f, records);
}

std::vector<BenchRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty csv");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw FormatError("unexpected csv header: " + line);
  std::vector<BenchRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw FormatError("csv row " + std::to_string(row) + ": expected 9 fields");
    try {
      BenchRecord r;
      r.method = f[0];
      r.instance = std::stoll(f[1]);
      r.N = std::stoi(f[2]);
      r.K = std::stoi(f[3]);
      r.metric_name = f[4];
      r.metric_value = parse_double(f[5]);
      if (f[6] != "0" && f[6] != "1") throw FormatError("feasible must be 0 or 1");
      r.feasible = f[6] == "1";
      r.wall_time_s = parse_double(f[7]);
      r.seed = std::stoull(f[8]);
      out.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw FormatError("csv row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

std::vector<BenchRecord> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return read_csv(f);
}

Method optimal_power_method(double tol, const std::string& id) {
  return {id.empty() ? tol_id("optimal", tol) : id, "total_power_w",
          [tol](const ChannelSample& s) -> Outcome {
            try {
              return {solvers::power_min_solve(s, tol).total_power, true};
            } catch (const InfeasibleError&) {
              return {std::numeric_limits<double>::infinity(), false};
            } catch (const NonConvergenceError&) {
              return {std::numeric_limits<double>::infinity(), false};
            }
          }};
}

Method zf_power_method() {
  return {"zf", "total_power_w", [](const ChannelSample& s) -> Outcome {
            try {
              return {solvers::zf_beamformer(s, solvers::ZfMode::kTargets).squaredNorm(), true};
            } catch (const NumericError&) {
              return {std::numeric_limits<double>::infinity(), false};
            }
          }};
}

Method optimal_balance_method(double tol) {
  return {tol_id("optimal", tol), "min_sinr", [tol](const ChannelSample& s) -> Outcome {
            const auto r = solvers::sinr_balance_solve(s, tol);
            return {solvers::downlink_sinr(s.H, r.W, s.noise_power).minCoeff(), true};
          }};
}

Method zf_balance_method() {
  return {"zf", "min_sinr", [](const ChannelSample& s) -> Outcome {
            const CMatrix W = solvers::zf_beamformer(s, solvers::ZfMode::kBalance);
            return {solvers::downlink_sinr(s.H, W, s.noise_power).minCoeff(), true};
          }};
}

Method rzf_balance_method() {
  return {"rzf", "min_sinr", [](const ChannelSample& s) -> Outcome {
            const CMatrix W = solvers::rzf_beamformer(s);
            return {solvers::downlink_sinr(s.H, W, s.noise_power).minCoeff(), true};
          }};
}

Method wmmse_method(double tol) {
  return {"wmmse", "sum_rate", [tol](const ChannelSample& s) -> Outcome {
            return {solvers::wmmse_sum_rate(s, tol).sum_rate, true};
          }};
}

Method bnn_method(std::shared_ptr<const bnn::Pipeline> pipeline, const std::string& id) {
  if (!pipeline) throw ContractError("bnn_method: no pipeline");
  const ProblemTag tag = pipeline->problem;
  return {id, metric_for(tag), [pipeline, tag](const ChannelSample& s) -> Outcome {
            return from_metrics(tag, bnn::predict(*pipeline, s).metrics);
          }};
}

Method noop_method() {
  return {"noop", "none", [](const ChannelSample&) -> Outcome { return {0.0, true}; }};
}

std::vector<BenchRecord> run_methods(const Dataset& dataset, const std::vector<Method>& methods,
                                     std::uint64_t seed, int warmup) {
  std::vector<BenchRecord> out;
  if (dataset.size() == 0) return out;
  for (const auto& m : methods)
    for (int w = 0; w < warmup; ++w) m.solve(dataset.samples.front().sample);
  out.reserve(dataset.size() * methods.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i].sample;
    for (const auto& m : methods) {
      const auto t0 = Clock::now();
      const Outcome o = m.solve(s);
      const double dt = seconds_since(t0);
      out.push_back({m.id, static_cast<long long>(i), s.n_antennas(), s.n_users(), m.metric_name,
                     o.metric, o.feasible, dt, seed});
    }
  }
  return out;
}

std::vector<BenchRecord> bench_power(const Dataset& dataset, const std::vector<Method>& methods,
                                     std::uint64_t seed) {
  if (dataset.problem != ProblemTag::kPowerMin)
    throw ContractError("bench_power needs a power-min dataset");
  for (const auto& e : dataset.samples)
    if (!e.sample.sinr_targets) throw ContractError("bench_power: sample without SINR targets");
  return run_methods(dataset, methods, seed);
}

std::vector<MethodSummary> summarize(const std::vector<BenchRecord>& records) {
  std::vector<MethodSummary> out;
  std::map<std::string, std::vector<double>> times;
  for (const auto& r : records) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = out.end() - 1;
    }
    ++it->count;
    if (r.feasible) {
      ++it->feasible;
      it->mean_metric += r.metric_value;
    }
    times[r.method].push_back(r.wall_time_s);
  }
  for (auto& s : out) {
    if (s.feasible) s.mean_metric /= static_cast<double>(s.feasible);
    const auto& t = times[s.method];
    double total = 0.0;
    for (double v : t) total += v;
    s.mean_time_s = total / static_cast<double>(t.size());
    s.median_time_s = median(t);
  }
  return out;
}

std::vector<BenchRecord> timing_rows(const std::vector<BenchRecord>& records, std::uint64_t seed) {
  std::vector<BenchRecord> out;
  for (const auto& s : summarize(records)) {
    int N = -1, K = -1;
    for (const auto& r : records)
      if (r.method == s.method) {
        N = N == -1 || N == r.N ? r.N : 0;
        K = K == -1 || K == r.K ? r.K : 0;
      }
    out.push_back({s.method, -1, N, K, "mean_time_s", s.mean_time_s, true, s.mean_time_s, seed});
    out.push_back({s.method, -1, N, K, "median_time_s", s.median_time_s, true, s.median_time_s, seed});
  }
  return out;
}

std::vector<BenchRecord> bench_time(const Dataset& dataset, const std::vector<Method>& methods,
                                    std::uint64_t seed) {
  return timing_rows(run_methods(dataset, methods, seed), seed);
}

double feasibility_rate(const std::vector<BenchRecord>& records) {
  if (records.empty()) throw DomainError("feasibility_rate: no records");
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.feasible ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<BenchRecord> filter(const std::vector<BenchRecord>& records, const std::string& method) {
  std::vector<BenchRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const auto& r) { return r.method == method; });
  return out;
}

double bessel_j0(double x) {
  x = std::abs(x);
  // the series loses digits to cancellation past this point
  if (x > 12.0) return std::cyl_bessel_j(0.0, x);
  const double q = -0.25 * x * x;
  double term = 1.0, sum = 1.0;
  for (int m = 1; m < 500; ++m) {
    term *= q / (static_cast<double>(m) * m);
    sum += term;
    if (std::abs(term) < 1e-12) break;
  }
  return sum;
}

FadingProcess::FadingProcess(double coherence_ms) : coherence_ms_(coherence_ms) {
  if (!(coherence_ms > 0.0)) throw DomainError("coherence time must be positive");
}

double FadingProcess::correlation(double delay_ms) const {
  if (!(delay_ms >= 0.0)) throw DomainError("delay must be >= 0");
  return bessel_j0(2.0 * std::numbers::pi * 0.423 * delay_ms / coherence_ms_);
}

CMatrix FadingProcess::evolve_with(const CMatrix& H, const RVector& beta, double rho,
                                   const CMatrix& innovation) {
  if (beta.size() != H.cols() || innovation.rows() != H.rows() || innovation.cols() != H.cols())
    throw DimensionError("evolve: shape mismatch");
  if (std::abs(rho) > 1.0) throw DomainError("evolve: |rho| > 1");
  const double s = std::sqrt(1.0 - rho * rho);
  CMatrix out = rho * H;
  for (Eigen::Index k = 0; k < H.cols(); ++k) out.col(k) += (s * std::sqrt(beta[k])) * innovation.col(k);
  return out;
}

CMatrix FadingProcess::evolve(const CMatrix& H, const RVector& beta, double delay_ms, Rng& rng) const {
  const CMatrix e = channel::rayleigh_matrix(static_cast<int>(H.rows()), static_cast<int>(H.cols()), rng);
  return evolve_with(H, beta, correlation(delay_ms), e);
}

RVector large_scale_gains(const ChannelSample& s) {
  if (s.distances_km.size() != s.n_users())
    throw ContractError("large_scale_gains: sample has no user distances");
  RVector b(s.n_users());
  for (int k = 0; k < s.n_users(); ++k)
    b[k] = channel::db_to_linear(-channel::pathloss_db(s.distances_km[k]));
  return b;
}

json to_json(const BerConfig& c) {
  return {{"N", c.N},
          {"K", c.K},
          {"power_dbm", c.power_dbm},
          {"symbols_per_point", c.symbols_per_point},
          {"block_symbols", c.block_symbols},
          {"condition", c.dynamic ? "dynamic" : "static"},
          {"coherence_ms", c.coherence_ms},
          {"methods", c.methods},
          {"delays_ms", c.delays_ms},
          {"optimal_tol", c.optimal_tol},
          {"noise_power", c.noise_power},
          {"distance_min_km", c.distances.min_km},
          {"distance_max_km", c.distances.max_km},
          {"seed", c.seed}};
}

BerConfig ber_config_from_json(const json& j) {
  try {
    BerConfig c;
    c.N = j.value("N", c.N);
    c.K = j.value("K", c.K);
    c.power_dbm = j.value("power_dbm", c.power_dbm);
    c.symbols_per_point = j.value("symbols_per_point", c.symbols_per_point);
    c.block_symbols = j.value("block_symbols", c.block_symbols);
    const std::string cond = j.value("condition", std::string("static"));
    if (cond != "static" && cond != "dynamic") throw FormatError("condition must be static or dynamic");
    c.dynamic = cond == "dynamic";
    c.coherence_ms = j.value("coherence_ms", c.coherence_ms);
    c.methods = j.value("methods", c.methods);
    if (j.contains("delays_ms"))
      for (const auto& [k, v] : j.at("delays_ms").items()) c.delays_ms[k] = v.get<double>();
    c.optimal_tol = j.value("optimal_tol", c.optimal_tol);
    c.noise_power = j.value("noise_power", c.noise_power);
    c.distances.min_km = j.value("distance_min_km", c.distances.min_km);
    c.distances.max_km = j.value("distance_max_km", c.distances.max_km);
    c.seed = j.value("seed", c.seed);
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("ber config: ") + e.what());
  }
}

std::vector<BenchRecord> ber_sim(const BerConfig& cfg, const bnn::Pipeline* pipeline) {
  if (cfg.symbols_per_point == 0) throw DomainError("ber_sim: zero symbols per point");
  if (cfg.block_symbols < 1) throw DomainError("ber_sim: block_symbols must be >= 1");
  if (cfg.K < 1 || cfg.N < cfg.K) throw DimensionError("ber_sim: need N >= K >= 1");
  const FadingProcess fading(cfg.coherence_ms);

  struct Active {
    std::string id;
    double rho;
    std::function<CMatrix(const ChannelSample&)> beamformer;
  };
  std::vector<Active> methods;
  for (const auto& id : cfg.methods) {
    std::function<CMatrix(const ChannelSample&)> f;
    if (id == "optimal") {
      const double tol = cfg.optimal_tol;
      f = [tol](const ChannelSample& s) { return solvers::sinr_balance_solve(s, tol).W; };
    } else if (id == "bnn") {
      if (!pipeline) throw ContractError("ber_sim: method 'bnn' needs a pipeline");
      if (pipeline->problem != ProblemTag::kSinrBalance)
        throw ContractError("ber_sim: the bnn pipeline must solve the balance problem");
      f = [pipeline](const ChannelSample& s) {
        CMatrix W = bnn::predict(*pipeline, s).W;
        return W.size() ? W : CMatrix(CMatrix::Zero(s.n_antennas(), s.n_users()));
      };
    } else if (id == "zf") {
      f = [](const ChannelSample& s) { return solvers::zf_beamformer(s, solvers::ZfMode::kBalance); };
    } else if (id == "rzf") {
      f = [](const ChannelSample& s) { return solvers::rzf_beamformer(s); };
    } else {
      throw DomainError("ber_sim: unknown method '" + id + "'");
    }
    double rho = 1.0;
    if (cfg.dynamic) {
      const auto d = cfg.delays_ms.find(id);
      if (d == cfg.delays_ms.end()) throw ContractError("ber_sim: no delay for method '" + id + "'");
      rho = fading.correlation(d->second);
    }
    methods.push_back({id, rho, std::move(f)});
  }

  const int N = cfg.N, K = cfg.K, B = cfg.block_symbols;
  const std::size_t realizations =
      (cfg.symbols_per_point + static_cast<std::size_t>(B) - 1) / static_cast<std::size_t>(B);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<BenchRecord> out;
  for (std::size_t pt = 0; pt < cfg.power_dbm.size(); ++pt) {
    Rng rng(sub_seed(cfg.seed, pt));
    const double P = channel::dbm_to_watts(cfg.power_dbm[pt]);
    std::vector<std::size_t> errors(methods.size(), 0);
    std::vector<double> time(methods.size(), 0.0);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> gauss(0.0, std::sqrt(cfg.noise_power / 2.0));
    CMatrix S(K, B), noise(K, B);
    std::vector<std::uint8_t> bits(2 * static_cast<std::size_t>(K) * B);
    for (std::size_t r = 0; r < realizations; ++r) {
      const ChannelSample s = channel::generate_channel(N, K, cfg.distances, cfg.noise_power, P, rng);
      const RVector beta = large_scale_gains(s);
      const CMatrix innovation = channel::rayleigh_matrix(N, K, rng);
      for (int k = 0; k < K; ++k)
        for (int b = 0; b < B; ++b) {
          const std::size_t at = 2 * (static_cast<std::size_t>(k) * B + b);
          bits[at] = coin(rng);
          bits[at + 1] = coin(rng);
          S(k, b) = cdouble(bits[at] ? -inv_sqrt2 : inv_sqrt2, bits[at + 1] ? -inv_sqrt2 : inv_sqrt2);
          noise(k, b) = cdouble(gauss(rng), gauss(rng));
        }
      for (std::size_t m = 0; m < methods.size(); ++m) {
        const auto t0 = Clock::now();
        const CMatrix W = methods[m].beamformer(s);
        time[m] += seconds_since(t0);
        const CMatrix Htx =
            methods[m].rho == 1.0 ? s.H : FadingProcess::evolve_with(s.H, beta, methods[m].rho, innovation);
        const CMatrix G = Htx.adjoint() * W;
        const CMatrix Y = G * S + noise;
        for (int k = 0; k < K; ++k) {
          const cdouble g = std::conj(G(k, k));
          for (int b = 0; b < B; ++b) {
            const cdouble z = g * Y(k, b);
            const std::size_t at = 2 * (static_cast<std::size_t>(k) * B + b);
            errors[m] += static_cast<std::size_t>((z.real() < 0.0) != (bits[at] != 0));
            errors[m] += static_cast<std::size_t>((z.imag() < 0.0) != (bits[at + 1] != 0));
          }
        }
      }
    }
    const double total_bits = 2.0 * static_cast<double>(realizations) * B * K;
    out.push_back({"sweep", static_cast<long long>(pt), N, K, "tx_power_dbm", cfg.power_dbm[pt], true,
                   1e-9, cfg.seed});
    for (std::size_t m = 0; m < methods.size(); ++m)
      out.push_back({methods[m].id, static_cast<long long>(pt), N, K, "ber",
                     static_cast<double>(errors[m]) / total_bits, true,
                     time[m] / static_cast<double>(realizations), cfg.seed});
  }
  return out;
}

}  // namespace bnnkit::bench
