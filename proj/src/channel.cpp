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

#include "bnnkit/channel.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "bnnkit/errors.hpp"
#include "bnnkit/solvers.hpp"

namespace bnnkit::channel {

namespace {

constexpr char kDatasetMagic[4] = {'B', 'N', 'N', 'D'};
constexpr std::uint16_t kDatasetVersion = 1;

}  // namespace

std::string to_string(ProblemTag tag) {
  switch (tag) {
    case ProblemTag::kSinrBalance: return "balance";
    case ProblemTag::kPowerMin: return "powermin";
    case ProblemTag::kSumRate: return "sumrate";
  }
  return "unknown";
}

ProblemTag problem_from_string(const std::string& name) {
  if (name == "balance" || name == "sinr-balance") return ProblemTag::kSinrBalance;
  if (name == "powermin" || name == "power-min") return ProblemTag::kPowerMin;
  if (name == "sumrate" || name == "sum-rate") return ProblemTag::kSumRate;
  throw std::invalid_argument("unknown problem tag: " + name);
}

double pathloss_db(double distance_km) {
  if (!(distance_km > 0.0) || !std::isfinite(distance_km))
    throw DomainError("pathloss_db: distance must be positive");
  return 128.1 + 37.6 * std::log10(distance_km);
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
double watts_to_dbm(double watts) { return 10.0 * std::log10(watts) + 30.0; }

CMatrix rayleigh_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  CMatrix g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      g(i, j) = {re, im};
    }
  return g;
}

ChannelSample generate_channel(int n_antennas, int n_users, DistanceRange distances,
                               double noise_power, double power_budget, Rng& rng) {
  if (n_users < 1 || n_antennas < n_users)
    throw DimensionError("generate_channel: need N >= K >= 1");
  if (!(distances.min_km > 0.0) || distances.max_km < distances.min_km)
    throw DomainError("generate_channel: invalid distance range");
  if (!(noise_power > 0.0) || !(power_budget > 0.0))
    throw DomainError("generate_channel: noise power and budget must be positive");

  ChannelSample s;
  s.noise_power = noise_power;
  s.power_budget = power_budget;
  s.distances_km.resize(n_users);
  std::uniform_real_distribution<double> uni(distances.min_km, distances.max_km);
  for (int k = 0; k < n_users; ++k)
    s.distances_km[k] = distances.max_km > distances.min_km ? uni(rng) : distances.min_km;
  s.H = rayleigh_matrix(n_antennas, n_users, rng);
  for (int k = 0; k < n_users; ++k)
    s.H.col(k) *= std::sqrt(db_to_linear(-pathloss_db(s.distances_km[k])));
  return s;
}

ChannelSample generate_channel(int n_antennas, int n_users, DistanceRange distances,
                               double noise_power, double power_budget, std::uint64_t seed) {
  Rng rng(seed);
  return generate_channel(n_antennas, n_users, distances, noise_power, power_budget, rng);
}

PaddedSample pad_sample(const ChannelSample& sample, const RVector& label, int pad_antennas,
                        int pad_users) {
  const int n = sample.n_antennas();
  const int k = sample.n_users();
  if (n > pad_antennas || k > pad_users)
    throw DimensionError("pad_sample: instance " + std::to_string(n) + "x" + std::to_string(k) +
                         " exceeds padding " + std::to_string(pad_antennas) + "x" +
                         std::to_string(pad_users));
  if (label.size() != 0 && label.size() < k)
    throw DimensionError("pad_sample: label shorter than K");

  const std::size_t plane = static_cast<std::size_t>(pad_antennas) * pad_users;
  PaddedSample out;
  out.planes.assign(2 * plane, 0.0);
  out.label.assign(pad_users, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const std::size_t at = static_cast<std::size_t>(i) * pad_users + j;
      out.planes[at] = sample.H(i, j).real();
      out.planes[plane + at] = sample.H(i, j).imag();
    }
  for (int j = 0; j < std::min<int>(k, static_cast<int>(label.size())); ++j)
    out.label[j] = label[j];
  return out;
}

CMatrix crop_planes(const std::vector<double>& planes, int pad_antennas, int pad_users,
                    int n_antennas, int n_users) {
  const std::size_t plane = static_cast<std::size_t>(pad_antennas) * pad_users;
  if (planes.size() != 2 * plane || n_antennas > pad_antennas || n_users > pad_users)
    throw DimensionError("crop_planes: shape mismatch");
  CMatrix H(n_antennas, n_users);
  for (int i = 0; i < n_antennas; ++i)
    for (int j = 0; j < n_users; ++j) {
      const std::size_t at = static_cast<std::size_t>(i) * pad_users + j;
      H(i, j) = {planes[at], planes[plane + at]};
    }
  return H;
}

DatasetEntry build_dataset_entry(const DatasetConfig& config, std::size_t index,
                                 std::size_t* regenerated) {
  if (config.sizes.empty()) throw std::invalid_argument("build_dataset: no (N, K) sizes");
  const std::uint64_t base = sub_seed(config.seed, index);
  const int k0 = config.pad_users > 0 ? config.pad_users : 0;

  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    Rng rng(attempt == 0 ? base : sub_seed(base, static_cast<std::uint64_t>(attempt)));
    std::uniform_int_distribution<std::size_t> pick(0, config.sizes.size() - 1);
    const auto [n, k] = config.sizes[config.sizes.size() == 1 ? 0 : pick(rng)];

    double p_dbm = config.power_budget_dbm_min;
    if (config.power_budget_dbm_max > config.power_budget_dbm_min) {
      std::uniform_real_distribution<double> uni(config.power_budget_dbm_min,
                                                 config.power_budget_dbm_max);
      p_dbm = uni(rng);
    }
    DatasetEntry entry;
    entry.sample =
        generate_channel(n, k, config.distances, config.noise_power, dbm_to_watts(p_dbm), rng);
    try {
      RVector q;
      switch (config.problem) {
        case ProblemTag::kSinrBalance:
          q = solvers::sinr_balance_solve(entry.sample, config.solver_tol, config.solver_max_iter).q;
          break;
        case ProblemTag::kPowerMin:
          entry.sample.sinr_targets = RVector::Constant(k, db_to_linear(config.sinr_target_db));
          q = solvers::power_min_solve(entry.sample, config.solver_tol, config.solver_max_iter).q;
          break;
        case ProblemTag::kSumRate: {
          auto res = solvers::wmmse_sum_rate(entry.sample, config.solver_tol,
                                             config.solver_max_iter);
          if (res.virtual_powers.size() == 0) throw NumericError("WMMSE ended with mu == 0");
          // the weights sum to P_max only at the stationary point; rescaling
          // removes the residual of a finite stopping tolerance
          q = res.virtual_powers * (entry.sample.power_budget / res.virtual_powers.sum());
          break;
        }
      }
      entry.label = RVector::Zero(std::max(k0, k));
      entry.label.head(k) = q;
      return entry;
    } catch (const NumericError&) {
    } catch (const InfeasibleError&) {
    }
    if (regenerated) ++*regenerated;
  }
  throw NumericError("build_dataset: sample " + std::to_string(index) + " failed " +
                     std::to_string(config.max_attempts) + " attempts");
}

Dataset build_dataset(const DatasetConfig& config, BuildReport* report) {
  DatasetConfig cfg = config;
  for (const auto& [n, k] : cfg.sizes) {
    if (k < 1 || n < k) throw DimensionError("build_dataset: every size needs N >= K >= 1");
    cfg.pad_antennas = std::max(cfg.pad_antennas, n);
    cfg.pad_users = std::max(cfg.pad_users, k);
  }
  Dataset ds;
  ds.problem = cfg.problem;
  ds.pad_antennas = cfg.pad_antennas;
  ds.pad_users = cfg.pad_users;
  ds.seed = cfg.seed;
  ds.samples.reserve(cfg.count);
  std::size_t regenerated = 0;
  for (std::size_t i = 0; i < cfg.count; ++i)
    ds.samples.push_back(build_dataset_entry(cfg, i, &regenerated));
  if (report) report->regenerated = regenerated;
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  detail::ByteWriter w;
  w.raw(kDatasetMagic, 4);
  w.u16(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(ds.problem));
  w.u16(static_cast<std::uint16_t>(ds.pad_antennas));
  w.u16(static_cast<std::uint16_t>(ds.pad_users));
  w.u64(ds.samples.size());
  w.u64(ds.seed);
  for (const auto& e : ds.samples) {
    const auto& s = e.sample;
    w.u16(static_cast<std::uint16_t>(s.n_antennas()));
    w.u16(static_cast<std::uint16_t>(s.n_users()));
    w.f64(s.noise_power);
    w.f64(s.power_budget);
    for (int k = 0; k < ds.pad_users; ++k)
      w.f64(s.sinr_targets && k < s.n_users() ? (*s.sinr_targets)[k] : 0.0);
    const PaddedSample padded = pad_sample(s, e.label, ds.pad_antennas, ds.pad_users);
    for (double v : padded.planes) w.f64(v);
    for (int k = 0; k < ds.pad_users; ++k) w.f64(k < e.label.size() ? e.label[k] : 0.0);
  }
  detail::write_file(path, w.bytes());
}

Dataset read_dataset(const std::string& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (!std::equal(magic, magic + 4, kDatasetMagic)) throw FormatError("not a BNND file: " + path);
  if (r.u16() != kDatasetVersion) throw FormatError("unsupported dataset version");
  const std::uint8_t tag = r.u8();
  if (tag > 2) throw FormatError("bad problem tag");
  Dataset ds;
  ds.problem = static_cast<ProblemTag>(tag);
  ds.pad_antennas = r.u16();
  ds.pad_users = r.u16();
  const std::uint64_t count = r.u64();
  ds.seed = r.u64();
  const std::size_t per_sample =
      4 + 16 + 8 * (static_cast<std::size_t>(ds.pad_users) * (2 + 2 * ds.pad_antennas));
  if (count > r.remaining() / per_sample || r.remaining() != count * per_sample)
    throw FormatError("dataset size does not match header count");
  ds.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    DatasetEntry e;
    const int n = r.u16();
    const int k = r.u16();
    if (n > ds.pad_antennas || k > ds.pad_users || k < 1 || n < 1)
      throw FormatError("sample dims exceed padding");
    e.sample.noise_power = r.f64();
    e.sample.power_budget = r.f64();
    RVector targets(ds.pad_users);
    for (int j = 0; j < ds.pad_users; ++j) targets[j] = r.f64();
    if (ds.problem == ProblemTag::kPowerMin) e.sample.sinr_targets = targets.head(k);
    std::vector<double> planes(2 * static_cast<std::size_t>(ds.pad_antennas) * ds.pad_users);
    for (double& v : planes) v = r.f64();
    e.sample.H = crop_planes(planes, ds.pad_antennas, ds.pad_users, n, k);
    e.label.resize(ds.pad_users);
    for (int j = 0; j < ds.pad_users; ++j) e.label[j] = r.f64();
    ds.samples.push_back(std::move(e));
  }
  return ds;
}

std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, std::size_t count) {
  if (count > dataset.size()) throw std::invalid_argument("split_tail: count exceeds dataset");
  Dataset head = dataset;
  Dataset tail = dataset;
  head.samples.assign(dataset.samples.begin(), dataset.samples.end() - count);
  tail.samples.assign(dataset.samples.end() - count, dataset.samples.end());
  return {std::move(head), std::move(tail)};
}

}  // namespace bnnkit::channel
