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

#ifndef BNNKIT_CHANNEL_HPP
#define BNNKIT_CHANNEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bnnkit/linalg.hpp"
#include "bnnkit/rng.hpp"

namespace bnnkit::channel {

// One multiuser-MISO downlink instance. Column k of `H` is the channel of
// user k, so the received amplitude of beam j at user k is h_k^H w_j.
struct ChannelSample {
  CMatrix H;                  // N x K
  double noise_power = 1.0;   // sigma^2 [W]
  double power_budget = 1.0;  // P_max [W]
  std::optional<RVector> sinr_targets;  // linear, power-min instances only
  RVector distances_km;       // may be empty for samples read back from disk

  int n_antennas() const { return static_cast<int>(H.rows()); }
  int n_users() const { return static_cast<int>(H.cols()); }
};

enum class ProblemTag : std::uint8_t { kSinrBalance = 0, kPowerMin = 1, kSumRate = 2 };

std::string to_string(ProblemTag tag);
ProblemTag problem_from_string(const std::string& name);

// 128.1 + 37.6 log10(d), d in km. Throws DomainError for d <= 0.
double pathloss_db(double distance_km);

double db_to_linear(double db);
double dbm_to_watts(double dbm);
double watts_to_dbm(double watts);

struct DistanceRange {
  double min_km = 0.05;
  double max_km = 0.3;
};

// Rayleigh fading times path loss: h_k = sqrt(beta_k) g_k, g_k ~ CN(0, I).
ChannelSample generate_channel(int n_antennas, int n_users, DistanceRange distances,
                               double noise_power, double power_budget, std::uint64_t seed);

// Same model, drawing from a caller-owned generator.
ChannelSample generate_channel(int n_antennas, int n_users, DistanceRange distances,
                               double noise_power, double power_budget, Rng& rng);

// Unit-variance complex Gaussian matrix (small-scale fading only).
CMatrix rayleigh_matrix(int rows, int cols, Rng& rng);

// Zero-padded two-plane tensor: plane 0 holds Re(H), plane 1 Im(H), each
// N0 x K0 row-major, H in the top-left block.
struct PaddedSample {
  std::vector<double> planes;  // 2 * N0 * K0
  std::vector<double> label;   // K0
};

PaddedSample pad_sample(const ChannelSample& sample, const RVector& label, int pad_antennas,
                        int pad_users);

// Inverse of pad_sample for the channel part.
CMatrix crop_planes(const std::vector<double>& planes, int pad_antennas, int pad_users,
                    int n_antennas, int n_users);

struct DatasetEntry {
  ChannelSample sample;
  RVector label;  // length K0, zeros beyond K
};

struct Dataset {
  ProblemTag problem = ProblemTag::kSinrBalance;
  int pad_antennas = 0;
  int pad_users = 0;
  std::uint64_t seed = 0;
  std::vector<DatasetEntry> samples;

  std::size_t size() const { return samples.size(); }
};

struct DatasetConfig {
  ProblemTag problem = ProblemTag::kSinrBalance;
  std::size_t count = 0;
  // Candidate (N, K) pairs, drawn with equal probability per sample.
  std::vector<std::pair<int, int>> sizes{{4, 4}};
  int pad_antennas = 0;  // 0: max N over `sizes`
  int pad_users = 0;     // 0: max K over `sizes`
  DistanceRange distances;
  double noise_power = 1e-13;
  // P_max drawn log-uniformly in [min, max] dBm; equal bounds fix it.
  double power_budget_dbm_min = 30.0;
  double power_budget_dbm_max = 30.0;
  double sinr_target_db = 5.0;  // power-min only
  double solver_tol = 1e-12;
  int solver_max_iter = 100000;
  std::uint64_t seed = 1;
  int max_attempts = 20;
};

struct BuildReport {
  std::size_t regenerated = 0;
};

// Labels: balance -> q* (sum P_max); power-min -> fixed-point q*;
// sum-rate -> WMMSE virtual uplink powers. Sample i is a pure function of
// (seed, i).
Dataset build_dataset(const DatasetConfig& config, BuildReport* report = nullptr);

// Single sample of a dataset; exposed so callers can parallelize or spot-check.
DatasetEntry build_dataset_entry(const DatasetConfig& config, std::size_t index,
                                 std::size_t* regenerated = nullptr);

// Little-endian "BNND" v1 file.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

// Splits off the last `count` samples.
std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, std::size_t count);

}  // namespace bnnkit::channel

#endif  // BNNKIT_CHANNEL_HPP
