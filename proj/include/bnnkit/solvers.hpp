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

#ifndef BNNKIT_SOLVERS_HPP
#define BNNKIT_SOLVERS_HPP

#include <optional>
#include <vector>

#include "bnnkit/channel.hpp"
#include "bnnkit/linalg.hpp"

namespace bnnkit::solvers {

using channel::ChannelSample;

// gamma_k = |h_k^H w_k|^2 / (sum_{j != k} |h_k^H w_j|^2 + sigma^2)
RVector downlink_sinr(const CMatrix& H, const CMatrix& W, double noise_power);

// sum_k log2(1 + gamma_k)
double sum_rate(const CMatrix& H, const CMatrix& W, double noise_power);

// Gains and cross-coupling of unit-norm beamformers:
// G_k = |h_k^H w_k|^2, Psi(k, j) = |h_k^H w_j|^2 for j != k, zero diagonal.
struct CouplingData {
  RVector G;
  RMatrix Psi;
  RVector noise;
};

CouplingData coupling(const CMatrix& H, const CMatrix& W_unit, double noise_power);

// Uplink MMSE receive filters, unit-norm columns:
// w_k ~ (sigma^2 I + sum_j q_j h_j h_j^H)^{-1} h_k. One factorization is
// shared by all users.
CMatrix mmse_beamformers(const CMatrix& H, const RVector& q, double noise_power);

enum class LinkDirection { kUplink, kDownlink };

struct BalancedAllocation {
  double C = 0.0;  // balanced SINR level
  RVector power;   // sums to P_max
  int iterations = 0;
};

// Max-min SINR power allocation for fixed beamformers via the Perron root
// of the extended (K+1)x(K+1) coupling matrix.
BalancedAllocation balanced_allocation(const CouplingData& coupling, double power_budget,
                                       LinkDirection direction, double eig_tol = 1e-12,
                                       int max_iter = 10000);

struct BalanceResult {
  CMatrix W;
  double C = 0.0;          // balanced level from the last uplink step
  double C_downlink = 0.0;  // level of the final downlink allocation
  RVector q;               // uplink powers
  RVector p;               // downlink powers
  int iterations = 0;
};

// Alternating MMSE-receiver / balanced-power iteration for
// max_W min_k gamma_k s.t. ||W||_F^2 <= P_max.
BalanceResult sinr_balance_solve(const ChannelSample& sample, double tol = 1e-6,
                                 int max_iter = 1000);

struct ConversionResult {
  CMatrix W;
  RVector sinr;         // achieved downlink SINRs
  RVector uplink_sinr;  // SINRs realized by q with MMSE receivers
  RVector p;            // downlink powers, sum p == sum q
};

// Duality map q -> W: MMSE directions from q, then the downlink powers
// that reproduce the uplink SINRs. Throws InfeasibleError if the power
// solve is not non-negative.
ConversionResult convert_q_to_W(const ChannelSample& sample, const RVector& q);

// Downlink powers meeting `targets` with the given unit-norm beamformers:
// (I - D Gamma Psi) p = D Gamma sigma^2. Returns false (and leaves `p`
// unspecified) if the solution is not strictly positive.
bool downlink_powers_for_targets(const CouplingData& coupling, const RVector& targets,
                                 RVector& p);

struct PowerMinResult {
  CMatrix W;
  double total_power = 0.0;
  RVector q;
  RVector p;
  int iterations = 0;
};

// QoS-constrained total power minimization with the virtual-uplink fixed
// point q_k <- gamma_k / (h_k^H (sigma^2 I + sum_{j != k} q_j h_j h_j^H)^{-1} h_k).
// power_cap <= 0 selects 1e12 * sigma^2.
PowerMinResult power_min_solve(const ChannelSample& sample, double tol = 1e-6,
                               int max_iter = 10000, double power_cap = 0.0);

enum class ZfMode { kBalance, kTargets };

// Zero-forcing directions H (H^H H)^{-1}, normalized. Balance: p_k ~ sigma^2/g_k
// with sum P_max. Targets: p_k = gamma_k sigma^2 / g_k.
CMatrix zf_beamformer(const ChannelSample& sample, ZfMode mode);

// Regularized ZF directions (H H^H + alpha I)^{-1} H, normalized, ZF-balance
// powers. alpha < 0 selects K sigma^2 / P_max.
// Unset alpha selects K sigma^2 / P_max.
CMatrix rzf_beamformer(const ChannelSample& sample, std::optional<double> alpha = std::nullopt);

// Maximum-ratio directions h_k / ||h_k|| with balance-mode powers.
CMatrix mrt_beamformer(const ChannelSample& sample);

struct WmmseResult {
  CMatrix W;
  double sum_rate = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // sum rate after each iteration, trace[0] = initial
  // Wiener weights of the last transmit update expressed as virtual uplink
  // powers: lambda_j = sigma^2 v_j |u_j|^2 / mu. Empty if mu == 0.
  RVector virtual_powers;
  double mu = 0.0;
};

WmmseResult wmmse_sum_rate(const ChannelSample& sample, double tol = 1e-8,
                           int max_iter = 10000);

}  // namespace bnnkit::solvers

#endif  // BNNKIT_SOLVERS_HPP
