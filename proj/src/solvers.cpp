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

#include "bnnkit/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bnnkit/errors.hpp"

namespace bnnkit::solvers {

namespace {

void check_shapes(const CMatrix& H, const CMatrix& W) {
  if (H.rows() != W.rows() || H.cols() != W.cols())
    throw DimensionError("H and W must both be N x K");
}

void check_sample(const ChannelSample& s) {
  if (s.H.cols() < 1 || s.H.rows() < 1) throw DimensionError("empty channel matrix");
  if (!(s.noise_power > 0.0)) throw DomainError("noise power must be positive");
  if (!(s.power_budget > 0.0)) throw DomainError("power budget must be positive");
  if (!s.H.allFinite()) throw NumericError("channel has non-finite entries");
}

void normalize_columns(CMatrix& W) {
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    const double n = W.col(k).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("zero or non-finite beamformer");
    W.col(k) /= n;
  }
}

// Scales column k by sqrt(p_k).
CMatrix apply_powers(const CMatrix& W_unit, const RVector& p) {
  CMatrix W = W_unit;
  for (Eigen::Index k = 0; k < W.cols(); ++k) W.col(k) *= std::sqrt(std::max(p[k], 0.0));
  return W;
}

// p_k ~ sigma^2 / g_k scaled to the budget: equal SINRs when interference is nulled.
RVector inverse_gain_powers(const CMatrix& H, const CMatrix& W_unit, double noise_power,
                            double power_budget) {
  const Eigen::Index K = H.cols();
  RVector p(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double g = std::norm(H.col(k).dot(W_unit.col(k)));
    if (!(g > 0.0)) throw NumericError("beamformer orthogonal to its own user");
    p[k] = noise_power / g;
  }
  return p * (power_budget / p.sum());
}

}  // namespace

RVector downlink_sinr(const CMatrix& H, const CMatrix& W, double noise_power) {
  check_shapes(H, W);
  const RMatrix M = (H.adjoint() * W).cwiseAbs2();  // M(k, j) = |h_k^H w_j|^2
  RVector out(H.cols());
  for (Eigen::Index k = 0; k < H.cols(); ++k) {
    const double signal = M(k, k);
    out[k] = signal / (M.row(k).sum() - signal + noise_power);
  }
  return out;
}

double sum_rate(const CMatrix& H, const CMatrix& W, double noise_power) {
  const RVector g = downlink_sinr(H, W, noise_power);
  double r = 0.0;
  for (Eigen::Index k = 0; k < g.size(); ++k) r += std::log2(1.0 + g[k]);
  return r;
}

CouplingData coupling(const CMatrix& H, const CMatrix& W_unit, double noise_power) {
  check_shapes(H, W_unit);
  CouplingData c;
  c.Psi = (H.adjoint() * W_unit).cwiseAbs2();
  c.G = c.Psi.diagonal();
  c.Psi.diagonal().setZero();
  c.noise = RVector::Constant(H.cols(), noise_power);
  return c;
}

CMatrix mmse_beamformers(const CMatrix& H, const RVector& q, double noise_power) {
  const Eigen::Index N = H.rows(), K = H.cols();
  if (q.size() != K) throw DimensionError("mmse_beamformers: q must have K entries");
  if ((q.array() < 0.0).any() || !q.allFinite())
    throw DomainError("mmse_beamformers: q must be finite and non-negative");
  CMatrix R = CMatrix::Identity(N, N) * noise_power;
  R.noalias() += H * q.cast<cdouble>().asDiagonal() * H.adjoint();
  Eigen::LLT<CMatrix> llt(R);
  if (llt.info() != Eigen::Success) throw NumericError("mmse_beamformers: singular covariance");
  CMatrix W = llt.solve(H);
  normalize_columns(W);
  return W;
}

BalancedAllocation balanced_allocation(const CouplingData& c, double power_budget,
                                       LinkDirection direction, double eig_tol, int max_iter) {
  const Eigen::Index K = c.G.size();
  if (c.Psi.rows() != K || c.Psi.cols() != K || c.noise.size() != K)
    throw DimensionError("balanced_allocation: inconsistent coupling data");
  if ((c.G.array() <= 0.0).any()) throw DomainError("balanced_allocation: gains must be > 0");
  if (!(power_budget > 0.0)) throw DomainError("balanced_allocation: budget must be > 0");

  const RVector d = c.G.cwiseInverse();
  const RMatrix DM = d.asDiagonal() * (direction == LinkDirection::kDownlink
                                           ? c.Psi
                                           : RMatrix(c.Psi.transpose()));
  const RVector Dn = d.cwiseProduct(c.noise);

  RMatrix ext(K + 1, K + 1);
  ext.topLeftCorner(K, K) = DM;
  ext.topRightCorner(K, 1) = Dn;
  ext.bottomLeftCorner(1, K) = DM.colwise().sum() / power_budget;
  ext(K, K) = Dn.sum() / power_budget;

  RVector x = RVector::Constant(K + 1, 1.0 / static_cast<double>(K + 1));
  double lambda = 0.0;
  int it = 0;
  for (;;) {
    ++it;
    RVector y = ext * x;
    const double next = y.sum();  // x sums to one, entries non-negative
    if (!(next > 0.0) || !std::isfinite(next))
      throw NumericError("balanced_allocation: degenerate extended matrix");
    x = y / next;
    const bool done = it > 1 && std::abs(next - lambda) <= eig_tol * next;
    lambda = next;
    if (done) break;
    if (it >= max_iter)
      throw NonConvergenceError("balanced_allocation: power iteration did not converge",
                                1.0 / lambda);
  }

  BalancedAllocation out;
  out.C = 1.0 / lambda;
  out.iterations = it;
  // p = C (DM p + Dn); a direct solve makes every SINR equal C to rounding.
  const RMatrix A = RMatrix::Identity(K, K) - out.C * DM;
  out.power = A.partialPivLu().solve(out.C * Dn);
  if (!out.power.allFinite() || (out.power.array() < 0.0).any()) {
    out.power = x.head(K) / x[K];
  }
  out.power *= power_budget / out.power.sum();
  return out;
}

BalanceResult sinr_balance_solve(const ChannelSample& sample, double tol, int max_iter) {
  check_sample(sample);
  const Eigen::Index K = sample.H.cols();
  const double P = sample.power_budget;
  const double s2 = sample.noise_power;

  BalanceResult res;
  res.q = RVector::Constant(K, P / static_cast<double>(K));
  CMatrix W_unit;
  CouplingData c;
  double prev = 0.0;
  for (int it = 1;; ++it) {
    W_unit = mmse_beamformers(sample.H, res.q, s2);
    c = coupling(sample.H, W_unit, s2);
    const BalancedAllocation ul = balanced_allocation(c, P, LinkDirection::kUplink);
    res.q = ul.power;
    res.C = ul.C;
    res.iterations = it;
    if (it > 1 && std::abs(res.C - prev) <= tol * res.C) break;
    prev = res.C;
    if (it >= max_iter)
      throw NonConvergenceError("sinr_balance_solve: max_iter exceeded", res.C);
  }
  const BalancedAllocation dl = balanced_allocation(c, P, LinkDirection::kDownlink);
  res.p = dl.power;
  res.C_downlink = dl.C;
  res.W = apply_powers(W_unit, res.p);
  return res;
}

bool downlink_powers_for_targets(const CouplingData& c, const RVector& targets, RVector& p) {
  const Eigen::Index K = c.G.size();
  if (targets.size() != K) throw DimensionError("targets must have K entries");
  const RVector dg = targets.cwiseQuotient(c.G);
  const RMatrix A = RMatrix::Identity(K, K) - dg.asDiagonal() * c.Psi;
  p = A.partialPivLu().solve(dg.cwiseProduct(c.noise));
  if (!p.allFinite()) return false;
  for (Eigen::Index k = 0; k < K; ++k) {
    if (targets[k] > 0.0 && !(p[k] > 0.0)) return false;
    if (targets[k] == 0.0) p[k] = std::max(p[k], 0.0);
  }
  return true;
}

ConversionResult convert_q_to_W(const ChannelSample& sample, const RVector& q) {
  check_sample(sample);
  const Eigen::Index K = sample.H.cols();
  if (q.size() != K) throw DimensionError("convert_q_to_W: q must have K entries");
  if ((q.array() < 0.0).any() || !(q.sum() > 0.0))
    throw DomainError("convert_q_to_W: q must be non-negative with positive sum");

  // Users below 1e-15 of the total are switched off; their power solve would
  // otherwise round to a non-positive value and reject a valid allocation.
  const RVector qa = (q.array() < 1e-15 * q.sum()).select(0.0, q);
  ConversionResult out;
  const CMatrix W_unit = mmse_beamformers(sample.H, qa, sample.noise_power);
  const CouplingData c = coupling(sample.H, W_unit, sample.noise_power);
  // Uplink interference at receiver k: sum_j q_j |w_k^H h_j|^2 = (Psi^T q)_k.
  const RVector interference = c.Psi.transpose() * qa;
  out.uplink_sinr = (qa.cwiseProduct(c.G)).cwiseQuotient(interference + c.noise);
  if (!downlink_powers_for_targets(c, out.uplink_sinr, out.p))
    throw InfeasibleError("convert_q_to_W: downlink power solve is not positive");
  out.W = apply_powers(W_unit, out.p);
  out.sinr = downlink_sinr(sample.H, out.W, sample.noise_power);
  return out;
}

PowerMinResult power_min_solve(const ChannelSample& sample, double tol, int max_iter,
                               double power_cap) {
  check_sample(sample);
  const Eigen::Index N = sample.H.rows(), K = sample.H.cols();
  if (!sample.sinr_targets || sample.sinr_targets->size() != K)
    throw DimensionError("power_min_solve: sample needs K SINR targets");
  const RVector& targets = *sample.sinr_targets;
  if ((targets.array() <= 0.0).any()) throw DomainError("power_min_solve: targets must be > 0");
  const double s2 = sample.noise_power;
  const double cap = power_cap > 0.0 ? power_cap : 1e12 * s2;
  const CMatrix& H = sample.H;

  PowerMinResult res;
  RVector q = RVector::Zero(K);
  RVector next(K);
  CMatrix R(N, N), Rk(N, N);
  Eigen::LLT<CMatrix> llt(N);
  for (int it = 1;; ++it) {
    R.setIdentity();
    R *= s2;
    R.noalias() += H * q.cast<cdouble>().asDiagonal() * H.adjoint();
    for (Eigen::Index k = 0; k < K; ++k) {
      Rk = R;
      Rk.noalias() -= q[k] * H.col(k) * H.col(k).adjoint();
      llt.compute(Rk);
      if (llt.info() != Eigen::Success) throw NumericError("power_min_solve: singular covariance");
      const double a = H.col(k).dot(llt.solve(H.col(k))).real();
      next[k] = targets[k] / a;
      if (!(next[k] <= cap))
        throw InfeasibleError("power_min_solve: virtual power of user " + std::to_string(k) +
                              " exceeds cap (targets infeasible)");
    }
    double change = 0.0;
    for (Eigen::Index k = 0; k < K; ++k)
      change = std::max(change, std::abs(next[k] - q[k]) / next[k]);
    q = next;
    res.iterations = it;
    if (change <= tol) break;
    if (it >= max_iter) throw NonConvergenceError("power_min_solve: max_iter exceeded", q.sum());
  }

  const CMatrix W_unit = mmse_beamformers(H, q, s2);
  const CouplingData c = coupling(H, W_unit, s2);
  if (!downlink_powers_for_targets(c, targets, res.p))
    throw InfeasibleError("power_min_solve: downlink power solve is not positive");
  res.q = q;
  res.W = apply_powers(W_unit, res.p);
  res.total_power = res.p.sum();
  return res;
}

CMatrix zf_beamformer(const ChannelSample& sample, ZfMode mode) {
  check_sample(sample);
  const CMatrix& H = sample.H;
  const Eigen::Index K = H.cols();
  if (K > H.rows()) throw DimensionError("zf_beamformer: K > N");
  const CMatrix gram = H.adjoint() * H;
  Eigen::FullPivLU<CMatrix> lu(gram);
  lu.setThreshold(1e-12);
  if (lu.rank() < K) throw NumericError("zf_beamformer: channel is rank deficient");
  CMatrix W_unit = H * lu.inverse();
  normalize_columns(W_unit);

  RVector p;
  if (mode == ZfMode::kBalance) {
    p = inverse_gain_powers(H, W_unit, sample.noise_power, sample.power_budget);
  } else {
    if (!sample.sinr_targets || sample.sinr_targets->size() != K)
      throw DimensionError("zf_beamformer: target mode needs K SINR targets");
    p.resize(K);
    for (Eigen::Index k = 0; k < K; ++k)
      p[k] = (*sample.sinr_targets)[k] * sample.noise_power /
             std::norm(H.col(k).dot(W_unit.col(k)));
  }
  return apply_powers(W_unit, p);
}

CMatrix rzf_beamformer(const ChannelSample& sample, std::optional<double> alpha_opt) {
  check_sample(sample);
  const CMatrix& H = sample.H;
  const Eigen::Index K = H.cols();
  const double alpha =
      alpha_opt.value_or(static_cast<double>(K) * sample.noise_power / sample.power_budget);
  if (!(alpha >= 0.0)) throw DomainError("rzf_beamformer: alpha must be >= 0");
  // (H H^H + a I)^{-1} H == H (H^H H + a I)^{-1}; the right form stays defined at a = 0.
  CMatrix gram = H.adjoint() * H;
  gram.diagonal().array() += alpha;
  CMatrix W_unit = H * gram.partialPivLu().inverse();
  normalize_columns(W_unit);
  return apply_powers(W_unit,
                      inverse_gain_powers(H, W_unit, sample.noise_power, sample.power_budget));
}

CMatrix mrt_beamformer(const ChannelSample& sample) {
  check_sample(sample);
  CMatrix W_unit = sample.H;
  normalize_columns(W_unit);
  return apply_powers(
      W_unit, inverse_gain_powers(sample.H, W_unit, sample.noise_power, sample.power_budget));
}

WmmseResult wmmse_sum_rate(const ChannelSample& sample, double tol, int max_iter) {
  check_sample(sample);
  const CMatrix& H = sample.H;
  const Eigen::Index N = H.rows(), K = H.cols();
  const double s2 = sample.noise_power;
  const double P = sample.power_budget;

  WmmseResult res;
  res.W = K <= N ? zf_beamformer(sample, ZfMode::kBalance) : mrt_beamformer(sample);
  res.sum_rate = sum_rate(H, res.W, s2);
  res.trace.push_back(res.sum_rate);

  RVector a(K);
  CMatrix B(N, K);
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(N);
  for (int it = 1; it <= max_iter; ++it) {
    const CMatrix HW = H.adjoint() * res.W;  // HW(k, j) = h_k^H w_j
    for (Eigen::Index k = 0; k < K; ++k) {
      const double total = HW.row(k).squaredNorm() + s2;
      const cdouble u = HW(k, k) / total;
      const double mse = 1.0 - (std::conj(u) * HW(k, k)).real();
      const double v = 1.0 / mse;
      a[k] = v * std::norm(u);
      B.col(k) = H.col(k) * (u * v);
    }
    const CMatrix A = H * a.cast<cdouble>().asDiagonal() * H.adjoint();
    eig.compute(A);
    if (eig.info() != Eigen::Success) throw NumericError("wmmse: eigendecomposition failed");
    const RVector d = eig.eigenvalues().cwiseMax(0.0);
    const CMatrix C = eig.eigenvectors().adjoint() * B;
    const RVector c = C.rowwise().squaredNorm();
    auto power_at = [&](double mu) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < N; ++i) s += c[i] / ((d[i] + mu) * (d[i] + mu));
      return s;
    };

    double mu = 0.0;
    const bool regular = d.minCoeff() > 1e-14 * d.maxCoeff();
    if (!regular || power_at(0.0) > P) {
      double lo = 0.0;
      double hi = std::sqrt(c.sum() / P);
      if (!(hi > 0.0) || !std::isfinite(hi)) throw NumericError("wmmse: bisection bracket failed");
      for (int b = 0; b < 300 && hi - lo > 1e-15 * hi; ++b) {
        const double mid = 0.5 * (lo + hi);
        (power_at(mid) > P ? lo : hi) = mid;
      }
      mu = hi;
      if (!(power_at(mu) <= P * (1.0 + 1e-12))) throw NumericError("wmmse: bisection failed");
    }
    RVector scale(N);
    for (Eigen::Index i = 0; i < N; ++i) scale[i] = 1.0 / (d[i] + mu);
    res.W = eig.eigenvectors() * (scale.cast<cdouble>().asDiagonal() * C);
    res.mu = mu;
    if (mu > 0.0)
      res.virtual_powers = a * (s2 / mu);
    else
      res.virtual_powers.resize(0);

    const double rate = sum_rate(H, res.W, s2);
    res.trace.push_back(rate);
    res.iterations = it;
    const bool done = std::abs(rate - res.sum_rate) <= tol * rate;
    res.sum_rate = rate;
    if (done) break;
  }
  return res;
}

}  // namespace bnnkit::solvers
