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

#include "bnnkit/bnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "bnnkit/compress.hpp"
#include "bnnkit/errors.hpp"
#include "bnnkit/solvers.hpp"

namespace bnnkit::bnn {

using nlohmann::json;

namespace {

constexpr double kRateEps = 1e-9;

void check_fits(const ChannelSample& s, int n0, int k0) {
  if (s.n_antennas() > n0 || s.n_users() > k0)
    throw DimensionError("instance " + std::to_string(s.n_antennas()) + "x" +
                         std::to_string(s.n_users()) + " exceeds the padding " +
                         std::to_string(n0) + "x" + std::to_string(k0));
}

const RVector& targets_of(const ChannelSample& s) {
  if (!s.sinr_targets || s.sinr_targets->size() != s.n_users())
    throw ContractError("power-min instance without SINR targets");
  return *s.sinr_targets;
}

bool higher_is_better(ProblemTag p) { return p != ProblemTag::kPowerMin; }

}  // namespace

Pipeline make_pipeline(ProblemTag problem, int pad_antennas, int pad_users,
                       const nn::ModelSpec& arch, std::uint64_t seed) {
  if (!(arch.input == nn::Shape::planes(2, pad_antennas, pad_users)))
    throw DimensionError("architecture input must be 2 x N0 x K0");
  Pipeline p{problem, pad_antennas, pad_users, nn::init_model(arch, seed)};
  if (p.model.output_dim() != pad_users) throw DimensionError("architecture output must be K0");
  return p;
}

Pipeline make_pipeline(ProblemTag problem, int pad_antennas, int pad_users, std::uint64_t seed) {
  return make_pipeline(problem, pad_antennas, pad_users,
                       nn::default_architecture(pad_antennas, pad_users), seed);
}

void encode_input_into(ProblemTag problem, const ChannelSample& s, int n0, int k0, double* out) {
  check_fits(s, n0, k0);
  std::fill(out, out + 2 * n0 * k0, 0.0);
  const int K = s.n_users();
  RVector inv_norm(K), scale(K);
  for (int k = 0; k < K; ++k) {
    const double g = s.H.col(k).squaredNorm();
    if (!(g > 0.0)) throw NumericError("zero channel vector");
    inv_norm[k] = 1.0 / std::sqrt(g);
    scale[k] = problem == ProblemTag::kPowerMin ? 1.0
                                                : std::log10(1.0 + s.power_budget * g / s.noise_power);
  }
  // Canonical triangular factor: R^H R is the Gram matrix of the unit
  // channels; real positive diagonal, real non-negative first row.
  CMatrix gram = s.H.adjoint() * s.H;
  gram = inv_norm.asDiagonal() * gram * inv_norm.asDiagonal();
  Eigen::LLT<CMatrix> llt(gram);
  CMatrix R;
  if (llt.info() == Eigen::Success) {
    R = llt.matrixU();
  } else {
    R = Eigen::HouseholderQR<CMatrix>(s.H * inv_norm.asDiagonal())
            .matrixQR()
            .topRows(K)
            .triangularView<Eigen::Upper>();
    for (int j = 0; j < K; ++j) {
      const double a = std::abs(R(j, j));
      if (a > 0.0) R.row(j) *= std::conj(R(j, j)) / a;
    }
  }
  CVector u = CVector::Ones(K);
  for (int k = 1; k < K; ++k) {
    const double a = std::abs(R(0, k));
    if (a > 0.0) u[k] = std::conj(R(0, k)) / a;
  }
  for (int j = 0; j < K; ++j)
    for (int k = j; k < K; ++k) {
      const cdouble v = R(j, k) * u[k] * std::conj(u[j]) * scale[k];
      out[j * k0 + k] = v.real();
      out[n0 * k0 + j * k0 + k] = v.imag();
    }
}

RVector encode_input(ProblemTag problem, const ChannelSample& s, int n0, int k0) {
  RVector v(2 * n0 * k0);
  encode_input_into(problem, s, n0, k0, v.data());
  return v;
}

RVector feature_from_key(ProblemTag problem, const ChannelSample& s, const RVector& q) {
  const int K = s.n_users();
  if (q.size() != K) throw DimensionError("key feature must have K entries");
  RVector x(K);
  for (int k = 0; k < K; ++k) x[k] = q[k] * s.H.col(k).squaredNorm() / s.noise_power;
  if (problem == ProblemTag::kPowerMin) return x.cwiseQuotient(targets_of(s));
  const double total = x.sum();
  return total > 0.0 ? RVector(x * (K / total)) : x;
}

RVector key_from_feature(ProblemTag problem, const ChannelSample& s, const RVector& x) {
  const int K = s.n_users();
  if (x.size() != K) throw DimensionError("feature must have K entries");
  RVector q(K);
  for (int k = 0; k < K; ++k)
    q[k] = std::max(x[k], 0.0) * s.noise_power / s.H.col(k).squaredNorm();
  if (problem == ProblemTag::kPowerMin) q = q.cwiseProduct(targets_of(s));
  return q;
}

Scaled scaling_layer(const RVector& q_hat, double power_budget) {
  if (q_hat.size() == 0) throw DimensionError("scaling_layer: empty input");
  if ((q_hat.array() < 0.0).any()) throw DomainError("scaling_layer: negative input");
  const double total = q_hat.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    return {RVector::Constant(q_hat.size(), power_budget / static_cast<double>(q_hat.size())), true};
  return {q_hat * (power_budget / total), false};
}

double Metrics::objective(ProblemTag problem) const {
  switch (problem) {
    case ProblemTag::kSinrBalance: return min_sinr;
    case ProblemTag::kPowerMin: return total_power;
    case ProblemTag::kSumRate: return sum_rate;
  }
  return 0.0;
}

Conversion conversion_layer(ProblemTag problem, const ChannelSample& s, const RVector& q) {
  Conversion out;
  out.q = q;
  if (problem == ProblemTag::kPowerMin) {
    const RVector& t = targets_of(s);
    const CMatrix W_unit = solvers::mmse_beamformers(s.H, q, s.noise_power);
    const auto c = solvers::coupling(s.H, W_unit, s.noise_power);
    if (!solvers::downlink_powers_for_targets(c, t, out.p)) {
      out.metrics.feasible = false;
      out.metrics.total_power = std::numeric_limits<double>::infinity();
      return out;
    }
    out.W = W_unit;
    for (Eigen::Index k = 0; k < out.W.cols(); ++k) out.W.col(k) *= std::sqrt(out.p[k]);
  } else {
    try {
      auto r = solvers::convert_q_to_W(s, q);
      out.W = std::move(r.W);
      out.p = std::move(r.p);
    } catch (const InfeasibleError&) {
      out.metrics.feasible = false;
      return out;
    }
  }
  const RVector g = solvers::downlink_sinr(s.H, out.W, s.noise_power);
  out.metrics.min_sinr = g.minCoeff();
  out.metrics.sum_rate = (1.0 + g.array()).log().sum() / std::log(2.0);
  out.metrics.total_power = out.W.squaredNorm();
  return out;
}

Conversion sp_module(ProblemTag problem, const ChannelSample& s, const RVector& nn_active) {
  const RVector q_hat = key_from_feature(problem, s, nn_active);
  if (problem == ProblemTag::kPowerMin) return conversion_layer(problem, s, q_hat);
  const Scaled scaled = scaling_layer(q_hat, s.power_budget);
  Conversion c = conversion_layer(problem, s, scaled.q);
  c.metrics.degenerate = scaled.degenerate;
  return c;
}

Prediction predict(const Pipeline& pipeline, const ChannelSample& s) {
  const auto t0 = std::chrono::steady_clock::now();
  RMatrix x(pipeline.input_size(), 1);
  encode_input_into(pipeline.problem, s, pipeline.pad_antennas, pipeline.pad_users, x.data());
  const RMatrix y = pipeline.model.predict(x);
  Conversion c = sp_module(pipeline.problem, s, y.col(0).head(s.n_users()));
  const auto t1 = std::chrono::steady_clock::now();
  Prediction p{std::move(c.W), std::move(c.q), c.metrics,
               std::chrono::duration<double>(t1 - t0).count()};
  return p;
}

TrainingSet make_training_set(const Pipeline& pipeline, const Dataset& dataset) {
  if (dataset.problem != pipeline.problem)
    throw ContractError("dataset problem '" + channel::to_string(dataset.problem) +
                        "' does not match the pipeline problem '" +
                        channel::to_string(pipeline.problem) + "'");
  const Eigen::Index n = static_cast<Eigen::Index>(dataset.size());
  TrainingSet ts{RMatrix(pipeline.input_size(), n), RMatrix::Zero(pipeline.pad_users, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = dataset.samples[static_cast<std::size_t>(i)];
    const int K = e.sample.n_users();
    encode_input_into(pipeline.problem, e.sample, pipeline.pad_antennas, pipeline.pad_users,
                      ts.X.col(i).data());
    ts.Y.col(i).head(K) = feature_from_key(pipeline.problem, e.sample, e.label.head(K));
  }
  return ts;
}

nn::TrainHistory train_supervised(Pipeline& pipeline, const Dataset& dataset,
                                  const nn::TrainConfig& config, const Dataset* validation) {
  const TrainingSet ts = make_training_set(pipeline, dataset);
  if (validation && validation->size() > 0) {
    const TrainingSet vs = make_training_set(pipeline, *validation);
    return nn::fit(pipeline.model, ts.X, ts.Y, config, &vs.X, &vs.Y);
  }
  return nn::fit(pipeline.model, ts.X, ts.Y, config);
}

double softmin(const RVector& v, double tau) {
  const double m = v.minCoeff();
  return m - std::log((-tau * (v.array() - m)).exp().sum()) / tau;
}

double UnsupervisedLoss::loss_only(const ChannelSample& s, const RVector& y,
                                   double* objective) const {
  if (problem_ == ProblemTag::kPowerMin)
    throw ContractError("unsupervised loss is defined for balance and sum-rate");
  const Conversion c = sp_module(problem_, s, y.cwiseMax(0.0));
  if (!c.metrics.feasible) return std::numeric_limits<double>::quiet_NaN();
  if (problem_ == ProblemTag::kSinrBalance) {
    if (objective) *objective = c.metrics.min_sinr;
    return -softmin(solvers::downlink_sinr(s.H, c.W, s.noise_power), tau_);
  }
  if (objective) *objective = c.metrics.sum_rate;
  return 1.0 / (c.metrics.sum_rate + kRateEps);
}

LossGrad UnsupervisedLoss::evaluate(const ChannelSample& s, const RVector& y, double rel_step) {
  LossGrad out;
  out.grad = RVector::Zero(y.size());
  double l0 = std::numeric_limits<double>::quiet_NaN();
  try {
    l0 = loss_only(s, y, &out.objective);
  } catch (const NumericError&) {
  }
  if (!std::isfinite(l0)) {
    ++failures_;
    out.failed = true;
    out.loss = 10.0 * (max_observed_ > 0.0 ? max_observed_ : 1.0);
    return out;
  }
  out.loss = l0;
  max_observed_ = std::max(max_observed_, std::abs(l0));
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    const double h = rel_step * std::max(1.0, y[k]);
    RVector yp = y, ym = y;
    yp[k] += h;
    ym[k] -= h;
    double lp = std::numeric_limits<double>::quiet_NaN(), lm = lp;
    try {
      lp = loss_only(s, yp, nullptr);
      lm = loss_only(s, ym, nullptr);
    } catch (const NumericError&) {
    }
    if (std::isfinite(lp) && std::isfinite(lm)) out.grad[k] = (lp - lm) / (2.0 * h);
  }
  return out;
}

double mean_objective(const Pipeline& pipeline, const Dataset& dataset) {
  if (dataset.size() == 0) throw DomainError("mean_objective: empty dataset");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& e : dataset.samples) {
    const Prediction p = predict(pipeline, e.sample);
    if (pipeline.problem == ProblemTag::kPowerMin && !p.metrics.feasible) continue;
    total += p.metrics.objective(pipeline.problem);
    ++n;
  }
  return n ? total / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> train_unsupervised(Pipeline& pipeline, const Dataset& train,
                                       const nn::TrainConfig& config, std::size_t* failures) {
  if (config.batch_size < 1 || config.epochs < 0) throw DomainError("bad batch size or epochs");
  const TrainingSet ts = make_training_set(pipeline, train);
  nn::Model& model = pipeline.model;
  std::vector<bool> was_frozen;
  for (std::size_t i = 0; i < model.num_layers(); ++i) was_frozen.push_back(model.layer(i).frozen);
  const auto mult = nn::apply_multipliers(model, config.layer_multipliers);
  nn::Adam adam(model, {config.learning_rate, config.beta1, config.beta2, config.adam_eps});
  UnsupervisedLoss loss(pipeline.problem);
  Rng rng(config.seed);
  std::vector<double> history;
  const Eigen::Index n = ts.X.cols();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm = nn::shuffled_indices(n, rng);
    double total = 0.0;
    for (Eigen::Index s0 = 0; s0 < n; s0 += config.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n - s0);
      RMatrix Xb(ts.X.rows(), b);
      for (Eigen::Index j = 0; j < b; ++j) Xb.col(j) = ts.X.col(perm[static_cast<std::size_t>(s0 + j)]);
      const RMatrix out = model.forward(Xb, nn::Mode::kTrain);
      RMatrix G = RMatrix::Zero(out.rows(), b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto& sample = train.samples[static_cast<std::size_t>(perm[static_cast<std::size_t>(s0 + j)])].sample;
        const int K = sample.n_users();
        const LossGrad lg = loss.evaluate(sample, out.col(j).head(K));
        G.col(j).head(K) = lg.grad / static_cast<double>(b);
        total += lg.loss;
      }
      model.backward(G);
      adam.step(model, mult);
    }
    history.push_back(n ? total / static_cast<double>(n) : 0.0);
    adam.set_learning_rate(adam.config().learning_rate * config.lr_decay);
  }
  for (std::size_t i = 0; i < model.num_layers(); ++i) model.layer(i).frozen = was_frozen[i];
  if (failures) *failures = loss.failures();
  return history;
}

HybridResult train_hybrid(Pipeline& pipeline, const Dataset& train, const Dataset& validation,
                          const HybridConfig& config) {
  if (!higher_is_better(pipeline.problem))
    throw ContractError("hybrid training is defined for balance and sum-rate");
  HybridResult r;
  r.supervised_history = train_supervised(pipeline, train, config.supervised, &validation);
  r.objective_supervised = mean_objective(pipeline, validation);
  const nn::Model stage1 = pipeline.model;
  r.unsupervised_loss = train_unsupervised(pipeline, train, config.unsupervised, &r.failures);
  r.objective_hybrid = mean_objective(pipeline, validation);
  r.kept_stage2 = r.objective_hybrid >= r.objective_supervised;
  if (!r.kept_stage2) {
    pipeline.model = stage1;
    r.objective_hybrid = r.objective_supervised;
  }
  return r;
}

namespace {

void copy_state(const nn::Layer& src_const, nn::Layer& dst) {
  auto& src = const_cast<nn::Layer&>(src_const);  // params() is not const; nothing is modified
  const auto ps = src.params();
  const auto pd = dst.params();
  const auto bs = src.buffers();
  const auto bd = dst.buffers();
  if (ps.size() != pd.size() || bs.size() != bd.size())
    throw DimensionError("fine_tune: layer structure changed");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->value.rows() != pd[i]->value.rows() || ps[i]->value.cols() != pd[i]->value.cols())
      throw DimensionError("fine_tune: pretrained layer shape changed");
    pd[i]->value = ps[i]->value;
  }
  for (std::size_t i = 0; i < bs.size(); ++i) *bd[i] = *bs[i];
}

}  // namespace

Pipeline transfer_pipeline(const Pipeline& base, const Dataset& new_data,
                           const FineTuneConfig& config, std::vector<double>* multipliers) {
  if (new_data.problem != base.problem) throw ContractError("fine_tune: problem tag differs");
  if (!(config.pretrained_multiplier >= 0.0)) throw DomainError("multipliers must be >= 0");
  if (!config.replace_io) {
    Pipeline p = base;
    if (multipliers)
      *multipliers = config.train.layer_multipliers.empty()
                         ? std::vector<double>(p.model.num_layers(), config.pretrained_multiplier)
                         : config.train.layer_multipliers;
    return p;
  }
  const int n1 = new_data.pad_antennas, k1 = new_data.pad_users;
  if (n1 < 1 || k1 < 1) throw DimensionError("fine_tune: new dataset has no dimensions");
  const auto& old_layers = base.model.spec().layers;
  std::size_t last_dense = old_layers.size();
  for (std::size_t i = old_layers.size(); i-- > 0;)
    if (old_layers[i].kind == nn::LayerKind::kDense) {
      last_dense = i;
      break;
    }
  if (last_dense == old_layers.size()) throw DimensionError("fine_tune: no output layer to replace");

  nn::ModelSpec spec;
  spec.input = nn::Shape::planes(2, n1, k1);
  std::vector<double> mult;
  std::vector<std::ptrdiff_t> origin;  // base layer index, -1 for new layers
  auto add = [&](const nn::LayerSpec& l, double m, std::ptrdiff_t from) {
    spec.layers.push_back(l);
    mult.push_back(m);
    origin.push_back(from);
  };
  add(nn::LayerSpec::flatten(), 1.0, -1);
  add(nn::LayerSpec::dense_to(base.model.input_shape()), 1.0, -1);
  for (std::size_t i = 0; i < last_dense; ++i)
    add(old_layers[i], config.pretrained_multiplier, static_cast<std::ptrdiff_t>(i));
  if (config.inserted_hidden > 0) {
    add(nn::LayerSpec::dense(config.inserted_hidden), 1.0, -1);
    add(nn::LayerSpec::act(nn::ActivationKind::kRelu), 1.0, -1);
  }
  add(nn::LayerSpec::dense(k1), 1.0, -1);
  for (std::size_t i = last_dense + 1; i < old_layers.size(); ++i)
    add(old_layers[i], 1.0, static_cast<std::ptrdiff_t>(i));

  Pipeline p{base.problem, n1, k1, nn::init_model(spec, config.seed)};
  for (std::size_t i = 0; i < origin.size(); ++i)
    if (origin[i] >= 0) copy_state(base.model.layer(static_cast<std::size_t>(origin[i])), p.model.layer(i));
  if (config.adapter_padding_init) {
    auto params = p.model.layer(1).params();
    RMatrix& W = params[0]->value;
    W.setZero();
    params[1]->value.setZero();
    const int n0 = base.model.input_shape().height, k0 = base.model.input_shape().width;
    if (n1 > n0 || k1 > k0)
      throw DimensionError("fine_tune: padding init needs the new task to fit the old padding");
    for (int plane = 0; plane < 2; ++plane)
      for (int n = 0; n < n1; ++n)
        for (int k = 0; k < k1; ++k) W(plane * n0 * k0 + n * k0 + k, plane * n1 * k1 + n * k1 + k) = 1.0;
  }
  if (p.model.output_dim() != k1) throw DimensionError("fine_tune: output size mismatch");
  if (multipliers) *multipliers = mult;
  return p;
}

Pipeline fine_tune(const Pipeline& base, const Dataset& new_data, const FineTuneConfig& config,
                   const Dataset* validation, nn::TrainHistory* history) {
  std::vector<double> mult;
  Pipeline p = transfer_pipeline(base, new_data, config, &mult);
  nn::TrainConfig cfg = config.train;
  cfg.layer_multipliers = mult;
  auto h = train_supervised(p, new_data, cfg, validation);
  if (history) *history = std::move(h);
  return p;
}

json pipeline_meta(const Pipeline& p) {
  return {{"problem", channel::to_string(p.problem)},
          {"pad_antennas", p.pad_antennas},
          {"pad_users", p.pad_users},
          {"features", 1}};
}

Pipeline pipeline_from(nn::Model model, const json& meta) {
  try {
    Pipeline p;
    p.problem = channel::problem_from_string(meta.at("problem").get<std::string>());
    p.pad_antennas = meta.at("pad_antennas").get<int>();
    p.pad_users = meta.at("pad_users").get<int>();
    if (meta.value("features", 0) != 1) throw FormatError("unsupported feature version");
    if (model.input_shape().size() != 2 * p.pad_antennas * p.pad_users ||
        model.output_dim() != p.pad_users)
      throw FormatError("model shape does not match the pipeline padding");
    p.model = std::move(model);
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model file lacks pipeline metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
}

void save_pipeline(const Pipeline& p, const std::string& path) {
  compress::save_model(p.model, path, pipeline_meta(p));
}

Pipeline load_pipeline(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const bool packed = bytes.size() >= 4 && bytes[0] == 'B' && bytes[1] == 'N' && bytes[2] == 'N' &&
                      bytes[3] == 'Z';
  auto loaded = packed ? compress::decode_compressed(bytes) : compress::deserialize_model(bytes);
  return pipeline_from(std::move(loaded.model), loaded.meta);
}

}  // namespace bnnkit::bnn
