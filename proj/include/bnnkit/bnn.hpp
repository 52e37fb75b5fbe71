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

#ifndef BNNKIT_BNN_HPP
#define BNNKIT_BNN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bnnkit/channel.hpp"
#include "bnnkit/linalg.hpp"
#include "bnnkit/nn.hpp"

namespace bnnkit::bnn {

using channel::ChannelSample;
using channel::Dataset;
using channel::ProblemTag;

// NN plus the fixed signal-processing path around it.
//
// Input for user k is the unit channel direction h_k / ||h_k||, scaled by
// log10(1 + P_max ||h_k||^2 / sigma^2) for balance and sum-rate (power-min
// instances are invariant to per-user gains once expressed in the feature
// below).  Outputs are per-user received-SNR features: x_k = q_k ||h_k||^2 /
// (sigma^2 gamma_k) for power-min, and q_k ||h_k||^2 / sigma^2 normalized to
// mean 1 over the active users for balance and sum-rate.
struct Pipeline {
  ProblemTag problem = ProblemTag::kSinrBalance;
  int pad_antennas = 0;
  int pad_users = 0;
  nn::Model model;

  int input_size() const { return 2 * pad_antennas * pad_users; }
};

Pipeline make_pipeline(ProblemTag problem, int pad_antennas, int pad_users,
                       const nn::ModelSpec& arch, std::uint64_t seed);
Pipeline make_pipeline(ProblemTag problem, int pad_antennas, int pad_users, std::uint64_t seed);

// Network input (planes, zero padded), length 2 * N0 * K0.
RVector encode_input(ProblemTag problem, const ChannelSample& sample, int pad_antennas,
                     int pad_users);
void encode_input_into(ProblemTag problem, const ChannelSample& sample, int pad_antennas,
                       int pad_users, double* out);

// Key features q (length K) <-> NN output units (length K).
RVector feature_from_key(ProblemTag problem, const ChannelSample& sample, const RVector& q);
RVector key_from_feature(ProblemTag problem, const ChannelSample& sample, const RVector& x);

struct Scaled {
  RVector q;
  bool degenerate = false;  // all-zero input replaced by equal powers
};

// q = q_hat * P_max / sum(q_hat).
Scaled scaling_layer(const RVector& q_hat, double power_budget);

struct Metrics {
  double min_sinr = 0.0;
  double total_power = 0.0;
  double sum_rate = 0.0;
  bool feasible = true;
  bool degenerate = false;
  // min_sinr, total_power or sum_rate according to the problem
  double objective(ProblemTag problem) const;
};

struct Conversion {
  CMatrix W;  // empty when infeasible
  RVector q;  // key features after scaling
  RVector p;  // downlink powers
  Metrics metrics;
};

Conversion conversion_layer(ProblemTag problem, const ChannelSample& sample, const RVector& q);

// NN outputs (first K units) -> q -> scaling (balance, sum-rate) -> conversion.
Conversion sp_module(ProblemTag problem, const ChannelSample& sample, const RVector& nn_active);

struct Prediction {
  CMatrix W;
  RVector q;
  Metrics metrics;
  double wall_time_s = 0.0;
};

Prediction predict(const Pipeline& pipeline, const ChannelSample& sample);

struct TrainingSet {
  RMatrix X;  // input_size x n
  RMatrix Y;  // K0 x n
};

TrainingSet make_training_set(const Pipeline& pipeline, const Dataset& dataset);

nn::TrainHistory train_supervised(Pipeline& pipeline, const Dataset& dataset,
                                  const nn::TrainConfig& config,
                                  const Dataset* validation = nullptr);

struct LossGrad {
  double loss = 0.0;
  double objective = 0.0;  // hard min-SINR or sum rate
  RVector grad;            // w.r.t. the K active NN outputs
  bool failed = false;
};

// Objective-based loss on the active NN outputs with central-difference
// gradients, step 1e-4 * max(1, y_k).  Balance: -softmin_tau(SINR);
// sum-rate: 1 / (rate + 1e-9).
class UnsupervisedLoss {
 public:
  explicit UnsupervisedLoss(ProblemTag problem, double tau = 10.0) : problem_(problem), tau_(tau) {}
  LossGrad evaluate(const ChannelSample& sample, const RVector& y_active, double rel_step = 1e-4);
  double loss_only(const ChannelSample& sample, const RVector& y_active, double* objective) const;
  std::size_t failures() const { return failures_; }

 private:
  ProblemTag problem_;
  double tau_;
  double max_observed_ = 0.0;
  std::size_t failures_ = 0;
};

double softmin(const RVector& v, double tau);

// Mean problem objective of predictions over a dataset.
double mean_objective(const Pipeline& pipeline, const Dataset& dataset);

struct HybridConfig {
  nn::TrainConfig supervised;
  nn::TrainConfig unsupervised;
};

struct HybridResult {
  nn::TrainHistory supervised_history;
  std::vector<double> unsupervised_loss;  // mean loss per stage-2 epoch
  double objective_supervised = 0.0;      // validation, after stage 1
  double objective_hybrid = 0.0;          // validation, after stage 2
  bool kept_stage2 = false;
  std::size_t failures = 0;
};

// Stage 1 supervised, stage 2 unsupervised from the stage-1 weights; stage 2
// is kept only if it does not lower the validation objective.
HybridResult train_hybrid(Pipeline& pipeline, const Dataset& train, const Dataset& validation,
                          const HybridConfig& config);

// One stage-2 pass over `train`; returns the mean loss per epoch.
std::vector<double> train_unsupervised(Pipeline& pipeline, const Dataset& train,
                                       const nn::TrainConfig& config,
                                       std::size_t* failures = nullptr);

struct FineTuneConfig {
  bool replace_io = true;
  double pretrained_multiplier = 0.0;
  int inserted_hidden = 64;
  // Input adapter starts as the zero-padding embedding of the new planes into
  // the old ones; otherwise random.
  bool adapter_padding_init = true;
  std::uint64_t seed = 1;
  nn::TrainConfig train;
};

// Builds the transfer model for `new_data` (pads from the dataset) without training it.
Pipeline transfer_pipeline(const Pipeline& base, const Dataset& new_data,
                           const FineTuneConfig& config, std::vector<double>* multipliers);

Pipeline fine_tune(const Pipeline& base, const Dataset& new_data, const FineTuneConfig& config,
                   const Dataset* validation = nullptr, nn::TrainHistory* history = nullptr);

nlohmann::json pipeline_meta(const Pipeline& pipeline);
Pipeline pipeline_from(nn::Model model, const nlohmann::json& meta);
void save_pipeline(const Pipeline& pipeline, const std::string& path);
Pipeline load_pipeline(const std::string& path);  // .bnn or .bnnz

}  // namespace bnnkit::bnn

#endif  // BNNKIT_BNN_HPP
