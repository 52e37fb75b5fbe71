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

#ifndef BNNKIT_NN_HPP
#define BNNKIT_NN_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnnkit/linalg.hpp"
#include "bnnkit/rng.hpp"

namespace bnnkit::nn {

// Activations are stored one sample per column; a sample of shape (c, h, w)
// occupies index c*h*w + i*w + j.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  bool flat = true;

  static Shape vector(int n) { return {n, 1, 1, true}; }
  static Shape planes(int c, int h, int w) { return {c, h, w, false}; }
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

enum class Mode { kTrain, kInfer };
enum class LayerKind { kConv2D, kBatchNorm, kActivation, kFlatten, kDense };
enum class ActivationKind { kRelu, kSoftplus, kAbs };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  // conv
  int out_channels = 0;
  int kernel_h = 3;
  int kernel_w = 3;
  // batch norm
  double eps = 1e-5;
  double momentum = 0.9;
  // activation
  ActivationKind activation = ActivationKind::kRelu;
  // dense; out_shape reshapes the output into planes (input adapters)
  int out_dim = 0;
  std::optional<Shape> out_shape;

  static LayerSpec conv(int out_channels, int kh, int kw);
  static LayerSpec batch_norm(double eps = 1e-5, double momentum = 0.9);
  static LayerSpec act(ActivationKind a);
  static LayerSpec flatten();
  static LayerSpec dense(int out_dim);
  static LayerSpec dense_to(const Shape& shape);
};

struct ModelSpec {
  Shape input;
  std::vector<LayerSpec> layers;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
std::string to_string(LayerKind kind);
std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& name);

// input 2 x N0 x K0 -> conv(c, 3x3) -> BN -> relu -> flatten -> dense(hidden)
// -> relu -> dense(K0) -> abs
ModelSpec default_architecture(int pad_antennas, int pad_users, int conv_channels = 8,
                               int hidden = 128);

struct Param {
  std::string name;
  RMatrix value;
  RMatrix grad;
  bool prunable = false;  // connection weights, not biases
};

class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;

  // Validates the input shape and sizes parameters; returns the output shape.
  virtual Shape configure(const Shape& in) = 0;
  virtual void init(Rng& rng) { (void)rng; }
  // Train mode caches what backward needs; infer mode touches no state.
  RMatrix forward(const RMatrix& x, Mode mode) {
    return mode == Mode::kInfer ? infer(x) : train_forward(x);
  }
  virtual RMatrix infer(const RMatrix& x) const = 0;
  virtual RMatrix backward(const RMatrix& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  // Non-trainable state that is serialized (running statistics).
  virtual std::vector<RMatrix*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  const LayerSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return in_; }
  const Shape& output_shape() const { return out_; }
  // Frozen layers keep their running statistics in train mode.
  bool frozen = false;

 protected:
  virtual RMatrix train_forward(const RMatrix& x) = 0;
  void require_cache(const char* who) const;
  LayerSpec spec_;
  Shape in_, out_;
  bool cached_ = false;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

class Model {
 public:
  Model() = default;
  explicit Model(ModelSpec spec);  // parameters zero until init
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return spec_.input; }
  int output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // x: input_size x batch.  Throws NumericError naming the layer producing a
  // non-finite value.
  RMatrix forward(const RMatrix& x, Mode mode);
  // Infer-mode forward that leaves the model untouched.
  RMatrix predict(const RMatrix& x) const;
  // Fills every Param::grad for the last train-mode batch; returns the input gradient.
  RMatrix backward(const RMatrix& grad_out);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::size_t num_parameters() const;

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// He-style uniform fan-in init, zero biases, unit BN scale.
Model init_model(const ModelSpec& spec, std::uint64_t seed);
void init_layer(Layer& layer, Rng& rng);

enum class LossKind { kMse, kMae };

LossKind loss_from_string(const std::string& name);
std::string to_string(LossKind kind);

struct LossResult {
  double value = 0.0;
  RMatrix grad;
};

// Mean over every entry of the batch.
LossResult loss_and_grad(LossKind kind, const RMatrix& predictions, const RMatrix& labels);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const Model& model, AdamConfig config);
  // Per-layer learning rate = config rate * multipliers[layer]; empty means 1.
  void step(Model& model, const std::vector<double>& multipliers = {});
  long steps() const { return t_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<RMatrix> m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  int batch_size = 64;
  int epochs = 10;
  double learning_rate = 1e-3;
  std::vector<double> layer_multipliers;  // per layer index; empty = all 1
  LossKind loss = LossKind::kMse;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Multiplies the learning rate by this factor after every epoch.
  double lr_decay = 1.0;
  // With validation data, keep the weights of the best validation epoch.
  bool keep_best = false;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainHistory {
  // loss[0]: infer-mode loss of the starting model on the training set;
  // loss[e]: mean mini-batch loss during epoch e.
  std::vector<double> loss;
  std::vector<double> validation_loss;  // same indexing, infer mode
  int best_epoch = 0;
};

// Supervised fit; columns of X / Y are samples.
TrainHistory fit(Model& model, const RMatrix& X, const RMatrix& Y, const TrainConfig& config,
                 const RMatrix* X_val = nullptr, const RMatrix* Y_val = nullptr);

// Layers with multiplier 0 are marked frozen; returns the effective multipliers.
std::vector<double> apply_multipliers(Model& model, const std::vector<double>& multipliers);

double evaluate_loss(const Model& model, const RMatrix& X, const RMatrix& Y, LossKind kind,
                     int batch_size = 1024);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name, or "input"
};

// Central differences on every parameter entry and on the input, relative
// error per tensor as ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-4 * g)
// where g is the largest analytic gradient norm in the model.
GradCheckReport gradient_check(Model& model, const RMatrix& X, const RMatrix& Y, LossKind kind,
                               double step = 1e-6);

// Column permutation helper shared by the training loops.
std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, Rng& rng);

}  // namespace bnnkit::nn

#endif  // BNNKIT_NN_HPP
