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

#include "bnnkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bnnkit/errors.hpp"

namespace bnnkit::nn {

using nlohmann::json;

LayerSpec LayerSpec::conv(int out_channels, int kh, int kw) {
  LayerSpec s;
  s.kind = LayerKind::kConv2D;
  s.out_channels = out_channels;
  s.kernel_h = kh;
  s.kernel_w = kw;
  return s;
}

LayerSpec LayerSpec::batch_norm(double eps, double momentum) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.eps = eps;
  s.momentum = momentum;
  return s;
}

LayerSpec LayerSpec::act(ActivationKind a) {
  LayerSpec s;
  s.kind = LayerKind::kActivation;
  s.activation = a;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

LayerSpec LayerSpec::dense(int out_dim) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.out_dim = out_dim;
  return s;
}

LayerSpec LayerSpec::dense_to(const Shape& shape) {
  LayerSpec s = dense(shape.size());
  s.out_shape = shape;
  return s;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kDense: return "dense";
  }
  return "?";
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kSoftplus: return "softplus";
    case ActivationKind::kAbs: return "abs";
  }
  return "?";
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "softplus") return ActivationKind::kSoftplus;
  if (name == "abs") return ActivationKind::kAbs;
  throw FormatError("unknown activation '" + name + "'");
}

namespace {

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::kConv2D, LayerKind::kBatchNorm, LayerKind::kActivation,
                 LayerKind::kFlatten, LayerKind::kDense})
    if (to_string(k) == name) return k;
  throw FormatError("unknown layer kind '" + name + "'");
}

json shape_json(const Shape& s) {
  return {{"channels", s.channels}, {"height", s.height}, {"width", s.width}, {"flat", s.flat}};
}

Shape shape_from_json(const json& j) {
  Shape s;
  s.channels = j.at("channels").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.flat = j.at("flat").get<bool>();
  return s;
}

}  // namespace

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::kConv2D:
        j["out_channels"] = l.out_channels;
        j["kernel"] = {l.kernel_h, l.kernel_w};
        break;
      case LayerKind::kBatchNorm:
        j["eps"] = l.eps;
        j["momentum"] = l.momentum;
        break;
      case LayerKind::kActivation: j["activation"] = to_string(l.activation); break;
      case LayerKind::kFlatten: break;
      case LayerKind::kDense:
        j["out_dim"] = l.out_dim;
        if (l.out_shape) j["out_shape"] = shape_json(*l.out_shape);
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input", shape_json(spec.input)}, {"layers", layers}};
}

ModelSpec model_spec_from_json(const json& j) {
  try {
    ModelSpec spec;
    spec.input = shape_from_json(j.at("input"));
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.kind = layer_kind_from_string(l.at("kind").get<std::string>());
      switch (s.kind) {
        case LayerKind::kConv2D:
          s.out_channels = l.at("out_channels").get<int>();
          s.kernel_h = l.at("kernel").at(0).get<int>();
          s.kernel_w = l.at("kernel").at(1).get<int>();
          break;
        case LayerKind::kBatchNorm:
          s.eps = l.value("eps", 1e-5);
          s.momentum = l.value("momentum", 0.9);
          break;
        case LayerKind::kActivation:
          s.activation = activation_from_string(l.at("activation").get<std::string>());
          break;
        case LayerKind::kFlatten: break;
        case LayerKind::kDense:
          s.out_dim = l.at("out_dim").get<int>();
          if (l.contains("out_shape")) s.out_shape = shape_from_json(l.at("out_shape"));
          break;
      }
      spec.layers.push_back(s);
    }
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model spec: ") + e.what());
  }
}

ModelSpec default_architecture(int pad_antennas, int pad_users, int conv_channels, int hidden) {
  ModelSpec spec;
  spec.input = Shape::planes(2, pad_antennas, pad_users);
  spec.layers = {LayerSpec::conv(conv_channels, 3, 3),
                 LayerSpec::batch_norm(),
                 LayerSpec::act(ActivationKind::kRelu),
                 LayerSpec::flatten(),
                 LayerSpec::dense(hidden),
                 LayerSpec::act(ActivationKind::kRelu),
                 LayerSpec::dense(pad_users),
                 LayerSpec::act(ActivationKind::kAbs)};
  return spec;
}

void Layer::require_cache(const char* who) const {
  if (!cached_)
    throw ContractError(std::string(who) + ": backward without a preceding train-mode forward");
}

namespace {

void fill_uniform(RMatrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
}

class Conv2D final : public Layer {
 public:
  using Layer::Layer;

  Shape configure(const Shape& in) override {
    if (in.flat) throw DimensionError("conv2d expects a planar input");
    if (spec_.out_channels < 1 || spec_.kernel_h < 1 || spec_.kernel_w < 1)
      throw DimensionError("conv2d: channels and kernel sizes must be >= 1");
    in_ = in;
    out_ = Shape::planes(spec_.out_channels, in.height, in.width);
    weight_ = {"weight", RMatrix::Zero(spec_.out_channels, patch()), RMatrix(), true};
    bias_ = {"bias", RMatrix::Zero(spec_.out_channels, 1), RMatrix(), false};
    return out_;
  }

  void init(Rng& rng) override {
    fill_uniform(weight_.value, std::sqrt(6.0 / patch()), rng);
    bias_.value.setZero();
  }

  RMatrix infer(const RMatrix& x) const override {
    return x.cols() == 1 ? direct(x) : apply(im2col(x), x.cols());
  }

  RMatrix backward(const RMatrix& grad_out) override {
    require_cache("conv2d");
    cached_ = false;
    const Eigen::Index B = grad_out.cols(), HW = in_.height * in_.width;
    const int OC = spec_.out_channels;
    RMatrix G(OC, HW * B);
    for (Eigen::Index b = 0; b < B; ++b)
      G.middleCols(b * HW, HW) =
          Eigen::Map<const RMatrix>(grad_out.col(b).data(), HW, OC).transpose();
    weight_.grad = G * cols_.transpose();
    bias_.grad = G.rowwise().sum();
    const RMatrix dcols = weight_.value.transpose() * G;
    return col2im(dcols, B);
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2D>(*this); }

 protected:
  RMatrix train_forward(const RMatrix& x) override {
    cols_ = im2col(x);
    cached_ = true;
    return apply(cols_, x.cols());
  }

 private:
  int patch() const { return in_.channels * spec_.kernel_h * spec_.kernel_w; }

  // rows: (c, u, v) patch offsets; columns: b * H*W + i*W + j
  RMatrix im2col(const RMatrix& x) const {
    const int C = in_.channels, H = in_.height, W = in_.width;
    const int kh = spec_.kernel_h, kw = spec_.kernel_w, pt = (kh - 1) / 2, pl = (kw - 1) / 2;
    const Eigen::Index B = x.cols(), HW = H * W;
    RMatrix cols = RMatrix::Zero(patch(), HW * B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const double* src = x.col(b).data();
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const Eigen::Index r = (c * kh + u) * kw + v;
            for (int i = 0; i < H; ++i) {
              const int si = i + u - pt;
              if (si < 0 || si >= H) continue;
              for (int j = 0; j < W; ++j) {
                const int sj = j + v - pl;
                if (sj < 0 || sj >= W) continue;
                cols(r, b * HW + i * W + j) = src[(c * H + si) * W + sj];
              }
            }
          }
    }
    return cols;
  }

  RMatrix col2im(const RMatrix& dcols, Eigen::Index B) const {
    const int C = in_.channels, H = in_.height, W = in_.width;
    const int kh = spec_.kernel_h, kw = spec_.kernel_w, pt = (kh - 1) / 2, pl = (kw - 1) / 2;
    const Eigen::Index HW = H * W;
    RMatrix dx = RMatrix::Zero(in_.size(), B);
    for (Eigen::Index b = 0; b < B; ++b) {
      double* dst = dx.col(b).data();
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const Eigen::Index r = (c * kh + u) * kw + v;
            for (int i = 0; i < H; ++i) {
              const int si = i + u - pt;
              if (si < 0 || si >= H) continue;
              for (int j = 0; j < W; ++j) {
                const int sj = j + v - pl;
                if (sj < 0 || sj >= W) continue;
                dst[(c * H + si) * W + sj] += dcols(r, b * HW + i * W + j);
              }
            }
          }
    }
    return dx;
  }

  // Single-sample path: zero-padded copy of the input, no im2col buffer. Rows
  // are accumulated at the padded width so each kernel tap is one contiguous
  // axpy; columns j >= W of the accumulator are discarded.
  RMatrix direct(const RMatrix& x) const {
    const int C = in_.channels, H = in_.height, W = in_.width, OC = spec_.out_channels;
    const int kh = spec_.kernel_h, kw = spec_.kernel_w, pt = (kh - 1) / 2, pl = (kw - 1) / 2;
    const int Hp = H + kh - 1, Wp = W + kw - 1, span = H * Wp;
    std::vector<double> pad(static_cast<std::size_t>(C) * Hp * Wp + kw, 0.0);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        std::copy_n(x.data() + (c * H + i) * W, W, pad.data() + (c * Hp + i + pt) * Wp + pl);
    std::vector<double> acc(static_cast<std::size_t>(span));
    RMatrix out(static_cast<Eigen::Index>(OC) * H * W, 1);
    const double* __restrict wt = weight_.value.data();  // column-major OC x patch
    const double* __restrict pd = pad.data();
    double* __restrict a = acc.data();
    for (int o = 0; o < OC; ++o) {
      std::fill(a, a + span, bias_.value(o, 0));
      for (int c = 0; c < C; ++c)
        for (int u = 0; u < kh; ++u)
          for (int v = 0; v < kw; ++v) {
            const double w = wt[static_cast<std::ptrdiff_t>((c * kh + u) * kw + v) * OC + o];
            const double* src = pd + (c * Hp + u) * Wp + v;
            for (int t = 0; t < span; ++t) a[t] += w * src[t];
          }
      double* plane = out.data() + static_cast<std::ptrdiff_t>(o) * H * W;
      for (int i = 0; i < H; ++i) std::copy_n(a + i * Wp, W, plane + i * W);
    }
    return out;
  }

  RMatrix apply(const RMatrix& cols, Eigen::Index B) const {
    const Eigen::Index HW = in_.height * in_.width;
    const int OC = spec_.out_channels;
    RMatrix Y = weight_.value * cols;
    Y.colwise() += bias_.value.col(0);
    RMatrix out(static_cast<Eigen::Index>(OC) * HW, B);
    for (Eigen::Index b = 0; b < B; ++b)
      Eigen::Map<RMatrix>(out.col(b).data(), HW, OC) = Y.middleCols(b * HW, HW).transpose();
    return out;
  }

  Param weight_, bias_;
  RMatrix cols_;
};

class BatchNorm final : public Layer {
 public:
  using Layer::Layer;

  Shape configure(const Shape& in) override {
    if (!(spec_.eps > 0.0)) throw DomainError("batchnorm: eps must be positive");
    if (!(spec_.momentum >= 0.0 && spec_.momentum <= 1.0))
      throw DomainError("batchnorm: momentum must lie in [0, 1]");
    in_ = out_ = in;
    channels_ = in.flat ? in.size() : in.channels;
    group_ = in.flat ? 1 : in.height * in.width;
    gamma_ = {"gamma", RMatrix::Ones(channels_, 1), RMatrix(), false};
    beta_ = {"beta", RMatrix::Zero(channels_, 1), RMatrix(), false};
    running_mean_ = RMatrix::Zero(channels_, 1);
    running_var_ = RMatrix::Ones(channels_, 1);
    return out_;
  }

  void init(Rng&) override {
    gamma_.value.setOnes();
    beta_.value.setZero();
    running_mean_.setZero();
    running_var_.setOnes();
  }

  RMatrix infer(const RMatrix& x) const override {
    RMatrix y(x.rows(), x.cols());
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(running_var_(c, 0) + spec_.eps);
      const double a = gamma_.value(c, 0) * inv;
      const double b = beta_.value(c, 0) - a * running_mean_(c, 0);
      y.middleRows(c * group_, group_) = (a * x.middleRows(c * group_, group_).array() + b).matrix();
    }
    return y;
  }

  RMatrix backward(const RMatrix& grad_out) override {
    require_cache("batchnorm");
    cached_ = false;
    RMatrix dx(grad_out.rows(), grad_out.cols());
    gamma_.grad.resize(channels_, 1);
    beta_.grad.resize(channels_, 1);
    const double m = static_cast<double>(group_ * grad_out.cols());
    for (int c = 0; c < channels_; ++c) {
      const auto dy = grad_out.middleRows(c * group_, group_).array();
      const auto xh = xhat_.middleRows(c * group_, group_).array();
      gamma_.grad(c, 0) = (dy * xh).sum();
      beta_.grad(c, 0) = dy.sum();
      const double g = gamma_.value(c, 0), inv = inv_std_[c];
      if (used_running_) {
        dx.middleRows(c * group_, group_) = (g * inv * dy).matrix();
      } else {
        const double s1 = dy.sum() * g, s2 = (dy * xh).sum() * g;
        dx.middleRows(c * group_, group_) = (inv / m * (m * g * dy - s1 - xh * s2)).matrix();
      }
    }
    return dx;
  }

  std::vector<Param*> params() override { return {&gamma_, &beta_}; }
  std::vector<RMatrix*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 protected:
  RMatrix train_forward(const RMatrix& x) override {
    xhat_.resize(x.rows(), x.cols());
    inv_std_.assign(channels_, 0.0);
    used_running_ = frozen;
    RMatrix y(x.rows(), x.cols());
    const double m = static_cast<double>(group_ * x.cols());
    for (int c = 0; c < channels_; ++c) {
      const auto block = x.middleRows(c * group_, group_).array();
      double mean, var;
      if (frozen) {
        mean = running_mean_(c, 0);
        var = running_var_(c, 0);
      } else {
        mean = block.sum() / m;
        var = (block - mean).square().sum() / m;
        running_mean_(c, 0) = spec_.momentum * running_mean_(c, 0) + (1.0 - spec_.momentum) * mean;
        running_var_(c, 0) = spec_.momentum * running_var_(c, 0) + (1.0 - spec_.momentum) * var;
      }
      const double inv = 1.0 / std::sqrt(var + spec_.eps);
      inv_std_[c] = inv;
      xhat_.middleRows(c * group_, group_) = ((block - mean) * inv).matrix();
      y.middleRows(c * group_, group_) =
          (gamma_.value(c, 0) * xhat_.middleRows(c * group_, group_).array() + beta_.value(c, 0))
              .matrix();
    }
    cached_ = true;
    return y;
  }

 private:
  int channels_ = 0, group_ = 1;
  Param gamma_, beta_;
  RMatrix running_mean_, running_var_;
  RMatrix xhat_;
  std::vector<double> inv_std_;
  bool used_running_ = false;
};

class Activation final : public Layer {
 public:
  using Layer::Layer;

  Shape configure(const Shape& in) override { return in_ = out_ = in; }

  RMatrix infer(const RMatrix& x) const override {
    switch (spec_.activation) {
      case ActivationKind::kRelu: return x.cwiseMax(0.0);
      case ActivationKind::kAbs: return x.cwiseAbs();
      case ActivationKind::kSoftplus:
        return x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    }
    return x;
  }

  RMatrix backward(const RMatrix& grad_out) override {
    require_cache("activation");
    cached_ = false;
    switch (spec_.activation) {
      case ActivationKind::kRelu:
        return grad_out.cwiseProduct(x_.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      case ActivationKind::kAbs:
        return grad_out.cwiseProduct(
            x_.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
      case ActivationKind::kSoftplus:
        return grad_out.cwiseProduct(x_.unaryExpr([](double v) {
          return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }));
    }
    return grad_out;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }

 protected:
  RMatrix train_forward(const RMatrix& x) override {
    x_ = x;
    cached_ = true;
    return infer(x);
  }

 private:
  RMatrix x_;
};

class Flatten final : public Layer {
 public:
  using Layer::Layer;

  Shape configure(const Shape& in) override {
    in_ = in;
    return out_ = Shape::vector(in.size());
  }
  RMatrix infer(const RMatrix& x) const override { return x; }
  RMatrix backward(const RMatrix& grad_out) override {
    require_cache("flatten");
    cached_ = false;
    return grad_out;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

 protected:
  RMatrix train_forward(const RMatrix& x) override {
    cached_ = true;
    return x;
  }
};

class Dense final : public Layer {
 public:
  using Layer::Layer;

  Shape configure(const Shape& in) override {
    if (!in.flat) throw DimensionError("dense expects a flat input (missing flatten layer)");
    if (spec_.out_dim < 1) throw DimensionError("dense: out_dim must be >= 1");
    if (spec_.out_shape && spec_.out_shape->size() != spec_.out_dim)
      throw DimensionError("dense: out_shape does not match out_dim");
    in_ = in;
    out_ = spec_.out_shape ? *spec_.out_shape : Shape::vector(spec_.out_dim);
    weight_ = {"weight", RMatrix::Zero(spec_.out_dim, in.size()), RMatrix(), true};
    bias_ = {"bias", RMatrix::Zero(spec_.out_dim, 1), RMatrix(), false};
    return out_;
  }

  void init(Rng& rng) override {
    fill_uniform(weight_.value, std::sqrt(6.0 / in_.size()), rng);
    bias_.value.setZero();
  }

  RMatrix infer(const RMatrix& x) const override {
    RMatrix y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  RMatrix backward(const RMatrix& grad_out) override {
    require_cache("dense");
    cached_ = false;
    weight_.grad = grad_out * x_.transpose();
    bias_.grad = grad_out.rowwise().sum();
    return weight_.value.transpose() * grad_out;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 protected:
  RMatrix train_forward(const RMatrix& x) override {
    x_ = x;
    cached_ = true;
    return infer(x);
  }

 private:
  Param weight_, bias_;
  RMatrix x_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv2D: return std::make_unique<Conv2D>(spec);
    case LayerKind::kBatchNorm: return std::make_unique<BatchNorm>(spec);
    case LayerKind::kActivation: return std::make_unique<Activation>(spec);
    case LayerKind::kFlatten: return std::make_unique<Flatten>(spec);
    case LayerKind::kDense: return std::make_unique<Dense>(spec);
  }
  throw ContractError("unknown layer kind");
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  if (spec_.input.size() < 1) throw DimensionError("model input must be non-empty");
  Shape shape = spec_.input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    auto layer = make_layer(spec_.layers[i]);
    try {
      shape = layer->configure(shape);
    } catch (const DimensionError& e) {
      throw DimensionError("layer " + std::to_string(i) + ": " + e.what());
    }
    layers_.push_back(std::move(layer));
  }
}

Model::Model(const Model& other) : spec_(other.spec_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

int Model::output_dim() const {
  return layers_.empty() ? spec_.input.size() : layers_.back()->output_shape().size();
}

RMatrix Model::forward(const RMatrix& x, Mode mode) {
  if (x.rows() != spec_.input.size())
    throw DimensionError("model input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(spec_.input.size()));
  RMatrix a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    a = layers_[i]->forward(a, mode);
    if (!a.allFinite())
      throw NumericError("non-finite output in layer " + std::to_string(i) + " (" +
                         to_string(layers_[i]->spec().kind) + ")");
  }
  return a;
}

RMatrix Model::predict(const RMatrix& x) const {
  if (x.rows() != spec_.input.size()) throw DimensionError("model input size mismatch");
  RMatrix a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    a = layers_[i]->infer(a);
    if (!a.allFinite())
      throw NumericError("non-finite output in layer " + std::to_string(i) + " (" +
                         to_string(layers_[i]->spec().kind) + ")");
  }
  return a;
}

RMatrix Model::backward(const RMatrix& grad_out) {
  RMatrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

std::vector<const Param*> Model::params() const {
  std::vector<const Param*> out;
  for (const auto& l : layers_)
    for (Param* p : l->params()) out.push_back(p);
  return out;
}

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (const Param* p : params()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void init_layer(Layer& layer, Rng& rng) { layer.init(rng); }

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
  Model model(spec);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.num_layers(); ++i) model.layer(i).init(rng);
  return model;
}

LossKind loss_from_string(const std::string& name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "mae") return LossKind::kMae;
  throw FormatError("unknown loss '" + name + "'");
}

std::string to_string(LossKind kind) { return kind == LossKind::kMse ? "mse" : "mae"; }

LossResult loss_and_grad(LossKind kind, const RMatrix& predictions, const RMatrix& labels) {
  if (predictions.rows() != labels.rows() || predictions.cols() != labels.cols())
    throw DimensionError("predictions and labels differ in shape");
  const double n = static_cast<double>(predictions.size());
  if (n == 0) return {0.0, RMatrix::Zero(predictions.rows(), predictions.cols())};
  const RMatrix e = predictions - labels;
  if (kind == LossKind::kMse) return {e.squaredNorm() / n, (2.0 / n) * e};
  return {e.cwiseAbs().sum() / n,
          e.unaryExpr([n](double v) { return v > 0.0 ? 1.0 / n : (v < 0.0 ? -1.0 / n : 0.0); })};
}

Adam::Adam(const Model& model, AdamConfig config) : config_(config) {
  if (!(config_.learning_rate >= 0.0)) throw DomainError("learning rate must be >= 0");
  for (const Param* p : model.params()) {
    m_.push_back(RMatrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(RMatrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(Model& model, const std::vector<double>& multipliers) {
  if (!multipliers.empty() && multipliers.size() != model.num_layers())
    throw DimensionError("one learning-rate multiplier per layer required");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t idx = 0;
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    const double mult = multipliers.empty() ? 1.0 : multipliers[li];
    for (Param* p : model.layer(li).params()) {
      const std::size_t i = idx++;
      if (mult == 0.0 || config_.learning_rate == 0.0) continue;
      if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
        throw ContractError("adam: missing gradient for " + p->name);
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p->grad;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p->grad.cwiseAbs2();
      const double lr = config_.learning_rate * mult;
      p->value.array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
    }
  }
  if (idx != m_.size()) throw ContractError("adam: model does not match optimizer state");
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"layer_multipliers", c.layer_multipliers},
          {"loss", to_string(c.loss)}, {"seed", c.seed},
          {"beta1", c.beta1}, {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}, {"lr_decay", c.lr_decay},
          {"keep_best", c.keep_best}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.layer_multipliers = j.value("layer_multipliers", c.layer_multipliers);
    c.loss = loss_from_string(j.value("loss", std::string("mse")));
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.keep_best = j.value("keep_best", c.keep_best);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad train config: ") + e.what());
  }
  return c;
}

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (Eigen::Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Eigen::Index> d(0, i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(d(rng))]);
  }
  return idx;
}

std::vector<double> apply_multipliers(Model& model, const std::vector<double>& multipliers) {
  std::vector<double> m = multipliers.empty() ? std::vector<double>(model.num_layers(), 1.0)
                                              : multipliers;
  if (m.size() != model.num_layers())
    throw DimensionError("one learning-rate multiplier per layer required");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!(m[i] >= 0.0)) throw DomainError("learning-rate multipliers must be >= 0");
    model.layer(i).frozen = m[i] == 0.0;
  }
  return m;
}

double evaluate_loss(const Model& model, const RMatrix& X, const RMatrix& Y, LossKind kind,
                     int batch_size) {
  const Eigen::Index n = X.cols();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index s = 0; s < n; s += batch_size) {
    const Eigen::Index b = std::min<Eigen::Index>(batch_size, n - s);
    const RMatrix out = model.predict(X.middleCols(s, b));
    total += loss_and_grad(kind, out, Y.middleCols(s, b)).value * static_cast<double>(b);
  }
  return total / static_cast<double>(n);
}

TrainHistory fit(Model& model, const RMatrix& X, const RMatrix& Y, const TrainConfig& config,
                 const RMatrix* X_val, const RMatrix* Y_val) {
  if (X.cols() != Y.cols()) throw DimensionError("inputs and labels differ in sample count");
  if (Y.rows() != model.output_dim()) throw DimensionError("label size != model output size");
  if (config.batch_size < 1 || config.epochs < 0) throw DomainError("bad batch size or epochs");
  if (!(config.learning_rate >= 0.0)) throw DomainError("learning rate must be >= 0");
  const bool has_val = X_val && Y_val && X_val->cols() > 0;

  std::vector<bool> was_frozen;
  for (std::size_t i = 0; i < model.num_layers(); ++i) was_frozen.push_back(model.layer(i).frozen);
  const std::vector<double> mult = apply_multipliers(model, config.layer_multipliers);

  Adam adam(model, {config.learning_rate, config.beta1, config.beta2, config.adam_eps});
  Rng rng(config.seed);
  TrainHistory h;
  h.loss.push_back(evaluate_loss(model, X, Y, config.loss));
  double best = INFINITY;
  Model best_model;
  if (has_val) {
    h.validation_loss.push_back(evaluate_loss(model, *X_val, *Y_val, config.loss));
    best = h.validation_loss.back();
    if (config.keep_best) best_model = model;
  }

  const Eigen::Index n = X.cols();
  RMatrix Xb, Yb;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm = shuffled_indices(n, rng);
    double total = 0.0;
    for (Eigen::Index s = 0; s < n; s += config.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n - s);
      Xb.resize(X.rows(), b);
      Yb.resize(Y.rows(), b);
      for (Eigen::Index j = 0; j < b; ++j) {
        Xb.col(j) = X.col(perm[static_cast<std::size_t>(s + j)]);
        Yb.col(j) = Y.col(perm[static_cast<std::size_t>(s + j)]);
      }
      const RMatrix out = model.forward(Xb, Mode::kTrain);
      const LossResult L = loss_and_grad(config.loss, out, Yb);
      if (!std::isfinite(L.value)) throw NumericError("training loss is not finite");
      model.backward(L.grad);
      adam.step(model, mult);
      total += L.value * static_cast<double>(b);
    }
    h.loss.push_back(n > 0 ? total / static_cast<double>(n) : 0.0);
    if (has_val) {
      h.validation_loss.push_back(evaluate_loss(model, *X_val, *Y_val, config.loss));
      if (h.validation_loss.back() < best) {
        best = h.validation_loss.back();
        h.best_epoch = epoch;
        if (config.keep_best) best_model = model;
      }
    }
    adam.set_learning_rate(adam.config().learning_rate * config.lr_decay);
  }
  if (has_val && config.keep_best) model = best_model;
  for (std::size_t i = 0; i < model.num_layers(); ++i) model.layer(i).frozen = was_frozen[i];
  return h;
}

namespace {

double tensor_rel_error(const RMatrix& a, const RMatrix& n, double floor) {
  const double denom = std::max({a.norm(), n.norm(), floor});
  return denom == 0.0 ? 0.0 : (a - n).norm() / denom;
}

}  // namespace

GradCheckReport gradient_check(Model& model, const RMatrix& X, const RMatrix& Y, LossKind kind,
                               double step) {
  Model work = model;
  auto loss_at = [&](const RMatrix& x) {
    return loss_and_grad(kind, work.forward(x, Mode::kTrain), Y).value;
  };
  const RMatrix out = work.forward(X, Mode::kTrain);
  const RMatrix dx = work.backward(loss_and_grad(kind, out, Y).grad);

  std::vector<RMatrix> analytic;
  for (Param* p : work.params()) analytic.push_back(p->grad);

  std::vector<RMatrix> numeric;
  for (Param* p : work.params()) {
    RMatrix g(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& w = p->value.data()[i];
      const double saved = w;
      w = saved + step;
      const double lp = loss_at(X);
      w = saved - step;
      const double lm = loss_at(X);
      w = saved;
      g.data()[i] = (lp - lm) / (2.0 * step);
    }
    numeric.push_back(std::move(g));
  }
  RMatrix ndx(X.rows(), X.cols());
  RMatrix xp = X;
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double saved = xp.data()[i];
    xp.data()[i] = saved + step;
    const double lp = loss_at(xp);
    xp.data()[i] = saved - step;
    const double lm = loss_at(xp);
    xp.data()[i] = saved;
    ndx.data()[i] = (lp - lm) / (2.0 * step);
  }

  // Tensors whose true gradient vanishes (a bias feeding batch norm) are
  // judged against the largest gradient in the model.
  double scale = dx.norm();
  for (const auto& a : analytic) scale = std::max(scale, a.norm());
  const double floor = 1e-4 * scale;

  GradCheckReport r;
  r.max_rel_error = tensor_rel_error(dx, ndx, floor);
  r.worst = "input";
  std::size_t pi = 0;
  for (std::size_t li = 0; li < work.num_layers(); ++li)
    for (Param* p : work.layer(li).params()) {
      const double e = tensor_rel_error(analytic[pi], numeric[pi], floor);
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.worst = "layer " + std::to_string(li) + " " + p->name;
      }
      ++pi;
    }
  return r;
}

}  // namespace bnnkit::nn
