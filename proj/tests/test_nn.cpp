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

#include <doctest.h>

#include <cmath>
#include <limits>

#include "bnnkit/errors.hpp"
#include "bnnkit/nn.hpp"

using namespace bnnkit;
using namespace bnnkit::nn;

namespace {

RMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  RMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

Param& param_of(Model& m, std::size_t layer, const std::string& name) {
  for (Param* p : m.layer(layer).params())
    if (p->name == name) return *p;
  throw std::runtime_error("no such param");
}

double check(const ModelSpec& spec, Eigen::Index batch, std::uint64_t seed) {
  Model m = init_model(spec, seed);
  // move BN scale/shift and biases off their trivial init so every path is exercised
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Param* p : m.params())
    if (!p->prunable)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
  const RMatrix X = random_matrix(spec.input.size(), batch, seed + 2);
  const RMatrix Y = random_matrix(m.output_dim(), batch, seed + 3);
  const auto r = gradient_check(m, X, Y, LossKind::kMse, 1e-6);
  INFO("worst tensor: " << r.worst << " rel " << r.max_rel_error);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("init_model is deterministic and shape-checked") {
  const auto spec = default_architecture(4, 3);
  const Model a = init_model(spec, 5), b = init_model(spec, 5), c = init_model(spec, 6);
  const auto pa = a.params(), pb = b.params(), pc = c.params();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
    if (pa[i]->value != pc[i]->value) any_diff = true;
  }
  CHECK(any_diff);
  CHECK(a.output_dim() == 3);

  ModelSpec bad;
  bad.input = Shape::planes(2, 4, 4);
  bad.layers = {LayerSpec::conv(2, 3, 3), LayerSpec::dense(4)};
  CHECK_THROWS_AS(Model{bad}, DimensionError);

  ModelSpec bad_adapter;
  bad_adapter.input = Shape::vector(6);
  LayerSpec l = LayerSpec::dense_to(Shape::planes(2, 2, 2));
  l.out_dim = 5;
  bad_adapter.layers = {l};
  CHECK_THROWS_AS(Model{bad_adapter}, DimensionError);
}

TEST_CASE("dense init variance follows fan-in scaling") {
  ModelSpec spec;
  spec.input = Shape::vector(4);
  spec.layers = {LayerSpec::dense(4)};
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; n < 10000; ++seed) {
    const Model m = init_model(spec, seed);
    const RMatrix& w = m.params()[0]->value;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      sum += w.data()[i];
      sq += w.data()[i] * w.data()[i];
      ++n;
    }
    CHECK(m.params()[1]->value.isZero());
  }
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(var / 0.5 - 1.0) < 0.2);
}

TEST_CASE("spec json round trip") {
  auto spec = default_architecture(8, 7, 4, 32);
  spec.layers.insert(spec.layers.begin(), LayerSpec::dense_to(Shape::planes(2, 8, 7)));
  spec.layers.insert(spec.layers.begin(), LayerSpec::flatten());
  spec.layers[6].activation = ActivationKind::kSoftplus;
  const auto back = model_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  CHECK(to_json(back) == to_json(spec));
  CHECK(back.layers[1].out_shape.has_value());
  CHECK(Model(back).output_dim() == 7);
  CHECK_THROWS_AS(model_spec_from_json(nlohmann::json::parse(R"({"input":{}})")), FormatError);
}

TEST_CASE("identity networks") {
  SUBCASE("dense with identity weights") {
    ModelSpec spec;
    spec.input = Shape::vector(3);
    spec.layers = {LayerSpec::dense(3)};
    Model m(spec);
    param_of(m, 0, "weight").value = RMatrix::Identity(3, 3);
    const RMatrix x = random_matrix(3, 5, 1);
    CHECK(m.predict(x) == x);
  }
  SUBCASE("1x1 convolution with unit kernel") {
    ModelSpec spec;
    spec.input = Shape::planes(1, 3, 4);
    spec.layers = {LayerSpec::conv(1, 1, 1)};
    Model m(spec);
    param_of(m, 0, "weight").value.setOnes();
    const RMatrix x = random_matrix(12, 2, 2);
    CHECK(m.predict(x) == x);
  }
}

TEST_CASE("3x3 same convolution on a 2x2 plane matches direct summation") {
  const int C = 2, OC = 3, H = 2, W = 2;
  ModelSpec spec;
  spec.input = Shape::planes(C, H, W);
  spec.layers = {LayerSpec::conv(OC, 3, 3)};
  Model m = init_model(spec, 3);
  param_of(m, 0, "bias").value << 0.1, -0.2, 0.3;
  const RMatrix& K = param_of(m, 0, "weight").value;  // OC x (C*3*3)
  const RMatrix x = random_matrix(C * H * W, 2, 4);
  const RMatrix y = m.predict(x);
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < OC; ++o)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double acc = param_of(m, 0, "bias").value(o, 0);
          for (int c = 0; c < C; ++c)
            for (int u = -1; u <= 1; ++u)
              for (int v = -1; v <= 1; ++v) {
                const int si = i + u, sj = j + v;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                acc += K(o, c * 9 + (u + 1) * 3 + (v + 1)) * x((c * H + si) * W + sj, b);
              }
          CHECK(y((o * H + i) * W + j, b) == doctest::Approx(acc).epsilon(1e-13));
        }
}

TEST_CASE("gradient checks per layer type") {
  SUBCASE("conv2d") {
    ModelSpec s;
    s.input = Shape::planes(2, 4, 3);
    s.layers = {LayerSpec::conv(3, 3, 3)};
    CHECK(check(s, 3, 10) < 1e-5);
  }
  SUBCASE("conv2d with an even kernel") {
    ModelSpec s;
    s.input = Shape::planes(2, 4, 3);
    s.layers = {LayerSpec::conv(2, 2, 4)};
    CHECK(check(s, 2, 11) < 1e-5);
  }
  SUBCASE("batchnorm on planes") {
    ModelSpec s;
    s.input = Shape::planes(3, 2, 3);
    s.layers = {LayerSpec::batch_norm()};
    CHECK(check(s, 4, 12) < 1e-5);
  }
  SUBCASE("batchnorm on vectors") {
    ModelSpec s;
    s.input = Shape::vector(5);
    s.layers = {LayerSpec::batch_norm()};
    CHECK(check(s, 6, 13) < 1e-5);
  }
  for (auto a : {ActivationKind::kRelu, ActivationKind::kSoftplus, ActivationKind::kAbs}) {
    CAPTURE(to_string(a));
    ModelSpec s;
    s.input = Shape::vector(7);
    s.layers = {LayerSpec::act(a)};
    CHECK(check(s, 5, 14) < 1e-5);
  }
  SUBCASE("flatten and dense") {
    ModelSpec s;
    s.input = Shape::planes(2, 3, 2);
    s.layers = {LayerSpec::flatten(), LayerSpec::dense(4)};
    CHECK(check(s, 3, 15) < 1e-5);
  }
  SUBCASE("dense adapter into planes") {
    ModelSpec s;
    s.input = Shape::vector(6);
    s.layers = {LayerSpec::dense_to(Shape::planes(2, 2, 3)), LayerSpec::conv(2, 3, 3)};
    CHECK(check(s, 3, 16) < 1e-5);
  }
}

TEST_CASE("gradient check on the default stacked architecture") {
  CHECK(check(default_architecture(4, 4, 4, 16), 4, 20) < 1e-5);
  CHECK(check(default_architecture(3, 2, 2, 8), 1, 21) < 1e-5);
}

TEST_CASE("frozen batchnorm backward uses running statistics") {
  ModelSpec s;
  s.input = Shape::vector(3);
  s.layers = {LayerSpec::batch_norm(), LayerSpec::dense(2)};
  Model m = init_model(s, 2);
  m.layer(0).frozen = true;
  CHECK(check(s, 4, 22) < 1e-5);
  const RMatrix x = random_matrix(3, 4, 1);
  const RMatrix before = *m.layer(0).buffers()[1];
  const RMatrix y = m.forward(x, Mode::kTrain);
  CHECK(*m.layer(0).buffers()[1] == before);
  CHECK(y == m.predict(x));
}

TEST_CASE("backward contracts") {
  Model m = init_model(default_architecture(3, 3, 2, 8), 1);
  const RMatrix x = random_matrix(18, 2, 2);
  CHECK_THROWS_AS(m.backward(RMatrix::Ones(3, 2)), ContractError);

  (void)m.forward(x, Mode::kTrain);
  m.backward(RMatrix::Zero(3, 2));
  for (const Param* p : m.params()) CHECK(p->grad.isZero(0.0));
  CHECK_THROWS_AS(m.backward(RMatrix::Zero(3, 2)), ContractError);

  (void)m.forward(x, Mode::kTrain);
  (void)m.forward(x, Mode::kInfer);  // does not disturb the cache
  CHECK_NOTHROW(m.backward(RMatrix::Ones(3, 2)));
}

TEST_CASE("single dense layer MSE gradient closed form") {
  ModelSpec s;
  s.input = Shape::vector(4);
  s.layers = {LayerSpec::dense(3)};
  Model m = init_model(s, 9);
  const RMatrix x = random_matrix(4, 6, 1), y = random_matrix(3, 6, 2);
  const RMatrix out = m.forward(x, Mode::kTrain);
  m.backward(loss_and_grad(LossKind::kMse, out, y).grad);
  const RMatrix err = out - y;
  const RMatrix expected = 2.0 * err * x.transpose() / static_cast<double>(err.size());
  CHECK((param_of(m, 0, "weight").grad - expected).norm() < 1e-14 * expected.norm());
}

TEST_CASE("forward rejects non-finite activations by layer") {
  ModelSpec s;
  s.input = Shape::vector(2);
  s.layers = {LayerSpec::act(ActivationKind::kRelu), LayerSpec::dense(2)};
  Model m = init_model(s, 1);
  RMatrix x = RMatrix::Ones(2, 1);
  x(0, 0) = std::numeric_limits<double>::infinity();
  try {
    (void)m.forward(x, Mode::kInfer);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
  CHECK_THROWS_AS(m.predict(RMatrix::Ones(3, 1)), DimensionError);
}

TEST_CASE("infer mode is pure") {
  Model m = init_model(default_architecture(3, 3, 2, 8), 4);
  const RMatrix x = random_matrix(18, 5, 3);
  (void)m.forward(x, Mode::kTrain);  // non-trivial running stats
  const Model snapshot = m;
  const RMatrix a = m.forward(x, Mode::kInfer);
  const RMatrix b = m.predict(x);
  CHECK(a == b);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    auto bm = m.layer(l).buffers();
    auto bs = const_cast<Model&>(snapshot).layer(l).buffers();
    for (std::size_t i = 0; i < bm.size(); ++i) CHECK(*bm[i] == *bs[i]);
  }
}

TEST_CASE("losses") {
  RMatrix p(1, 1), y(1, 1);
  p << 2.0;
  y << 0.0;
  const auto mse = loss_and_grad(LossKind::kMse, p, y);
  CHECK(mse.value == 4.0);
  CHECK(mse.grad(0, 0) == 4.0);
  const auto zero = loss_and_grad(LossKind::kMae, y, y);
  CHECK(zero.value == 0.0);
  CHECK(zero.grad.isZero(0.0));
  CHECK(loss_and_grad(LossKind::kMse, p, p).grad.isZero(0.0));

  const RMatrix P = random_matrix(3, 4, 5), Y = random_matrix(3, 4, 6);
  const auto mae = loss_and_grad(LossKind::kMae, P, Y);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < P.size(); ++i) {
    RMatrix a = P, b = P;
    a.data()[i] += h;
    b.data()[i] -= h;
    const double fd = (loss_and_grad(LossKind::kMae, a, Y).value -
                       loss_and_grad(LossKind::kMae, b, Y).value) / (2 * h);
    CHECK(std::abs(fd - mae.grad.data()[i]) <= 1e-6 * std::abs(mae.grad.data()[i]));
  }
  CHECK_THROWS_AS(loss_and_grad(LossKind::kMse, P, RMatrix::Zero(2, 4)), DimensionError);
}

TEST_CASE("adam step") {
  ModelSpec s;
  s.input = Shape::vector(1);
  s.layers = {LayerSpec::dense(1)};
  Model m(s);
  Adam adam(m, {0.1, 0.9, 0.999, 1e-8});
  auto& w = param_of(m, 0, "weight");
  auto& b = param_of(m, 0, "bias");
  w.grad = RMatrix::Ones(1, 1);
  b.grad = RMatrix::Zero(1, 1);
  adam.step(m);
  CHECK(w.value(0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(b.value(0, 0) == 0.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam freezing and determinism") {
  const auto spec = default_architecture(3, 3, 2, 8);
  Model a = init_model(spec, 1), b = init_model(spec, 1);
  const Model start = a;
  Adam oa(a, {}), ob(b, {});
  std::vector<double> mult(a.num_layers(), 1.0);
  mult[0] = 0.0;
  const RMatrix x = random_matrix(18, 4, 2), y = random_matrix(3, 4, 3).cwiseAbs();
  for (int it = 0; it < 20; ++it)
    for (auto* pair : {&a, &b}) {
      Model& m = *pair;
      const RMatrix out = m.forward(x, Mode::kTrain);
      m.backward(loss_and_grad(LossKind::kMse, out, y).grad);
      (pair == &a ? oa : ob).step(m, mult);
    }
  const auto pa = a.params(), pb = b.params();
  const auto ps = start.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(param_of(a, 0, "weight").value == ps[0]->value);
  CHECK(param_of(a, 0, "bias").value == ps[1]->value);
  CHECK(param_of(a, 4, "weight").value != ps[4]->value);
  CHECK_THROWS_AS(oa.step(a, {1.0}), DimensionError);
}

TEST_CASE("fit bookkeeping and determinism") {
  const auto spec = default_architecture(3, 3, 2, 8);
  const RMatrix X = random_matrix(18, 40, 7), Y = random_matrix(3, 40, 8).cwiseAbs();
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 5;
  cfg.seed = 3;
  Model a = init_model(spec, 2), b = init_model(spec, 2);
  const double initial = evaluate_loss(a, X, Y, LossKind::kMse);
  const auto ha = fit(a, X, Y, cfg), hb = fit(b, X, Y, cfg);
  REQUIRE(ha.loss.size() == 6);
  CHECK(ha.loss[0] == initial);
  CHECK(ha.loss == hb.loss);
  CHECK(ha.loss.back() < ha.loss[0]);

  SUBCASE("all multipliers zero leaves the model untouched") {
    Model c = init_model(spec, 2);
    const Model start = c;
    TrainConfig frozen = cfg;
    frozen.layer_multipliers.assign(c.num_layers(), 0.0);
    (void)fit(c, X, Y, frozen);
    const auto pc = c.params();
    const auto ps = start.params();
    for (std::size_t i = 0; i < pc.size(); ++i) CHECK(pc[i]->value == ps[i]->value);
    CHECK(*c.layer(1).buffers()[0] == *const_cast<Model&>(start).layer(1).buffers()[0]);
    CHECK_FALSE(c.layer(1).frozen);
  }
  SUBCASE("keep_best restores the best validation epoch") {
    Model c = init_model(spec, 2);
    TrainConfig kb = cfg;
    kb.keep_best = true;
    kb.learning_rate = 0.05;
    const RMatrix Xv = random_matrix(18, 10, 9), Yv = random_matrix(3, 10, 10).cwiseAbs();
    const auto h = fit(c, X, Y, kb, &Xv, &Yv);
    REQUIRE(h.validation_loss.size() == 6);
    CHECK(evaluate_loss(c, Xv, Yv, LossKind::kMse) ==
          doctest::Approx(h.validation_loss[static_cast<std::size_t>(h.best_epoch)]).epsilon(1e-12));
  }
}

TEST_CASE("single-sample overfit on the default architecture") {
  const auto spec = default_architecture(4, 4);
  Model m = init_model(spec, 11);
  const RMatrix x = random_matrix(32, 1, 12);
  RMatrix y(4, 1);
  y << 0.7, 0.1, 0.15, 0.05;
  Adam adam(m, {1e-3, 0.9, 0.999, 1e-8});
  for (int it = 0; it < 500; ++it) {
    const RMatrix out = m.forward(x, Mode::kTrain);
    m.backward(loss_and_grad(LossKind::kMse, out, y).grad);
    adam.step(m);
  }
  CHECK(loss_and_grad(LossKind::kMse, m.forward(x, Mode::kTrain), y).value < 1e-3);
  CHECK(evaluate_loss(m, x, y, LossKind::kMse) < 1e-3);
}
