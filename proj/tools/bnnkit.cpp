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

// bnnkit command line: dataset generation, classical solvers, BNN training,
// prediction, compression and benchmarks.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "bnnkit/bench.hpp"
#include "bnnkit/bnn.hpp"
#include "bnnkit/channel.hpp"
#include "bnnkit/compress.hpp"
#include "bnnkit/errors.hpp"

using namespace bnnkit;
using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::pair<int, int>> parse_sizes(const std::string& text) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw DomainError("size '" + item + "' is not NxK");
    out.emplace_back(std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1)));
  }
  return out;
}

// "optimal@1e-4", "zf", "rzf", "wmmse", "noop" resolved for the problem.
bench::Method classical_method(const std::string& id, channel::ProblemTag problem) {
  using channel::ProblemTag;
  double tol = 1e-6;
  std::string base = id;
  if (const auto at = id.find('@'); at != std::string::npos) {
    base = id.substr(0, at);
    tol = std::stod(id.substr(at + 1));
  }
  if (base == "noop") return bench::noop_method();
  if (base == "optimal") {
    bench::Method m;
    switch (problem) {
      case ProblemTag::kPowerMin: m = bench::optimal_power_method(tol); break;
      case ProblemTag::kSinrBalance: m = bench::optimal_balance_method(tol); break;
      case ProblemTag::kSumRate: m = bench::wmmse_method(tol); break;
    }
    m.id = id;
    return m;
  }
  if (base == "zf")
    return problem == ProblemTag::kPowerMin ? bench::zf_power_method() : bench::zf_balance_method();
  if (base == "rzf") return bench::rzf_balance_method();
  if (base == "wmmse") return bench::wmmse_method(id.find('@') == std::string::npos ? 1e-8 : tol);
  throw DomainError("unknown method '" + id + "'");
}

std::vector<bench::Method> methods_from_config(const json& cfg, channel::ProblemTag problem) {
  std::vector<bench::Method> out;
  const auto ids = cfg.value("methods", std::vector<std::string>{"optimal@1e-2", "optimal@1e-4", "zf"});
  for (const auto& id : ids) {
    if (id == "bnn" || id == "bnn-augmented") {
      const std::string key = id == "bnn" ? "bnn_model" : "bnn_augmented_model";
      if (!cfg.contains(key)) throw ContractError("method '" + id + "' needs '" + key + "'");
      auto p = std::make_shared<const bnn::Pipeline>(bnn::load_pipeline(cfg.at(key).get<std::string>()));
      out.push_back(bench::bnn_method(p, id));
    } else {
      out.push_back(classical_method(id, problem));
    }
  }
  return out;
}

int cmd_gen(const std::string& problem, std::size_t count, int n, int k, const std::string& sizes,
            bool augment, int pad_n, int pad_k, std::uint64_t seed, double pmin, double pmax,
            double noise_dbm, double target_db, const std::string& out) {
  channel::DatasetConfig cfg;
  cfg.problem = channel::problem_from_string(problem);
  cfg.count = count;
  if (!sizes.empty()) {
    cfg.sizes = parse_sizes(sizes);
  } else if (augment) {
    cfg.sizes.clear();
    for (int a = 1; a <= n; ++a)
      for (int b = 1; b <= std::min(a, k); ++b) cfg.sizes.emplace_back(a, b);
  } else {
    cfg.sizes = {{n, k}};
  }
  cfg.pad_antennas = pad_n;
  cfg.pad_users = pad_k;
  cfg.seed = seed;
  cfg.power_budget_dbm_min = pmin;
  cfg.power_budget_dbm_max = std::isnan(pmax) ? pmin : pmax;
  cfg.noise_power = channel::dbm_to_watts(noise_dbm);
  cfg.sinr_target_db = target_db;
  channel::BuildReport rep;
  const auto data = channel::build_dataset(cfg, &rep);
  channel::write_dataset(data, out);
  std::cerr << "wrote " << data.size() << " samples (" << rep.regenerated << " regenerated) to "
            << out << "\n";
  return 0;
}

int cmd_solve(const std::string& method, double tol, const std::string& in, const std::string& out) {
  const auto data = channel::read_dataset(in);
  std::string id = method;
  if (method == "balance" || method == "powermin") {
    const auto tag = channel::problem_from_string(method);
    if (tag != data.problem) throw ContractError("dataset problem is " + channel::to_string(data.problem));
    std::ostringstream os;
    os << "optimal@" << tol;
    id = os.str();
  } else if (method == "wmmse") {
    std::ostringstream os;
    os << "wmmse@" << tol;
    id = os.str();
  }
  auto m = classical_method(id, data.problem);
  bench::write_csv(out, bench::run_methods(data, {m}, data.seed));
  return 0;
}

int cmd_train(const std::string& problem, const std::string& data_path, const std::string& mode,
              const std::string& arch_path, const std::string& val_path, const std::string& out,
              int epochs) {
  const json cfg = read_json(arch_path);
  auto data = channel::read_dataset(data_path);
  if (channel::problem_from_string(problem) != data.problem)
    throw ContractError("--problem does not match the dataset (" + channel::to_string(data.problem) + ")");
  channel::Dataset val;
  if (!val_path.empty()) {
    val = channel::read_dataset(val_path);
  } else {
    const double frac = cfg.value("validation_fraction", 0.1);
    std::tie(data, val) = channel::split_tail(data, static_cast<std::size_t>(frac * data.size()));
  }
  const nn::ModelSpec spec =
      cfg.contains("model")
          ? nn::model_spec_from_json(cfg.at("model"))
          : nn::default_architecture(data.pad_antennas, data.pad_users, cfg.value("conv_channels", 8),
                                     cfg.value("hidden", 128));
  nn::TrainConfig sup = cfg.contains("train") ? nn::train_config_from_json(cfg.at("train")) : nn::TrainConfig{};
  nn::TrainConfig unsup =
      cfg.contains("unsupervised") ? nn::train_config_from_json(cfg.at("unsupervised")) : sup;
  if (epochs > 0) sup.epochs = unsup.epochs = epochs;
  auto p = bnn::make_pipeline(data.problem, data.pad_antennas, data.pad_users, spec,
                              cfg.value("seed", std::uint64_t{1}));
  json summary;
  const channel::Dataset* vp = val.size() ? &val : nullptr;
  if (mode == "sup") {
    const auto h = bnn::train_supervised(p, data, sup, vp);
    summary = {{"loss", h.loss}, {"validation_loss", h.validation_loss}, {"best_epoch", h.best_epoch}};
  } else if (mode == "unsup") {
    std::size_t failures = 0;
    summary = {{"loss", bnn::train_unsupervised(p, data, unsup, &failures)}, {"failures", failures}};
  } else if (mode == "hybrid") {
    if (!vp) throw ContractError("hybrid training needs validation data");
    const auto r = bnn::train_hybrid(p, data, val, {sup, unsup});
    summary = {{"supervised_loss", r.supervised_history.loss},
               {"unsupervised_loss", r.unsupervised_loss},
               {"objective_supervised", r.objective_supervised},
               {"objective_hybrid", r.objective_hybrid},
               {"kept_stage2", r.kept_stage2},
               {"failures", r.failures}};
  } else {
    throw DomainError("--mode must be sup, unsup or hybrid");
  }
  if (vp) summary["validation_objective"] = bnn::mean_objective(p, val);
  bnn::save_pipeline(p, out);
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_predict(const std::string& model, const std::string& data_path, const std::string& out) {
  auto p = std::make_shared<const bnn::Pipeline>(bnn::load_pipeline(model));
  const auto data = channel::read_dataset(data_path);
  bench::write_csv(out, bench::run_methods(data, {bench::bnn_method(p)}, data.seed));
  return 0;
}

int cmd_compress(const std::string& model, double threshold, int bits, const std::string& val_path,
                 const std::string& out, std::uint64_t seed) {
  const auto p = bnn::load_pipeline(model);
  const auto val = channel::read_dataset(val_path);
  compress::Objective obj{[&](const nn::Model& m) {
                            bnn::Pipeline q = p;
                            q.model = m;
                            return bnn::mean_objective(q, val);
                          },
                          p.problem != channel::ProblemTag::kPowerMin};
  const auto r = compress::compress_pipeline(p.model, threshold, bits, out, obj, bnn::pipeline_meta(p), seed);
  const json summary{{"original_bytes", r.original_bytes},   {"compressed_bytes", r.compressed_bytes},
                     {"ratio", r.ratio},                     {"metric_before", r.metric_before},
                     {"metric_after", r.metric_after},       {"degradation", r.degradation},
                     {"sparsity", r.prune.sparsity},         {"pruned", r.prune.zeros}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_bench(const std::string& kind, const std::string& config_path, const std::string& out) {
  const json cfg = read_json(config_path);
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  if (kind == "bersim") {
    std::unique_ptr<bnn::Pipeline> p;
    if (cfg.contains("bnn_model"))
      p = std::make_unique<bnn::Pipeline>(bnn::load_pipeline(cfg.at("bnn_model").get<std::string>()));
    bench::write_csv(out, bench::ber_sim(bench::ber_config_from_json(cfg), p.get()));
    return 0;
  }
  if (!cfg.contains("data")) throw ContractError("bench config needs 'data'");
  const auto data = channel::read_dataset(cfg.at("data").get<std::string>());
  const auto methods = methods_from_config(cfg, data.problem);
  if (kind == "power") {
    const auto rs = bench::bench_power(data, methods, seed);
    bench::write_csv(out, rs);
    for (const auto& s : bench::summarize(rs))
      std::cerr << s.method << ": feasible " << s.feasible << "/" << s.count << ", mean "
                << s.mean_metric << ", median time " << s.median_time_s << " s\n";
  } else if (kind == "time") {
    bench::write_csv(out, bench::bench_time(data, methods, seed));
  } else {
    throw DomainError("bench kind must be power, time or bersim");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bnnkit: multiuser MISO beamforming solvers and beamforming neural networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a labeled dataset");
  std::string g_problem = "balance", g_sizes, g_out;
  std::size_t g_count = 1000;
  int g_n = 4, g_k = 4, g_pad_n = 0, g_pad_k = 0;
  bool g_augment = false;
  std::uint64_t g_seed = 1;
  double g_pmin = 30.0, g_pmax = std::nan(""), g_noise = -100.0, g_target = 5.0;
  gen->add_option("--problem", g_problem, "balance | powermin | sumrate")->capture_default_str();
  gen->add_option("--count", g_count)->capture_default_str();
  gen->add_option("--n", g_n, "antennas")->capture_default_str();
  gen->add_option("--k", g_k, "users")->capture_default_str();
  gen->add_option("--sizes", g_sizes, "explicit list, e.g. 4x4,8x7 (overrides --n/--k)");
  gen->add_flag("--augment", g_augment, "all N <= n, K <= min(N, k) with equal probability");
  gen->add_option("--pad-n", g_pad_n, "N0 (default: max N)");
  gen->add_option("--pad-k", g_pad_k, "K0 (default: max K)");
  gen->add_option("--seed", g_seed)->capture_default_str();
  gen->add_option("--power-dbm", g_pmin, "P_max, or lower bound with --power-dbm-max")->capture_default_str();
  gen->add_option("--power-dbm-max", g_pmax, "upper bound of a log-uniform P_max draw");
  gen->add_option("--noise-dbm", g_noise, "noise power")->capture_default_str();
  gen->add_option("--target-db", g_target, "SINR target (powermin)")->capture_default_str();
  gen->add_option("--out", g_out)->required();

  auto* solve = app.add_subcommand("solve", "run a classical solver over a dataset");
  std::string s_method = "balance", s_in, s_out = "-";
  double s_tol = 1e-6;
  solve->add_option("--method", s_method)
      ->check(CLI::IsMember({"balance", "powermin", "zf", "rzf", "wmmse"}))
      ->capture_default_str();
  solve->add_option("--tol", s_tol)->capture_default_str();
  solve->add_option("--in", s_in)->required();
  solve->add_option("--out", s_out, "csv path, - for stdout")->capture_default_str();

  auto* train = app.add_subcommand("train", "train a BNN pipeline");
  std::string t_problem, t_data, t_mode = "sup", t_arch, t_val, t_out;
  int t_epochs = 0;
  train->add_option("--problem", t_problem)->required();
  train->add_option("--data", t_data)->required();
  train->add_option("--mode", t_mode)->check(CLI::IsMember({"sup", "unsup", "hybrid"}))->capture_default_str();
  train->add_option("--arch", t_arch, "JSON: model | conv_channels, hidden; train; unsupervised; seed");
  train->add_option("--val", t_val, "validation dataset (default: tail split)");
  train->add_option("--epochs", t_epochs, "override the configured epochs");
  train->add_option("--out", t_out)->required();

  auto* pred = app.add_subcommand("predict", "predict beamformers with a trained pipeline");
  std::string p_model, p_data, p_out = "-";
  pred->add_option("--model", p_model)->required();
  pred->add_option("--data", p_data)->required();
  pred->add_option("--out", p_out)->capture_default_str();

  auto* comp = app.add_subcommand("compress", "prune, quantize and Huffman-code a model");
  std::string c_model, c_val, c_out;
  double c_thr = 1e-3;
  int c_bits = 6;
  std::uint64_t c_seed = 1;
  comp->add_option("--model", c_model)->required();
  comp->add_option("--threshold", c_thr)->capture_default_str();
  comp->add_option("--bits", c_bits)->capture_default_str();
  comp->add_option("--val", c_val)->required();
  comp->add_option("--seed", c_seed)->capture_default_str();
  comp->add_option("--out", c_out)->required();

  auto* bench_cmd = app.add_subcommand("bench", "benchmarks");
  std::string b_kind, b_config, b_out = "-";
  bench_cmd->add_option("kind", b_kind)->check(CLI::IsMember({"power", "time", "bersim"}))->required();
  bench_cmd->add_option("--config", b_config)->required();
  bench_cmd->add_option("--out", b_out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen)
      return cmd_gen(g_problem, g_count, g_n, g_k, g_sizes, g_augment, g_pad_n, g_pad_k, g_seed, g_pmin,
                     g_pmax, g_noise, g_target, g_out);
    if (*solve) return cmd_solve(s_method, s_tol, s_in, s_out);
    if (*train) return cmd_train(t_problem, t_data, t_mode, t_arch, t_val, t_out, t_epochs);
    if (*pred) return cmd_predict(p_model, p_data, p_out);
    if (*comp) return cmd_compress(c_model, c_thr, c_bits, c_val, c_out, c_seed);
    if (*bench_cmd) return cmd_bench(b_kind, b_config, b_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
