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

#include "bnnkit/compress.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <random>

#include "binary_io.hpp"
#include "bnnkit/errors.hpp"
#include "bnnkit/rng.hpp"

namespace bnnkit::compress {

using nlohmann::json;
using detail::ByteReader;
using detail::ByteWriter;

namespace {

constexpr int kVersion = 1;

struct TensorRef {
  std::size_t layer;
  std::string name;
  RMatrix* value;
  bool prunable;
};

std::vector<TensorRef> tensors_of(nn::Model& model) {
  std::vector<TensorRef> out;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    for (nn::Param* p : model.layer(i).params()) out.push_back({i, p->name, &p->value, p->prunable});
    const auto bufs = model.layer(i).buffers();
    for (std::size_t b = 0; b < bufs.size(); ++b)
      out.push_back({i, "buffer" + std::to_string(b), bufs[b], false});
  }
  return out;
}

json tensor_json(const TensorRef& t) {
  return {{"layer", t.layer}, {"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}};
}

void check_tensor_list(const json& list, const std::vector<TensorRef>& expected) {
  if (!list.is_array() || list.size() != expected.size())
    throw FormatError("tensor list does not match the architecture");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const json& t = list[i];
    if (t.at("layer").get<std::size_t>() != expected[i].layer ||
        t.at("name").get<std::string>() != expected[i].name ||
        t.at("rows").get<Eigen::Index>() != expected[i].value->rows() ||
        t.at("cols").get<Eigen::Index>() != expected[i].value->cols())
      throw FormatError("header shape of tensor " + std::to_string(i) +
                        " does not match the architecture");
  }
}

nn::Model model_from_header(const json& header) {
  try {
    return nn::Model(nn::model_spec_from_json(header.at("spec")));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("inconsistent architecture: ") + e.what());
  }
}

json parse_header(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const nn::Model& model, const json& meta) {
  nn::Model copy = model;
  const auto ts = tensors_of(copy);
  json list = json::array();
  for (const auto& t : ts) list.push_back(tensor_json(t));
  const json header{{"format", "bnn"}, {"version", kVersion}, {"spec", nn::to_json(model.spec())},
                    {"meta", meta}, {"tensors", list}};
  const std::string text = header.dump();
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  for (const auto& t : ts)
    for (Eigen::Index i = 0; i < t.value->size(); ++i) w.f64(t.value->data()[i]);
  return std::move(w.bytes());
}

void save_model(const nn::Model& model, const std::string& path, const json& meta) {
  detail::write_file(path, serialize_model(model, meta));
}

LoadedModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  const std::uint32_t len = r.u32();
  const json header = parse_header(r.str(len));
  try {
    if (header.at("format") != "bnn") throw FormatError("not a .bnn model");
    if (header.at("version").get<int>() != kVersion) throw FormatError("unsupported .bnn version");
    LoadedModel out{model_from_header(header), header.value("meta", json::object())};
    const auto ts = tensors_of(out.model);
    check_tensor_list(header.at("tensors"), ts);
    std::size_t total = 0;
    for (const auto& t : ts) total += static_cast<std::size_t>(t.value->size());
    if (r.remaining() != 8 * total)
      throw FormatError("weight payload has " + std::to_string(r.remaining()) + " bytes, expected " +
                        std::to_string(8 * total));
    for (const auto& t : ts)
      for (Eigen::Index i = 0; i < t.value->size(); ++i) t.value->data()[i] = r.f64();
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
}

LoadedModel load_model(const std::string& path) { return deserialize_model(detail::read_file(path)); }

PruneReport prune(nn::Model& model, double threshold) {
  if (!(threshold >= 0.0)) throw DomainError("prune threshold must be >= 0");
  PruneReport rep;
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    nn::Layer& layer = model.layer(li);
    for (nn::Param* p : layer.params()) {
      if (!p->prunable) continue;
      RMatrix& w = p->value;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        double& v = w.data()[i];
        if (v != 0.0 && std::abs(v) < threshold) {
          v = 0.0;
          ++rep.newly_zeroed;
        }
        if (v == 0.0) ++rep.zeros;
      }
      rep.prunable += static_cast<std::size_t>(w.size());
      // group columns by input unit: one per dense input, kh*kw per conv input channel
      const Eigen::Index group =
          layer.spec().kind == nn::LayerKind::kConv2D ? layer.spec().kernel_h * layer.spec().kernel_w
                                                      : 1;
      std::size_t dead = 0;
      for (Eigen::Index c = 0; c < w.cols(); c += group)
        if (w.middleCols(c, group).isZero(0.0)) ++dead;
      rep.dead_inputs.emplace_back(li, dead);
    }
  }
  rep.sparsity = rep.prunable ? static_cast<double>(rep.zeros) / static_cast<double>(rep.prunable) : 0.0;
  return rep;
}

namespace {

// Index of the nearest entry of a sorted codebook.
std::size_t nearest(const std::vector<double>& sorted, double v) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
  if (it == sorted.begin()) return 0;
  if (it == sorted.end()) return sorted.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - sorted.begin());
  return (v - sorted[hi - 1] <= sorted[hi] - v) ? hi - 1 : hi;
}

std::vector<double> kmeans_1d(const std::vector<double>& values, std::size_t k, Rng& rng,
                              int max_iter) {
  std::vector<double> distinct = values;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() <= k) return distinct;

  // k-means++ seeding
  std::vector<double> centers;
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  centers.push_back(values[pick(rng)]);
  std::vector<double> d2(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    d2[i] = (values[i] - centers[0]) * (values[i] - centers[0]);
  while (centers.size() < k) {
    double total = 0.0;
    for (double d : d2) total += d;
    if (!(total > 0.0)) break;
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng);
    std::size_t chosen = values.size() - 1;
    for (std::size_t i = 0; i < values.size(); ++i) {
      target -= d2[i];
      if (target < 0.0) {
        chosen = i;
        break;
      }
    }
    const double c = values[chosen];
    centers.push_back(c);
    for (std::size_t i = 0; i < values.size(); ++i)
      d2[i] = std::min(d2[i], (values[i] - c) * (values[i] - c));
  }
  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());

  // Lloyd iterations
  std::vector<std::size_t> assign(values.size(), static_cast<std::size_t>(-1));
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    std::vector<double> sum(centers.size(), 0.0);
    std::vector<std::size_t> count(centers.size(), 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::size_t a = nearest(centers, values[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
      sum[a] += values[i];
      ++count[a];
    }
    if (!changed) break;
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (count[c]) centers[c] = sum[c] / static_cast<double>(count[c]);
    std::sort(centers.begin(), centers.end());
  }
  // drop centroids no weight maps to
  std::vector<bool> used(centers.size(), false);
  for (double v : values) used[nearest(centers, v)] = true;
  std::vector<double> out;
  for (std::size_t c = 0; c < centers.size(); ++c)
    if (used[c]) out.push_back(centers[c]);
  return out;
}

}  // namespace

Quantized quantize(nn::Model& model, int bits, std::uint64_t seed, int max_iter) {
  if (bits < 1 || bits > 16) throw DomainError("quantize: bits must lie in [1, 16]");
  const std::size_t k = std::size_t{1} << bits;
  Quantized out;
  double total_err = 0.0;
  std::size_t total_n = 0;
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    for (nn::Param* p : model.layer(li).params()) {
      if (!p->prunable) continue;
      RMatrix& w = p->value;
      std::vector<double> nz;
      for (Eigen::Index i = 0; i < w.size(); ++i)
        if (w.data()[i] != 0.0) nz.push_back(w.data()[i]);
      QuantizeReport::Layer lr;
      lr.layer = li;
      lr.nonzero = nz.size();
      QuantizedTensor qt;
      qt.layer = li;
      qt.name = p->name;
      qt.symbols.assign(static_cast<std::size_t>(w.size()), 0u);
      if (nz.empty()) {
        lr.skipped = true;
      } else {
        Rng rng(sub_seed(seed, li));
        qt.codebook = kmeans_1d(nz, k, rng, max_iter);
        double err = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
          double& v = w.data()[i];
          if (v == 0.0) continue;
          const std::size_t c = nearest(qt.codebook, v);
          err += (v - qt.codebook[c]) * (v - qt.codebook[c]);
          v = qt.codebook[c];
          qt.symbols[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(c + 1);
        }
        lr.centroids = qt.codebook.size();
        lr.distortion = err / static_cast<double>(nz.size());
        total_err += err;
        total_n += nz.size();
      }
      out.report.layers.push_back(lr);
      out.tensors.push_back(std::move(qt));
    }
  }
  out.report.distortion = total_n ? total_err / static_cast<double>(total_n) : 0.0;
  return out;
}

HuffmanEncoded huffman_encode(const std::vector<std::uint32_t>& stream) {
  if (stream.empty()) throw DomainError("huffman_encode: empty stream");
  std::map<std::uint32_t, std::uint64_t> freq;
  for (std::uint32_t s : stream) ++freq[s];

  HuffmanEncoded enc;
  if (freq.size() == 1) {
    enc.table.push_back({freq.begin()->first, 1});
  } else {
    // nodes 0..n-1 are leaves; ties broken by node id for determinism
    struct Node {
      std::uint64_t weight;
      int left, right;
    };
    std::vector<Node> nodes;
    std::vector<std::uint32_t> syms;
    using Item = std::pair<std::uint64_t, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (const auto& [s, f] : freq) {
      pq.push({f, static_cast<int>(nodes.size())});
      nodes.push_back({f, -1, -1});
      syms.push_back(s);
    }
    while (pq.size() > 1) {
      const auto a = pq.top();
      pq.pop();
      const auto b = pq.top();
      pq.pop();
      pq.push({a.first + b.first, static_cast<int>(nodes.size())});
      nodes.push_back({a.first + b.first, a.second, b.second});
    }
    std::vector<int> depth(nodes.size(), 0);
    for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i)
      if (nodes[i].left >= 0) {
        depth[nodes[i].left] = depth[i] + 1;
        depth[nodes[i].right] = depth[i] + 1;
      }
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (depth[i] > 63) throw NumericError("huffman code longer than 63 bits");
      enc.table.push_back({syms[i], static_cast<std::uint8_t>(depth[i])});
    }
  }
  std::sort(enc.table.begin(), enc.table.end(), [](const CodeEntry& a, const CodeEntry& b) {
    return a.length != b.length ? a.length < b.length : a.symbol < b.symbol;
  });

  const auto codes = canonical_codes(enc.table);
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint8_t>> lookup;
  for (std::size_t i = 0; i < enc.table.size(); ++i) lookup[enc.table[i].symbol] = codes[i];
  std::uint64_t nbits = 0;
  for (std::uint32_t s : stream) nbits += lookup[s].second;
  enc.bits.assign(static_cast<std::size_t>((nbits + 7) / 8), 0);
  std::uint64_t pos = 0;
  for (std::uint32_t s : stream) {
    const auto [code, len] = lookup[s];
    for (int b = len - 1; b >= 0; --b, ++pos)
      if ((code >> b) & 1u) enc.bits[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
  }
  enc.bit_count = nbits;
  enc.symbol_count = stream.size();
  return enc;
}

std::vector<std::pair<std::uint64_t, std::uint8_t>> canonical_codes(
    const std::vector<CodeEntry>& table) {
  std::vector<std::pair<std::uint64_t, std::uint8_t>> out;
  std::uint64_t code = 0;
  int prev = 0;
  double kraft = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const int len = table[i].length;
    if (len < 1 || len > 63) throw FormatError("huffman table: invalid code length");
    if (len < prev) throw FormatError("huffman table: not in canonical order");
    if (i > 0) {
      ++code;
      if (len == prev && table[i].symbol <= table[i - 1].symbol)
        throw FormatError("huffman table: duplicate or unordered symbol");
    }
    code <<= (len - prev);
    prev = len;
    kraft += std::ldexp(1.0, -len);
    out.emplace_back(code, static_cast<std::uint8_t>(len));
  }
  if (kraft > 1.0 + 1e-12) throw FormatError("huffman table violates the Kraft inequality");
  return out;
}

std::vector<std::uint32_t> huffman_decode(const HuffmanEncoded& enc) {
  if (enc.table.empty()) {
    if (enc.symbol_count == 0 && enc.bit_count == 0) return {};
    throw FormatError("huffman: empty code table");
  }
  if (enc.bits.size() != (enc.bit_count + 7) / 8) throw FormatError("huffman: bit count mismatch");
  const auto codes = canonical_codes(enc.table);
  const int max_len = codes.back().second;
  // first code, first table index and count per length
  std::vector<std::uint64_t> first(static_cast<std::size_t>(max_len) + 1, 0);
  std::vector<std::size_t> offset(first.size(), 0), count(first.size(), 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto len = codes[i].second;
    if (count[len] == 0) {
      first[len] = codes[i].first;
      offset[len] = i;
    }
    ++count[len];
  }
  std::vector<std::uint32_t> out;
  out.reserve(static_cast<std::size_t>(enc.symbol_count));
  std::uint64_t pos = 0;
  while (out.size() < enc.symbol_count) {
    std::uint64_t code = 0;
    int len = 0;
    for (;;) {
      if (pos >= enc.bit_count) throw FormatError("huffman: bitstream ends inside a code");
      code = (code << 1) | ((enc.bits[pos / 8] >> (7 - pos % 8)) & 1u);
      ++pos;
      ++len;
      if (len > max_len) throw FormatError("huffman: corrupt bitstream");
      if (count[len] && code >= first[len] && code - first[len] < count[len]) {
        out.push_back(enc.table[offset[len] + (code - first[len])].symbol);
        break;
      }
    }
  }
  if (pos != enc.bit_count) throw FormatError("huffman: trailing bits after the last symbol");
  return out;
}

std::vector<std::uint8_t> encode_compressed(const nn::Model& model, const Quantized& q,
                                            const json& meta) {
  nn::Model copy = model;
  const auto ts = tensors_of(copy);
  std::map<std::pair<std::size_t, std::string>, const QuantizedTensor*> quantized;
  for (const auto& t : q.tensors) quantized[{t.layer, t.name}] = &t;

  // Coded payload per tensor; empty when raw storage is not larger.
  std::vector<std::vector<std::uint8_t>> coded(ts.size());
  json list = json::array();
  for (std::size_t ti = 0; ti < ts.size(); ++ti) {
    const auto& t = ts[ti];
    const auto it = quantized.find({t.layer, t.name});
    if (it != quantized.end()) {
      const QuantizedTensor& qt = *it->second;
      if (qt.symbols.size() != static_cast<std::size_t>(t.value->size()))
        throw ContractError("quantized tensor does not match the model");
      for (Eigen::Index i = 0; i < t.value->size(); ++i) {
        const std::uint32_t s = qt.symbols[static_cast<std::size_t>(i)];
        const double v = s == 0 ? 0.0 : qt.codebook.at(s - 1);
        if (v != t.value->data()[i]) throw ContractError("model weights differ from the codebook");
      }
      ByteWriter w;
      w.u32(static_cast<std::uint32_t>(qt.codebook.size()));
      for (double c : qt.codebook) w.f64(c);
      const HuffmanEncoded enc = huffman_encode(qt.symbols);
      w.u32(static_cast<std::uint32_t>(enc.table.size()));
      for (const auto& e : enc.table) {
        w.u32(e.symbol);
        w.u8(e.length);
      }
      w.u64(enc.symbol_count);
      w.u64(enc.bit_count);
      w.raw(enc.bits.data(), enc.bits.size());
      if (w.bytes().size() < 8 * static_cast<std::size_t>(t.value->size()))
        coded[ti] = std::move(w.bytes());
    }
    json j = tensor_json(t);
    j["coding"] = coded[ti].empty() ? "raw" : "huffman";
    list.push_back(j);
  }
  const json header{{"format", "bnnz"}, {"version", kVersion}, {"spec", nn::to_json(model.spec())},
                    {"meta", meta}, {"tensors", list}};
  const std::string text = header.dump();
  ByteWriter w;
  w.str("BNNZ");
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  for (std::size_t ti = 0; ti < ts.size(); ++ti) {
    if (!coded[ti].empty()) {
      w.raw(coded[ti].data(), coded[ti].size());
      continue;
    }
    for (Eigen::Index i = 0; i < ts[ti].value->size(); ++i) w.f64(ts[ti].value->data()[i]);
  }
  return std::move(w.bytes());
}

LoadedModel decode_compressed(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "BNNZ") throw FormatError("not a .bnnz file");
  if (r.u16() != kVersion) throw FormatError("unsupported .bnnz version");
  const json header = parse_header(r.str(r.u32()));
  try {
    LoadedModel out{model_from_header(header), header.value("meta", json::object())};
    const auto ts = tensors_of(out.model);
    const json& list = header.at("tensors");
    check_tensor_list(list, ts);
    for (std::size_t ti = 0; ti < ts.size(); ++ti) {
      RMatrix& m = *ts[ti].value;
      if (list[ti].at("coding") == "raw") {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
        continue;
      }
      std::vector<double> codebook(r.u32());
      if (codebook.size() > (std::size_t{1} << 16)) throw FormatError("codebook too large");
      for (double& c : codebook) c = r.f64();
      HuffmanEncoded enc;
      enc.table.resize(r.u32());
      if (enc.table.size() > codebook.size() + 1) throw FormatError("code table too large");
      for (auto& e : enc.table) {
        e.symbol = r.u32();
        e.length = r.u8();
      }
      enc.symbol_count = r.u64();
      enc.bit_count = r.u64();
      if (enc.symbol_count != static_cast<std::uint64_t>(m.size()))
        throw FormatError("symbol count does not match the tensor size");
      if (enc.bit_count / 8 > r.remaining()) throw FormatError("unexpected end of file");
      enc.bits.resize(static_cast<std::size_t>((enc.bit_count + 7) / 8));
      r.raw(enc.bits.data(), enc.bits.size());
      const auto syms = huffman_decode(enc);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const std::uint32_t s = syms[static_cast<std::size_t>(i)];
        if (s > codebook.size()) throw FormatError("symbol outside the codebook");
        m.data()[i] = s == 0 ? 0.0 : codebook[s - 1];
      }
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after the last tensor");
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad header: ") + e.what());
  }
}

LoadedModel load_compressed(const std::string& path) {
  return decode_compressed(detail::read_file(path));
}

CompressReport compress_pipeline(const nn::Model& model, double threshold, int bits,
                                 const std::string& path, const Objective& objective,
                                 const json& meta, std::uint64_t seed, nn::Model* out) {
  CompressReport rep;
  rep.original_bytes = serialize_model(model, meta).size();
  nn::Model work = model;
  rep.prune = prune(work, threshold);
  const Quantized q = quantize(work, bits, seed);
  rep.quantize = q.report;
  const auto bytes = encode_compressed(work, q, meta);
  detail::write_file(path, bytes);
  rep.compressed_bytes = bytes.size();
  rep.ratio = static_cast<double>(rep.original_bytes) / static_cast<double>(rep.compressed_bytes);
  if (objective.evaluate) {
    rep.metric_before = objective.evaluate(model);
    rep.metric_after = objective.evaluate(work);
    const double scale = std::max(std::abs(rep.metric_before), 1e-300);
    rep.degradation = (objective.higher_is_better ? rep.metric_before - rep.metric_after
                                                  : rep.metric_after - rep.metric_before) /
                      scale;
  }
  if (out) *out = std::move(work);
  return rep;
}

}  // namespace bnnkit::compress
