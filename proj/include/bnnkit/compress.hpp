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

#ifndef BNNKIT_COMPRESS_HPP
#define BNNKIT_COMPRESS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bnnkit/nn.hpp"

namespace bnnkit::compress {

// .bnn: u32 header length, JSON header (format, version, spec, meta, tensor
// list), then every tensor as little-endian f64 in layer order (params, then
// buffers).
std::vector<std::uint8_t> serialize_model(const nn::Model& model,
                                          const nlohmann::json& meta = nlohmann::json::object());
void save_model(const nn::Model& model, const std::string& path,
                const nlohmann::json& meta = nlohmann::json::object());

struct LoadedModel {
  nn::Model model;
  nlohmann::json meta;
};

LoadedModel deserialize_model(const std::vector<std::uint8_t>& bytes);
LoadedModel load_model(const std::string& path);

struct PruneReport {
  std::size_t prunable = 0;  // weights eligible for pruning
  std::size_t zeros = 0;     // zero weights after pruning
  std::size_t newly_zeroed = 0;
  double sparsity = 0.0;     // zeros / prunable
  // Per prunable tensor: input units whose outgoing weights are all zero.
  std::vector<std::pair<std::size_t, std::size_t>> dead_inputs;  // (layer, count)
};

// Zeroes connection weights with |w| < threshold.  Biases and batch-norm
// parameters are never touched.
PruneReport prune(nn::Model& model, double threshold);

struct QuantizedTensor {
  std::size_t layer = 0;
  std::string name;
  std::vector<double> codebook;
  // 0 marks a pruned weight; s >= 1 selects codebook[s - 1].  Column-major.
  std::vector<std::uint32_t> symbols;
};

struct QuantizeReport {
  struct Layer {
    std::size_t layer = 0;
    std::size_t nonzero = 0;
    std::size_t centroids = 0;
    double distortion = 0.0;  // mean squared replacement error over nonzero weights
    bool skipped = false;     // no nonzero weights
  };
  std::vector<Layer> layers;
  double distortion = 0.0;  // over all nonzero prunable weights
};

struct Quantized {
  std::vector<QuantizedTensor> tensors;
  QuantizeReport report;
};

// 1-D k-means with k-means++ seeding per prunable tensor (seed mixed with the
// layer index); replaces every nonzero weight by its centroid in place.
Quantized quantize(nn::Model& model, int bits, std::uint64_t seed = 1, int max_iter = 100);

struct CodeEntry {
  std::uint32_t symbol = 0;
  std::uint8_t length = 0;
};

struct HuffmanEncoded {
  std::vector<CodeEntry> table;  // canonical order: (length, symbol)
  std::vector<std::uint8_t> bits;  // MSB first
  std::uint64_t bit_count = 0;
  std::uint64_t symbol_count = 0;
};

HuffmanEncoded huffman_encode(const std::vector<std::uint32_t>& stream);
std::vector<std::uint32_t> huffman_decode(const HuffmanEncoded& encoded);
// Canonical codes (value, length) for a validated table.
std::vector<std::pair<std::uint64_t, std::uint8_t>> canonical_codes(
    const std::vector<CodeEntry>& table);

// .bnnz: magic "BNNZ", u16 version, u32 header length, JSON header, then per
// tensor either raw f64 values or (codebook, code table, bitstream).  A
// quantized tensor is stored raw when its coded form would not be smaller.
std::vector<std::uint8_t> encode_compressed(const nn::Model& model, const Quantized& q,
                                            const nlohmann::json& meta = nlohmann::json::object());
LoadedModel decode_compressed(const std::vector<std::uint8_t>& bytes);
LoadedModel load_compressed(const std::string& path);

struct CompressReport {
  PruneReport prune;
  QuantizeReport quantize;
  std::size_t original_bytes = 0;
  std::size_t compressed_bytes = 0;
  double ratio = 0.0;
  double metric_before = 0.0;
  double metric_after = 0.0;
  // Relative change in the direction that makes the objective worse.
  double degradation = 0.0;
};

struct Objective {
  std::function<double(const nn::Model&)> evaluate;
  bool higher_is_better = true;
};

// prune -> quantize -> Huffman -> write; the compressed model is returned
// through `out` when given.
CompressReport compress_pipeline(const nn::Model& model, double threshold, int bits,
                                 const std::string& path, const Objective& objective,
                                 const nlohmann::json& meta = nlohmann::json::object(),
                                 std::uint64_t seed = 1, nn::Model* out = nullptr);

}  // namespace bnnkit::compress

#endif  // BNNKIT_COMPRESS_HPP
