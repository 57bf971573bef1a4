// Copyright 2026 The DPLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dplm/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dplm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'D', 'P', 'L', 'M', 'C', 'K', 'P', 'T'};
}

void SaveCheckpoint(const std::string& path, const ModelParams& params) {
  nlohmann::json header;
  const ModelConfig& c = params.config;
  header["config"] = {{"d_model", c.d_model},
                      {"n_layers", c.n_layers},
                      {"n_heads", c.n_heads},
                      {"n_kv_heads", c.n_kv_heads},
                      {"head_size", c.head_size},
                      {"ffn_hidden", c.ffn_hidden},
                      {"vocab_size", c.vocab_size},
                      {"seq_len", c.seq_len},
                      {"rmsnorm_eps", c.rmsnorm_eps},
                      {"rope_base", c.rope_base}};
  nlohmann::json manifest = nlohmann::json::array();
  params.ForEachTensor([&](const std::string& name, const double*, size_t n) {
    manifest.push_back({{"name", name}, {"size", n}});
  });
  header["tensors"] = std::move(manifest);
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for write: " + path);
  out.write(kMagic, 8);
  uint32_t len = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), hs.size());
  params.ForEachTensor([&](const std::string&, const double* data, size_t n) {
    out.write(reinterpret_cast<const char*>(data), n * sizeof(double));
  });
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelParams LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic");
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  nlohmann::json header = nlohmann::json::parse(hs);
  const auto& jc = header["config"];
  ModelConfig cfg;
  cfg.d_model = jc["d_model"].get<int>();
  cfg.n_layers = jc["n_layers"].get<int>();
  cfg.n_heads = jc["n_heads"].get<int>();
  cfg.n_kv_heads = jc["n_kv_heads"].get<int>();
  cfg.head_size = jc["head_size"].get<int>();
  cfg.ffn_hidden = jc["ffn_hidden"].get<int>();
  cfg.vocab_size = jc["vocab_size"].get<int>();
  cfg.seq_len = jc["seq_len"].get<int>();
  cfg.rmsnorm_eps = jc["rmsnorm_eps"].get<double>();
  cfg.rope_base = jc["rope_base"].get<double>();

  ModelParams params = ModelParams::Zeros(cfg);
  size_t idx = 0;
  params.ForEachTensorMut([&](const std::string& name, double* data, size_t n) {
    const auto& entry = header["tensors"][idx++];
    if (entry["name"].get<std::string>() != name ||
        entry["size"].get<size_t>() != n)
      throw std::runtime_error("checkpoint manifest mismatch at " + name);
    in.read(reinterpret_cast<char*>(data), n * sizeof(double));
  });
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return params;
}

}  // namespace dplm
