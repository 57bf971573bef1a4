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

#include "dplm/data_pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dplm/rng.h"
#include "json.hpp"

namespace dplm {

std::vector<PackedSequence> PackCorpus(const std::vector<std::vector<int>>& docs,
                                       int seq_len) {
  if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
  std::vector<PackedSequence> out;
  std::vector<int> buf_tokens;
  std::vector<int> buf_doc_ids;

  auto flush_full = [&]() {
    while (static_cast<int>(buf_tokens.size()) >= seq_len) {
      PackedSequence seq;
      seq.tokens.assign(buf_tokens.begin(), buf_tokens.begin() + seq_len);
      // group contiguous doc ids into spans
      int start = 0;
      for (int t = 1; t <= seq_len; ++t) {
        if (t == seq_len || buf_doc_ids[t] != buf_doc_ids[start]) {
          seq.doc_spans.push_back({buf_doc_ids[start], start, t});
          start = t;
        }
      }
      seq.pad_count = 0;
      out.push_back(std::move(seq));
      buf_tokens.erase(buf_tokens.begin(), buf_tokens.begin() + seq_len);
      buf_doc_ids.erase(buf_doc_ids.begin(), buf_doc_ids.begin() + seq_len);
    }
  };

  for (size_t d = 0; d < docs.size(); ++d) {
    if (d > 0) {
      // separator EOS, attributed to the preceding document
      buf_tokens.push_back(kEosToken);
      buf_doc_ids.push_back(static_cast<int>(d) - 1);
    }
    for (int tok : docs[d]) {
      buf_tokens.push_back(tok);
      buf_doc_ids.push_back(static_cast<int>(d));
    }
    flush_full();
  }
  if (!buf_tokens.empty()) {
    PackedSequence seq;
    int used = static_cast<int>(buf_tokens.size());
    seq.tokens = buf_tokens;
    seq.tokens.resize(seq_len, kPadToken);
    seq.pad_count = seq_len - used;
    int start = 0;
    for (int t = 1; t <= used; ++t) {
      if (t == used || buf_doc_ids[t] != buf_doc_ids[start]) {
        seq.doc_spans.push_back({buf_doc_ids[start], start, t});
        start = t;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void SamplerConfig::Validate() const {
  if (dataset_size <= 0) throw std::invalid_argument("dataset_size must be positive");
  if (!(sampling_prob >= 0.0 && sampling_prob <= 1.0))
    throw std::invalid_argument("sampling_prob must be in [0, 1]");
  if (max_batch_size <= 0) throw std::invalid_argument("max_batch_size must be positive");
}

std::pair<std::vector<int>, BatchStats> DrawBatch(const SamplerConfig& cfg,
                                                  int64_t step) {
  cfg.Validate();
  GaussianRng rng(DeriveSeed(cfg.seed, static_cast<uint64_t>(step)));
  std::vector<int> selected;
  for (int i = 0; i < cfg.dataset_size; ++i)
    if (rng.Uniform() < cfg.sampling_prob) selected.push_back(i);

  BatchStats stats;
  int raw = static_cast<int>(selected.size());
  if (raw > cfg.max_batch_size) {
    stats.truncated = raw - cfg.max_batch_size;
    // uniform subset via partial Fisher-Yates
    for (int i = 0; i < cfg.max_batch_size; ++i) {
      uint64_t j = i + rng.engine()() % static_cast<uint64_t>(raw - i);
      std::swap(selected[i], selected[j]);
    }
    selected.resize(cfg.max_batch_size);
    std::sort(selected.begin(), selected.end());
  } else {
    stats.padded = cfg.max_batch_size - raw;
  }
  stats.realized = static_cast<int>(selected.size());
  return {std::move(selected), stats};
}

double SamplingProbFor(double expected_batch, double dataset_size) {
  if (expected_batch <= 0 || dataset_size <= 0)
    throw std::invalid_argument("expected_batch and dataset_size must be positive");
  if (expected_batch > dataset_size)
    throw std::invalid_argument("expected_batch exceeds dataset_size");
  return expected_batch / dataset_size;
}

int DefaultMaxBatch(double q, int64_t dataset_size) {
  if (!(q > 0.0 && q <= 1.0) || dataset_size <= 0)
    throw std::invalid_argument("bad sampler parameters");
  double mean = q * static_cast<double>(dataset_size);
  double sigma = std::sqrt(mean * (1.0 - q));
  int b = static_cast<int>(std::ceil(mean + 4.0 * sigma));
  return std::min<int64_t>(b, dataset_size);
}

std::vector<int> BytesToTokens(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c));
  return out;
}

std::string TokensToBytes(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens)
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(t));
  return out;
}

std::vector<std::vector<int>> ReadJsonlCorpus(const std::string& path,
                                              int multiplicity) {
  if (multiplicity < 1) throw std::invalid_argument("multiplicity must be >= 1");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<std::vector<int>> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (!j.contains("text") || !j["text"].is_string())
      throw std::runtime_error("corpus line missing string key \"text\"");
    std::vector<int> tokens = BytesToTokens(j["text"].get<std::string>());
    for (int m = 0; m < multiplicity; ++m) docs.push_back(tokens);
  }
  return docs;
}

TokenBatch MakeTokenBatch(const std::vector<PackedSequence>& corpus,
                          const std::vector<int>& selected, int max_batch) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (max_batch <= 0) throw std::invalid_argument("max_batch must be positive");
  if (static_cast<int>(selected.size()) > max_batch)
    throw std::invalid_argument("more selected sequences than max_batch");
  int seq_len = static_cast<int>(corpus.front().tokens.size());

  TokenBatch batch;
  batch.seq_len = seq_len;
  for (int idx : selected) {
    if (idx < 0 || idx >= static_cast<int>(corpus.size()))
      throw std::invalid_argument("selected index out of range");
    const auto& tokens = corpus[idx].tokens;
    std::vector<int> targets(seq_len, kPadToken);
    std::vector<uint8_t> mask(seq_len, 0);
    for (int t = 0; t + 1 < seq_len; ++t) {
      targets[t] = tokens[t + 1];
      mask[t] = (tokens[t] != kPadToken && targets[t] != kPadToken) ? 1 : 0;
    }
    batch.tokens.push_back(tokens);
    batch.targets.push_back(std::move(targets));
    batch.loss_mask.push_back(std::move(mask));
    batch.is_padding_example.push_back(0);
  }
  for (int i = static_cast<int>(selected.size()); i < max_batch; ++i) {
    batch.tokens.emplace_back(seq_len, kPadToken);
    batch.targets.emplace_back(seq_len, kPadToken);
    batch.loss_mask.emplace_back(seq_len, 0);
    batch.is_padding_example.push_back(1);
  }
  return batch;
}

void WritePackedCache(const std::string& path,
                      const std::vector<PackedSequence>& seqs, int seq_len) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open cache file for write: " + path);
  nlohmann::json header;
  header["seq_len"] = seq_len;
  header["count"] = seqs.size();
  nlohmann::json meta = nlohmann::json::array();
  for (const auto& s : seqs) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& sp : s.doc_spans)
      spans.push_back({sp.doc_id, sp.start, sp.end});
    meta.push_back({{"pad_count", s.pad_count}, {"spans", spans}});
  }
  header["sequences"] = std::move(meta);
  std::string hs = header.dump();
  const char magic[8] = {'D', 'P', 'L', 'M', 'P', 'A', 'C', 'K'};
  out.write(magic, 8);
  uint32_t len = static_cast<uint32_t>(hs.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), hs.size());
  for (const auto& s : seqs) {
    for (int tok : s.tokens) {
      uint16_t v = static_cast<uint16_t>(tok);
      out.write(reinterpret_cast<const char*>(&v), 2);
    }
  }
}

std::vector<PackedSequence> ReadPackedCache(const std::string& path,
                                            int* seq_len_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cache file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "DPLMPACK", 8) != 0)
    throw std::runtime_error("bad cache magic");
  uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  nlohmann::json header = nlohmann::json::parse(hs);
  int seq_len = header["seq_len"].get<int>();
  size_t count = header["count"].get<size_t>();
  if (seq_len_out) *seq_len_out = seq_len;
  std::vector<PackedSequence> seqs(count);
  for (size_t i = 0; i < count; ++i) {
    const auto& meta = header["sequences"][i];
    seqs[i].pad_count = meta["pad_count"].get<int>();
    for (const auto& sp : meta["spans"])
      seqs[i].doc_spans.push_back({sp[0].get<int>(), sp[1].get<int>(), sp[2].get<int>()});
    seqs[i].tokens.resize(seq_len);
    for (int t = 0; t < seq_len; ++t) {
      uint16_t v = 0;
      in.read(reinterpret_cast<char*>(&v), 2);
      seqs[i].tokens[t] = v;
    }
  }
  if (!in) throw std::runtime_error("truncated cache file");
  return seqs;
}

}  // namespace dplm
