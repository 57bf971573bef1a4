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

#ifndef DPLM_DATA_PIPELINE_H_
#define DPLM_DATA_PIPELINE_H_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dplm/model.h"

namespace dplm {

// One fixed-length packed sequence; the privacy unit.
struct PackedSequence {
  struct Span {
    int doc_id = 0;
    int start = 0;  // inclusive, sequence coordinates
    int end = 0;    // exclusive; includes the doc's trailing EOS when present
  };
  std::vector<int> tokens;  // exactly seq_len entries
  std::vector<Span> doc_spans;
  int pad_count = 0;
};

// Greedy sequential packing: documents concatenated with an EOS separator
// into a running buffer cut every seq_len tokens; the final partial sequence
// is PAD-padded. Long documents span multiple sequences.
std::vector<PackedSequence> PackCorpus(const std::vector<std::vector<int>>& docs,
                                       int seq_len);

struct SamplerConfig {
  int dataset_size = 0;         // N
  double sampling_prob = 0.0;   // q in (0, 1]
  int max_batch_size = 0;       // B_max
  uint64_t seed = 0;

  void Validate() const;
};

struct BatchStats {
  int realized = 0;
  int padded = 0;
  int truncated = 0;
};

// Truncated Poisson subsampling: each index in [0, N) is included
// independently with probability q (deterministic in (seed, step)); a raw
// draw larger than B_max keeps a uniformly random subset of size B_max, a
// smaller one records the deficit as padding.
std::pair<std::vector<int>, BatchStats> DrawBatch(const SamplerConfig& cfg,
                                                  int64_t step);

// expected_batch / N
double SamplingProbFor(double expected_batch, double dataset_size);

// ceil(qN + 4*sqrt(qN(1-q))): default truncation margin a few sigma above
// the expected batch size.
int DefaultMaxBatch(double q, int64_t dataset_size);

// Byte-level tokenization: one token per byte.
std::vector<int> BytesToTokens(const std::string& text);
std::string TokensToBytes(const std::vector<int>& tokens);

// Reads a JSONL corpus (one document per line under key "text") and
// byte-tokenizes it. `multiplicity` repeats every document that many times
// to simulate repeated sampling into the mixture (each copy becomes an
// independent privacy unit).
std::vector<std::vector<int>> ReadJsonlCorpus(const std::string& path,
                                              int multiplicity = 1);

// Builds a training batch of exactly max_batch rows from the selected
// sequences, appending all-masked padding rows for the deficit. Targets are
// next-token; positions whose target is PAD (or past the end) are masked.
TokenBatch MakeTokenBatch(const std::vector<PackedSequence>& corpus,
                          const std::vector<int>& selected, int max_batch);

// Binary cache of packed sequences (JSON header + fixed-width uint16 token
// records, little endian).
void WritePackedCache(const std::string& path,
                      const std::vector<PackedSequence>& seqs, int seq_len);
std::vector<PackedSequence> ReadPackedCache(const std::string& path,
                                            int* seq_len_out = nullptr);

}  // namespace dplm

#endif  // DPLM_DATA_PIPELINE_H_
