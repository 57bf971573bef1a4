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

#ifndef DPLM_MEMORIZATION_H_
#define DPLM_MEMORIZATION_H_

#include <cstdint>
#include <vector>

#include "dplm/data_pipeline.h"
#include "dplm/model.h"

namespace dplm {

// One discoverable-extraction probe: a training prefix and its true
// continuation, contiguous within a single packed sequence.
struct Probe {
  int source_sequence = 0;
  int offset = 0;
  std::vector<int> prefix;
  std::vector<int> true_suffix;
};

enum class MemorizationClass { kExact, kApproximate, kNone };

struct ProbeResult {
  Probe probe;
  std::vector<int> generated;
  int edit_distance = 0;
  MemorizationClass cls = MemorizationClass::kNone;
};

struct MemorizationReport {
  int n_probes = 0;
  int exact_count = 0;
  int approx_count = 0;  // includes exact
  double exact_rate = 0.0;
  double approx_rate = 0.0;
  double edit_threshold = 0.10;
  std::vector<ProbeResult> details;
};

// Uniform sample without replacement of n eligible (sequence, offset)
// positions; eligible offsets keep prefix + suffix inside the non-pad region.
// Returns all eligible positions if fewer than n exist.
std::vector<Probe> SampleProbes(const std::vector<PackedSequence>& corpus,
                                int n, int prefix_len, int suffix_len,
                                uint64_t seed);

// Levenshtein distance over token ids, unit cost.
int TokenEditDistance(const std::vector<int>& a, const std::vector<int>& b);

// exact iff distance 0; approximate iff 0 < distance <= floor(threshold * S).
MemorizationClass Classify(const std::vector<int>& generated,
                           const std::vector<int>& truth, double threshold);

// Greedy-decodes each probe's suffix and aggregates classifications.
MemorizationReport Audit(const ModelParams& model,
                         const std::vector<PackedSequence>& corpus,
                         int n_probes, int prefix_len, int suffix_len,
                         double threshold, uint64_t seed,
                         bool keep_details = false);

}  // namespace dplm

#endif  // DPLM_MEMORIZATION_H_
