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

#include "dplm/memorization.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dplm/rng.h"

namespace dplm {

std::vector<Probe> SampleProbes(const std::vector<PackedSequence>& corpus,
                                int n, int prefix_len, int suffix_len,
                                uint64_t seed) {
  if (n < 0) throw std::invalid_argument("n must be >= 0");
  if (prefix_len < 1 || suffix_len < 1)
    throw std::invalid_argument("prefix and suffix lengths must be >= 1");
  int window = prefix_len + suffix_len;

  std::vector<std::pair<int, int>> eligible;  // (sequence, offset)
  for (size_t s = 0; s < corpus.size(); ++s) {
    int usable = static_cast<int>(corpus[s].tokens.size()) - corpus[s].pad_count;
    for (int off = 0; off + window <= usable; ++off)
      eligible.emplace_back(static_cast<int>(s), off);
  }

  int take = std::min<int>(n, static_cast<int>(eligible.size()));
  GaussianRng rng(DeriveSeed(seed, 0xA0D17));
  // partial Fisher-Yates for a uniform sample without replacement
  for (int i = 0; i < take; ++i) {
    uint64_t j = i + rng.engine()() % static_cast<uint64_t>(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(take);
  std::sort(eligible.begin(), eligible.end());

  std::vector<Probe> probes;
  probes.reserve(take);
  for (auto [s, off] : eligible) {
    Probe p;
    p.source_sequence = s;
    p.offset = off;
    const auto& toks = corpus[s].tokens;
    p.prefix.assign(toks.begin() + off, toks.begin() + off + prefix_len);
    p.true_suffix.assign(toks.begin() + off + prefix_len,
                         toks.begin() + off + window);
    probes.push_back(std::move(p));
  }
  return probes;
}

int TokenEditDistance(const std::vector<int>& a, const std::vector<int>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

MemorizationClass Classify(const std::vector<int>& generated,
                           const std::vector<int>& truth, double threshold) {
  if (generated.size() != truth.size())
    throw std::invalid_argument("generated and truth lengths differ");
  int dist = TokenEditDistance(generated, truth);
  if (dist == 0) return MemorizationClass::kExact;
  int cutoff = static_cast<int>(std::floor(threshold * truth.size()));
  return dist <= cutoff ? MemorizationClass::kApproximate
                        : MemorizationClass::kNone;
}

MemorizationReport Audit(const ModelParams& model,
                         const std::vector<PackedSequence>& corpus,
                         int n_probes, int prefix_len, int suffix_len,
                         double threshold, uint64_t seed, bool keep_details) {
  if (prefix_len + suffix_len > model.config.seq_len)
    throw std::invalid_argument("prefix + suffix exceeds model seq_len");
  std::vector<Probe> probes =
      SampleProbes(corpus, n_probes, prefix_len, suffix_len, seed);

  MemorizationReport report;
  report.n_probes = static_cast<int>(probes.size());
  report.edit_threshold = threshold;
  for (auto& probe : probes) {
    std::vector<int> decoded = GreedyDecode(model, probe.prefix, suffix_len);
    std::vector<int> generated(decoded.begin() + prefix_len, decoded.end());
    MemorizationClass cls = Classify(generated, probe.true_suffix, threshold);
    if (cls == MemorizationClass::kExact) ++report.exact_count;
    if (cls != MemorizationClass::kNone) ++report.approx_count;
    if (keep_details) {
      ProbeResult r;
      r.edit_distance = TokenEditDistance(generated, probe.true_suffix);
      r.cls = cls;
      r.generated = std::move(generated);
      r.probe = std::move(probe);
      report.details.push_back(std::move(r));
    }
  }
  if (report.n_probes > 0) {
    report.exact_rate = static_cast<double>(report.exact_count) / report.n_probes;
    report.approx_rate = static_cast<double>(report.approx_count) / report.n_probes;
  }
  return report;
}

}  // namespace dplm
