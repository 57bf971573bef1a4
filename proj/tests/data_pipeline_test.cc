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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "dplm/data_pipeline.h"

namespace dplm {
namespace {

std::vector<int> Doc(int len, int fill) { return std::vector<int>(len, fill); }

TEST_CASE("one document of exactly seq_len packs into one padless sequence") {
  auto seqs = PackCorpus({Doc(16, 65)}, 16);
  REQUIRE(seqs.size() == 1);
  CHECK(seqs[0].pad_count == 0);
  REQUIRE(seqs[0].doc_spans.size() == 1);
  CHECK(seqs[0].doc_spans[0].doc_id == 0);
  CHECK(seqs[0].doc_spans[0].start == 0);
  CHECK(seqs[0].doc_spans[0].end == 16);
  for (int t : seqs[0].tokens) CHECK(t == 65);
}

TEST_CASE("two 600-token documents pack into two 1024-token sequences") {
  auto seqs = PackCorpus({Doc(600, 1), Doc(600, 2)}, 1024);
  REQUIRE(seqs.size() == 2);

  // 600 tokens of doc 0, its separator EOS, then 423 tokens of doc 1
  CHECK(seqs[0].pad_count == 0);
  REQUIRE(seqs[0].doc_spans.size() == 2);
  CHECK(seqs[0].doc_spans[0].doc_id == 0);
  CHECK(seqs[0].doc_spans[0].start == 0);
  CHECK(seqs[0].doc_spans[0].end == 601);  // includes the trailing EOS
  CHECK(seqs[0].tokens[600] == kEosToken);
  CHECK(seqs[0].doc_spans[1].doc_id == 1);
  CHECK(seqs[0].doc_spans[1].start == 601);
  CHECK(seqs[0].doc_spans[1].end == 1024);

  // remaining 177 tokens of doc 1, then padding
  CHECK(seqs[1].pad_count == 1024 - 177);
  REQUIRE(seqs[1].doc_spans.size() == 1);
  CHECK(seqs[1].doc_spans[0].doc_id == 1);
  CHECK(seqs[1].doc_spans[0].end == 177);
  CHECK(seqs[1].tokens[177] == kPadToken);
  CHECK(seqs[1].tokens[1023] == kPadToken);
}

TEST_CASE("a long document spans multiple sequences without separators") {
  auto seqs = PackCorpus({Doc(40, 7)}, 16);
  REQUIRE(seqs.size() == 3);
  CHECK(seqs[0].pad_count == 0);
  CHECK(seqs[1].pad_count == 0);
  CHECK(seqs[2].pad_count == 8);
  for (const auto& s : seqs) {
    REQUIRE(s.doc_spans.size() == 1);
    CHECK(s.doc_spans[0].doc_id == 0);
  }
  CHECK_THROWS_AS(PackCorpus({Doc(4, 1)}, 1), std::invalid_argument);
}

TEST_CASE("byte tokenization round-trips") {
  std::string text = "hello, \xc3\xa9 world";
  std::vector<int> toks = BytesToTokens(text);
  CHECK(toks.size() == text.size());
  CHECK(TokensToBytes(toks) == text);
  // specials are dropped on detokenization
  toks.push_back(kEosToken);
  CHECK(TokensToBytes(toks) == text);
}

TEST_CASE("jsonl corpus reading honors multiplicity") {
  std::string path = "corpus_test_tmp.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text": "ab"})" << "\n";
    out << R"({"text": "xyz"})" << "\n";
  }
  auto docs = ReadJsonlCorpus(path, 3);
  REQUIRE(docs.size() == 6);
  CHECK(docs[0] == std::vector<int>{'a', 'b'});
  CHECK(docs[2] == std::vector<int>{'a', 'b'});
  CHECK(docs[3] == std::vector<int>{'x', 'y', 'z'});
  CHECK_THROWS(ReadJsonlCorpus(path, 0));
  CHECK_THROWS(ReadJsonlCorpus("does_not_exist.jsonl"));
  std::remove(path.c_str());
}

TEST_CASE("sampling probability helper") {
  CHECK(SamplingProbFor(50.0, 1000.0) == doctest::Approx(0.05));
  CHECK_THROWS_AS(SamplingProbFor(2000.0, 1000.0), std::invalid_argument);
  CHECK_THROWS_AS(SamplingProbFor(0.0, 1000.0), std::invalid_argument);
}

TEST_CASE("default max batch is mean plus four sigma, capped at n") {
  double q = 0.05;
  int64_t n = 1000;
  double mean = q * n;
  int want = static_cast<int>(std::ceil(mean + 4.0 * std::sqrt(mean * (1 - q))));
  CHECK(DefaultMaxBatch(q, n) == want);
  CHECK(DefaultMaxBatch(1.0, 100) == 100);
}

TEST_CASE("draw batch is deterministic in seed and step") {
  SamplerConfig cfg;
  cfg.dataset_size = 500;
  cfg.sampling_prob = 0.1;
  cfg.max_batch_size = 100;
  cfg.seed = 42;
  auto [a, sa] = DrawBatch(cfg, 3);
  auto [b, sb] = DrawBatch(cfg, 3);
  CHECK(a == b);
  CHECK(sa.realized == sb.realized);
  auto [c, sc] = DrawBatch(cfg, 4);
  CHECK(a != c);
}

TEST_CASE("per-example inclusion frequency approximates q") {
  SamplerConfig cfg;
  cfg.dataset_size = 200;
  cfg.sampling_prob = 0.3;
  cfg.max_batch_size = 200;
  cfg.seed = 7;
  const int draws = 4000;
  std::vector<int> counts(cfg.dataset_size, 0);
  for (int s = 0; s < draws; ++s) {
    auto [sel, stats] = DrawBatch(cfg, s);
    CHECK(stats.truncated == 0);
    for (int idx : sel) ++counts[idx];
  }
  double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double mean_rate = total / (double(draws) * cfg.dataset_size);
  CHECK(mean_rate == doctest::Approx(0.3).epsilon(0.02));
}

TEST_CASE("truncation keeps a uniform subset and correct stats") {
  SamplerConfig cfg;
  cfg.dataset_size = 50;
  cfg.sampling_prob = 0.9;
  cfg.max_batch_size = 20;
  cfg.seed = 99;
  const int draws = 6000;
  std::vector<int> survive(cfg.dataset_size, 0);
  for (int s = 0; s < draws; ++s) {
    auto [sel, stats] = DrawBatch(cfg, s);
    CHECK(static_cast<int>(sel.size()) <= cfg.max_batch_size);
    CHECK(stats.realized == static_cast<int>(sel.size()));
    CHECK(stats.realized + stats.truncated >= stats.realized);
    for (size_t i = 1; i < sel.size(); ++i) CHECK(sel[i - 1] < sel[i]);
    for (int idx : sel) ++survive[idx];
  }
  // every index survives equally often: q * draws * E[B_max / raw] each
  double mean = std::accumulate(survive.begin(), survive.end(), 0.0) /
                cfg.dataset_size;
  for (int c : survive) CHECK(std::abs(c - mean) < 5.0 * std::sqrt(mean));
}

TEST_CASE("token batch construction masks pads and appends padding rows") {
  auto seqs = PackCorpus({Doc(5, 65), Doc(3, 66)}, 6);
  // seq 0: five 65s then separator EOS; seq 1: three 66s and 3 pads
  REQUIRE(seqs.size() == 2);
  TokenBatch batch = MakeTokenBatch(seqs, {0, 1}, 4);
  REQUIRE(batch.BatchSize() == 4);
  CHECK(batch.is_padding_example == std::vector<uint8_t>{0, 0, 1, 1});

  // row 0 has no pads: every position except the last is unmasked
  for (int t = 0; t < 5; ++t) {
    CHECK(batch.loss_mask[0][t] == 1);
    CHECK(batch.targets[0][t] == seqs[0].tokens[t + 1]);
  }
  CHECK(batch.loss_mask[0][5] == 0);

  // row 1: positions whose target is PAD are masked off
  CHECK(batch.loss_mask[1][0] == 1);
  CHECK(batch.loss_mask[1][1] == 1);
  CHECK(batch.loss_mask[1][2] == 0);
  CHECK(batch.loss_mask[1][5] == 0);

  // padding rows are fully masked PAD rows
  for (int t = 0; t < 6; ++t) {
    CHECK(batch.tokens[2][t] == kPadToken);
    CHECK(batch.loss_mask[2][t] == 0);
  }

  CHECK_THROWS_AS(MakeTokenBatch(seqs, {0, 1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(MakeTokenBatch(seqs, {5}, 2), std::invalid_argument);
}

TEST_CASE("packed cache round-trips") {
  auto seqs = PackCorpus({Doc(10, 3), Doc(7, 4), Doc(20, 5)}, 8);
  std::string path = "pack_cache_tmp.bin";
  WritePackedCache(path, seqs, 8);
  int seq_len = 0;
  auto loaded = ReadPackedCache(path, &seq_len);
  CHECK(seq_len == 8);
  REQUIRE(loaded.size() == seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    CHECK(loaded[i].tokens == seqs[i].tokens);
    CHECK(loaded[i].pad_count == seqs[i].pad_count);
    REQUIRE(loaded[i].doc_spans.size() == seqs[i].doc_spans.size());
    for (size_t j = 0; j < seqs[i].doc_spans.size(); ++j) {
      CHECK(loaded[i].doc_spans[j].doc_id == seqs[i].doc_spans[j].doc_id);
      CHECK(loaded[i].doc_spans[j].start == seqs[i].doc_spans[j].start);
      CHECK(loaded[i].doc_spans[j].end == seqs[i].doc_spans[j].end);
    }
  }
  std::remove(path.c_str());
  CHECK_THROWS(ReadPackedCache("missing_cache.bin"));
}

}  // namespace
}  // namespace dplm
