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
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dplm/checkpoint.h"
#include "dplm/trainer.h"

namespace dplm {
namespace {

namespace fs = std::filesystem;

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string TinyConfigJson(const std::string& output_dir, int total_steps) {
  return R"({
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "n_kv_heads": 1,
              "head_size": 4, "ffn_hidden": 16, "seq_len": 16},
    "dp": {"clip_norm": 1.0, "noise_multiplier": 0.5,
           "expected_batch_size": 4, "accumulation_steps": 2},
    "sampler": {"dataset_size": 8, "max_batch_size": 8},
    "schedule": {"kind": "cosine", "base_lr": 0.2},
    "total_steps": )" + std::to_string(total_steps) + R"(,
    "seed": 11,
    "output_dir": ")" + output_dir + R"("
  })";
}

std::vector<PackedSequence> TinyCorpus(int n, int seq_len) {
  std::vector<std::vector<int>> docs;
  for (int d = 0; d < n; ++d) {
    std::vector<int> doc(seq_len - 1);
    for (int i = 0; i < seq_len - 1; ++i) doc[i] = (13 * d + 5 * i) % 250;
    docs.push_back(doc);
  }
  // each doc plus its separator EOS fills one sequence
  auto corpus = PackCorpus(docs, seq_len);
  corpus.resize(n);
  return corpus;
}

TEST_CASE("schedules evaluate as specified") {
  LrSchedule constant{ScheduleKind::kConstant, 0.4};
  CHECK(constant.At(0, 100) == 0.4);
  CHECK(constant.At(99, 100) == 0.4);

  LrSchedule cosine{ScheduleKind::kCosine, 1.0};
  CHECK(cosine.At(0, 100) == doctest::Approx(1.0));
  CHECK(cosine.At(50, 100) == doctest::Approx(0.5));
  double prev = 2.0;
  for (int s = 0; s < 100; ++s) {
    double lr = cosine.At(s, 100);
    CHECK(lr < prev);
    CHECK(lr > 0.0);
    prev = lr;
  }
}

TEST_CASE("config parsing is strict about unknown keys") {
  ExperimentConfig cfg = ParseExperimentConfig(TinyConfigJson("out", 3));
  CHECK(cfg.model.d_model == 8);
  CHECK(cfg.dp.expected_batch_size == 4);
  CHECK(cfg.sampler.sampling_prob == doctest::Approx(0.5));
  CHECK(cfg.schedule.kind == ScheduleKind::kCosine);
  CHECK(cfg.total_steps == 3);

  std::string bad_top = TinyConfigJson("out", 3);
  bad_top.insert(bad_top.rfind('}'), R"(, "epsilon_target": 2.0)");
  CHECK_THROWS_AS(ParseExperimentConfig(bad_top), std::invalid_argument);

  std::string bad_dp = TinyConfigJson("out", 3);
  bad_dp.replace(bad_dp.find("\"clip_norm\""), 11, "\"clip\"");
  CHECK_THROWS_AS(ParseExperimentConfig(bad_dp), std::invalid_argument);

  CHECK_THROWS(ParseExperimentConfig(R"({"total_steps": 1})"));
}

TEST_CASE("config validation catches inconsistencies before compute") {
  ExperimentConfig cfg = ParseExperimentConfig(TinyConfigJson("out", 3));
  cfg.dp.expected_batch_size = 100.0;  // now inconsistent with q * N
  CHECK_THROWS_AS(cfg.Validate(), std::invalid_argument);
  cfg = ParseExperimentConfig(TinyConfigJson("out", 3));
  cfg.total_steps = -1;
  CHECK_THROWS_AS(cfg.Validate(), std::invalid_argument);

  // expected batch above the dataset size is rejected at parse time
  std::string oversized = TinyConfigJson("out", 3);
  oversized.replace(oversized.find("\"expected_batch_size\": 4"), 24,
                    "\"expected_batch_size\": 40");
  CHECK_THROWS_AS(ParseExperimentConfig(oversized), std::invalid_argument);
}

TEST_CASE("zero-step run emits an initial checkpoint and a zero-epsilon report") {
  std::string dir = "trainer_test_zero";
  fs::remove_all(dir);
  ExperimentConfig cfg = ParseExperimentConfig(TinyConfigJson(dir, 0));
  RunResult result = RunTrain(cfg, TinyCorpus(8, 16));
  CHECK(fs::exists(result.checkpoint_path));
  CHECK(fs::exists(result.privacy_report_path));
  CHECK(fs::exists(dir + "/run_meta.json"));
  CHECK(result.privacy.epsilon == 0.0);
  std::string report = ReadFile(result.privacy_report_path);
  CHECK(report.find("\"epsilon\": 0.0") != std::string::npos);
  ModelParams loaded = LoadCheckpoint(result.checkpoint_path);
  CHECK(loaded.ParamCount() ==
        ModelParams::Zeros(cfg.model).ParamCount());
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed reproduce bitwise outputs") {
  std::string dir_a = "trainer_test_repro_a";
  std::string dir_b = "trainer_test_repro_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  auto corpus = TinyCorpus(8, 16);
  RunResult a = RunTrain(ParseExperimentConfig(TinyConfigJson(dir_a, 3)), corpus);
  RunResult b = RunTrain(ParseExperimentConfig(TinyConfigJson(dir_b, 3)), corpus);
  CHECK(ReadFile(a.metrics_path) == ReadFile(b.metrics_path));
  CHECK(ReadFile(a.checkpoint_path) == ReadFile(b.checkpoint_path));
  CHECK(ReadFile(a.privacy_report_path) == ReadFile(b.privacy_report_path));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("different seeds diverge") {
  std::string dir_a = "trainer_test_seed_a";
  std::string dir_b = "trainer_test_seed_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  auto corpus = TinyCorpus(8, 16);
  std::string json_b = TinyConfigJson(dir_b, 3);
  json_b.replace(json_b.find("\"seed\": 11"), 10, "\"seed\": 12");
  RunResult a = RunTrain(ParseExperimentConfig(TinyConfigJson(dir_a, 3)), corpus);
  RunResult b = RunTrain(ParseExperimentConfig(json_b), corpus);
  CHECK(ReadFile(a.checkpoint_path) != ReadFile(b.checkpoint_path));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("dry run writes the privacy report without training artifacts") {
  std::string dir = "trainer_test_dry";
  fs::remove_all(dir);
  ExperimentConfig cfg = ParseExperimentConfig(TinyConfigJson(dir, 50));
  RunResult result = RunTrain(cfg, {}, /*dry_run=*/true);
  CHECK(fs::exists(result.privacy_report_path));
  CHECK(!fs::exists(result.metrics_path));
  CHECK(result.privacy.epsilon > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("noiseless full-batch training reduces the loss") {
  std::string dir = "trainer_test_sgd";
  fs::remove_all(dir);
  std::string json = R"({
    "model": {"d_model": 8, "n_layers": 1, "n_heads": 2, "n_kv_heads": 1,
              "head_size": 4, "ffn_hidden": 16, "seq_len": 16},
    "dp": {"clip_norm": 100.0, "noise_multiplier": 0.0,
           "expected_batch_size": 4},
    "sampler": {"dataset_size": 4, "max_batch_size": 4},
    "schedule": {"kind": "constant", "base_lr": 0.5},
    "total_steps": 40,
    "seed": 5,
    "output_dir": ")" + dir + R"("
  })";
  ExperimentConfig cfg = ParseExperimentConfig(json);
  RunResult result = RunTrain(cfg, TinyCorpus(4, 16));

  // compare the first and last reported losses
  std::ifstream metrics(result.metrics_path);
  std::string line, first, last;
  std::getline(metrics, line);  // header
  while (std::getline(metrics, line)) {
    if (first.empty()) first = line;
    last = line;
  }
  auto loss_of = [](const std::string& row) {
    size_t a = row.find(',');
    size_t b = row.find(',', a + 1);
    return std::stod(row.substr(a + 1, b - a - 1));
  };
  CHECK(loss_of(last) < loss_of(first) * 0.8);
  // sigma = 0 privacy is unbounded and reported as such
  std::string report = ReadFile(result.privacy_report_path);
  CHECK(report.find("inf") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("config hash distinguishes configs and ignores nothing silently") {
  ExperimentConfig a = ParseExperimentConfig(TinyConfigJson("out", 3));
  ExperimentConfig b = a;
  CHECK(ConfigHash(a) == ConfigHash(b));
  b.schedule.base_lr = 0.25;
  CHECK(ConfigHash(a) != ConfigHash(b));
  b = a;
  b.seed = 999;
  CHECK(ConfigHash(a) != ConfigHash(b));
}

TEST_CASE("pipeline report tracks padding and truncation") {
  SamplerConfig cfg;
  cfg.dataset_size = 100;
  cfg.sampling_prob = 1.0;
  cfg.max_batch_size = 100;
  cfg.seed = 1;
  PipelineReport r = RunPipelineReport(cfg, 50);
  CHECK(r.mean_padded_fraction == 0.0);
  CHECK(r.mean_truncated_fraction == 0.0);
  CHECK(r.truncation_frequency == 0.0);

  cfg.sampling_prob = 0.1;
  cfg.max_batch_size = 40;  // q N = 10, far below the cap
  PipelineReport padded = RunPipelineReport(cfg, 400);
  CHECK(padded.mean_padded_fraction ==
        doctest::Approx((40.0 - 10.0) / 40.0).epsilon(0.05));
  CHECK_THROWS_AS(RunPipelineReport(cfg, 0), std::invalid_argument);
}

}  // namespace
}  // namespace dplm
