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

#ifndef DPLM_TRAINER_H_
#define DPLM_TRAINER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "dplm/accountant.h"
#include "dplm/data_pipeline.h"
#include "dplm/dp_optimizer.h"
#include "dplm/model.h"

namespace dplm {

enum class ScheduleKind { kConstant, kCosine };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base_lr = 0.1;

  double At(int64_t step, int64_t total_steps) const;
};

struct ExperimentConfig {
  ModelConfig model;
  DpSgdConfig dp;        // learning_rate is driven by the schedule
  SamplerConfig sampler; // sampling_prob = dp.expected_batch_size / N
  LrSchedule schedule;
  int64_t total_steps = 0;
  uint64_t seed = 0;
  std::string output_dir;

  // Throws on inconsistencies (before any compute).
  void Validate() const;
};

// Strict parse: unknown keys anywhere in the document are rejected so privacy
// parameters can never be silently ignored.
ExperimentConfig ParseExperimentConfig(const std::string& json_text);
ExperimentConfig LoadExperimentConfig(const std::string& path);

struct RunResult {
  std::string run_dir;
  std::string metrics_path;
  std::string checkpoint_path;
  std::string privacy_report_path;
  ModelParams final_params;
  double final_loss = 0.0;
  AccountReport privacy;
};

// Executes total_steps of draw_batch -> per-example grads -> micro steps ->
// update; writes metrics.csv, the final checkpoint, a privacy report
// recomputed from the parameters actually used, and run metadata (config
// hash + git revision). Bitwise reproducible for identical (config, seed).
// With dry_run, validates and emits the report without training.
RunResult RunTrain(const ExperimentConfig& cfg,
                   const std::vector<PackedSequence>& corpus,
                   bool dry_run = false);

struct PipelineReport {
  int draws = 0;
  double mean_padded_fraction = 0.0;
  double mean_truncated_fraction = 0.0;
  double truncation_frequency = 0.0;  // fraction of draws that truncated
  double mean_draw_latency_us = 0.0;
};

// Sampling overhead statistics over n_draws dry draws.
PipelineReport RunPipelineReport(const SamplerConfig& cfg, int n_draws);

// FNV-1a over the canonical config serialization.
uint64_t ConfigHash(const ExperimentConfig& cfg);

}  // namespace dplm

#endif  // DPLM_TRAINER_H_
