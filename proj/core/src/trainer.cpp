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

#include "dplm/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "dplm/checkpoint.h"
#include "dplm/rng.h"
#include "json.hpp"

namespace dplm {

namespace {

using nlohmann::json;

constexpr uint64_t kSamplerStream = 0x5A3717;
constexpr uint64_t kNoiseStream = 0x7015E;
constexpr uint64_t kInitStream = 0x171317;

void RejectUnknownKeys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok)
      throw std::invalid_argument("unknown config key \"" + it.key() + "\" in " + where);
  }
}

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string GitRevision() {
  FILE* pipe = popen("git rev-parse HEAD 2>/dev/null", "r");
  if (!pipe) return "unknown";
  char buf[128] = {0};
  std::string out;
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  pclose(pipe);
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

json ConfigToJson(const ExperimentConfig& cfg) {
  return json{
      {"model",
       {{"d_model", cfg.model.d_model},
        {"n_layers", cfg.model.n_layers},
        {"n_heads", cfg.model.n_heads},
        {"n_kv_heads", cfg.model.n_kv_heads},
        {"head_size", cfg.model.head_size},
        {"ffn_hidden", cfg.model.ffn_hidden},
        {"vocab_size", cfg.model.vocab_size},
        {"seq_len", cfg.model.seq_len},
        {"rmsnorm_eps", cfg.model.rmsnorm_eps}}},
      {"dp",
       {{"clip_norm", cfg.dp.clip_norm},
        {"noise_multiplier", cfg.dp.noise_multiplier},
        {"expected_batch_size", cfg.dp.expected_batch_size},
        {"accumulation_steps", cfg.dp.accumulation_steps}}},
      {"sampler",
       {{"dataset_size", cfg.sampler.dataset_size},
        {"max_batch_size", cfg.sampler.max_batch_size}}},
      {"schedule",
       {{"kind", cfg.schedule.kind == ScheduleKind::kConstant ? "constant" : "cosine"},
        {"base_lr", cfg.schedule.base_lr}}},
      {"total_steps", cfg.total_steps},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir}};
}

}  // namespace

double LrSchedule::At(int64_t step, int64_t total_steps) const {
  if (kind == ScheduleKind::kConstant || total_steps <= 1) return base_lr;
  double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

void ExperimentConfig::Validate() const {
  model.Validate();
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (dp.clip_norm <= 0 || dp.noise_multiplier < 0 || dp.accumulation_steps < 1)
    throw std::invalid_argument("bad dp config");
  if (schedule.base_lr <= 0) throw std::invalid_argument("base_lr must be positive");
  sampler.Validate();
  double q = dp.expected_batch_size / sampler.dataset_size;
  if (std::fabs(q - sampler.sampling_prob) > 1e-9)
    throw std::invalid_argument(
        "dp.expected_batch_size inconsistent with sampler (q*N)");
  if (dp.expected_batch_size > sampler.dataset_size)
    throw std::invalid_argument("expected batch exceeds dataset size");
}

ExperimentConfig ParseExperimentConfig(const std::string& json_text) {
  json j = json::parse(json_text);
  RejectUnknownKeys(j, {"model", "dp", "sampler", "schedule", "total_steps",
                        "seed", "output_dir"}, "top level");
  ExperimentConfig cfg;

  if (j.contains("model")) {
    const json& m = j["model"];
    RejectUnknownKeys(m, {"d_model", "n_layers", "n_heads", "n_kv_heads",
                          "head_size", "ffn_hidden", "vocab_size", "seq_len",
                          "rmsnorm_eps"}, "model");
    if (m.contains("d_model")) cfg.model.d_model = m["d_model"].get<int>();
    if (m.contains("n_layers")) cfg.model.n_layers = m["n_layers"].get<int>();
    if (m.contains("n_heads")) cfg.model.n_heads = m["n_heads"].get<int>();
    if (m.contains("n_kv_heads")) cfg.model.n_kv_heads = m["n_kv_heads"].get<int>();
    if (m.contains("head_size")) cfg.model.head_size = m["head_size"].get<int>();
    if (m.contains("ffn_hidden")) cfg.model.ffn_hidden = m["ffn_hidden"].get<int>();
    if (m.contains("vocab_size")) cfg.model.vocab_size = m["vocab_size"].get<int>();
    if (m.contains("seq_len")) cfg.model.seq_len = m["seq_len"].get<int>();
    if (m.contains("rmsnorm_eps")) cfg.model.rmsnorm_eps = m["rmsnorm_eps"].get<double>();
  }

  if (!j.contains("dp")) throw std::invalid_argument("missing \"dp\" section");
  {
    const json& d = j["dp"];
    RejectUnknownKeys(d, {"clip_norm", "noise_multiplier", "expected_batch_size",
                          "accumulation_steps"}, "dp");
    cfg.dp.clip_norm = d.at("clip_norm").get<double>();
    cfg.dp.noise_multiplier = d.at("noise_multiplier").get<double>();
    cfg.dp.expected_batch_size = d.at("expected_batch_size").get<double>();
    if (d.contains("accumulation_steps"))
      cfg.dp.accumulation_steps = d["accumulation_steps"].get<int>();
  }

  if (!j.contains("sampler")) throw std::invalid_argument("missing \"sampler\" section");
  {
    const json& s = j["sampler"];
    RejectUnknownKeys(s, {"dataset_size", "max_batch_size"}, "sampler");
    cfg.sampler.dataset_size = s.at("dataset_size").get<int>();
    cfg.sampler.sampling_prob =
        cfg.dp.expected_batch_size / cfg.sampler.dataset_size;
    if (s.contains("max_batch_size"))
      cfg.sampler.max_batch_size = s["max_batch_size"].get<int>();
    else
      cfg.sampler.max_batch_size =
          DefaultMaxBatch(cfg.sampler.sampling_prob, cfg.sampler.dataset_size);
  }

  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    RejectUnknownKeys(s, {"kind", "base_lr"}, "schedule");
    if (s.contains("kind")) {
      std::string kind = s["kind"].get<std::string>();
      if (kind == "constant") cfg.schedule.kind = ScheduleKind::kConstant;
      else if (kind == "cosine") cfg.schedule.kind = ScheduleKind::kCosine;
      else throw std::invalid_argument("unknown schedule kind: " + kind);
    }
    if (s.contains("base_lr")) cfg.schedule.base_lr = s["base_lr"].get<double>();
  }

  cfg.total_steps = j.at("total_steps").get<int64_t>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();

  cfg.dp.learning_rate = cfg.schedule.base_lr;
  cfg.sampler.seed = DeriveSeed(cfg.seed, kSamplerStream);
  cfg.Validate();
  return cfg;
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return ParseExperimentConfig(text);
}

uint64_t ConfigHash(const ExperimentConfig& cfg) {
  std::string s = ConfigToJson(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunResult RunTrain(const ExperimentConfig& cfg,
                   const std::vector<PackedSequence>& corpus, bool dry_run) {
  cfg.Validate();
  if (!dry_run && static_cast<int>(corpus.size()) != cfg.sampler.dataset_size)
    throw std::invalid_argument("corpus size does not match sampler.dataset_size");
  if (cfg.output_dir.empty()) throw std::invalid_argument("output_dir not set");

  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  RunResult result;
  result.run_dir = cfg.output_dir;
  result.metrics_path = cfg.output_dir + "/metrics.csv";
  result.checkpoint_path = cfg.output_dir + "/checkpoint.bin";
  result.privacy_report_path = cfg.output_dir + "/privacy_report.json";

  ModelParams params = ModelParams::Random(cfg.model, DeriveSeed(cfg.seed, kInitStream));
  Vector flat = params.Flatten();
  size_t dim = flat.size();

  // Parameters actually used, recorded per step; the privacy report is
  // computed from this log rather than the input config.
  double used_sigma = cfg.dp.noise_multiplier;
  double used_q = cfg.sampler.sampling_prob;
  int64_t executed_steps = 0;

  std::ofstream metrics;
  if (!dry_run) {
    metrics.open(result.metrics_path);
    metrics << "step,loss,grad_norm_pre_clip_mean,clipped_fraction,"
               "realized_batch,padded_fraction\n";
  }

  double last_loss = 0.0;
  if (!dry_run) {
    for (int64_t step = 0; step < cfg.total_steps; ++step) {
      DpSgdConfig step_dp = cfg.dp;
      step_dp.learning_rate = cfg.schedule.At(step, cfg.total_steps);

      auto [selected, stats] = DrawBatch(cfg.sampler, step);
      TokenBatch batch =
          MakeTokenBatch(corpus, selected, cfg.sampler.max_batch_size);
      PerExampleGrads grads = LossAndPerExampleGrads(params, batch);

      double norm_sum = 0.0;
      int clipped = 0, real = 0;
      for (size_t i = 0; i < grads.flat_grads.size(); ++i) {
        if (batch.is_padding_example[i]) continue;
        double sq = 0.0;
        for (double v : grads.flat_grads[i]) sq += v * v;
        double norm = std::sqrt(sq);
        norm_sum += norm;
        if (norm > step_dp.clip_norm) ++clipped;
        ++real;
      }

      // Partition the physical batch into K contiguous micro-batches.
      int k_steps = step_dp.accumulation_steps;
      size_t rows = grads.flat_grads.size();
      size_t per = (rows + k_steps - 1) / k_steps;
      GradientAccumulator acc(step_dp, dim);
      for (int k = 0; k < k_steps; ++k) {
        std::vector<Vector> micro;
        for (size_t i = k * per; i < std::min(rows, (k + 1) * per); ++i)
          if (!batch.is_padding_example[i])
            micro.push_back(std::move(grads.flat_grads[i]));
        GaussianRng rng(DeriveSeed(DeriveSeed(cfg.seed, kNoiseStream),
                                   static_cast<uint64_t>(step),
                                   static_cast<uint64_t>(k)));
        acc.AddMicroStep(micro, rng);
      }
      flat = ApplyTotalUpdate(flat, acc.Total(), step_dp);
      params = ModelParams::Unflatten(cfg.model, flat);

      last_loss = grads.mean_loss;
      metrics << step << ',' << FormatDouble(grads.mean_loss) << ','
              << FormatDouble(real > 0 ? norm_sum / real : 0.0) << ','
              << FormatDouble(real > 0 ? static_cast<double>(clipped) / real : 0.0)
              << ',' << stats.realized << ','
              << FormatDouble(static_cast<double>(stats.padded) /
                              cfg.sampler.max_batch_size)
              << '\n';
      ++executed_steps;
    }
    metrics.close();
  }

  SaveCheckpoint(result.checkpoint_path, params);

  // Privacy report for the exact mechanism parameters used.
  int64_t report_steps = dry_run ? cfg.total_steps : executed_steps;
  json report;
  if (report_steps == 0) {
    result.privacy = AccountReport{};
    result.privacy.epsilon = 0.0;
    result.privacy.delta = 0.0;
    report = {{"epsilon", 0.0}, {"delta", 0.0}, {"steps", 0},
              {"noise_multiplier", used_sigma}, {"sampling_prob", used_q},
              {"direction", "none"}, {"slack", 0.0}};
  } else if (used_sigma == 0.0) {
    result.privacy.epsilon = std::numeric_limits<double>::infinity();
    report = {{"epsilon", "inf"}, {"delta", nullptr}, {"steps", report_steps},
              {"noise_multiplier", 0.0}, {"sampling_prob", used_q},
              {"direction", "n/a"}, {"slack", 0.0}};
  } else {
    const double report_delta = 1e-10;
    MechanismSpec spec{used_sigma, used_q, report_steps};
    result.privacy = Account(spec, report_delta);
    report = {{"epsilon", result.privacy.epsilon},
              {"delta", report_delta},
              {"steps", report_steps},
              {"noise_multiplier", used_sigma},
              {"sampling_prob", used_q},
              {"direction", result.privacy.direction},
              {"grid_spacing", result.privacy.grid_spacing},
              {"slack", result.privacy.slack}};
  }
  std::ofstream(result.privacy_report_path) << report.dump(2) << '\n';

  json meta = {{"config", ConfigToJson(cfg)},
               {"config_hash", ConfigHash(cfg)},
               {"git_revision", GitRevision()},
               {"executed_steps", report_steps}};
  std::ofstream(cfg.output_dir + "/run_meta.json") << meta.dump(2) << '\n';

  result.final_params = std::move(params);
  result.final_loss = last_loss;
  return result;
}

PipelineReport RunPipelineReport(const SamplerConfig& cfg, int n_draws) {
  if (n_draws < 1) throw std::invalid_argument("n_draws must be >= 1");
  PipelineReport report;
  report.draws = n_draws;
  double padded = 0, truncated = 0, trunc_events = 0, latency = 0;
  for (int i = 0; i < n_draws; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    auto [selected, stats] = DrawBatch(cfg, i);
    auto t1 = std::chrono::steady_clock::now();
    latency += std::chrono::duration<double, std::micro>(t1 - t0).count();
    padded += static_cast<double>(stats.padded) / cfg.max_batch_size;
    truncated += static_cast<double>(stats.truncated) /
                 (stats.truncated + stats.realized);
    if (stats.truncated > 0) trunc_events += 1;
  }
  report.mean_padded_fraction = padded / n_draws;
  report.mean_truncated_fraction = truncated / n_draws;
  report.truncation_frequency = trunc_events / n_draws;
  report.mean_draw_latency_us = latency / n_draws;
  return report;
}

}  // namespace dplm
