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

// dplm: differentially private language model training experiments.
//
// Subcommands:
//   train               run a DP-SGD training experiment from a JSON config
//   account             compute (epsilon, delta) for a mechanism spec
//   calibrate           find the noise multiplier for a privacy budget
//   sample-report       sampling-overhead statistics over dry batch draws
//   fit-scaling         fit lr-sweep and loss-curve scaling laws from CSV
//   audit-memorization  probe a checkpoint for verbatim training data
//   pack                pack a JSONL corpus into fixed-length sequences

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dplm/accountant.h"
#include "dplm/checkpoint.h"
#include "dplm/data_pipeline.h"
#include "dplm/memorization.h"
#include "dplm/rng.h"
#include "dplm/scaling_laws.h"
#include "dplm/trainer.h"
#include "json.hpp"

namespace {

using dplm::Account;
using dplm::AccountReport;
using dplm::MechanismSpec;
using nlohmann::json;

struct GlobalOpts {
  std::string config;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string output_dir;
};

std::vector<dplm::LrSweepPoint> ReadLrSweepCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sweep csv: " + path);
  std::vector<dplm::LrSweepPoint> points;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ','))
      throw std::runtime_error("bad sweep row: " + line);
    if (first) {
      first = false;
      // tolerate a header row
      try {
        std::stod(a);
      } catch (const std::exception&) {
        continue;
      }
    }
    points.push_back({std::stod(a), std::stod(b)});
  }
  return points;
}

std::vector<dplm::IterLossPoint> ReadIterLossCsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open loss csv: " + path);
  std::vector<dplm::IterLossPoint> points;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ','))
      throw std::runtime_error("bad loss row: " + line);
    if (first) {
      first = false;
      try {
        std::stoll(a);
      } catch (const std::exception&) {
        continue;
      }
    }
    points.push_back({std::stoll(a), std::stod(b)});
  }
  return points;
}

void EmitJson(const json& j, const std::string& output_dir,
              const std::string& filename) {
  std::cout << j.dump(2) << std::endl;
  if (!output_dir.empty()) {
    std::filesystem::create_directories(output_dir);
    std::ofstream(output_dir + "/" + filename) << j.dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private LM training experiments"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config, "JSON experiment config")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--output-dir", g.output_dir, "override the output directory");

  // train
  auto* train = app.add_subcommand("train", "run a DP-SGD training experiment");
  std::string corpus_path, cache_path;
  bool dry_run = false;
  int multiplicity = 1;
  train->add_option("--corpus", corpus_path, "JSONL corpus (key \"text\")");
  train->add_option("--packed-cache", cache_path, "pre-packed sequence cache");
  train->add_option("--multiplicity", multiplicity, "corpus repetition factor");
  train->add_flag("--dry-run", dry_run,
                  "validate and emit the privacy report without training");

  // account
  auto* account = app.add_subcommand("account", "compute epsilon at a delta");
  double ac_sigma = 1.0, ac_q = 1.0, ac_delta = 1e-10, ac_grid = 1e-4;
  int64_t ac_steps = 1;
  account->add_option("--noise-multiplier", ac_sigma, "sigma")->required();
  account->add_option("--sampling-prob", ac_q, "q")->required();
  account->add_option("--steps", ac_steps, "T")->required();
  account->add_option("--delta", ac_delta, "target delta")->required();
  account->add_option("--grid-spacing", ac_grid, "PLD grid spacing");

  // calibrate
  auto* calibrate = app.add_subcommand("calibrate", "solve for sigma");
  double cb_eps = 1.0, cb_delta = 1e-10, cb_q = 1.0, cb_grid = 1e-4;
  int64_t cb_steps = 1;
  calibrate->add_option("--epsilon", cb_eps, "target epsilon")->required();
  calibrate->add_option("--delta", cb_delta, "target delta")->required();
  calibrate->add_option("--sampling-prob", cb_q, "q")->required();
  calibrate->add_option("--steps", cb_steps, "T")->required();
  calibrate->add_option("--grid-spacing", cb_grid, "PLD grid spacing");

  // sample-report
  auto* sample = app.add_subcommand("sample-report", "sampling statistics");
  int sr_n = 0;
  double sr_q = 0.0, sr_expected = 0.0;
  int sr_bmax = 0, sr_draws = 1000;
  sample->add_option("--dataset-size", sr_n, "N")->required();
  sample->add_option("--sampling-prob", sr_q, "q (or use --expected-batch)");
  sample->add_option("--expected-batch", sr_expected, "expected batch size");
  sample->add_option("--max-batch", sr_bmax, "B_max (default: qN + 4 sigma)");
  sample->add_option("--draws", sr_draws, "number of dry draws");

  // fit-scaling
  auto* fit = app.add_subcommand("fit-scaling", "fit scaling-law models");
  std::string lr_csv, loss_csv;
  double predict_t = 0.0;
  fit->add_option("--lr-sweep", lr_csv, "CSV of learning_rate,final_loss");
  fit->add_option("--loss-curve", loss_csv, "CSV of iterations,loss");
  fit->add_option("--predict-iterations", predict_t,
                  "evaluate the fitted power law at T");

  // audit-memorization
  auto* audit = app.add_subcommand("audit-memorization",
                                   "probe a checkpoint for training data");
  std::string ckpt_path, audit_cache;
  int n_probes = 100, prefix_len = 50, suffix_len = 50;
  double threshold = 0.10;
  bool details = false;
  audit->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  audit->add_option("--packed-cache", audit_cache, "packed corpus cache")->required();
  audit->add_option("--probes", n_probes, "number of probes");
  audit->add_option("--prefix-len", prefix_len, "prompt length in tokens");
  audit->add_option("--suffix-len", suffix_len, "continuation length in tokens");
  audit->add_option("--threshold", threshold, "approximate-match edit fraction");
  audit->add_flag("--details", details, "include per-probe results");

  // pack
  auto* pack = app.add_subcommand("pack", "pack a JSONL corpus");
  std::string pack_in, pack_out;
  int pack_seq_len = 64, pack_mult = 1;
  pack->add_option("--corpus", pack_in, "JSONL corpus")->required();
  pack->add_option("--out", pack_out, "output cache path")->required();
  pack->add_option("--seq-len", pack_seq_len, "sequence length");
  pack->add_option("--multiplicity", pack_mult, "corpus repetition factor");

  // let the global --config/--seed/--output-dir flags appear after the
  // subcommand name as well as before it
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*train) {
      if (g.config.empty()) throw std::invalid_argument("train requires --config");
      dplm::ExperimentConfig cfg = dplm::LoadExperimentConfig(g.config);
      if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.sampler.seed = dplm::DeriveSeed(g.seed, 0x5A3717);
      }
      if (!g.output_dir.empty()) cfg.output_dir = g.output_dir;

      std::vector<dplm::PackedSequence> corpus;
      if (!cache_path.empty()) {
        int sl = 0;
        corpus = dplm::ReadPackedCache(cache_path, &sl);
        if (sl != cfg.model.seq_len)
          throw std::invalid_argument("cache seq_len does not match config");
      } else if (!corpus_path.empty()) {
        corpus = dplm::PackCorpus(
            dplm::ReadJsonlCorpus(corpus_path, multiplicity), cfg.model.seq_len);
      } else if (!dry_run) {
        throw std::invalid_argument("train requires --corpus or --packed-cache");
      }
      dplm::RunResult result = dplm::RunTrain(cfg, corpus, dry_run);
      std::cout << "run_dir: " << result.run_dir << '\n'
                << "privacy_report: " << result.privacy_report_path << '\n';
      if (!dry_run) std::cout << "final_loss: " << result.final_loss << '\n';
    } else if (*account) {
      AccountReport r = Account({ac_sigma, ac_q, ac_steps}, ac_delta, ac_grid);
      EmitJson(json{{"epsilon", r.epsilon},
                    {"delta", r.delta},
                    {"direction", r.direction},
                    {"grid_spacing", r.grid_spacing},
                    {"slack", r.slack}},
               g.output_dir, "account.json");
    } else if (*calibrate) {
      double sigma =
          dplm::CalibrateNoise({cb_eps, cb_delta}, cb_q, cb_steps, cb_grid);
      AccountReport check = Account({sigma, cb_q, cb_steps}, cb_delta, cb_grid);
      EmitJson(json{{"noise_multiplier", sigma},
                    {"epsilon_at_sigma", check.epsilon},
                    {"target_epsilon", cb_eps},
                    {"delta", cb_delta}},
               g.output_dir, "calibrate.json");
    } else if (*sample) {
      dplm::SamplerConfig cfg;
      cfg.dataset_size = sr_n;
      if (sr_q > 0 && sr_expected > 0)
        throw std::invalid_argument("give --sampling-prob or --expected-batch, not both");
      cfg.sampling_prob =
          sr_q > 0 ? sr_q : dplm::SamplingProbFor(sr_expected, sr_n);
      cfg.max_batch_size = sr_bmax > 0
                               ? sr_bmax
                               : dplm::DefaultMaxBatch(cfg.sampling_prob, sr_n);
      cfg.seed = g.seed_set ? g.seed : 0;
      dplm::PipelineReport r = dplm::RunPipelineReport(cfg, sr_draws);
      EmitJson(json{{"draws", r.draws},
                    {"max_batch_size", cfg.max_batch_size},
                    {"mean_padded_fraction", r.mean_padded_fraction},
                    {"mean_truncated_fraction", r.mean_truncated_fraction},
                    {"truncation_frequency", r.truncation_frequency},
                    {"mean_draw_latency_us", r.mean_draw_latency_us}},
               g.output_dir, "sample_report.json");
    } else if (*fit) {
      if (lr_csv.empty() && loss_csv.empty())
        throw std::invalid_argument("fit-scaling requires --lr-sweep or --loss-curve");
      json out;
      if (!lr_csv.empty()) {
        dplm::OptimalLr lr = dplm::FitOptimalLr(ReadLrSweepCsv(lr_csv));
        out["optimal_lr"] = {{"learning_rate", lr.learning_rate},
                             {"quadratic", {lr.fit.a, lr.fit.b, lr.fit.c}}};
      }
      if (!loss_csv.empty()) {
        dplm::PowerLawFit f = dplm::FitPowerLaw(ReadIterLossCsv(loss_csv));
        out["power_law"] = {{"irreducible", f.irreducible},
                            {"amplitude", f.amplitude},
                            {"exponent", f.exponent},
                            {"residual", f.residual},
                            {"degenerate", f.degenerate}};
        if (predict_t > 0) {
          dplm::LossPrediction p = dplm::PredictLoss(f, predict_t);
          out["prediction"] = {{"iterations", predict_t},
                               {"loss", p.loss},
                               {"extrapolated", p.extrapolated}};
        }
      }
      EmitJson(out, g.output_dir, "fit_scaling.json");
    } else if (*audit) {
      dplm::ModelParams model = dplm::LoadCheckpoint(ckpt_path);
      std::vector<dplm::PackedSequence> corpus = dplm::ReadPackedCache(audit_cache);
      dplm::MemorizationReport r =
          dplm::Audit(model, corpus, n_probes, prefix_len, suffix_len, threshold,
                      g.seed_set ? g.seed : 0, details);
      json out{{"n_probes", r.n_probes},
               {"exact_count", r.exact_count},
               {"approx_count", r.approx_count},
               {"exact_rate", r.exact_rate},
               {"approx_rate", r.approx_rate},
               {"edit_threshold", r.edit_threshold},
               {"edit_distance_unit", "token"}};
      if (details) {
        json d = json::array();
        for (const auto& pr : r.details)
          d.push_back({{"sequence", pr.probe.source_sequence},
                       {"offset", pr.probe.offset},
                       {"edit_distance", pr.edit_distance},
                       {"class", pr.cls == dplm::MemorizationClass::kExact
                                     ? "exact"
                                     : pr.cls == dplm::MemorizationClass::kApproximate
                                           ? "approximate"
                                           : "none"}});
        out["details"] = std::move(d);
      }
      EmitJson(out, g.output_dir, "memorization_report.json");
    } else if (*pack) {
      std::vector<dplm::PackedSequence> seqs = dplm::PackCorpus(
          dplm::ReadJsonlCorpus(pack_in, pack_mult), pack_seq_len);
      dplm::WritePackedCache(pack_out, seqs, pack_seq_len);
      int64_t pads = 0;
      for (const auto& s : seqs) pads += s.pad_count;
      std::cout << "sequences: " << seqs.size() << '\n'
                << "seq_len: " << pack_seq_len << '\n'
                << "pad_tokens: " << pads << '\n'
                << "cache: " << pack_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
