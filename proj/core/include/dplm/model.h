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

#ifndef DPLM_MODEL_H_
#define DPLM_MODEL_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dplm/tensor.h"

namespace dplm {

// Byte-level vocabulary: ids 0..255 are raw bytes, then PAD, BOS, EOS.
inline constexpr int kPadToken = 256;
inline constexpr int kBosToken = 257;
inline constexpr int kEosToken = 258;
inline constexpr int kByteVocabSize = 259;

// Decoder-only transformer: pre-norm RMSNorm, GeGLU feed-forward,
// multi-query attention, rotary positions, global causal attention,
// tied input/output embedding.
struct ModelConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int n_kv_heads = 1;
  int head_size = 8;
  int ffn_hidden = 128;
  int vocab_size = kByteVocabSize;
  int seq_len = 64;
  double rmsnorm_eps = 1e-6;
  double rope_base = 10000.0;

  void Validate() const;  // throws std::invalid_argument on bad fields
};

struct LayerParams {
  Vector attn_norm;   // [d_model]
  Matrix wq;          // [n_heads * head_size, d_model]
  Matrix wk;          // [n_kv_heads * head_size, d_model]
  Matrix wv;          // [n_kv_heads * head_size, d_model]
  Matrix wo;          // [d_model, n_heads * head_size]
  Vector ffn_norm;    // [d_model]
  Matrix w_gate;      // [ffn_hidden, d_model]
  Matrix w_up;        // [ffn_hidden, d_model]
  Matrix w_down;      // [d_model, ffn_hidden]
};

struct ModelParams {
  ModelConfig config;
  Matrix embedding;  // [vocab_size, d_model]; also the logit projection
  std::vector<LayerParams> layers;
  Vector final_norm;  // [d_model]

  static ModelParams Zeros(const ModelConfig& cfg);
  // Fan-in scaled Gaussian init, norm scales at 1. Deterministic in seed.
  static ModelParams Random(const ModelConfig& cfg, uint64_t seed);

  size_t ParamCount() const;

  // Canonical flattening: embedding, then per layer (attn_norm, wq, wk, wv,
  // wo, ffn_norm, w_gate, w_up, w_down), then final_norm. Round-trips
  // losslessly with Unflatten.
  Vector Flatten() const;
  static ModelParams Unflatten(const ModelConfig& cfg, const Vector& flat);

  // Visits every tensor in canonical order.
  void ForEachTensor(
      const std::function<void(const std::string&, const double*, size_t)>& fn) const;
  void ForEachTensorMut(
      const std::function<void(const std::string&, double*, size_t)>& fn);
};

struct TokenBatch {
  int seq_len = 0;
  std::vector<std::vector<int>> tokens;   // [batch][seq_len]
  std::vector<std::vector<int>> targets;  // [batch][seq_len]
  std::vector<std::vector<uint8_t>> loss_mask;
  std::vector<uint8_t> is_padding_example;

  size_t BatchSize() const { return tokens.size(); }
  void Validate(const ModelConfig& cfg) const;
};

// output_i = x_i / sqrt(mean(x^2) + eps) * scale_i
Vector RmsNorm(const Vector& x, const Vector& scale, double eps);

// Exact Gaussian-CDF GELU.
double Gelu(double x);

// w_down * (GELU(w_gate x) .* (w_up x))
Vector GegluFfn(const Vector& x, const Matrix& w_gate, const Matrix& w_up,
                const Matrix& w_down);

// Causal multi-query attention over a full sequence. x is [seq, d_model]
// row-major. Rotary positions applied to q/k. Exposed for direct testing.
Matrix MqaAttention(const Matrix& x, const LayerParams& layer,
                    const ModelConfig& cfg);

struct PerExampleGrads {
  double mean_loss = 0.0;                  // over non-padding examples
  std::vector<double> example_losses;      // 0 for padding rows
  std::vector<Vector> flat_grads;          // gradient of each example's loss
};

// Exact per-example loss and gradients. Loss per example is the mean
// cross-entropy over masked positions; padding rows contribute zero loss and
// an all-zero gradient. Deterministic.
PerExampleGrads LossAndPerExampleGrads(const ModelParams& params,
                                       const TokenBatch& batch);

// Forward pass logits for a single token sequence (length <= seq_len).
// Returns [len, vocab] logits.
Matrix ForwardLogits(const ModelParams& params, const std::vector<int>& tokens);

// Appends n_new argmax tokens (ties -> lowest id).
std::vector<int> GreedyDecode(const ModelParams& params,
                              const std::vector<int>& prefix, int n_new);

}  // namespace dplm

#endif  // DPLM_MODEL_H_
