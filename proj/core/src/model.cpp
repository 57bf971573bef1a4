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

#include "dplm/model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dplm/rng.h"

namespace dplm {

namespace {

void CheckPositive(int v, const char* name) {
  if (v <= 0) throw std::invalid_argument(std::string(name) + " must be positive");
}

}  // namespace

void ModelConfig::Validate() const {
  CheckPositive(d_model, "d_model");
  CheckPositive(n_layers, "n_layers");
  CheckPositive(n_heads, "n_heads");
  CheckPositive(n_kv_heads, "n_kv_heads");
  CheckPositive(head_size, "head_size");
  CheckPositive(ffn_hidden, "ffn_hidden");
  CheckPositive(vocab_size, "vocab_size");
  CheckPositive(seq_len, "seq_len");
  if (rmsnorm_eps <= 0) throw std::invalid_argument("rmsnorm_eps must be positive");
  if (n_heads % n_kv_heads != 0)
    throw std::invalid_argument("n_heads must be a multiple of n_kv_heads");
  if (head_size % 2 != 0)
    throw std::invalid_argument("head_size must be even for rotary positions");
}

ModelParams ModelParams::Zeros(const ModelConfig& cfg) {
  cfg.Validate();
  ModelParams p;
  p.config = cfg;
  p.embedding = Matrix(cfg.vocab_size, cfg.d_model);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.attn_norm.assign(cfg.d_model, 0.0);
    l.wq = Matrix(cfg.n_heads * cfg.head_size, cfg.d_model);
    l.wk = Matrix(cfg.n_kv_heads * cfg.head_size, cfg.d_model);
    l.wv = Matrix(cfg.n_kv_heads * cfg.head_size, cfg.d_model);
    l.wo = Matrix(cfg.d_model, cfg.n_heads * cfg.head_size);
    l.ffn_norm.assign(cfg.d_model, 0.0);
    l.w_gate = Matrix(cfg.ffn_hidden, cfg.d_model);
    l.w_up = Matrix(cfg.ffn_hidden, cfg.d_model);
    l.w_down = Matrix(cfg.d_model, cfg.ffn_hidden);
  }
  p.final_norm.assign(cfg.d_model, 0.0);
  return p;
}

ModelParams ModelParams::Random(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p = Zeros(cfg);
  uint64_t tensor_idx = 0;
  p.ForEachTensorMut([&](const std::string& name, double* data, size_t n) {
    GaussianRng rng(DeriveSeed(seed, tensor_idx++));
    if (name.find("norm") != std::string::npos) {
      std::fill(data, data + n, 1.0);
      return;
    }
    double fan_in = cfg.d_model;
    if (name.find("w_down") != std::string::npos) fan_in = cfg.ffn_hidden;
    if (name.find(".wo") != std::string::npos) fan_in = cfg.n_heads * cfg.head_size;
    double std = 1.0 / std::sqrt(fan_in);
    for (size_t i = 0; i < n; ++i) data[i] = std * rng.Gaussian();
  });
  return p;
}

size_t ModelParams::ParamCount() const {
  size_t n = 0;
  ForEachTensor([&](const std::string&, const double*, size_t sz) { n += sz; });
  return n;
}

void ModelParams::ForEachTensor(
    const std::function<void(const std::string&, const double*, size_t)>& fn) const {
  const_cast<ModelParams*>(this)->ForEachTensorMut(
      [&](const std::string& name, double* data, size_t n) { fn(name, data, n); });
}

void ModelParams::ForEachTensorMut(
    const std::function<void(const std::string&, double*, size_t)>& fn) {
  fn("embedding", embedding.data.data(), embedding.size());
  for (size_t l = 0; l < layers.size(); ++l) {
    std::string prefix = "layer." + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    fn(prefix + "attn_norm", lp.attn_norm.data(), lp.attn_norm.size());
    fn(prefix + "wq", lp.wq.data.data(), lp.wq.size());
    fn(prefix + "wk", lp.wk.data.data(), lp.wk.size());
    fn(prefix + "wv", lp.wv.data.data(), lp.wv.size());
    fn(prefix + "wo", lp.wo.data.data(), lp.wo.size());
    fn(prefix + "ffn_norm", lp.ffn_norm.data(), lp.ffn_norm.size());
    fn(prefix + "w_gate", lp.w_gate.data.data(), lp.w_gate.size());
    fn(prefix + "w_up", lp.w_up.data.data(), lp.w_up.size());
    fn(prefix + "w_down", lp.w_down.data.data(), lp.w_down.size());
  }
  fn("final_norm", final_norm.data(), final_norm.size());
}

Vector ModelParams::Flatten() const {
  Vector flat;
  flat.reserve(ParamCount());
  ForEachTensor([&](const std::string&, const double* data, size_t n) {
    flat.insert(flat.end(), data, data + n);
  });
  return flat;
}

ModelParams ModelParams::Unflatten(const ModelConfig& cfg, const Vector& flat) {
  ModelParams p = Zeros(cfg);
  if (flat.size() != p.ParamCount())
    throw std::invalid_argument("flat vector length does not match parameter count");
  size_t off = 0;
  p.ForEachTensorMut([&](const std::string&, double* data, size_t n) {
    std::memcpy(data, flat.data() + off, n * sizeof(double));
    off += n;
  });
  return p;
}

void TokenBatch::Validate(const ModelConfig& cfg) const {
  if (tokens.empty()) throw std::invalid_argument("empty batch");
  if (targets.size() != tokens.size() || loss_mask.size() != tokens.size() ||
      is_padding_example.size() != tokens.size())
    throw std::invalid_argument("batch field sizes disagree");
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (static_cast<int>(tokens[i].size()) != seq_len ||
        static_cast<int>(targets[i].size()) != seq_len ||
        static_cast<int>(loss_mask[i].size()) != seq_len)
      throw std::invalid_argument("row length != seq_len");
    if (seq_len > cfg.seq_len) throw std::invalid_argument("seq_len exceeds model capacity");
    for (int t = 0; t < seq_len; ++t) {
      if (tokens[i][t] < 0 || tokens[i][t] >= cfg.vocab_size ||
          targets[i][t] < 0 || targets[i][t] >= cfg.vocab_size)
        throw std::invalid_argument("token id out of range");
    }
    if (is_padding_example[i]) {
      for (int t = 0; t < seq_len; ++t)
        if (loss_mask[i][t]) throw std::invalid_argument("padding example with nonzero mask");
    }
  }
}

Vector RmsNorm(const Vector& x, const Vector& scale, double eps) {
  if (x.size() != scale.size()) throw std::invalid_argument("rms_norm length mismatch");
  if (eps < 0) throw std::invalid_argument("rms_norm eps must be >= 0");
  size_t n = x.size();
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(n);
  double inv_r = 1.0 / std::sqrt(ms + eps);
  Vector out(n);
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * inv_r * scale[i];
  return out;
}

double Gelu(double x) {
  // x * Phi(x), exact Gaussian CDF.
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

namespace {

double GeluDeriv(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  return Phi + x * phi;
}

// In-place RMSNorm over a raw span with precomputed scale; returns nothing,
// writes y. Used by the sequence-level forward.
void RmsNormSpan(const double* x, const double* scale, int n, double eps, double* y) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  ms /= n;
  double inv_r = 1.0 / std::sqrt(ms + eps);
  for (int i = 0; i < n; ++i) y[i] = x[i] * inv_r * scale[i];
}

// Backward of RmsNormSpan: accumulates dx and dscale.
void RmsNormBackward(const double* x, const double* scale, int n, double eps,
                     const double* dy, double* dx, double* dscale) {
  double ms = 0.0;
  for (int i = 0; i < n; ++i) ms += x[i] * x[i];
  ms /= n;
  double r = std::sqrt(ms + eps);
  double inv_r = 1.0 / r;
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += dy[i] * scale[i] * x[i];
  double k = dot / (n * r * r * r);
  for (int i = 0; i < n; ++i) {
    dx[i] += dy[i] * scale[i] * inv_r - x[i] * k;
    dscale[i] += dy[i] * x[i] * inv_r;
  }
}

void ApplyRope(double* vec, int n_heads, int head_size, int pos, double base,
               bool inverse) {
  int half = head_size / 2;
  for (int h = 0; h < n_heads; ++h) {
    double* head = vec + h * head_size;
    for (int i = 0; i < half; ++i) {
      double freq = std::pow(base, -2.0 * i / head_size);
      double angle = pos * freq;
      double c = std::cos(angle), s = std::sin(angle);
      if (inverse) s = -s;
      double a = head[2 * i], b = head[2 * i + 1];
      head[2 * i] = a * c - b * s;
      head[2 * i + 1] = a * s + b * c;
    }
  }
}

struct LayerCache {
  Matrix x_in;     // [S, D]
  Matrix h_norm;   // [S, D]
  Matrix q;        // [S, H*hs] post-rope
  Matrix k;        // [S, KV*hs] post-rope
  Matrix v;        // [S, KV*hs]
  std::vector<Matrix> probs;  // per head, [S, S] lower triangle
  Matrix attn_concat;         // [S, H*hs]
  Matrix x_mid;    // [S, D] after attention residual
  Matrix h2;       // [S, D] ffn-norm output
  Matrix a;        // [S, F] gate pre-activation
  Matrix b;        // [S, F] up branch
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix x_last;  // [S, D]
  Matrix hf;      // [S, D]
};

// Full-sequence forward for one example. Fills cache if non-null; returns
// the [S, vocab] logits.
Matrix ForwardExample(const ModelParams& params, const std::vector<int>& tokens,
                      ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  int S = static_cast<int>(tokens.size());
  int D = cfg.d_model, H = cfg.n_heads, KV = cfg.n_kv_heads, hs = cfg.head_size;
  int group = H / KV;
  double inv_sqrt_hs = 1.0 / std::sqrt(static_cast<double>(hs));

  Matrix x(S, D);
  for (int t = 0; t < S; ++t) {
    if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size)
      throw std::invalid_argument("token id out of range");
    std::memcpy(x.row(t), params.embedding.row(tokens[t]), D * sizeof(double));
  }

  if (cache) cache->layers.resize(cfg.n_layers);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) lc->x_in = x;

    Matrix h_norm(S, D);
    for (int t = 0; t < S; ++t)
      RmsNormSpan(x.row(t), lp.attn_norm.data(), D, cfg.rmsnorm_eps, h_norm.row(t));
    if (lc) lc->h_norm = h_norm;

    Matrix q(S, H * hs), k(S, KV * hs), v(S, KV * hs);
    for (int t = 0; t < S; ++t) {
      MatVec(lp.wq, h_norm.row(t), q.row(t));
      MatVec(lp.wk, h_norm.row(t), k.row(t));
      MatVec(lp.wv, h_norm.row(t), v.row(t));
      ApplyRope(q.row(t), H, hs, t, cfg.rope_base, false);
      ApplyRope(k.row(t), KV, hs, t, cfg.rope_base, false);
    }
    if (lc) { lc->q = q; lc->k = k; lc->v = v; }

    Matrix concat(S, H * hs);
    if (lc) lc->probs.assign(H, Matrix(S, S));
    std::vector<double> scores(S);
    for (int h = 0; h < H; ++h) {
      int g = h / group;
      for (int t = 0; t < S; ++t) {
        const double* qh = q.row(t) + h * hs;
        double maxs = -1e300;
        for (int u = 0; u <= t; ++u) {
          const double* kg = k.row(u) + g * hs;
          double acc = 0.0;
          for (int i = 0; i < hs; ++i) acc += qh[i] * kg[i];
          scores[u] = acc * inv_sqrt_hs;
          maxs = std::max(maxs, scores[u]);
        }
        double denom = 0.0;
        for (int u = 0; u <= t; ++u) {
          scores[u] = std::exp(scores[u] - maxs);
          denom += scores[u];
        }
        double* out = concat.row(t) + h * hs;
        std::fill(out, out + hs, 0.0);
        for (int u = 0; u <= t; ++u) {
          double p = scores[u] / denom;
          if (lc) lc->probs[h](t, u) = p;
          const double* vg = v.row(u) + g * hs;
          for (int i = 0; i < hs; ++i) out[i] += p * vg[i];
        }
      }
    }
    if (lc) lc->attn_concat = concat;

    for (int t = 0; t < S; ++t) {
      Vector attn_out(D);
      MatVec(lp.wo, concat.row(t), attn_out.data());
      for (int c = 0; c < D; ++c) x(t, c) += attn_out[c];
    }
    if (lc) lc->x_mid = x;

    Matrix h2(S, D), a(S, cfg.ffn_hidden), b(S, cfg.ffn_hidden);
    for (int t = 0; t < S; ++t) {
      RmsNormSpan(x.row(t), lp.ffn_norm.data(), D, cfg.rmsnorm_eps, h2.row(t));
      MatVec(lp.w_gate, h2.row(t), a.row(t));
      MatVec(lp.w_up, h2.row(t), b.row(t));
      Vector g_act(cfg.ffn_hidden);
      for (int i = 0; i < cfg.ffn_hidden; ++i) g_act[i] = Gelu(a(t, i)) * b(t, i);
      Vector f(D);
      MatVec(lp.w_down, g_act.data(), f.data());
      for (int c = 0; c < D; ++c) x(t, c) += f[c];
    }
    if (lc) { lc->h2 = h2; lc->a = a; lc->b = b; }
  }

  if (cache) cache->x_last = x;
  Matrix hf(S, D);
  for (int t = 0; t < S; ++t)
    RmsNormSpan(x.row(t), params.final_norm.data(), D, cfg.rmsnorm_eps, hf.row(t));
  if (cache) cache->hf = hf;

  Matrix logits(S, cfg.vocab_size);
  for (int t = 0; t < S; ++t) MatVec(params.embedding, hf.row(t), logits.row(t));
  return logits;
}

// Backward for one example. dlogits is [S, vocab]; accumulates into grad.
void BackwardExample(const ModelParams& params, const std::vector<int>& tokens,
                     const ForwardCache& cache, const Matrix& dlogits,
                     ModelParams& grad) {
  const ModelConfig& cfg = params.config;
  int S = static_cast<int>(tokens.size());
  int D = cfg.d_model, H = cfg.n_heads, KV = cfg.n_kv_heads, hs = cfg.head_size;
  int F = cfg.ffn_hidden;
  int group = H / KV;
  double inv_sqrt_hs = 1.0 / std::sqrt(static_cast<double>(hs));

  // Logit projection (tied embedding, first of its two contributions).
  Matrix dhf(S, D);
  for (int t = 0; t < S; ++t) {
    MatTVecAdd(params.embedding, dlogits.row(t), dhf.row(t));
    OuterAdd(grad.embedding, dlogits.row(t), cache.hf.row(t));
  }

  Matrix dx(S, D);
  for (int t = 0; t < S; ++t)
    RmsNormBackward(cache.x_last.row(t), params.final_norm.data(), D,
                    cfg.rmsnorm_eps, dhf.row(t), dx.row(t),
                    grad.final_norm.data());

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = params.layers[l];
    LayerParams& gl = grad.layers[l];
    const LayerCache& lc = cache.layers[l];

    // FFN block: x_out = x_mid + w_down(gelu(a) .* b)
    Matrix dx_mid(S, D);
    dx_mid.data = dx.data;  // residual path
    Vector g_act(F), dg(F), da(F), db(F);
    for (int t = 0; t < S; ++t) {
      for (int i = 0; i < F; ++i) g_act[i] = Gelu(lc.a(t, i)) * lc.b(t, i);
      std::fill(dg.begin(), dg.end(), 0.0);
      MatTVecAdd(lp.w_down, dx.row(t), dg.data());
      OuterAdd(gl.w_down, dx.row(t), g_act.data());
      for (int i = 0; i < F; ++i) {
        da[i] = GeluDeriv(lc.a(t, i)) * lc.b(t, i) * dg[i];
        db[i] = Gelu(lc.a(t, i)) * dg[i];
      }
      Vector dh2(D, 0.0);
      MatTVecAdd(lp.w_gate, da.data(), dh2.data());
      MatTVecAdd(lp.w_up, db.data(), dh2.data());
      OuterAdd(gl.w_gate, da.data(), lc.h2.row(t));
      OuterAdd(gl.w_up, db.data(), lc.h2.row(t));
      RmsNormBackward(lc.x_mid.row(t), lp.ffn_norm.data(), D, cfg.rmsnorm_eps,
                      dh2.data(), dx_mid.row(t), gl.ffn_norm.data());
    }

    // Attention block: x_mid = x_in + wo * concat
    Matrix dconcat(S, H * hs);
    for (int t = 0; t < S; ++t) {
      MatTVecAdd(lp.wo, dx_mid.row(t), dconcat.row(t));
      OuterAdd(gl.wo, dx_mid.row(t), lc.attn_concat.row(t));
    }

    Matrix dq(S, H * hs), dk(S, KV * hs), dv(S, KV * hs);
    std::vector<double> dp(S), ds(S);
    for (int h = 0; h < H; ++h) {
      int g = h / group;
      for (int t = 0; t < S; ++t) {
        const double* do_h = dconcat.row(t) + h * hs;
        double pdp_sum = 0.0;
        for (int u = 0; u <= t; ++u) {
          const double* vg = lc.v.row(u) + g * hs;
          double acc = 0.0;
          for (int i = 0; i < hs; ++i) acc += do_h[i] * vg[i];
          dp[u] = acc;
          double p = lc.probs[h](t, u);
          pdp_sum += p * acc;
          double* dvg = dv.row(u) + g * hs;
          for (int i = 0; i < hs; ++i) dvg[i] += p * do_h[i];
        }
        const double* qh = lc.q.row(t) + h * hs;
        double* dqh = dq.row(t) + h * hs;
        for (int u = 0; u <= t; ++u) {
          double p = lc.probs[h](t, u);
          double dsu = p * (dp[u] - pdp_sum) * inv_sqrt_hs;
          const double* kg = lc.k.row(u) + g * hs;
          double* dkg = dk.row(u) + g * hs;
          for (int i = 0; i < hs; ++i) {
            dqh[i] += dsu * kg[i];
            dkg[i] += dsu * qh[i];
          }
        }
      }
    }

    Matrix dx_next(S, D);
    dx_next.data = dx_mid.data;  // residual path
    for (int t = 0; t < S; ++t) {
      ApplyRope(dq.row(t), H, hs, t, cfg.rope_base, true);
      ApplyRope(dk.row(t), KV, hs, t, cfg.rope_base, true);
      Vector dh_norm(D, 0.0);
      MatTVecAdd(lp.wq, dq.row(t), dh_norm.data());
      MatTVecAdd(lp.wk, dk.row(t), dh_norm.data());
      MatTVecAdd(lp.wv, dv.row(t), dh_norm.data());
      OuterAdd(gl.wq, dq.row(t), lc.h_norm.row(t));
      OuterAdd(gl.wk, dk.row(t), lc.h_norm.row(t));
      OuterAdd(gl.wv, dv.row(t), lc.h_norm.row(t));
      RmsNormBackward(lc.x_in.row(t), lp.attn_norm.data(), D, cfg.rmsnorm_eps,
                      dh_norm.data(), dx_next.row(t), gl.attn_norm.data());
    }
    dx = std::move(dx_next);
  }

  // Embedding lookup (the tied matrix's second contribution).
  for (int t = 0; t < S; ++t) {
    double* erow = grad.embedding.row(tokens[t]);
    const double* dxr = dx.row(t);
    for (int c = 0; c < D; ++c) erow[c] += dxr[c];
  }
}

}  // namespace

Vector GegluFfn(const Vector& x, const Matrix& w_gate, const Matrix& w_up,
                const Matrix& w_down) {
  if (w_gate.cols != static_cast<int>(x.size()) || w_up.cols != w_gate.cols ||
      w_up.rows != w_gate.rows || w_down.cols != w_gate.rows)
    throw std::invalid_argument("geglu_ffn shape mismatch");
  Vector a(w_gate.rows), b(w_up.rows);
  MatVec(w_gate, x.data(), a.data());
  MatVec(w_up, x.data(), b.data());
  for (int i = 0; i < w_gate.rows; ++i) a[i] = Gelu(a[i]) * b[i];
  Vector out(w_down.rows);
  MatVec(w_down, a.data(), out.data());
  return out;
}

Matrix MqaAttention(const Matrix& x, const LayerParams& layer,
                    const ModelConfig& cfg) {
  if (x.cols != cfg.d_model) throw std::invalid_argument("mqa_attention width mismatch");
  int S = x.rows, H = cfg.n_heads, KV = cfg.n_kv_heads, hs = cfg.head_size;
  int group = H / KV;
  double inv_sqrt_hs = 1.0 / std::sqrt(static_cast<double>(hs));
  Matrix q(S, H * hs), k(S, KV * hs), v(S, KV * hs);
  for (int t = 0; t < S; ++t) {
    MatVec(layer.wq, x.row(t), q.row(t));
    MatVec(layer.wk, x.row(t), k.row(t));
    MatVec(layer.wv, x.row(t), v.row(t));
    ApplyRope(q.row(t), H, hs, t, cfg.rope_base, false);
    ApplyRope(k.row(t), KV, hs, t, cfg.rope_base, false);
  }
  Matrix concat(S, H * hs);
  std::vector<double> scores;
  for (int h = 0; h < H; ++h) {
    int g = h / group;
    for (int t = 0; t < S; ++t) {
      scores.assign(t + 1, 0.0);
      double maxs = -1e300;
      for (int u = 0; u <= t; ++u) {
        const double* kg = k.row(u) + g * hs;
        const double* qh = q.row(t) + h * hs;
        double acc = 0.0;
        for (int i = 0; i < hs; ++i) acc += qh[i] * kg[i];
        scores[u] = acc * inv_sqrt_hs;
        maxs = std::max(maxs, scores[u]);
      }
      double denom = 0.0;
      for (int u = 0; u <= t; ++u) { scores[u] = std::exp(scores[u] - maxs); denom += scores[u]; }
      double* out = concat.row(t) + h * hs;
      for (int u = 0; u <= t; ++u) {
        double p = scores[u] / denom;
        const double* vg = v.row(u) + g * hs;
        for (int i = 0; i < hs; ++i) out[i] += p * vg[i];
      }
    }
  }
  Matrix out(S, cfg.d_model);
  for (int t = 0; t < S; ++t) MatVec(layer.wo, concat.row(t), out.row(t));
  return out;
}

PerExampleGrads LossAndPerExampleGrads(const ModelParams& params,
                                       const TokenBatch& batch) {
  const ModelConfig& cfg = params.config;
  batch.Validate(cfg);
  size_t B = batch.BatchSize();
  int S = batch.seq_len, V = cfg.vocab_size;

  PerExampleGrads out;
  out.example_losses.assign(B, 0.0);
  out.flat_grads.resize(B);

  double loss_sum = 0.0;
  int n_real = 0;
  for (size_t i = 0; i < B; ++i) {
    int n_masked = 0;
    for (int t = 0; t < S; ++t) n_masked += batch.loss_mask[i][t] ? 1 : 0;
    if (batch.is_padding_example[i] || n_masked == 0) {
      out.flat_grads[i].assign(params.ParamCount(), 0.0);
      continue;
    }
    ForwardCache cache;
    Matrix logits = ForwardExample(params, batch.tokens[i], &cache);

    Matrix dlogits(S, V);
    double loss = 0.0;
    for (int t = 0; t < S; ++t) {
      if (!batch.loss_mask[i][t]) continue;
      const double* lr = logits.row(t);
      double maxl = lr[0];
      for (int vtok = 1; vtok < V; ++vtok) maxl = std::max(maxl, lr[vtok]);
      double denom = 0.0;
      for (int vtok = 0; vtok < V; ++vtok) denom += std::exp(lr[vtok] - maxl);
      double lse = maxl + std::log(denom);
      int target = batch.targets[i][t];
      loss += lse - lr[target];
      double w = 1.0 / n_masked;
      double* dl = dlogits.row(t);
      for (int vtok = 0; vtok < V; ++vtok)
        dl[vtok] = std::exp(lr[vtok] - lse) * w;
      dl[target] -= w;
    }
    loss /= n_masked;
    out.example_losses[i] = loss;
    loss_sum += loss;
    ++n_real;

    ModelParams grad = ModelParams::Zeros(cfg);
    BackwardExample(params, batch.tokens[i], cache, dlogits, grad);
    out.flat_grads[i] = grad.Flatten();
  }
  out.mean_loss = n_real > 0 ? loss_sum / n_real : 0.0;
  return out;
}

Matrix ForwardLogits(const ModelParams& params, const std::vector<int>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty token sequence");
  if (static_cast<int>(tokens.size()) > params.config.seq_len)
    throw std::invalid_argument("sequence longer than model seq_len");
  return ForwardExample(params, tokens, nullptr);
}

std::vector<int> GreedyDecode(const ModelParams& params,
                              const std::vector<int>& prefix, int n_new) {
  if (n_new < 0) throw std::invalid_argument("n_new must be >= 0");
  if (static_cast<int>(prefix.size()) + n_new > params.config.seq_len)
    throw std::invalid_argument("prefix + n_new exceeds seq_len");
  std::vector<int> seq = prefix;
  for (int step = 0; step < n_new; ++step) {
    Matrix logits = ForwardLogits(params, seq);
    const double* last = logits.row(logits.rows - 1);
    int best = 0;
    for (int v = 1; v < params.config.vocab_size; ++v)
      if (last[v] > last[best]) best = v;  // ties keep the lowest id
    seq.push_back(best);
  }
  return seq;
}

}  // namespace dplm
