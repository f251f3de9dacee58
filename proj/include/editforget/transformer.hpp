// Copyright 2026 The editforget Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Decoder-only pre-norm transformer with hand-written reverse mode.
//
// The engine is templated on the scalar so that the same code runs in float
// for training and inference and in double for finite-difference checks.
// Linear layers carry no bias; weight matrices are stored (out x in) and
// applied to row-major activations as X * W^T.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "editforget/error.hpp"
#include "editforget/rng.hpp"

namespace editforget {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ModelConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ffn = 512;
  int context_len = 128;
  int vocab_size = 0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_layers < 1) fail(ErrorKind::kConfig, "n_layers: must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
      fail(ErrorKind::kConfig, "d_model: must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
      fail(ErrorKind::kConfig, "d_model / n_heads: must be even for rotary positions");
    }
    if (d_ffn < 1) fail(ErrorKind::kConfig, "d_ffn: must be >= 1");
    if (context_len < 2) fail(ErrorKind::kConfig, "context_len: must be >= 2");
    if (vocab_size < 5) fail(ErrorKind::kConfig, "vocab_size: must be >= 5");
  }
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  Mat<T> ln1_g, ln1_b;  // 1 x d
  Mat<T> wq, wk, wv, wo;  // d x d
  Mat<T> ln2_g, ln2_b;
  Mat<T> w_in;   // d_ffn x d
  Mat<T> w_out;  // d x d_ffn
};

template <typename T>
struct Params {
  Mat<T> tok_emb;  // V x d
  std::vector<LayerParams<T>> layers;
  Mat<T> lnf_g, lnf_b;
  Mat<T> head;  // V x d

  // Visits every tensor in a fixed order with its checkpoint name.
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f(std::string("tok_emb"), self.tok_emb);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1_g", L.ln1_g);
      f(p + "ln1_b", L.ln1_b);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ln2_g", L.ln2_g);
      f(p + "ln2_b", L.ln2_b);
      f(p + "w_in", L.w_in);
      f(p + "w_out", L.w_out);
    }
    f(std::string("lnf_g"), self.lnf_g);
    f(std::string("lnf_b"), self.lnf_b);
    f(std::string("head"), self.head);
  }
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  static Params zeros_like(const ModelConfig& c) {
    Params p;
    p.tok_emb = Mat<T>::Zero(c.vocab_size, c.d_model);
    p.layers.resize(c.n_layers);
    for (auto& L : p.layers) {
      L.ln1_g = Mat<T>::Zero(1, c.d_model);
      L.ln1_b = Mat<T>::Zero(1, c.d_model);
      L.wq = Mat<T>::Zero(c.d_model, c.d_model);
      L.wk = Mat<T>::Zero(c.d_model, c.d_model);
      L.wv = Mat<T>::Zero(c.d_model, c.d_model);
      L.wo = Mat<T>::Zero(c.d_model, c.d_model);
      L.ln2_g = Mat<T>::Zero(1, c.d_model);
      L.ln2_b = Mat<T>::Zero(1, c.d_model);
      L.w_in = Mat<T>::Zero(c.d_ffn, c.d_model);
      L.w_out = Mat<T>::Zero(c.d_model, c.d_ffn);
    }
    p.lnf_g = Mat<T>::Zero(1, c.d_model);
    p.lnf_b = Mat<T>::Zero(1, c.d_model);
    p.head = Mat<T>::Zero(c.vocab_size, c.d_model);
    return p;
  }

  static Params initialize(const ModelConfig& c) {
    c.validate();
    Params p = zeros_like(c);
    Rng rng(derive_seed(c.seed, "init"));
    auto fill = [&](Mat<T>& m, double std) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<T>(std * rng.normal());
      }
    };
    const double d = c.d_model;
    const double depth = std::sqrt(2.0 * c.n_layers);
    fill(p.tok_emb, 0.1);
    for (auto& L : p.layers) {
      L.ln1_g.setOnes();
      L.ln2_g.setOnes();
      fill(L.wq, 1.0 / std::sqrt(d));
      fill(L.wk, 1.0 / std::sqrt(d));
      fill(L.wv, 1.0 / std::sqrt(d));
      fill(L.wo, 1.0 / std::sqrt(d) / depth);
      fill(L.w_in, 1.0 / std::sqrt(d));
      fill(L.w_out, 1.0 / std::sqrt(static_cast<double>(c.d_ffn)) / depth);
    }
    p.lnf_g.setOnes();
    fill(p.head, 1.0 / std::sqrt(d));
    return p;
  }

  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    auto conv = [](const Mat<T>& m) { return Mat<U>(m.template cast<U>()); };
    out.tok_emb = conv(tok_emb);
    for (const auto& L : layers) {
      out.layers.push_back({conv(L.ln1_g), conv(L.ln1_b), conv(L.wq),
                            conv(L.wk), conv(L.wv), conv(L.wo), conv(L.ln2_g),
                            conv(L.ln2_b), conv(L.w_in), conv(L.w_out)});
    }
    out.lnf_g = conv(lnf_g);
    out.lnf_b = conv(lnf_b);
    out.head = conv(head);
    return out;
  }

  void set_zero() {
    visit([](const std::string&, Mat<T>& m) { m.setZero(); });
  }
};

// Optional interventions applied during the forward pass. All of them are
// inert by default.
template <typename T>
struct ForwardHooks {
  // Replaces layers[w_out_layer].w_out for this pass.
  int w_out_layer = -1;
  const Mat<T>* w_out = nullptr;

  // Replaces the FFN output row at (ffn_layer, ffn_position) by ffn_value.
  int ffn_layer = -1;
  int ffn_position = -1;
  const Vec<T>* ffn_value = nullptr;

  // Added to the input embeddings at rows [noise_begin, noise_begin + rows).
  const Mat<T>* embed_noise = nullptr;
  int noise_begin = 0;
};

template <typename T>
struct LayerCache {
  Mat<T> x_in, xhat1, a, q, k, v, o, x_mid, xhat2, b, h, act, ffn;
  Vec<T> rstd1, rstd2;
  std::vector<Mat<T>> probs;  // per (segment, head), len x len
};

// Independent sequences packed into one pass: [start, start + length).
// Attention never crosses a segment boundary and positions restart at 0.
struct Segment {
  int start = 0;
  int length = 0;
};

template <typename T>
struct ForwardCache {
  std::vector<int> tokens;
  std::vector<Segment> segments;
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final, xhatf, xf;
  Vec<T> rstdf;
  ForwardHooks<T> hooks;
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& xhat,
                Vec<T>& rstd, Mat<T>& y) {
  const Vec<T> mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  rstd = (xhat.array().square().rowwise().mean() + static_cast<T>(kLnEps))
             .rsqrt();
  xhat.array().colwise() *= rstd.array();
  y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat,
                           const Vec<T>& rstd, const Mat<T>& g, Mat<T>* dg,
                           Mat<T>* db) {
  if (dg) dg->row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (db) db->row(0) += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const Vec<T> m1 = dxhat.rowwise().mean();
  const Vec<T> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat<T> dx = dxhat.colwise() - m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= rstd.array();
  return dx;
}

// tanh-approximated GELU.
template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh()))
      .matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);
  const auto a = x.array();
  const auto t = (c * (a + T(0.044715) * a.cube())).tanh().eval();
  return (T(0.5) * (T(1) + t) +
          T(0.5) * a * (T(1) - t.square()) * c *
              (T(1) + T(3 * 0.044715) * a.square()))
      .matrix();
}

// Rotary position embedding: rotates each (2i, 2i+1) pair of every head by
// pos * base^(-2i / head_dim). `inverse` applies the transpose rotation,
// which is what the backward pass needs.
template <typename T>
void rotate(Mat<T>& m, std::span<const Segment> segs, int n_heads, int dh,
            bool inverse) {
  const int half = dh / 2;
  int longest = 0;
  for (const auto& sg : segs) longest = std::max(longest, sg.length);
  Mat<T> cos_t(longest, half), sin_t(longest, half);
  for (int pos = 0; pos < longest; ++pos) {
    for (int i = 0; i < half; ++i) {
      const double angle =
          pos * std::pow(10000.0, -2.0 * i / static_cast<double>(dh));
      cos_t(pos, i) = static_cast<T>(std::cos(angle));
      sin_t(pos, i) = static_cast<T>(inverse ? -std::sin(angle) : std::sin(angle));
    }
  }
  for (const auto& sg : segs) {
    for (int pos = 0; pos < sg.length; ++pos) {
      T* row = m.row(sg.start + pos).data();
      for (int h = 0; h < n_heads; ++h) {
        T* x = row + h * dh;
        for (int i = 0; i < half; ++i) {
          const T a = x[2 * i], b = x[2 * i + 1];
          const T c = cos_t(pos, i), s = sin_t(pos, i);
          x[2 * i] = a * c - b * s;
          x[2 * i + 1] = a * s + b * c;
        }
      }
    }
  }
}

inline std::vector<Segment> whole(std::size_t n) {
  return {Segment{0, static_cast<int>(n)}};
}

}  // namespace detail

// Runs the model over `tokens` and returns logits (T x V). When `cache` is
// non-null it receives everything backward() needs. An empty `segments`
// treats the input as one sequence.
template <typename T>
Mat<T> forward(const ModelConfig& c, const Params<T>& p,
               std::span<const int> tokens, ForwardCache<T>* cache = nullptr,
               const ForwardHooks<T>& hooks = {},
               std::span<const Segment> segments = {}) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n == 0) fail(ErrorKind::kLength, "forward of empty input");
  const std::vector<Segment> segs =
      segments.empty() ? detail::whole(tokens.size())
                       : std::vector<Segment>(segments.begin(), segments.end());
  for (const auto& sg : segs) {
    if (sg.length > c.context_len) {
      fail(ErrorKind::kLength, "input of " + std::to_string(sg.length) +
                                   " tokens exceeds context length " +
                                   std::to_string(c.context_len));
    }
  }
  const int d = c.d_model, nh = c.n_heads, dh = c.head_dim();
  Mat<T> x(n, d);
  for (const auto& sg : segs) {
    for (int i = 0; i < sg.length; ++i) {
      const int t = tokens[sg.start + i];
      if (t < 0 || t >= c.vocab_size) {
        fail(ErrorKind::kValidation, "token id out of range");
      }
      x.row(sg.start + i) = p.tok_emb.row(t);
    }
  }
  if (hooks.embed_noise) {
    const auto& noise = *hooks.embed_noise;
    for (Eigen::Index r = 0; r < noise.rows(); ++r) {
      x.row(hooks.noise_begin + r) += noise.row(r);
    }
  }
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->segments = segs;
    cache->layers.resize(c.n_layers);
    cache->hooks = hooks;
  }
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  LayerCache<T> scratch;
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& L = p.layers[l];
    LayerCache<T>& lc = cache ? cache->layers[l] : scratch;
    lc.x_in = x;
    detail::layer_norm(x, L.ln1_g, L.ln1_b, lc.xhat1, lc.rstd1, lc.a);
    lc.q.noalias() = lc.a * L.wq.transpose();
    lc.k.noalias() = lc.a * L.wk.transpose();
    detail::rotate(lc.q, segs, nh, dh, false);
    detail::rotate(lc.k, segs, nh, dh, false);
    lc.v.noalias() = lc.a * L.wv.transpose();
    lc.o.resize(n, d);
    lc.probs.resize(segs.size() * nh);
    for (std::size_t si = 0; si < segs.size(); ++si) {
      const int s0 = segs[si].start, len = segs[si].length;
      for (int h = 0; h < nh; ++h) {
        Mat<T> s = lc.q.block(s0, h * dh, len, dh) *
                   lc.k.block(s0, h * dh, len, dh).transpose() * scale;
        for (int i = 0; i < len; ++i) {
          auto row = s.row(i).head(i + 1).array();
          row = (row - row.maxCoeff()).exp();
          row /= row.sum();
          s.row(i).tail(len - i - 1).setZero();
        }
        lc.o.block(s0, h * dh, len, dh).noalias() =
            s * lc.v.block(s0, h * dh, len, dh);
        lc.probs[si * nh + h] = std::move(s);
      }
    }
    lc.x_mid = x;
    lc.x_mid.noalias() += lc.o * L.wo.transpose();
    detail::layer_norm(lc.x_mid, L.ln2_g, L.ln2_b, lc.xhat2, lc.rstd2, lc.b);
    lc.h.noalias() = lc.b * L.w_in.transpose();
    lc.act = detail::gelu(lc.h);
    const Mat<T>& w_out =
        (hooks.w_out && hooks.w_out_layer == l) ? *hooks.w_out : L.w_out;
    lc.ffn.noalias() = lc.act * w_out.transpose();
    if (hooks.ffn_value && hooks.ffn_layer == l) {
      lc.ffn.row(hooks.ffn_position) = hooks.ffn_value->transpose();
    }
    x = lc.x_mid + lc.ffn;
  }
  Mat<T> xf;
  Mat<T> xhatf;
  Vec<T> rstdf;
  detail::layer_norm(x, p.lnf_g, p.lnf_b, xhatf, rstdf, xf);
  Mat<T> logits;
  logits.noalias() = xf * p.head.transpose();
  if (cache) {
    cache->x_final = std::move(x);
    cache->xhatf = std::move(xhatf);
    cache->rstdf = std::move(rstdf);
    cache->xf = std::move(xf);
  }
  return logits;
}

// Extra gradients backward() can report besides parameter gradients.
template <typename T>
struct BackwardTaps {
  // d loss / d (FFN output) per layer, T x d each.
  std::vector<Mat<T>>* ffn_out_grads = nullptr;
  // d loss / d ffn_value when the forward pass used the FFN override hook.
  Vec<T>* ffn_value_grad = nullptr;
  // Stop once this layer's w_out gradient is known; lower layers are left
  // untouched. -1 runs the full pass.
  int stop_layer = -1;
};

// Accumulates parameter gradients of the loss with upstream `dlogits` into
// `grads` (which may be null when only taps are wanted).
template <typename T>
void backward(const ModelConfig& c, const Params<T>& p,
              const ForwardCache<T>& cache, const Mat<T>& dlogits,
              Params<T>* grads, const BackwardTaps<T>& taps = {}) {
  const auto n = static_cast<Eigen::Index>(cache.tokens.size());
  const int nh = c.n_heads, dh = c.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& hooks = cache.hooks;

  if (grads) grads->head.noalias() += dlogits.transpose() * cache.xf;
  Mat<T> dxf = dlogits * p.head;
  Mat<T> dx = detail::layer_norm_backward<T>(
      dxf, cache.xhatf, cache.rstdf, p.lnf_g, grads ? &grads->lnf_g : nullptr,
      grads ? &grads->lnf_b : nullptr);
  if (taps.ffn_out_grads) taps.ffn_out_grads->assign(c.n_layers, Mat<T>());

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& L = p.layers[l];
    const auto& lc = cache.layers[l];
    LayerParams<T>* G = grads ? &grads->layers[l] : nullptr;
    if (taps.ffn_out_grads) (*taps.ffn_out_grads)[l] = dx;

    Mat<T> dffn = dx;
    if (hooks.ffn_value && hooks.ffn_layer == l) {
      if (taps.ffn_value_grad) {
        *taps.ffn_value_grad = dffn.row(hooks.ffn_position).transpose();
      }
      dffn.row(hooks.ffn_position).setZero();
    }
    const Mat<T>& w_out =
        (hooks.w_out && hooks.w_out_layer == l) ? *hooks.w_out : L.w_out;
    if (G) G->w_out.noalias() += dffn.transpose() * lc.act;
    if (l == taps.stop_layer) return;
    Mat<T> dact = dffn * w_out;
    const Mat<T> dh_pre =
        (dact.array() * detail::gelu_grad(lc.h).array()).matrix();
    if (G) G->w_in.noalias() += dh_pre.transpose() * lc.b;
    Mat<T> db = dh_pre * L.w_in;
    Mat<T> dx_mid = dx + detail::layer_norm_backward<T>(
                             db, lc.xhat2, lc.rstd2, L.ln2_g,
                             G ? &G->ln2_g : nullptr, G ? &G->ln2_b : nullptr);

    if (G) G->wo.noalias() += dx_mid.transpose() * lc.o;
    Mat<T> d_o = dx_mid * L.wo;
    Mat<T> dq(n, c.d_model), dk(n, c.d_model), dv(n, c.d_model);
    for (std::size_t si = 0; si < cache.segments.size(); ++si) {
      const int s0 = cache.segments[si].start, len = cache.segments[si].length;
      for (int h = 0; h < nh; ++h) {
        const Mat<T>& P = lc.probs[si * nh + h];
        const auto d_oh = d_o.block(s0, h * dh, len, dh);
        const Mat<T> dP = d_oh * lc.v.block(s0, h * dh, len, dh).transpose();
        dv.block(s0, h * dh, len, dh).noalias() = P.transpose() * d_oh;
        Mat<T> dS = (P.array() * dP.array()).matrix();
        const Vec<T> dots = dS.rowwise().sum();
        dS -= (P.array().colwise() * dots.array()).matrix();
        dS *= scale;
        dq.block(s0, h * dh, len, dh).noalias() =
            dS * lc.k.block(s0, h * dh, len, dh);
        dk.block(s0, h * dh, len, dh).noalias() =
            dS.transpose() * lc.q.block(s0, h * dh, len, dh);
      }
    }
    detail::rotate(dq, cache.segments, nh, dh, true);
    detail::rotate(dk, cache.segments, nh, dh, true);
    if (G) {
      G->wq.noalias() += dq.transpose() * lc.a;
      G->wk.noalias() += dk.transpose() * lc.a;
      G->wv.noalias() += dv.transpose() * lc.a;
    }
    Mat<T> da = dq * L.wq;
    da.noalias() += dk * L.wk;
    da.noalias() += dv * L.wv;
    dx = dx_mid + detail::layer_norm_backward<T>(da, lc.xhat1, lc.rstd1,
                                                 L.ln1_g,
                                                 G ? &G->ln1_g : nullptr,
                                                 G ? &G->ln1_b : nullptr);
  }
  if (grads) {
    for (const auto& sg : cache.segments) {
      for (int i = 0; i < sg.length; ++i) {
        grads->tok_emb.row(cache.tokens[sg.start + i]) += dx.row(sg.start + i);
      }
    }
  }
}

// A training or scoring sequence: tokens[0, prompt_len) is the prompt and
// the rest is the completion whose likelihood matters.
struct Sequence {
  std::vector<int> tokens;
  std::size_t prompt_len = 0;

  std::size_t completion_len() const { return tokens.size() - prompt_len; }
};

// Per-row log-softmax.
template <typename T>
Mat<T> log_softmax(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    const T lse =
        mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

// Mean negative log-likelihood of the completion tokens of `seq` given the
// logits of the whole sequence. When `dlogits` is given it receives the
// gradient of `weight * loss`.
template <typename T>
double completion_nll(const Mat<T>& logits, const Sequence& seq,
                      Mat<T>* dlogits = nullptr, double weight = 1.0) {
  const std::size_t m = seq.completion_len();
  if (m == 0 || seq.prompt_len == 0) {
    fail(ErrorKind::kValidation, "completion must be non-empty and follow a "
                                 "non-empty prompt");
  }
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  const T w = static_cast<T>(weight / static_cast<double>(m));
  for (std::size_t pos = seq.prompt_len - 1; pos + 1 < seq.tokens.size();
       ++pos) {
    const auto row = logits.row(pos);
    const T mx = row.maxCoeff();
    const auto e = (row.array() - mx).exp();
    const T sum = e.sum();
    const int target = seq.tokens[pos + 1];
    total += -(static_cast<double>(row(target) - mx) - std::log(static_cast<double>(sum)));
    if (dlogits) {
      dlogits->row(pos) = (e / sum * w).matrix();
      (*dlogits)(pos, target) -= w;
    }
  }
  return total / static_cast<double>(m);
}

// Per-example loss on logits; writes the gradient w.r.t. logits.
template <typename T>
using LogitLoss =
    std::function<double(std::size_t index, const Mat<T>& logits, Mat<T>& dlogits)>;

template <typename T>
struct GradientResult {
  double loss = 0.0;  // mean over the batch
  Params<T> grads;
};

// Gradients of the batch-mean of `loss` over `batch`. Sequences are packed
// into passes of at most `pack_tokens` tokens.
template <typename T>
GradientResult<T> gradients(const ModelConfig& c, const Params<T>& p,
                            std::span<const Sequence> batch,
                            const LogitLoss<T>& loss,
                            const ForwardHooks<T>& hooks = {},
                            int pack_tokens = 2048) {
  if (batch.empty()) fail(ErrorKind::kValidation, "gradients of empty batch");
  GradientResult<T> out;
  out.grads = Params<T>::zeros_like(c);
  ForwardCache<T> cache;
  const T inv = T(1) / static_cast<T>(batch.size());
  // Row-addressed hooks refer to a single sequence, so they disable packing.
  if (hooks.ffn_value || hooks.embed_noise) pack_tokens = 0;
  std::size_t i = 0;
  while (i < batch.size()) {
    std::vector<int> tokens;
    std::vector<Segment> segs;
    const std::size_t first = i;
    while (i < batch.size() &&
           (segs.empty() || static_cast<int>(tokens.size() +
                                              batch[i].tokens.size()) <=
                                pack_tokens)) {
      segs.push_back({static_cast<int>(tokens.size()),
                      static_cast<int>(batch[i].tokens.size())});
      tokens.insert(tokens.end(), batch[i].tokens.begin(),
                    batch[i].tokens.end());
      ++i;
    }
    const Mat<T> logits = forward(c, p, tokens, &cache, hooks, segs);
    Mat<T> dlogits = Mat<T>::Zero(logits.rows(), logits.cols());
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const Mat<T> block = logits.middleRows(segs[k].start, segs[k].length);
      Mat<T> dblock = Mat<T>::Zero(block.rows(), block.cols());
      const double lk = loss(first + k, block, dblock);
      if (!std::isfinite(lk)) {
        fail(ErrorKind::kNumeric, "non-finite loss at batch item " +
                                      std::to_string(first + k));
      }
      out.loss += lk;
      dlogits.middleRows(segs[k].start, segs[k].length) = dblock * inv;
    }
    backward(c, p, cache, dlogits, &out.grads);
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

}  // namespace editforget
