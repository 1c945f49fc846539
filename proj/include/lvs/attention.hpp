#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lvs/kernels_ref.hpp"
#include "lvs/ldm.hpp"
#include "lvs/tape.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

// --- parameter bundles -----------------------------------------------------

// Classic multi-head cross attention: queries, keys, and values all pass
// through per-head projections before the score/mix step.
template <typename T>
struct StdAttnParams {
  std::vector<Tensor<T>> w_q, w_k, w_v;  // h entries, each [C, C/h]
  Tensor<T> w_o;                         // [C, C]
  int64_t heads = 0;
  int64_t channels = 0;

  void validate() const {
    if (heads < 1 || channels < 1 || channels % heads != 0)
      throw DimError("StdAttnParams: channels must be a positive multiple of heads");
    int64_t dk = channels / heads;
    if (int64_t(w_q.size()) != heads || int64_t(w_k.size()) != heads || int64_t(w_v.size()) != heads)
      throw DimError("StdAttnParams: expected one projection per head");
    for (int64_t i = 0; i < heads; ++i) {
      require_shape(w_q[size_t(i)], {channels, dk}, "StdAttnParams.w_q");
      require_shape(w_k[size_t(i)], {channels, dk}, "StdAttnParams.w_k");
      require_shape(w_v[size_t(i)], {channels, dk}, "StdAttnParams.w_v");
    }
    require_shape(w_o, {channels, channels}, "StdAttnParams.w_o");
  }
};

// One-to-many variant: the key/value tokens are used raw, so only the folded
// per-head query maps and the widened output projection remain.
template <typename T>
struct OtmAttnParams {
  std::vector<Tensor<T>> w_q;  // h entries, each [C, C]
  Tensor<T> w_o;               // [h*C, C]
  int64_t heads = 0;
  int64_t channels = 0;

  void validate() const {
    if (heads < 1 || channels < 1) throw DimError("OtmAttnParams: bad counts");
    if (int64_t(w_q.size()) != heads) throw DimError("OtmAttnParams: expected one query map per head");
    for (const auto& w : w_q) require_shape(w, {channels, channels}, "OtmAttnParams.w_q");
    require_shape(w_o, {heads * channels, channels}, "OtmAttnParams.w_o");
  }
};

// --- single-texel reference forms -------------------------------------------

namespace detail_attn {

template <typename T>
void softmax_inplace(T* x, int64_t n) {
  T m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  T z = T(0);
  for (int64_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    z += x[i];
  }
  for (int64_t i = 0; i < n; ++i) x[i] /= z;
}

}  // namespace detail_attn

template <typename T>
Tensor<T> standard_cross_attention(const Tensor<T>& q, const Tensor<T>& keys,
                                   const StdAttnParams<T>& p) {
  p.validate();
  int64_t C = p.channels, h = p.heads, dk = C / h;
  require_shape(q, {C}, "standard_cross_attention.q");
  if (keys.rank() != 2 || keys.dim(1) != C)
    throw DimError("standard_cross_attention: keys must be [N," + std::to_string(C) + "]");
  int64_t N = keys.dim(0);
  T inv_temp = T(1) / std::sqrt(T(dk));

  Tensor<T> cat({C});
  Tensor<T> qh({dk}), kh({N, dk}), vh({N, dk}), logits({N});
  for (int64_t i = 0; i < h; ++i) {
    kern::ref::matmul(q.data(), p.w_q[size_t(i)].data(), qh.data(), 1, C, dk);
    kern::ref::matmul(keys.data(), p.w_k[size_t(i)].data(), kh.data(), N, C, dk);
    kern::ref::matmul(keys.data(), p.w_v[size_t(i)].data(), vh.data(), N, C, dk);
    for (int64_t n = 0; n < N; ++n)
      logits[n] = kern::ref::dot_blocked(qh.data(), kh.data() + n * dk, dk) * inv_temp;
    detail_attn::softmax_inplace(logits.data(), N);
    for (int64_t n = 0; n < N; ++n)
      kern::ref::axpy(logits[n], vh.data() + n * dk, cat.data() + i * dk, dk);
  }
  Tensor<T> out({C});
  kern::ref::matmul(cat.data(), p.w_o.data(), out.data(), 1, C, C);
  return out;
}

template <typename T>
Tensor<T> one_to_many_attention(const Tensor<T>& q, const Tensor<T>& deltas,
                                const OtmAttnParams<T>& p) {
  p.validate();
  int64_t C = p.channels, h = p.heads;
  require_shape(q, {C}, "one_to_many_attention.q");
  if (deltas.rank() != 2 || deltas.dim(1) != C)
    throw DimError("one_to_many_attention: deltas must be [N," + std::to_string(C) + "]");
  int64_t N = deltas.dim(0);
  T inv_temp = T(1) / std::sqrt(T(C));

  Tensor<T> cat({h * C});
  Tensor<T> s({C}), logits({N});
  for (int64_t i = 0; i < h; ++i) {
    kern::ref::matmul(q.data(), p.w_q[size_t(i)].data(), s.data(), 1, C, C);
    for (int64_t n = 0; n < N; ++n)
      logits[n] = kern::ref::dot_blocked(s.data(), deltas.data() + n * C, C) * inv_temp;
    detail_attn::softmax_inplace(logits.data(), N);
    for (int64_t n = 0; n < N; ++n)
      kern::ref::axpy(logits[n], deltas.data() + n * C, cat.data() + i * C, C);
  }
  Tensor<T> out({C});
  kern::ref::matmul(cat.data(), p.w_o.data(), out.data(), 1, h * C, C);
  return out;
}

// Folds the key and value projections of a standard parameter set into the
// one-to-many form: W_q[i] <- W_Q[i] W_K[i]^T * sqrt(C)/sqrt(C/h), and
// W_O' <- blockdiag(W_V) W_O. The two attentions then agree exactly.
template <typename T>
OtmAttnParams<T> fold_otm_params(const StdAttnParams<T>& p) {
  p.validate();
  int64_t C = p.channels, h = p.heads, dk = C / h;
  T gain = std::sqrt(T(C)) / std::sqrt(T(dk));

  OtmAttnParams<T> out;
  out.heads = h;
  out.channels = C;
  for (int64_t i = 0; i < h; ++i) {
    Tensor<T> wq({C, C});
    // W_Q [C,dk] times W_K^T [dk,C]
    for (int64_t r = 0; r < C; ++r)
      for (int64_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (int64_t k = 0; k < dk; ++k)
          acc += p.w_q[size_t(i)][r * dk + k] * p.w_k[size_t(i)][c * dk + k];
        wq[r * C + c] = acc * gain;
      }
    out.w_q.push_back(std::move(wq));
  }
  Tensor<T> wo({h * C, C});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t r = 0; r < C; ++r)
      for (int64_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (int64_t k = 0; k < dk; ++k)
          acc += p.w_v[size_t(i)][r * dk + k] * p.w_o[(i * dk + k) * C + c];
        wo[(i * C + r) * C + c] = acc;
      }
  out.w_o = std::move(wo);
  return out;
}

// --- FLOP cost model ---------------------------------------------------------

enum class AttnVariant { standard, one_to_many };

struct FlopReport {
  AttnVariant variant{};
  int64_t inputs = 0;   // N
  int64_t heads = 0;    // h
  int64_t channels = 0; // d_k
  int64_t flops = 0;
};

// Closed-form per-texel cost, counting one FLOP per multiply-accumulate.
// standard:     (2N+1) d_k^2 + N d_k + d_k^2
// one_to_many:  h d_k^2 + N h d_k + h d_k^2
inline FlopReport flop_count(AttnVariant variant, int64_t n, int64_t h, int64_t dk) {
  if (n < 1 || h < 1 || dk < 1) throw DimError("flop_count: counts must be >= 1");
  FlopReport r{variant, n, h, dk, 0};
  if (variant == AttnVariant::standard)
    r.flops = (2 * n + 1) * dk * dk + n * dk + dk * dk;
  else
    r.flops = h * dk * dk + n * h * dk + h * dk * dk;
  return r;
}

inline const char* variant_name(AttnVariant v) {
  return v == AttnVariant::standard ? "standard" : "one_to_many";
}

// --- taped, texel-parallel form ----------------------------------------------

// Trainable parameter handles for the lifted one-to-many attention.
struct OtmAttnVars {
  std::vector<Var> w_q;  // h entries, each [C, C]
  Var w_o;               // [h*C, C]
};

// query: [..., C], deltas: [..., M, C] -> [..., C]. zero_scores drops the
// query-key logits entirely (uniform weights = plain mean over views), the
// "no cross attention" ablation.
template <typename T>
Var otm_attention(Tape<T>& tape, Var query, Var deltas, const OtmAttnVars& p,
                  bool zero_scores = false) {
  const Shape qshape = tape.value(query).shape();
  Shape lead = qshape;
  int64_t C = lead.back();
  lead.pop_back();
  int64_t P = 1;
  for (int64_t d : lead) P *= d;
  int64_t M = tape.value(deltas).dim(-2);
  double inv_temp = 1.0 / std::sqrt(double(C));

  Shape wshape = lead;
  wshape.push_back(M);

  std::vector<Var> heads;
  Var q2 = tape.reshape(query, {P, C});
  for (const Var& wq : p.w_q) {
    Var w;
    if (zero_scores) {
      w = tape.constant(Tensor<T>::full(wshape, T(1) / T(M)));
    } else {
      Var s = tape.reshape(tape.matmul(q2, wq), qshape);
      w = tape.softmax(tape.scale(tape.dot_tokens(s, deltas), inv_temp), -1);
    }
    heads.push_back(tape.mix_tokens(w, deltas));
  }
  Var cat = tape.concat_last(heads);
  int64_t hC = int64_t(p.w_q.size()) * C;
  Shape out_shape = lead;
  out_shape.push_back(C);
  return tape.reshape(tape.matmul(tape.reshape(cat, {P, hC}), p.w_o), out_shape);
}

// Pre-norm residual attention update: V + OTM(rms_norm(V), deltas).
struct AttendParams {
  OtmAttnVars attn;
  Var norm_gain;  // [C]
  bool zero_scores = false;
};

template <typename T>
Var attend_residual(Tape<T>& tape, Var v, Var deltas, const AttendParams& p) {
  Var n = tape.rms_norm(v, p.norm_gain);
  return tape.add(v, otm_attention(tape, n, deltas, p.attn, p.zero_scores));
}

// Pre-norm residual conv MLP: V + conv3x3(gelu(conv3x3(rms_norm(V)))),
// applied per layer slice on channel-last volumes.
struct ConvMlpParams {
  Var norm_gain;  // [C]
  Var w1, b1;     // [C,C,3,3], [C]
  Var w2, b2;
};

template <typename T>
Var conv_mlp_residual(Tape<T>& tape, Var v, const ConvMlpParams& p) {
  Var x = tape.hwc_to_chw(tape.rms_norm(v, p.norm_gain));
  Var y = tape.conv3x3(tape.gelu(tape.conv3x3(x, p.w1, p.b1)), p.w2, p.b2);
  return tape.add(v, tape.chw_to_hwc(y));
}

// One attention update followed by a configurable number of conv MLPs.
struct FusionParams {
  AttendParams attend;
  std::vector<ConvMlpParams> mlps;
};

template <typename T>
FeatureVolume<T> fusion_block(Tape<T>& tape, const FeatureVolume<T>& fv, Var deltas,
                              const FusionParams& p) {
  Var v = attend_residual(tape, fv.V, deltas, p.attend);
  for (const auto& m : p.mlps) v = conv_mlp_residual(tape, v, m);
  return FeatureVolume<T>{v, fv.step, fv.frustum};
}

}  // namespace lvs
