#pragma once

#include <cmath>
#include <vector>

#include "lvs/geometry.hpp"
#include "lvs/tape.hpp"

namespace lvs {

// Layered depth map over a target frustum. Layer 0 is the farthest band
// (smallest disparity); compositing walks layers in index order, back to
// front. blend holds post-softmax per-view weights.
template <typename T>
struct Ldm {
  Var depth;    // [L,H,W] meters (z-depth)
  Var density;  // [L,H,W] in [0,1]
  Var blend;    // [L,H,W,M]
  Frustum frustum;
  int64_t views = 0;
};

template <typename T>
struct FeatureVolume {
  Var V;  // [L,H,W,C]
  int step = 0;
  Frustum frustum;
};

// Linear decode heads, owned by the parameter store.
struct DecodeHeads {
  Var w_sigma;  // [C,1]
  Var w_depth;  // [C,1]
  Var w_appear; // [C,Ca]
};

// Band centers in normalized disparity: (l + 0.5)/L for l = 0..L-1 ascending.
template <typename T>
Tensor<T> depth_anchors(int64_t L) {
  if (L < 1) throw DimError("depth_anchors: L must be >= 1");
  Tensor<T> a({L});
  for (int64_t l = 0; l < L; ++l) a[l] = T((double(l) + 0.5) / double(L));
  return a;
}

namespace detail_ldm {

template <typename T>
Var anchors_field(Tape<T>& tape, int64_t L, int64_t H, int64_t W) {
  Tensor<T> anchors = depth_anchors<T>(L);
  Tensor<T> field({L, H, W});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t p = 0; p < H * W; ++p) field[l * H * W + p] = anchors[l];
  return tape.constant(std::move(field));
}

// [L,H,W,C] x [C,K] -> [L,H,W] (K must be 1) or [L,H,W,K]
template <typename T>
Var decode_linear(Tape<T>& tape, Var volume, Var head) {
  const Tensor<T>& v = tape.value(volume);
  if (v.rank() != 4) throw DimError("decode: feature volume must be [L,H,W,C]");
  int64_t L = v.dim(0), H = v.dim(1), W = v.dim(2), C = v.dim(3);
  int64_t K = tape.value(head).dim(1);
  Var flat = tape.matmul(tape.reshape(volume, {L * H * W, C}), head);
  if (K == 1) return tape.reshape(flat, {L, H, W});
  return tape.reshape(flat, {L, H, W, K});
}

}  // namespace detail_ldm

// Normalized-disparity logits -> metric z-depth, each layer confined to its
// own band: d = [(anchor + (0.5/L)*tanh(x)) * (1/near - 1/far) + 1/far]^-1.
template <typename T>
Var activate_depth_from_logits(Tape<T>& tape, Var logits, const Frustum& fr) {
  fr.validate();
  const Tensor<T>& x = tape.value(logits);
  if (x.rank() != 3) throw DimError("activate_depth: logits must be [L,H,W]");
  int64_t L = x.dim(0), H = x.dim(1), W = x.dim(2);
  Var anchors = detail_ldm::anchors_field(tape, L, H, W);
  Var dn = tape.add(tape.scale(tape.tanh_(logits), 0.5 / double(L)), anchors);
  Var disp = tape.offset(tape.scale(dn, 1.0 / fr.near - 1.0 / fr.far), 1.0 / fr.far);
  return tape.recip(disp);
}

template <typename T>
Var activate_depth(Tape<T>& tape, const FeatureVolume<T>& fv, Var w_depth) {
  return activate_depth_from_logits(tape, detail_ldm::decode_linear(tape, fv.V, w_depth),
                                    fv.frustum);
}

template <typename T>
Var activate_density(Tape<T>& tape, const FeatureVolume<T>& fv, Var w_sigma) {
  return tape.sigmoid(detail_ldm::decode_linear(tape, fv.V, w_sigma));
}

// Back-to-front alpha compositing of per-layer values against a zero
// background: out = sum_l v_l * s_l * prod_{k>l} (1 - s_k).
template <typename T>
Var over_composite(Tape<T>& tape, Var values, Var sigma) {
  const Tensor<T>& v = tape.value(values);
  const Tensor<T>& s = tape.value(sigma);
  if (v.rank() != 4 || s.rank() != 3) throw DimError("over_composite: values [L,H,W,C], sigma [L,H,W]");
  int64_t L = v.dim(0), H = v.dim(1), W = v.dim(2), C = v.dim(3);
  if (s.dim(0) != L || s.dim(1) != H || s.dim(2) != W)
    throw DimError("over_composite: extent mismatch " + shape_str(v.shape()) + " vs " + shape_str(s.shape()));
  int64_t P = H * W;

  Tensor<T> out({H, W, C});
  for (int64_t p = 0; p < P; ++p)
    for (int64_t l = 0; l < L; ++l) {
      T a = s[l * P + p];
      const T* vl = v.data() + (l * P + p) * C;
      T* o = out.data() + p * C;
      for (int64_t c = 0; c < C; ++c) o[c] = vl[c] * a + (T(1) - a) * o[c];
    }

  return tape.node(
      std::move(out), {values, sigma},
      [values, sigma, L, P, C](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& v = t.value(values);
        const Tensor<T>& s = t.value(sigma);
        bool nv = t.needs_grad(values), ns = t.needs_grad(sigma);
        // Per pixel: B[l] = composite of layers < l, S[l] = transmittance of
        // layers > l. dout/dv_l = s_l S_l; dout/ds_l = S_l (v_l - B_l).
        std::vector<T> B(size_t(L) * C), S(L);
        for (int64_t p = 0; p < P; ++p) {
          for (int64_t c = 0; c < C; ++c) B[c] = T(0);
          for (int64_t l = 1; l < L; ++l) {
            T a = s[(l - 1) * P + p];
            const T* vl = v.data() + ((l - 1) * P + p) * C;
            for (int64_t c = 0; c < C; ++c)
              B[l * C + c] = vl[c] * a + (T(1) - a) * B[(l - 1) * C + c];
          }
          S[L - 1] = T(1);
          for (int64_t l = L - 2; l >= 0; --l) S[l] = S[l + 1] * (T(1) - s[(l + 1) * P + p]);
          const T* gp = g.data() + p * C;
          for (int64_t l = 0; l < L; ++l) {
            if (nv) {
              T w = s[l * P + p] * S[l];
              T* gv = t.grad_acc(values).data() + (l * P + p) * C;
              for (int64_t c = 0; c < C; ++c) gv[c] += gp[c] * w;
            }
            if (ns) {
              const T* vl = v.data() + (l * P + p) * C;
              T acc = T(0);
              for (int64_t c = 0; c < C; ++c) acc += gp[c] * (vl[c] - B[l * C + c]);
              t.grad_acc(sigma)[l * P + p] += acc * S[l];
            }
          }
        }
      },
      3 * v.numel());
}

// Per-texel layer colors: back-project every input image onto the layers and
// blend with beta renormalized over the views whose footprint is valid.
// Texels seen by no view come out zero.
template <typename T>
Var blended_layer_colors(Tape<T>& tape, const Ldm<T>& ldm, const std::vector<Var>& images,
                         const std::vector<Camera>& cams, Var points) {
  if (images.size() != cams.size() || int64_t(images.size()) != ldm.views)
    throw DimError("render_target: expected " + std::to_string(ldm.views) + " views, got " +
                   std::to_string(images.size()) + " images / " + std::to_string(cams.size()) +
                   " cameras");
  const Tensor<T>& d = tape.value(ldm.depth);
  int64_t L = d.dim(0), H = d.dim(1), W = d.dim(2);
  int64_t M = ldm.views;
  int64_t C = tape.value(images[0]).dim(2);

  for (const Var& im : images)
    if (tape.value(im).rank() != 3 || tape.value(im).dim(2) != C)
      throw DimError("render_target: input images must share a channel count");

  std::vector<Var> gathered;
  Tensor<T> mask({L, H, W, M});
  for (int64_t m = 0; m < M; ++m) {
    auto g = geo::gather_backproject(tape, images[m], cams[m], points);
    gathered.push_back(g.values);
    for (int64_t p = 0; p < L * H * W; ++p) mask(p / (H * W), (p / W) % H, p % W, m) = g.mask[p];
  }
  // [L,H,W,M*C] with view-major texel layout == [L,H,W,M,C]
  Var colors = tape.reshape(tape.concat_last(gathered), {L, H, W, M, C});

  Var beta_masked = tape.mul(ldm.blend, tape.constant(std::move(mask)));
  Var ones = tape.constant(Tensor<T>::full({M, 1}, T(1)));
  Var wsum = tape.reshape(tape.matmul(tape.reshape(beta_masked, {L * H * W, M}), ones), {L, H, W});
  Var beta = tape.row_scale(beta_masked, tape.recip(tape.offset(wsum, 1e-8)));
  return tape.mix_tokens(beta, colors);
}

// Eq-style final render: blended layer colors over-composited in the LDM's
// own frustum.
template <typename T>
Var render_target(Tape<T>& tape, const Ldm<T>& ldm, const std::vector<Var>& images,
                  const std::vector<Camera>& cams) {
  Var points = geo::world_points(tape, ldm.frustum, ldm.depth);
  Var rgb = blended_layer_colors(tape, ldm, images, cams, points);
  return over_composite(tape, rgb, ldm.density);
}

// Forward-warp per-texel layer attributes into an arbitrary camera: splat
// attrs and density with shared footprints, composite in that view. The
// output carries the composited attrs plus accumulated coverage, [Hc,Wc,K+1].
template <typename T>
Var warp_composite(Tape<T>& tape, Var attrs, Var density, Var points, const Camera& cam) {
  const Tensor<T>& a = tape.value(attrs);
  if (a.rank() != 4) throw DimError("warp_composite: attrs must be [L,H,W,K]");
  const int64_t L = a.dim(0), H = a.dim(1), W = a.dim(2), K = a.dim(3);

  Var payload = tape.concat_last({attrs, tape.reshape(density, {L, H, W, 1})});
  Var sp = geo::splat_project(tape, payload, cam, points);
  Var a_v = tape.slice_last(sp, 0, K);
  Var sigma_v = tape.reshape(tape.slice_last(sp, K, 1), {L, cam.height, cam.width});

  Var ones = tape.constant(Tensor<T>::full({L, cam.height, cam.width, 1}, T(1)));
  return tape.concat_last(
      {over_composite(tape, a_v, sigma_v), over_composite(tape, ones, sigma_v)});
}

// Eq-style intermediate render: decode appearance and density in layer
// space, splat both into the given view with shared footprints, composite
// there. Output channels: appearance (Ca) plus composited opacity.
template <typename T>
Var render_to_input_view(Tape<T>& tape, const FeatureVolume<T>& fv, const DecodeHeads& heads,
                         const Camera& cam) {
  const Tensor<T>& v = tape.value(fv.V);
  int64_t L = v.dim(0), H = v.dim(1), W = v.dim(2);
  int64_t Ca = tape.value(heads.w_appear).dim(1);

  Var a = tape.sigmoid(detail_ldm::decode_linear(tape, fv.V, heads.w_appear));  // [L,H,W,Ca]
  Var sigma = activate_density(tape, fv, heads.w_sigma);
  Var depth = activate_depth(tape, fv, heads.w_depth);
  Var points = geo::world_points(tape, fv.frustum, depth);

  Var payload = tape.concat_last({a, tape.reshape(sigma, {L, H, W, 1})});
  Var sp = geo::splat_project(tape, payload, cam, points);  // [L,Hi,Wi,Ca+1]
  Var a_v = tape.slice_last(sp, 0, Ca);
  Var sigma_v = tape.reshape(tape.slice_last(sp, Ca, 1), {L, cam.height, cam.width});

  Var color = over_composite(tape, a_v, sigma_v);
  Var ones = tape.constant(Tensor<T>::full({L, cam.height, cam.width, 1}, T(1)));
  Var alpha = over_composite(tape, ones, sigma_v);
  return tape.concat_last({color, alpha});
}

// Upsample pre-activation maps to (Ho, Wo), then activate. Deferring the
// nonlinearities past the resize keeps saturated regions saturated instead of
// blurring the activated values.
template <typename T>
Ldm<T> upsample_activate(Tape<T>& tape, const FeatureVolume<T>& fv, const DecodeHeads& heads,
                         Var blend_logits, int64_t Ho, int64_t Wo) {
  const Tensor<T>& v = tape.value(fv.V);
  int64_t L = v.dim(0), H = v.dim(1), W = v.dim(2);
  const Tensor<T>& bl = tape.value(blend_logits);
  if (bl.rank() != 4 || bl.dim(0) != L || bl.dim(1) != H || bl.dim(2) != W)
    throw DimError("upsample_activate: blend logits must be [L,H,W,M]");
  if (Ho < H || Wo < W) throw DimError("upsample_activate: scale must be >= 1");
  int64_t M = bl.dim(3);

  Var pre_d = tape.resize_bilinear(detail_ldm::decode_linear(tape, fv.V, heads.w_depth), Ho, Wo);
  Var pre_s = tape.resize_bilinear(detail_ldm::decode_linear(tape, fv.V, heads.w_sigma), Ho, Wo);
  Var logits_up = tape.chw_to_hwc(tape.resize_bilinear(tape.hwc_to_chw(blend_logits), Ho, Wo));

  Ldm<T> out;
  out.depth = activate_depth_from_logits(tape, pre_d, fv.frustum);
  out.density = tape.sigmoid(pre_s);
  out.blend = tape.softmax(logits_up, -1);
  out.frustum = fv.frustum;
  out.views = M;
  return out;
}

template <typename T>
Ldm<T> upsample_activate(Tape<T>& tape, const FeatureVolume<T>& fv, const DecodeHeads& heads,
                         Var blend_logits, double s) {
  if (s < 1.0) throw DimError("upsample_activate: scale must be >= 1");
  const Tensor<T>& v = tape.value(fv.V);
  return upsample_activate(tape, fv, heads, blend_logits, std::llround(double(v.dim(1)) * s),
                           std::llround(double(v.dim(2)) * s));
}

}  // namespace lvs
