#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lvs/attention.hpp"
#include "lvs/camera.hpp"
#include "lvs/geometry.hpp"
#include "lvs/ldm.hpp"
#include "lvs/rng.hpp"
#include "lvs/tape.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

// -----------------------------------------------------------------------------
// Model configuration
// -----------------------------------------------------------------------------

enum class BlockKind { backproject, update, collapse, attend, conv };

struct BlockToken {
  BlockKind kind = BlockKind::conv;
  int64_t heads = 0;  // attend tokens only
};

// Parses a comma-separated block list such as "Lc,U,A2,C,C". Tokens:
//   Bp    back-project image features only (first step, no rendered feedback)
//   U     render the current volume to every view, compute update features
//   Lc    halve the layer count (allowed only before Bp/U)
//   A<h>  one-to-many attention with h heads
//   C     residual conv MLP, attached to the preceding attention block
std::vector<BlockToken> parse_blocks(const std::string& spec);

struct StepConfig {
  int64_t in_layers = 0;          // layer count entering the step
  int64_t layers = 0;             // layer count leaving the step
  int64_t height = 0, width = 0;  // volume resolution leaving the step
  int64_t pyramid_level = 0;      // image feature level consumed by Bp/U
  std::string blocks;
};

struct ModelConfig {
  std::vector<StepConfig> steps;
  int64_t channels = 0;        // feature width, constant across the solve
  int64_t views = 0;           // input image count
  int64_t pyramid_levels = 0;  // encoder levels
  double upsample = 1.0;       // final resolution scale
  double near = 0, far = 0;    // default frustum depth range
  bool ablate_render = false;     // feed zeros instead of the rendered volume
  bool ablate_attention = false;  // uniform attention weights everywhere
  bool ablate_rays = false;       // zero the ray encodings
  bool direct_rgb = false;        // decode output color instead of blending views

  void validate() const;
};

// One step resolved against a concrete input image size.
struct StepPlan {
  int64_t in_layers = 0, layers = 0;
  int64_t in_height = 0, in_width = 0;
  int64_t height = 0, width = 0;
  bool doubled = false;  // step doubles the volume resolution
  int64_t level = 0;
  int64_t feat_h = 0, feat_w = 0;      // image feature dims at `level`
  int64_t render_h = 0, render_w = 0;  // view-space dims the volume renders at
  std::vector<BlockToken> tokens;
  int64_t collapse_count = 0;
};

struct ForwardPlan {
  std::vector<std::pair<int64_t, int64_t>> pyramid;  // (h, w) per level
  std::vector<StepPlan> steps;
  int64_t out_height = 0, out_width = 0;
};

// Validates the config against an input image size and resolves every shape
// the forward pass will produce. Throws DimError before any tensor work.
ForwardPlan plan_forward(const ModelConfig& cfg, int64_t image_h, int64_t image_w);

// Desk-scale default: 8 channels, 4 views, 64x64 images and output.
ModelConfig nano_config();

// Production-scale schedule (1080p output); used for shape planning and cost
// accounting, far too large to evaluate in tests.
ModelConfig full_scale_config();

// -----------------------------------------------------------------------------
// Parameters
// -----------------------------------------------------------------------------

struct ConvPairParams {  // x + conv3x3(gelu(conv3x3(x)))
  Var w1, b1, w2, b2;
};

struct EncoderLevelParams {
  ConvPairParams res1, res2;
  Var ray_proj;  // [ray_encoding_width, C]
};

struct EncoderParams {
  Var stem_w, stem_b;  // 3 -> C
  std::vector<EncoderLevelParams> levels;
};

struct UpdateCnnParams {
  Var stem_w, stem_b;  // concatenated inputs -> C
  ConvPairParams res1, res2;
};

struct CollapseParams {  // per-texel MLP on paired layers, 2C -> 2C -> C
  Var w1, b1, w2, b2;
};

struct StepParams {
  std::vector<CollapseParams> collapse;
  UpdateCnnParams cnn;
  std::vector<FusionParams> fusions;  // one per A token, trailing Cs attached
};

struct NetParams {
  Var init_feature;  // [C], broadcast into the first volume
  EncoderParams encoder;
  DecodeHeads heads;  // shared by every render step and the final activation
  Var blend_w;        // [C,C] blend-logit query projection
  Var blend_gain;     // [C]
  std::vector<StepParams> steps;
  std::vector<Var> leaves;  // every learnable tensor, creation order
};

// -----------------------------------------------------------------------------
// Input encoding
// -----------------------------------------------------------------------------

struct ViewPyramid {
  std::vector<Var> features;  // per level, [H_k, W_k, C]
  std::vector<Var> rays;      // per level, [H_k, W_k, C]
};

struct PyramidSet {
  std::vector<ViewPyramid> views;
  std::vector<Camera> cams;  // the original input cameras
};

namespace detail_net {

template <typename T>
Var conv_residual(Tape<T>& tape, Var x, const ConvPairParams& p) {
  return tape.add(x, tape.conv3x3(tape.gelu(tape.conv3x3(x, p.w1, p.b1)), p.w2, p.b2));
}

template <typename T>
Var run_update_cnn(Tape<T>& tape, Var x_chw, const UpdateCnnParams& p) {
  Var h = tape.conv3x3(x_chw, p.stem_w, p.stem_b);
  h = conv_residual(tape, h, p.res1);
  return conv_residual(tape, h, p.res2);
}

// Parameters are created by drawing fresh values, by replaying a stored
// tensor list in the exact same order (optimizer state lives in plain tensors
// and rebinds onto a fresh tape every iteration), or by adopting vars already
// on the tape.
template <typename T>
struct ParamSource {
  Rng* rng = nullptr;
  const std::vector<Tensor<T>>* store = nullptr;
  const std::vector<Var>* vars = nullptr;
  size_t next = 0;

  Var take(Tape<T>& tape, const Shape& shape, bool random, double scale, double fill) {
    if (vars) {
      if (next >= vars->size()) throw DimError("bind_params: var list has too few entries");
      Var v = (*vars)[next++];
      require_shape(tape.value(v), shape, "bind_params tensor");
      return v;
    }
    if (store) {
      if (next >= store->size()) throw DimError("bind_params: store has too few tensors");
      Tensor<T> t = (*store)[next++];
      require_shape(t, shape, "bind_params tensor");
      return tape.leaf(std::move(t));
    }
    Tensor<T> t(shape);
    if (random)
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng->normal() * scale);
    else if (fill != 0.0)
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(fill);
    return tape.leaf(std::move(t));
  }

  bool drained() const { return next == (vars ? vars->size() : store ? store->size() : next); }
};

template <typename T>
Var param(Tape<T>& tape, std::vector<Var>& leaves, ParamSource<T>& src, const Shape& shape,
          double scale) {
  Var v = src.take(tape, shape, true, scale, 0.0);
  leaves.push_back(v);
  return v;
}

template <typename T>
Var zeros_param(Tape<T>& tape, std::vector<Var>& leaves, ParamSource<T>& src, const Shape& shape) {
  Var v = src.take(tape, shape, false, 0.0, 0.0);
  leaves.push_back(v);
  return v;
}

template <typename T>
Var ones_param(Tape<T>& tape, std::vector<Var>& leaves, ParamSource<T>& src, const Shape& shape) {
  Var v = src.take(tape, shape, false, 0.0, 1.0);
  leaves.push_back(v);
  return v;
}

// Residual conv pair; the closing conv starts small so blocks begin near
// identity.
template <typename T>
ConvPairParams conv_pair(Tape<T>& tape, std::vector<Var>& leaves, ParamSource<T>& src, int64_t c) {
  double s = 1.0 / std::sqrt(9.0 * double(c));
  ConvPairParams p;
  p.w1 = param(tape, leaves, src, {c, c, 3, 3}, s);
  p.b1 = zeros_param(tape, leaves, src, {c});
  p.w2 = param(tape, leaves, src, {c, c, 3, 3}, 0.1 * s);
  p.b2 = zeros_param(tape, leaves, src, {c});
  return p;
}

template <typename T>
ConvMlpParams conv_mlp(Tape<T>& tape, std::vector<Var>& leaves, ParamSource<T>& src, int64_t c) {
  double s = 1.0 / std::sqrt(9.0 * double(c));
  ConvMlpParams p;
  p.norm_gain = ones_param(tape, leaves, src, {c});
  p.w1 = param(tape, leaves, src, {c, c, 3, 3}, s);
  p.b1 = zeros_param(tape, leaves, src, {c});
  p.w2 = param(tape, leaves, src, {c, c, 3, 3}, 0.1 * s);
  p.b2 = zeros_param(tape, leaves, src, {c});
  return p;
}

template <typename T>
NetParams build_params(Tape<T>& tape, const ModelConfig& cfg, ParamSource<T>& src) {
  const int64_t C = cfg.channels;
  const int64_t Ca = cfg.direct_rgb ? 3 : C;
  NetParams p;
  auto& lv = p.leaves;

  p.init_feature = param(tape, lv, src, {C}, 1.0);

  p.encoder.stem_w = param(tape, lv, src, {C, 3, 3, 3}, 1.0 / std::sqrt(27.0));
  p.encoder.stem_b = zeros_param(tape, lv, src, {C});
  const int64_t F = geo::ray_encoding_width(geo::kRayOctaves);
  for (int64_t k = 0; k < cfg.pyramid_levels; ++k) {
    EncoderLevelParams el;
    el.res1 = conv_pair(tape, lv, src, C);
    el.res2 = conv_pair(tape, lv, src, C);
    el.ray_proj = param(tape, lv, src, {F, C}, 1.0 / std::sqrt(double(F)));
    p.encoder.levels.push_back(el);
  }

  const double sc = 1.0 / std::sqrt(double(C));
  p.heads.w_sigma = param(tape, lv, src, {C, 1}, sc);
  p.heads.w_depth = param(tape, lv, src, {C, 1}, sc);
  p.heads.w_appear = param(tape, lv, src, {C, Ca}, sc);
  p.blend_w = param(tape, lv, src, {C, C}, sc);
  p.blend_gain = ones_param(tape, lv, src, {C});

  for (size_t s = 0; s < cfg.steps.size(); ++s) {
    std::vector<BlockToken> tokens = parse_blocks(cfg.steps[s].blocks);
    StepParams sp;
    for (const BlockToken& tok : tokens) {
      switch (tok.kind) {
        case BlockKind::collapse: {
          CollapseParams cp;
          double s1 = 1.0 / std::sqrt(2.0 * double(C));
          cp.w1 = param(tape, lv, src, {2 * C, 2 * C}, s1);
          cp.b1 = zeros_param(tape, lv, src, {2 * C});
          cp.w2 = param(tape, lv, src, {2 * C, C}, 0.1 * s1);
          cp.b2 = zeros_param(tape, lv, src, {C});
          sp.collapse.push_back(cp);
          break;
        }
        case BlockKind::backproject:
        case BlockKind::update: {
          // Bp consumes [features, rays]; U prepends the rendered volume,
          // which carries the appearance channels plus accumulated opacity.
          int64_t cat = tok.kind == BlockKind::update ? 2 * C + Ca + 1 : 2 * C;
          double s1 = 1.0 / std::sqrt(9.0 * double(cat));
          sp.cnn.stem_w = param(tape, lv, src, {C, cat, 3, 3}, s1);
          sp.cnn.stem_b = zeros_param(tape, lv, src, {C});
          sp.cnn.res1 = conv_pair(tape, lv, src, C);
          sp.cnn.res2 = conv_pair(tape, lv, src, C);
          break;
        }
        case BlockKind::attend: {
          FusionParams f;
          for (int64_t h = 0; h < tok.heads; ++h)
            f.attend.attn.w_q.push_back(param(tape, lv, src, {C, C}, sc));
          f.attend.attn.w_o = param(tape, lv, src, {tok.heads * C, C},
                                    0.1 / std::sqrt(double(tok.heads) * double(C)));
          f.attend.norm_gain = ones_param(tape, lv, src, {C});
          f.attend.zero_scores = cfg.ablate_attention;
          sp.fusions.push_back(std::move(f));
          break;
        }
        case BlockKind::conv:
          sp.fusions.back().mlps.push_back(conv_mlp(tape, lv, src, C));
          break;
      }
    }
    p.steps.push_back(std::move(sp));
  }
  return p;
}

}  // namespace detail_net

template <typename T>
NetParams init_params(Tape<T>& tape, const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed_for(seed, "model-init"));
  detail_net::ParamSource<T> src;
  src.rng = &rng;
  return detail_net::build_params(tape, cfg, src);
}

// Rebinds a stored tensor list as fresh leaves, in init_params order.
template <typename T>
NetParams bind_params(Tape<T>& tape, const ModelConfig& cfg, const std::vector<Tensor<T>>& store) {
  cfg.validate();
  detail_net::ParamSource<T> src;
  src.store = &store;
  NetParams p = detail_net::build_params(tape, cfg, src);
  if (!src.drained()) throw DimError("bind_params: store has extra tensors");
  return p;
}

// Adopts vars already on the tape as the parameter set, in init_params order.
template <typename T>
NetParams bind_param_vars(Tape<T>& tape, const ModelConfig& cfg, const std::vector<Var>& vars) {
  cfg.validate();
  detail_net::ParamSource<T> src;
  src.vars = &vars;
  NetParams p = detail_net::build_params(tape, cfg, src);
  if (!src.drained()) throw DimError("bind_params: var list has extra entries");
  return p;
}

// Initial parameter values as plain tensors, for optimizers that rebuild the
// graph every iteration.
template <typename T>
std::vector<Tensor<T>> init_param_store(const ModelConfig& cfg, uint64_t seed) {
  Tape<T> scratch;
  NetParams p = init_params(scratch, cfg, seed);
  std::vector<Tensor<T>> store;
  store.reserve(p.leaves.size());
  for (Var v : p.leaves) store.push_back(scratch.value(v));
  return store;
}

// Shared-weight per-view encoder: conv stem to C channels, then per level two
// residual blocks and a stride-2 mean pool. The ray encoding basis is built
// once per view at the coarsest level and resized up with a per-level
// projection.
template <typename T>
PyramidSet encode_inputs(Tape<T>& tape, const std::vector<Var>& images,
                         const std::vector<Camera>& cams, const Frustum& target,
                         const ModelConfig& cfg, const EncoderParams& p) {
  if (images.empty() || images.size() != cams.size())
    throw DimError("encode_inputs: need one camera per image");
  if (int64_t(p.levels.size()) != cfg.pyramid_levels)
    throw DimError("encode_inputs: encoder level parameters do not match the config");
  const Tensor<T>& first = tape.value(images[0]);
  if (first.rank() != 3 || first.dim(2) != 3)
    throw DimError("encode_inputs: images must be [H,W,3]");
  const int64_t Hi = first.dim(0), Wi = first.dim(1);
  for (const Var& im : images)
    require_shape(tape.value(im), {Hi, Wi, 3}, "encode_inputs image");

  const int64_t K = cfg.pyramid_levels;
  const int64_t hK = Hi >> K, wK = Wi >> K;

  PyramidSet out;
  out.cams = cams;
  for (size_t m = 0; m < images.size(); ++m) {
    ViewPyramid vp;
    Var x = tape.conv3x3(tape.hwc_to_chw(images[m]), p.stem_w, p.stem_b);
    for (int64_t k = 0; k < K; ++k) {
      x = detail_net::conv_residual(tape, x, p.levels[size_t(k)].res1);
      x = detail_net::conv_residual(tape, x, p.levels[size_t(k)].res2);
      x = tape.mean_pool2(x);
      vp.features.push_back(tape.chw_to_hwc(x));
    }
    if (cfg.ablate_rays) {
      for (int64_t k = 0; k < K; ++k) {
        const Tensor<T>& fk = tape.value(vp.features[size_t(k)]);
        vp.rays.push_back(tape.constant(Tensor<T>({fk.dim(0), fk.dim(1), cfg.channels})));
      }
    } else {
      Var base = tape.constant(geo::ray_encoding_base<T>(cams[m], target, hK, wK));
      const int64_t F = tape.value(base).dim(2);
      Var base_chw = tape.hwc_to_chw(base);
      for (int64_t k = 0; k < K; ++k) {
        const Tensor<T>& fk = tape.value(vp.features[size_t(k)]);
        int64_t Hk = fk.dim(0), Wk = fk.dim(1);
        Var rb = tape.chw_to_hwc(tape.resize_bilinear(base_chw, Hk, Wk));
        Var proj = tape.matmul(tape.reshape(rb, {Hk * Wk, F}), p.levels[size_t(k)].ray_proj);
        vp.rays.push_back(tape.reshape(proj, {Hk, Wk, cfg.channels}));
      }
    }
    out.views.push_back(std::move(vp));
  }
  return out;
}

// Gathers each image through the same world points and stacks the views on
// the second-to-last axis: [L,H,W,M,C]. Texels outside a view gather zeros.
template <typename T>
Var backproject_stack(Tape<T>& tape, const std::vector<Var>& images,
                      const std::vector<Camera>& cams, Var points) {
  if (images.empty() || images.size() != cams.size())
    throw DimError("backproject_stack: need one camera per image");
  const Tensor<T>& pts = tape.value(points);
  std::vector<Var> parts;
  int64_t C = 0;
  for (size_t m = 0; m < images.size(); ++m) {
    geo::Gather<T> g = geo::gather_backproject(tape, images[m], cams[m], points);
    C = tape.value(g.values).dim(3);
    parts.push_back(g.values);
  }
  return tape.reshape(tape.concat_last(parts),
                      {pts.dim(0), pts.dim(1), pts.dim(2), int64_t(images.size()), C});
}

// Pairwise layer reduction: the straight-through path is the mean of adjacent
// layers, the residual path a per-texel MLP on their concatenation.
template <typename T>
Var layer_collapse(Tape<T>& tape, Var v, const CollapseParams& p) {
  const Tensor<T>& vv = tape.value(v);
  if (vv.rank() != 4) throw DimError("layer_collapse: volume must be [L,H,W,C]");
  const int64_t L = vv.dim(0), H = vv.dim(1), W = vv.dim(2), C = vv.dim(3);
  if (L % 2) throw DimError("layer_collapse: layer count must be even, got " + std::to_string(L));
  const int64_t P = H * W * C;
  Var paired = tape.reshape(v, {L / 2, 2 * P});
  Var a = tape.reshape(tape.slice_last(paired, 0, P), {L / 2, H, W, C});
  Var b = tape.reshape(tape.slice_last(paired, P, P), {L / 2, H, W, C});
  Var mean = tape.scale(tape.add(a, b), 0.5);
  Var cat = tape.reshape(tape.concat_last({a, b}), {L / 2 * H * W, 2 * C});
  Var h = tape.gelu(tape.add_bias(tape.matmul(cat, p.w1), p.b1));
  Var r = tape.add_bias(tape.matmul(h, p.w2), p.b2);
  return tape.add(mean, tape.reshape(r, {L / 2, H, W, C}));
}

// First solve step: broadcast the learned seed feature, back-project image
// features and ray encodings through flat band-center depths, then fuse.
template <typename T>
FeatureVolume<T> initialize(Tape<T>& tape, const PyramidSet& pyr, const Frustum& target,
                            const ModelConfig& cfg, const NetParams& p, const ForwardPlan& plan,
                            Var* deltas_out = nullptr) {
  const StepPlan& sp = plan.steps.at(0);
  const int64_t L = sp.layers, H = sp.height, W = sp.width, C = cfg.channels;

  Var ones = tape.constant(Tensor<T>::full({L * H * W, 1}, T(1)));
  Var v = tape.reshape(tape.matmul(ones, tape.reshape(p.init_feature, {1, C})), {L, H, W, C});

  Tensor<T> anchors = depth_anchors<T>(L);
  Tensor<T> depth({L, H, W});
  const double inv_span = 1.0 / target.near - 1.0 / target.far;
  for (int64_t l = 0; l < L; ++l) {
    T d = T(1.0 / (double(anchors[l]) * inv_span + 1.0 / target.far));
    for (int64_t i = 0; i < H * W; ++i) depth[l * H * W + i] = d;
  }
  Var pts = geo::world_points(tape, target, tape.constant(std::move(depth)));

  std::vector<Var> updates;
  std::vector<Camera> ucams;
  for (int64_t m = 0; m < cfg.views; ++m) {
    const ViewPyramid& vp = pyr.views.at(size_t(m));
    Var cat = tape.concat_last({vp.features.at(size_t(sp.level)), vp.rays.at(size_t(sp.level))});
    updates.push_back(
        tape.chw_to_hwc(detail_net::run_update_cnn(tape, tape.hwc_to_chw(cat), p.steps[0].cnn)));
    ucams.push_back(pyr.cams[size_t(m)].scaled(sp.feat_w, sp.feat_h));
  }
  Var deltas = backproject_stack(tape, updates, ucams, pts);
  if (deltas_out) *deltas_out = deltas;

  FeatureVolume<T> fv{v, 0, target};
  for (const FusionParams& f : p.steps[0].fusions) fv = fusion_block(tape, fv, deltas, f);
  return fv;
}

// Render-and-refine update features for one step. The volume renders into
// every view at the step's render resolution (one pyramid level coarser when
// the step doubles), the result is combined with that view's image features
// and ray encodings, run through the update CNN, and back-projected through
// the current depths to the step's output resolution.
template <typename T>
Var update_block(Tape<T>& tape, const FeatureVolume<T>& fv, const PyramidSet& pyr,
                 const StepPlan& sp, const UpdateCnnParams& cnn, const DecodeHeads& heads,
                 const ModelConfig& cfg) {
  const Tensor<T>& vv = tape.value(fv.V);
  if (vv.rank() != 4 || vv.dim(0) != sp.layers || vv.dim(1) != sp.in_height ||
      vv.dim(2) != sp.in_width)
    throw DimError("update_block: volume shape " + shape_str(vv.shape()) +
                   " does not match the step plan");
  const int64_t Ca = tape.value(heads.w_appear).dim(1);

  std::vector<Var> updates;
  std::vector<Camera> ucams;
  for (int64_t m = 0; m < cfg.views; ++m) {
    const ViewPyramid& vp = pyr.views.at(size_t(m));
    Var feedback;
    if (cfg.ablate_render) {
      feedback = tape.constant(Tensor<T>({sp.feat_h, sp.feat_w, Ca + 1}));
    } else {
      Camera rcam = pyr.cams[size_t(m)].scaled(sp.render_w, sp.render_h);
      feedback = render_to_input_view(tape, fv, heads, rcam);
      if (sp.doubled)
        feedback =
            tape.chw_to_hwc(tape.resize_bilinear(tape.hwc_to_chw(feedback), sp.feat_h, sp.feat_w));
    }
    Var cat = tape.concat_last(
        {feedback, vp.features.at(size_t(sp.level)), vp.rays.at(size_t(sp.level))});
    updates.push_back(tape.chw_to_hwc(detail_net::run_update_cnn(tape, tape.hwc_to_chw(cat), cnn)));
    ucams.push_back(pyr.cams[size_t(m)].scaled(sp.feat_w, sp.feat_h));
  }

  Var d = activate_depth(tape, fv, heads.w_depth);
  if (sp.doubled) d = tape.resize_bilinear(d, sp.height, sp.width);
  Var pts = geo::world_points(tape, fv.frustum, d);
  return backproject_stack(tape, updates, ucams, pts);
}

// Per-view blend logits: single-head attention scores between the normalized
// volume and the update features, softmax deferred to the final activation.
template <typename T>
Var decode_blend_logits(Tape<T>& tape, const FeatureVolume<T>& fv, Var deltas, Var w_blend,
                        Var gain, bool uniform = false) {
  const Tensor<T>& dv = tape.value(deltas);
  if (dv.rank() != 5) throw DimError("decode_blend_logits: deltas must be [L,H,W,M,C]");
  const int64_t L = dv.dim(0), H = dv.dim(1), W = dv.dim(2), M = dv.dim(3), C = dv.dim(4);
  if (uniform) return tape.constant(Tensor<T>({L, H, W, M}));
  Var q = tape.rms_norm(fv.V, gain);
  q = tape.reshape(tape.matmul(tape.reshape(q, {L * H * W, C}), w_blend), {L, H, W, C});
  return tape.scale(tape.dot_tokens(q, deltas), 1.0 / std::sqrt(double(C)));
}

template <typename T>
struct ForwardResult {
  Ldm<T> ldm;
  Var blend_logits;  // pre-softmax, volume resolution
  FeatureVolume<T> volume;
  Var deltas;  // update features from the final step
  Var rgb;     // composited decoded color, set only under direct_rgb
};

// Full coarse-to-fine solve: encode, initialize, run every update step, then
// upsample and activate the final volume into an LDM.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const std::vector<Var>& images,
                         const std::vector<Camera>& cams, const Frustum& target,
                         const ModelConfig& cfg, const NetParams& p) {
  if (int64_t(images.size()) != cfg.views || int64_t(cams.size()) != cfg.views)
    throw DimError("forward: expected " + std::to_string(cfg.views) + " views");
  target.validate();
  if (p.steps.size() != cfg.steps.size())
    throw DimError("forward: parameters were built for a different step list");
  const Tensor<T>& img0 = tape.value(images.at(0));
  if (img0.rank() != 3) throw DimError("forward: images must be [H,W,3]");
  ForwardPlan plan = plan_forward(cfg, img0.dim(0), img0.dim(1));

  PyramidSet pyr = encode_inputs(tape, images, cams, target, cfg, p.encoder);
  Var deltas{};
  FeatureVolume<T> fv = initialize(tape, pyr, target, cfg, p, plan, &deltas);

  for (size_t s = 1; s < plan.steps.size(); ++s) {
    const StepPlan& sp = plan.steps[s];
    const StepParams& ps = p.steps[s];
    for (const CollapseParams& c : ps.collapse) fv.V = layer_collapse(tape, fv.V, c);
    deltas = update_block(tape, fv, pyr, sp, ps.cnn, p.heads, cfg);
    if (sp.doubled)
      fv.V = tape.chw_to_hwc(tape.resize_bilinear(tape.hwc_to_chw(fv.V), sp.height, sp.width));
    fv.step = int(s);
    for (const FusionParams& f : ps.fusions) fv = fusion_block(tape, fv, deltas, f);
  }

  ForwardResult<T> out;
  out.deltas = deltas;
  out.blend_logits =
      decode_blend_logits(tape, fv, deltas, p.blend_w, p.blend_gain, cfg.ablate_attention);
  out.volume = fv;
  out.ldm = upsample_activate(tape, fv, p.heads, out.blend_logits, plan.out_height, plan.out_width);
  if (cfg.direct_rgb) {
    Var pre_a = detail_ldm::decode_linear(tape, fv.V, p.heads.w_appear);
    pre_a = tape.chw_to_hwc(
        tape.resize_bilinear(tape.hwc_to_chw(pre_a), plan.out_height, plan.out_width));
    out.rgb = over_composite(tape, tape.sigmoid(pre_a), out.ldm.density);
  }
  return out;
}

}  // namespace lvs
