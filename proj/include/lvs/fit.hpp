#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lvs/ldm.hpp"
#include "lvs/network.hpp"
#include "lvs/rng.hpp"
#include "lvs/tape.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

struct FitConfig {
  int64_t steps = 400;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l1_weight = 10.0;
  double depth_lr_scale = 0.1;  // raw-map fits only; depth logits are stiff
  uint64_t seed = 0;

  void validate() const;
};

struct FitReport {
  std::vector<double> loss_curve;  // one entry per optimization step
  std::vector<double> view_psnr;   // final PSNR per evaluation view, dB
  double wall_seconds = 0.0;
};

// Rows kind,index,value: the loss curve, per-view PSNRs, wall time.
std::string to_csv(const FitReport& report);

// 10*log10(1/MSE) against a unit peak; equal inputs give +infinity.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimError("psnr: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.numel() == 0) throw DimError("psnr: empty images");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

// PSNR restricted to pixels a warp actually reaches (coverage > 0.5). Pixels
// outside every layer footprint carry no signal and no gradient, so they are
// excluded from the metric.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& coverage) {
  if (a.shape() != b.shape())
    throw DimError("psnr: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 3 || coverage.numel() != a.dim(0) * a.dim(1))
    throw DimError("psnr: coverage must hold one value per pixel");
  const int64_t C = a.dim(2);
  double mse = 0;
  int64_t n = 0;
  for (int64_t p = 0; p < coverage.numel(); ++p) {
    if (!(double(coverage[p]) > 0.5)) continue;
    for (int64_t c = 0; c < C; ++c) {
      double d = double(a[p * C + c]) - double(b[p * C + c]);
      mse += d * d;
    }
    ++n;
  }
  if (n == 0) throw DimError("psnr: no covered pixels");
  mse /= double(n * C);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

// Plain Adam. Parameters and gradients live in flat tensors so the graph can
// be rebuilt on a fresh tape every iteration; moment state is kept in double
// regardless of the parameter precision.
template <typename T>
struct Adam {
  double lr, beta1, beta2, eps;
  std::vector<Tensor<double>> m, v;
  int64_t t = 0;

  explicit Adam(const FitConfig& cfg)
      : lr(cfg.lr), beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.eps) {}

  // Empty gradients mean no flow and count as zero. lr_scale, when given,
  // multiplies the step size per parameter.
  void step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
            const std::vector<double>& lr_scale = {}) {
    if (m.empty())
      for (const auto& p : params) {
        m.emplace_back(p.shape());
        v.emplace_back(p.shape());
      }
    if (params.size() != grads.size() || params.size() != m.size() ||
        (!lr_scale.empty() && lr_scale.size() != params.size()))
      throw DimError("Adam::step: parameter/gradient count mismatch");
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i];
      const Tensor<T>& g = grads[i];
      if (g.numel() && g.shape() != p.shape())
        throw DimError("Adam::step: gradient shape mismatch at parameter " + std::to_string(i));
      const double s = lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
      for (int64_t j = 0; j < p.numel(); ++j) {
        const double gj = g.numel() ? double(g[j]) : 0.0;
        const double mj = beta1 * m[i][j] + (1.0 - beta1) * gj;
        const double vj = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
        m[i][j] = mj;
        v[i][j] = vj;
        p[j] = T(double(p[j]) - s * (mj / c1) / (std::sqrt(vj / c2) + eps));
      }
    }
  }
};

// Directly optimized layered map: pre-activation tensors plus the frustum
// they decode in.
template <typename T>
struct RawLdm {
  Tensor<T> depth_logits;    // [L,H,W]
  Tensor<T> density_logits;  // [L,H,W]
  Tensor<T> blend_logits;    // [L,H,W,M]
  Frustum frustum;
};

template <typename T>
Ldm<T> activate_raw(Tape<T>& tape, Var depth_logits, Var density_logits, Var blend_logits,
                    const Frustum& fr) {
  Ldm<T> out;
  out.depth = activate_depth_from_logits(tape, depth_logits, fr);
  out.density = tape.sigmoid(density_logits);
  out.blend = tape.softmax(blend_logits, -1);
  out.frustum = fr;
  out.views = tape.value(blend_logits).dim(-1);
  return out;
}

template <typename T>
Ldm<T> activate_raw(Tape<T>& tape, const RawLdm<T>& raw) {
  return activate_raw(tape, tape.constant(raw.depth_logits), tape.constant(raw.density_logits),
                      tape.constant(raw.blend_logits), raw.frustum);
}

// Near-flat start: small seeded noise on depth/density, exactly uniform blend
// so view order stays a pure relabeling.
template <typename T>
RawLdm<T> init_raw_ldm(int64_t layers, int64_t views, const Frustum& fr, uint64_t seed) {
  if (layers < 1 || views < 1) throw DimError("init_raw_ldm: need layers >= 1 and views >= 1");
  const int64_t H = fr.camera.height, W = fr.camera.width;
  RawLdm<T> raw;
  raw.depth_logits = Tensor<T>({layers, H, W});
  raw.density_logits = Tensor<T>({layers, H, W});
  raw.blend_logits = Tensor<T>({layers, H, W, views});
  raw.frustum = fr;
  Rng rng(seed_for(seed, "raw-ldm"));
  for (int64_t i = 0; i < raw.depth_logits.numel(); ++i)
    raw.depth_logits[i] = T(0.01 * rng.normal());
  for (int64_t i = 0; i < raw.density_logits.numel(); ++i)
    raw.density_logits[i] = T(0.01 * rng.normal());
  return raw;
}

// Fits the raw maps by Adam on a weighted L1 objective: the blended layer
// colors are forward-warped into every input view and compared against that
// view's image over the covered pixels. Coverage enters as a constant mask
// per step, so the optimizer cannot shrink its own footprint to dodge loss.
// Returns the fitted maps and the loss curve.
template <typename T>
std::pair<RawLdm<T>, FitReport> fit_raw_ldm(const std::vector<Tensor<T>>& images,
                                            const std::vector<Camera>& cams, const Frustum& target,
                                            int64_t layers, const FitConfig& cfg) {
  cfg.validate();
  target.validate();
  if (images.size() < 2 || images.size() != cams.size())
    throw DimError("fit_raw_ldm: need at least two views with matching cameras");
  const int64_t M = int64_t(images.size());
  const int64_t C = images[0].rank() == 3 ? images[0].dim(2) : 0;
  for (size_t m = 0; m < images.size(); ++m)
    require_shape(images[m], {cams[m].height, cams[m].width, C}, "fit_raw_ldm image");

  RawLdm<T> raw = init_raw_ldm<T>(layers, M, target, cfg.seed);
  std::vector<Tensor<T>> params = {raw.depth_logits, raw.density_logits, raw.blend_logits};
  const std::vector<double> scales = {cfg.depth_lr_scale, 1.0, 1.0};
  Adam<T> adam(cfg);
  FitReport report;
  const auto t0 = std::chrono::steady_clock::now();

  auto build = [&](Tape<T>& tape, std::vector<Var>& leaves, std::vector<Var>& renders,
                   std::vector<Tensor<T>>* coverages) {
    leaves = {tape.leaf(params[0]), tape.leaf(params[1]), tape.leaf(params[2])};
    Ldm<T> ldm = activate_raw<T>(tape, leaves[0], leaves[1], leaves[2], target);
    std::vector<Var> imvars;
    for (const auto& im : images) imvars.push_back(tape.constant(im));
    Var points = geo::world_points(tape, target, ldm.depth);
    Var colors = blended_layer_colors(tape, ldm, imvars, cams, points);
    Var loss{};
    for (int64_t m = 0; m < M; ++m) {
      Var warped = warp_composite(tape, colors, ldm.density, points, cams[size_t(m)]);
      Var render = tape.slice_last(warped, 0, C);
      renders.push_back(render);
      const Tensor<T>& cov = tape.value(tape.slice_last(warped, C, 1));
      if (coverages) coverages->push_back(cov);
      Tensor<T> mask(tape.value(render).shape());
      int64_t covered = 0;
      for (int64_t p = 0; p < cov.numel(); ++p) {
        if (!(double(cov[p]) > 0.5)) continue;
        ++covered;
        for (int64_t c = 0; c < C; ++c) mask[p * C + c] = T(1);
      }
      Var diff = tape.mul(tape.abs_(tape.sub(render, imvars[size_t(m)])), tape.constant(std::move(mask)));
      Var l1 = tape.scale(tape.sum_all(diff), 1.0 / double(std::max<int64_t>(covered, 1) * C));
      loss = m == 0 ? l1 : tape.add(loss, l1);
    }
    return tape.scale(loss, cfg.l1_weight / double(M));
  };

  for (int64_t k = 0; k < cfg.steps; ++k) {
    Tape<T> tape;
    std::vector<Var> leaves, renders;
    Var loss = build(tape, leaves, renders, nullptr);
    const double lv = double(tape.value(loss)[0]);
    if (!std::isfinite(lv))
      throw NumericError("fit_raw_ldm: loss diverged at step " + std::to_string(k));
    report.loss_curve.push_back(lv);
    tape.backward(loss);
    std::vector<Tensor<T>> grads;
    for (Var v : leaves) grads.push_back(tape.grad(v));
    adam.step(params, grads, scales);
  }

  {
    Tape<T> tape;
    std::vector<Var> leaves, renders;
    std::vector<Tensor<T>> coverages;
    (void)build(tape, leaves, renders, &coverages);
    for (int64_t m = 0; m < M; ++m)
      report.view_psnr.push_back(
          psnr(tape.value(renders[size_t(m)]), images[size_t(m)], coverages[size_t(m)]));
  }

  raw.depth_logits = std::move(params[0]);
  raw.density_logits = std::move(params[1]);
  raw.blend_logits = std::move(params[2]);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(raw), std::move(report)};
}

// One desk-scale training example: input views plus one held-out target.
template <typename T>
struct TrainScene {
  std::vector<Tensor<T>> images;
  std::vector<Camera> cams;
  Tensor<T> target_image;  // at the solve's output resolution
  Frustum target;
};

// Overfits the network on the given scenes (round-robin) by Adam on the
// weighted L1 between the solved render and the held-out target.
template <typename T>
std::pair<std::vector<Tensor<T>>, FitReport> train_nano(const std::vector<TrainScene<T>>& scenes,
                                                        const ModelConfig& model,
                                                        const FitConfig& cfg) {
  cfg.validate();
  model.validate();
  if (scenes.empty()) throw DimError("train_nano: need at least one scene");
  for (const TrainScene<T>& sc : scenes) {
    if (int64_t(sc.images.size()) != model.views || sc.images.size() != sc.cams.size())
      throw DimError("train_nano: scene view count does not match the model");
    if (sc.images[0].rank() != 3) throw DimError("train_nano: images must be [H,W,3]");
    ForwardPlan plan = plan_forward(model, sc.images[0].dim(0), sc.images[0].dim(1));
    require_shape(sc.target_image, {plan.out_height, plan.out_width, 3}, "train_nano target");
  }

  std::vector<Tensor<T>> store = init_param_store<T>(model, cfg.seed);
  Adam<T> adam(cfg);
  FitReport report;
  const auto t0 = std::chrono::steady_clock::now();

  auto build = [&](Tape<T>& tape, const TrainScene<T>& sc, NetParams& p) {
    p = bind_params(tape, model, store);
    std::vector<Var> imvars;
    for (const auto& im : sc.images) imvars.push_back(tape.constant(im));
    ForwardResult<T> r = forward(tape, imvars, sc.cams, sc.target, model, p);
    Var pred = model.direct_rgb ? r.rgb : render_target(tape, r.ldm, imvars, sc.cams);
    Var l1 = tape.mean_all(tape.abs_(tape.sub(pred, tape.constant(sc.target_image))));
    return std::pair{tape.scale(l1, cfg.l1_weight), pred};
  };

  for (int64_t k = 0; k < cfg.steps; ++k) {
    const TrainScene<T>& sc = scenes[size_t(k) % scenes.size()];
    Tape<T> tape;
    NetParams p;
    auto [loss, pred] = build(tape, sc, p);
    (void)pred;
    const double lv = double(tape.value(loss)[0]);
    if (!std::isfinite(lv))
      throw NumericError("train_nano: loss diverged at step " + std::to_string(k));
    report.loss_curve.push_back(lv);
    tape.backward(loss);
    std::vector<Tensor<T>> grads;
    for (Var v : p.leaves) grads.push_back(tape.grad(v));
    adam.step(store, grads);
  }

  for (const TrainScene<T>& sc : scenes) {
    Tape<T> tape;
    NetParams p;
    auto [loss, pred] = build(tape, sc, p);
    (void)loss;
    report.view_psnr.push_back(psnr(tape.value(pred), sc.target_image));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(store), std::move(report)};
}

}  // namespace lvs
