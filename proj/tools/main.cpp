// lvs: command-line surface over the layered view synthesis library. Every
// command is deterministic given its flags and seeds; exit codes are 0 on
// success, 1 for validation problems, 2 for numeric failures, 3 for I/O.

#include <Eigen/Geometry>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lvs/attention.hpp"
#include "lvs/fit.hpp"
#include "lvs/gradcheck.hpp"
#include "lvs/io.hpp"
#include "lvs/network.hpp"
#include "lvs/scenes.hpp"

namespace {

using namespace lvs;

Tensor<double> random_tensor(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// --- generate-scene ----------------------------------------------------------

struct GenerateArgs {
  uint64_t seed = 7;
  int64_t planes = 2;
  int64_t views = 4;
  double baseline = 0.25;
  std::string out;
};

void run_generate_scene(const GenerateArgs& a) {
  // Squarest camera grid that factors the view count: 4 -> 2x2, 6 -> 2x3.
  int64_t rows = 1;
  for (int64_t r = 1; r * r <= a.views; ++r)
    if (a.views % r == 0) rows = r;

  RigSpec rig;
  rig.rows = rows;
  rig.cols = a.views / rows;
  rig.baseline = a.baseline;
  rig.width = 64;
  rig.height = 64;
  rig.focal = 64.0;

  SceneBundle b;
  b.target = Frustum{rig.target(), 1.5, 6.0};
  b.scene = make_scene(a.seed, a.planes, b.target);
  b.cams = rig.cameras();
  for (const Camera& cam : b.cams)
    b.images.push_back(oracle_render(b.scene, cam).first.cast<float>());
  save_bundle(a.out, b);
  std::printf("wrote %zu views (%lldx%lld rig, %lld planes) to %s\n", b.images.size(),
              (long long)rig.rows, (long long)rig.cols, (long long)a.planes, a.out.c_str());
}

// --- fit-ldm -------------------------------------------------------------

struct FitArgs {
  std::string scene;
  int64_t layers = 2;
  int64_t steps = 400;
  std::string out;
  std::string report;
};

void run_fit_ldm(const FitArgs& a) {
  SceneBundle b = load_bundle(a.scene);
  std::vector<Tensor<double>> images;
  images.reserve(b.images.size());
  for (const Tensor<float>& im : b.images) images.push_back(im.cast<double>());

  FitConfig cfg;
  cfg.steps = a.steps;
  auto [raw, report] = fit_raw_ldm<double>(images, b.cams, b.target, a.layers, cfg);

  save_raw_ldm(a.out, raw);
  if (!a.report.empty()) write_file(a.report, to_csv(report));

  std::printf("fit %lld layers / %zu views for %lld steps in %.2f s\n", (long long)a.layers,
              images.size(), (long long)a.steps, report.wall_seconds);
  if (!report.loss_curve.empty()) std::printf("final loss %.6g\n", report.loss_curve.back());
  for (size_t m = 0; m < report.view_psnr.size(); ++m)
    std::printf("view %zu psnr %.2f dB\n", m, report.view_psnr[m]);
}

// --- render --------------------------------------------------------------

struct RenderArgs {
  std::string ldm;
  std::string scene;
  int64_t camera_index = -1;  // -1 renders the fit target view
  std::string out;
  std::string depth;
  std::string coverage;
};

void run_render(const RenderArgs& a) {
  SceneBundle b = load_bundle(a.scene);
  RawLdm<double> raw = load_raw_ldm(a.ldm, b.target);
  const int64_t M = int64_t(b.cams.size());
  if (raw.blend_logits.dim(-1) != M)
    throw DimError("render: the LDM blends " + std::to_string(raw.blend_logits.dim(-1)) +
                   " views but the bundle has " + std::to_string(M));
  if (a.camera_index < -1 || a.camera_index >= M)
    throw DimError("render: camera index " + std::to_string(a.camera_index) +
                   " out of range; the bundle has " + std::to_string(M) +
                   " views and -1 selects the fit target");

  Tape<double> tape;
  Ldm<double> ldm = activate_raw(tape, raw);
  std::vector<Var> imvars;
  for (const Tensor<float>& im : b.images) imvars.push_back(tape.constant(im.cast<double>()));
  Var points = geo::world_points(tape, b.target, ldm.depth);
  Var colors = blended_layer_colors(tape, ldm, imvars, b.cams, points);
  const Tensor<double>& d = tape.value(ldm.depth);
  const int64_t L = d.dim(0), H = d.dim(1), W = d.dim(2);

  Tensor<double> img, cov, dep;
  if (a.camera_index < 0) {
    img = tape.value(over_composite(tape, colors, ldm.density));
    Var ones = tape.constant(Tensor<double>::full({L, H, W, 1}, 1.0));
    cov = tape.value(over_composite(tape, ones, ldm.density));
    dep = tape.value(over_composite(tape, tape.reshape(ldm.depth, {L, H, W, 1}), ldm.density));
  } else {
    const Camera& cam = b.cams[size_t(a.camera_index)];
    Var warped = warp_composite(tape, colors, ldm.density, points, cam);
    img = tape.value(tape.slice_last(warped, 0, 3));
    cov = tape.value(tape.slice_last(warped, 3, 1));
    // Depth composites each texel's z measured in the render camera's frame.
    const Tensor<double>& pts = tape.value(points);
    Tensor<double> zattr({L, H, W, 1});
    for (int64_t i = 0; i < L * H * W; ++i) {
      Eigen::Vector3d p(pts[i * 3], pts[i * 3 + 1], pts[i * 3 + 2]);
      zattr[i] = cam.project(p).z();
    }
    Var dwarp = warp_composite(tape, tape.constant(std::move(zattr)), ldm.density, points, cam);
    dep = tape.value(tape.slice_last(dwarp, 0, 1));
  }

  save_pfm(a.out, img.cast<float>());
  int64_t Ho = img.dim(0), Wo = img.dim(1);
  if (!a.depth.empty()) save_pfm(a.depth, dep.reshaped({Ho, Wo}).cast<float>());
  if (!a.coverage.empty()) save_pfm(a.coverage, cov.reshaped({Ho, Wo}).cast<float>());
  std::printf("rendered %s view to %s\n",
              a.camera_index < 0 ? "target" : ("input " + std::to_string(a.camera_index)).c_str(),
              a.out.c_str());
}

// --- bench-attention ---------------------------------------------------------

struct BenchArgs {
  int64_t dk = 32;
  std::string sweep;  // empty = both
  std::string csv;
};

struct BenchRow {
  const char* sweep;
  int64_t heads, inputs, dk;
  int64_t std_flops, otm_flops;
  double std_us, otm_us;
  double flop_ratio() const { return double(std_flops) / double(otm_flops); }
};

template <typename Fn>
double time_us(Fn fn) {
  fn();  // warm
  int reps = 0;
  auto t0 = std::chrono::steady_clock::now();
  double elapsed = 0;
  while (reps < 400 && elapsed < 2e-3) {
    fn();
    ++reps;
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return elapsed / reps * 1e6;
}

BenchRow bench_row(const char* sweep, int64_t h, int64_t n, int64_t dk) {
  BenchRow row{sweep, h, n, dk, flop_count(AttnVariant::standard, n, h, dk).flops,
               flop_count(AttnVariant::one_to_many, n, h, dk).flops, 0, 0};

  const int64_t C = h * dk;
  Rng rng(seed_for(uint64_t(h * 1000 + n), "bench-attention"));
  auto draw = [&](Shape shape, double s) {
    Tensor<float> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.normal() * s);
    return t;
  };
  StdAttnParams<float> p;
  p.heads = h;
  p.channels = C;
  double s = 1.0 / std::sqrt(double(C));
  for (int64_t i = 0; i < h; ++i) {
    p.w_q.push_back(draw({C, dk}, s));
    p.w_k.push_back(draw({C, dk}, s));
    p.w_v.push_back(draw({C, dk}, s));
  }
  p.w_o = draw({C, C}, s);
  OtmAttnParams<float> q = fold_otm_params(p);
  Tensor<float> query = draw({C}, 1.0);
  Tensor<float> keys = draw({n, C}, 1.0);

  static volatile float sink;
  row.std_us = time_us([&] { sink = standard_cross_attention(query, keys, p)[0]; });
  row.otm_us = time_us([&] { sink = one_to_many_attention(query, keys, q)[0]; });
  return row;
}

void run_bench_attention(const BenchArgs& a) {
  std::vector<BenchRow> rows;
  if (a.sweep.empty() || a.sweep == "heads")
    for (int64_t h : {1, 2, 4, 8}) rows.push_back(bench_row("heads", h, 8, a.dk));
  if (a.sweep.empty() || a.sweep == "inputs")
    for (int64_t n : {4, 8, 16, 32, 64}) rows.push_back(bench_row("inputs", 4, n, a.dk));

  const char* printed = "";
  for (const BenchRow& r : rows) {
    if (std::string(printed) != r.sweep) {
      printed = r.sweep;
      if (std::string(r.sweep) == "heads")
        std::printf("\nper-texel cost vs head count (n=8, d_k=%lld)\n"
                    "  h   standard  one-to-many  speedup     std_us     otm_us  measured\n",
                    (long long)a.dk);
      else
        std::printf("\nper-texel cost vs input views (h=4, d_k=%lld)\n"
                    "  n   standard  one-to-many  speedup     std_us     otm_us  measured\n",
                    (long long)a.dk);
    }
    int64_t key = std::string(r.sweep) == "heads" ? r.heads : r.inputs;
    std::printf("%3lld %10lld %12lld %7.1fx %10.3f %10.3f %8.2fx\n", (long long)key,
                (long long)r.std_flops, (long long)r.otm_flops, r.flop_ratio(), r.std_us, r.otm_us,
                r.std_us / r.otm_us);
  }

  if (!a.csv.empty()) {
    std::string out = "sweep,heads,inputs,dk,standard_flops,otm_flops,speedup,standard_us,otm_us\n";
    char line[256];
    for (const BenchRow& r : rows) {
      std::snprintf(line, sizeof(line), "%s,%lld,%lld,%lld,%lld,%lld,%.1f,%.3f,%.3f\n", r.sweep,
                    (long long)r.heads, (long long)r.inputs, (long long)r.dk,
                    (long long)r.std_flops, (long long)r.otm_flops, r.flop_ratio(), r.std_us,
                    r.otm_us);
      out += line;
    }
    write_file(a.csv, out);
  }
}

// --- gradcheck -----------------------------------------------------------

Camera axis_camera(int64_t w, int64_t h, double f) {
  return Camera::make(f, f, w / 2.0, h / 2.0, w, h, Eigen::Matrix4d::Identity());
}

Camera offset_camera(int64_t w, int64_t h, double x_off, double yaw_rad, double f) {
  Eigen::Matrix3d R = Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitY()).toRotationMatrix();
  return Camera::make(f, f, w / 2.0, h / 2.0, w, h,
                      pose_cam_from_world(R, Eigen::Vector3d(x_off, 0, 0)));
}

// Reduces a tensor against fixed random weights so every coordinate of the
// output feeds the scalar loss with a distinct coefficient.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, uint64_t seed) {
  Tensor<T> w(tape.value(x).shape());
  Rng rng(seed);
  for (int64_t i = 0; i < w.numel(); ++i) w[i] = T(rng.uniform(-1, 1));
  return tape.sum_all(tape.mul(x, tape.constant(std::move(w))));
}

struct OpCheck {
  std::string module;
  std::string name;
  std::function<GradCheckReport()> run;
};

std::vector<OpCheck> build_op_checks() {
  std::vector<OpCheck> checks;
  const Camera tc = axis_camera(6, 6, 8.0);
  const Frustum fr{tc, 1.0, 4.0};
  const Camera ic = offset_camera(8, 8, -0.1, 0.03, 10.0);

  checks.push_back({"geometry", "world-points", [=] {
    auto depth = random_tensor({2, 3, 3}, 21, 1.5, 3.4);
    return check_gradients({depth}, [=](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, geo::world_points(t, fr, v[0]), 101);
    });
  }});
  checks.push_back({"geometry", "gather-backproject", [=] {
    auto depth = random_tensor({1, 3, 3}, 22, 1.6, 3.2);
    auto img = random_tensor({8, 8, 2}, 23);
    return check_gradients({depth, img}, [=](Tape<double>& t, const std::vector<Var>& v) {
      Var pts = geo::world_points(t, fr, v[0]);
      return weighted_sum(t, geo::gather_backproject(t, v[1], ic, pts).values, 102);
    });
  }});
  checks.push_back({"geometry", "splat-project", [=] {
    auto depth = random_tensor({1, 3, 3}, 24, 1.6, 3.0);
    auto vals = random_tensor({1, 3, 3, 2}, 25);
    return check_gradients({depth, vals}, [=](Tape<double>& t, const std::vector<Var>& v) {
      Var pts = geo::world_points(t, fr, v[0]);
      return weighted_sum(t, geo::splat_project(t, v[1], ic, pts), 103);
    });
  }});
  checks.push_back({"geometry", "resize-bilinear", [] {
    auto x = random_tensor({2, 4, 5}, 26);
    return check_gradients({x}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, t.resize_bilinear(v[0], 7, 9), 104);
    });
  }});

  checks.push_back({"ldm", "depth-activation", [=] {
    auto logits = random_tensor({3, 3, 4}, 31, -2, 2);
    return check_gradients({logits}, [=](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, activate_depth_from_logits(t, v[0], fr), 105);
    });
  }});
  checks.push_back({"ldm", "over-composite", [] {
    auto vals = random_tensor({3, 2, 3, 2}, 32);
    auto sig = random_tensor({3, 2, 3}, 33, -2, 2);
    return check_gradients({vals, sig}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, over_composite(t, v[0], t.sigmoid(v[1])), 106);
    });
  }});
  checks.push_back({"ldm", "render-target", [=] {
    auto dl = random_tensor({2, 3, 3}, 34, -1, 1);
    auto sl = random_tensor({2, 3, 3}, 35, -1, 1);
    auto bl = random_tensor({2, 3, 3, 2}, 36, -1, 1);
    auto img0 = random_tensor({8, 8, 3}, 37, 0, 1);
    auto img1 = random_tensor({8, 8, 3}, 38, 0, 1);
    Camera ic2 = offset_camera(8, 8, 0.1, -0.03, 10.0);
    return check_gradients({dl, sl, bl}, [=](Tape<double>& t, const std::vector<Var>& v) {
      Ldm<double> ldm = activate_raw<double>(t, v[0], v[1], v[2], fr);
      return weighted_sum(
          t, render_target(t, ldm, {t.constant(img0), t.constant(img1)}, {ic, ic2}), 107);
    });
  }});
  checks.push_back({"ldm", "warp-composite", [=] {
    auto dl = random_tensor({2, 3, 3}, 39, -1, 1);
    auto sl = random_tensor({2, 3, 3}, 40, -1, 1);
    auto attrs = random_tensor({2, 3, 3, 2}, 41);
    return check_gradients({dl, sl, attrs}, [=](Tape<double>& t, const std::vector<Var>& v) {
      Var depth = activate_depth_from_logits(t, v[0], fr);
      Var pts = geo::world_points(t, fr, depth);
      return weighted_sum(t, warp_composite(t, v[2], t.sigmoid(v[1]), pts, ic), 108);
    });
  }});

  checks.push_back({"attention", "matmul", [] {
    auto a = random_tensor({3, 4}, 51);
    auto b = random_tensor({4, 5}, 52);
    return check_gradients({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, t.matmul(v[0], v[1]), 109);
    });
  }});
  checks.push_back({"attention", "rms-norm", [] {
    auto x = random_tensor({2, 3, 4}, 53);
    auto g = random_tensor({4}, 54, 0.5, 1.5);
    return check_gradients({x, g}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, t.rms_norm(v[0], v[1]), 110);
    });
  }});
  checks.push_back({"attention", "one-to-many", [] {
    const int64_t C = 4, M = 3;
    auto q = random_tensor({2, 2, C}, 55);
    auto deltas = random_tensor({2, 2, M, C}, 56);
    auto wq0 = random_tensor({C, C}, 57, -0.5, 0.5);
    auto wq1 = random_tensor({C, C}, 58, -0.5, 0.5);
    auto wo = random_tensor({2 * C, C}, 59, -0.5, 0.5);
    return check_gradients({q, deltas, wq0, wq1, wo},
                           [](Tape<double>& t, const std::vector<Var>& v) {
      OtmAttnVars p{{v[2], v[3]}, v[4]};
      return weighted_sum(t, otm_attention(t, v[0], v[1], p), 111);
    });
  }});
  checks.push_back({"attention", "fusion-block", [=] {
    const int64_t C = 4, M = 2;
    auto vol = random_tensor({2, 3, 3, C}, 60);
    auto deltas = random_tensor({2, 3, 3, M, C}, 61);
    auto wq = random_tensor({C, C}, 62, -0.5, 0.5);
    auto wo = random_tensor({C, C}, 63, -0.5, 0.5);
    auto gain_a = random_tensor({C}, 64, 0.5, 1.5);
    auto gain_m = random_tensor({C}, 65, 0.5, 1.5);
    auto w1 = random_tensor({C, C, 3, 3}, 66, -0.2, 0.2);
    auto b1 = random_tensor({C}, 67, -0.1, 0.1);
    auto w2 = random_tensor({C, C, 3, 3}, 68, -0.2, 0.2);
    auto b2 = random_tensor({C}, 69, -0.1, 0.1);
    return check_gradients(
        {vol, deltas, wq, wo, gain_a, gain_m, w1, b1, w2, b2},
        [=](Tape<double>& t, const std::vector<Var>& v) {
          FusionParams f;
          f.attend.attn.w_q = {v[2]};
          f.attend.attn.w_o = v[3];
          f.attend.norm_gain = v[4];
          f.mlps.push_back(ConvMlpParams{v[5], v[6], v[7], v[8], v[9]});
          FeatureVolume<double> fv{v[0], 0, fr};
          return weighted_sum(t, fusion_block(t, fv, v[1], f).V, 112);
        });
  }});

  checks.push_back({"network", "conv3x3", [] {
    auto x = random_tensor({2, 4, 5}, 71);
    auto w = random_tensor({3, 2, 3, 3}, 72, -0.3, 0.3);
    auto b = random_tensor({3}, 73, -0.1, 0.1);
    return check_gradients({x, w, b}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, t.conv3x3(v[0], v[1], v[2]), 113);
    });
  }});
  checks.push_back({"network", "layer-collapse", [] {
    const int64_t C = 4;
    auto vol = random_tensor({4, 3, 3, C}, 74);
    auto w1 = random_tensor({2 * C, 2 * C}, 75, -0.3, 0.3);
    auto b1 = random_tensor({2 * C}, 76, -0.1, 0.1);
    auto w2 = random_tensor({2 * C, C}, 77, -0.3, 0.3);
    auto b2 = random_tensor({C}, 78, -0.1, 0.1);
    return check_gradients({vol, w1, b1, w2, b2}, [](Tape<double>& t, const std::vector<Var>& v) {
      return weighted_sum(t, layer_collapse(t, v[0], CollapseParams{v[1], v[2], v[3], v[4]}), 114);
    });
  }});
  checks.push_back({"network", "nano-forward", [] {
    RigSpec rig;
    rig.rows = 2;
    rig.cols = 2;
    rig.baseline = 0.25;
    rig.width = 64;
    rig.height = 64;
    rig.focal = 64.0;
    Frustum target{rig.target(), 1.5, 6.0};
    PlaneScene scene = make_scene(7, 2, target);
    std::vector<Camera> cams = rig.cameras();
    std::vector<Tensor<double>> images;
    for (const Camera& c : cams) images.push_back(oracle_render(scene, c).first);

    ModelConfig cfg = nano_config();
    std::vector<Tensor<double>> store = init_param_store<double>(cfg, 11);
    // A spread across the depth of the model: the broadcast seed feature, the
    // encoder stem and one ray projection, the decode heads, the blend query,
    // the first attention query map, and the very last residual closer.
    std::vector<size_t> picks = {0, 1, 11, 30, 32, 33, 45, store.size() - 1};
    std::vector<Tensor<double>> leaves;
    for (size_t i : picks) leaves.push_back(store[i]);

    auto build = [=](Tape<double>& t, const std::vector<Var>& v) {
      std::vector<Var> all;
      size_t next = 0;
      for (size_t i = 0; i < store.size(); ++i) {
        if (next < picks.size() && picks[next] == i)
          all.push_back(v[next++]);
        else
          all.push_back(t.constant(store[i]));
      }
      NetParams p = bind_param_vars(t, cfg, all);
      std::vector<Var> imvars;
      for (const auto& im : images) imvars.push_back(t.constant(im));
      ForwardResult<double> r = forward(t, imvars, cams, target, cfg, p);
      Var img = render_target(t, r.ldm, imvars, cams);
      return t.scale(t.sum_all(img), 1.0 / double(t.value(img).numel()));
    };
    GradCheckOptions opt;
    opt.max_coords_per_leaf = 4;
    return check_gradients(leaves, build, opt);
  }});
  return checks;
}

struct GradcheckArgs {
  std::string module = "all";
};

void run_gradcheck(const GradcheckArgs& a) {
  int64_t failures = 0, ran = 0;
  for (const OpCheck& c : build_op_checks()) {
    if (a.module != "all" && a.module != c.module) continue;
    ++ran;
    GradCheckReport rep = c.run();
    std::printf("%-9s %-20s coords %4lld  max rel err %.3e  %s\n", c.module.c_str(),
                c.name.c_str(), (long long)rep.checked, rep.worst_rel,
                rep.pass ? "pass" : "FAIL");
    if (!rep.pass) {
      std::printf("  worst: %s\n", rep.worst_where.c_str());
      ++failures;
    }
  }
  if (ran == 0) throw DimError("gradcheck: no ops matched module " + a.module);
  if (failures > 0)
    throw NumericError("gradcheck: " + std::to_string(failures) + " ops breached the threshold");
}

// --- forward-demo --------------------------------------------------------

struct DemoArgs {
  std::string scene;
  std::string config;
  uint64_t seed = 0;
  std::string out;
};

void run_forward_demo(const DemoArgs& a) {
  SceneBundle b = load_bundle(a.scene);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(read_file(a.config));
  } catch (const SchemaError& e) {
    throw SchemaError(a.config + ": " + e.what());
  }
  if (int64_t(b.cams.size()) != cfg.views)
    throw DimError("forward-demo: the config expects " + std::to_string(cfg.views) +
                   " views but the bundle has " + std::to_string(b.cams.size()));
  ForwardPlan plan = plan_forward(cfg, b.images[0].dim(0), b.images[0].dim(1));
  const int64_t Ho = plan.out_height, Wo = plan.out_width;

  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());

  std::vector<Tensor<double>> images;
  for (const Tensor<float>& im : b.images) images.push_back(im.cast<double>());
  std::vector<Tensor<double>> store = init_param_store<double>(cfg, a.seed);

  Tape<double> tape;
  NetParams p = bind_params(tape, cfg, store);
  std::vector<Var> imvars;
  for (const Tensor<double>& im : images) imvars.push_back(tape.constant(im));
  ForwardResult<double> r = forward(tape, imvars, b.cams, b.target, cfg, p);

  const std::filesystem::path dir = a.out;
  Tensor<double> target_img = tape.value(render_target(tape, r.ldm, imvars, b.cams));
  save_pfm(dir / "target.pfm", target_img.cast<float>());
  save_ppm(dir / "target.ppm", target_img.cast<float>());

  const Tensor<double>& den = tape.value(r.ldm.density);
  const int64_t L = den.dim(0);
  Tensor<double> depth_img = tape.value(
      over_composite(tape, tape.reshape(r.ldm.depth, {L, Ho, Wo, 1}), r.ldm.density));
  save_pfm(dir / "depth.pfm", depth_img.reshaped({Ho, Wo}).cast<float>());

  for (int64_t l = 0; l < L; ++l) {
    Tensor<float> slice({Ho, Wo});
    for (int64_t i = 0; i < Ho * Wo; ++i) slice[i] = float(den[l * Ho * Wo + i]);
    char name[32];
    std::snprintf(name, sizeof(name), "sigma_%02d", int(l));
    save_pfm(dir / (std::string(name) + ".pfm"), slice);
    save_ppm(dir / (std::string(name) + ".ppm"), slice);
  }

  // The solved volume re-decoded to pre-activation maps at the output
  // resolution, saved in the same artifact layout fit-ldm produces.
  const FeatureVolume<double>& fv = r.volume;
  const Tensor<double>& vv = tape.value(fv.V);
  const int64_t Lv = vv.dim(0), Hv = vv.dim(1), Wv = vv.dim(2), Cv = vv.dim(3);
  Var flat = tape.reshape(fv.V, {Lv * Hv * Wv, Cv});
  Var pre_d = tape.resize_bilinear(tape.reshape(tape.matmul(flat, p.heads.w_depth), {Lv, Hv, Wv}),
                                   Ho, Wo);
  Var pre_s = tape.resize_bilinear(tape.reshape(tape.matmul(flat, p.heads.w_sigma), {Lv, Hv, Wv}),
                                   Ho, Wo);
  Var blend_up = tape.chw_to_hwc(tape.resize_bilinear(tape.hwc_to_chw(r.blend_logits), Ho, Wo));
  RawLdm<double> raw;
  raw.depth_logits = tape.value(pre_d);
  raw.density_logits = tape.value(pre_s);
  raw.blend_logits = tape.value(blend_up);
  raw.frustum = Frustum{b.target.camera.scaled(Wo, Ho), b.target.near, b.target.far};
  save_raw_ldm(dir / "ldm.qntc", raw);

  // Scalar-op counts of the solve at several view counts; the schedule's cost
  // is volume work plus a per-view term, so the counts sit on an exact line.
  nlohmann::json counts;
  std::vector<int64_t> ms = {2, 4, 8};
  std::vector<int64_t> ops;
  for (int64_t m : ms) {
    ModelConfig cm = cfg;
    cm.views = m;
    Tape<double> t2;
    NetParams p2 = bind_params(t2, cm, store);
    std::vector<Var> iv;
    std::vector<Camera> cv;
    for (int64_t i = 0; i < m; ++i) {
      iv.push_back(t2.constant(images[size_t(i % int64_t(images.size()))]));
      cv.push_back(b.cams[size_t(i % int64_t(b.cams.size()))]);
    }
    int64_t before = t2.flops();
    forward(t2, iv, cv, b.target, cm, p2);
    ops.push_back(t2.flops() - before);
    counts["per_view_counts"][std::to_string(m)] = ops.back();
  }
  int64_t t_image = (ops[1] - ops[0]) / (ms[1] - ms[0]);
  int64_t t_volume = ops[0] - ms[0] * t_image;
  int64_t residual = (ops[2] - ops[1]) / (ms[2] - ms[1]) - t_image;
  counts["t_volume"] = t_volume;
  counts["t_image"] = t_image;
  counts["residual"] = residual;
  write_file(dir / "opcounts.json", counts.dump(2) + "\n");

  for (size_t k = 0; k < ms.size(); ++k)
    std::printf("views %lld: %lld ops\n", (long long)ms[k], (long long)ops[k]);
  std::printf("decomposition: %lld + views x %lld (residual %lld)\n", (long long)t_volume,
              (long long)t_image, (long long)residual);
  std::printf("wrote solve outputs to %s\n", a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layered view synthesis toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cgen = app.add_subcommand("generate-scene", "write a deterministic multi-view bundle");
  cgen->add_option("--seed", gen.seed, "scene seed");
  cgen->add_option("--planes", gen.planes, "plane count")->check(CLI::PositiveNumber);
  cgen->add_option("--views", gen.views, "camera count")->check(CLI::Range(2, 64));
  cgen->add_option("--baseline", gen.baseline, "camera spacing in meters")
      ->check(CLI::PositiveNumber);
  cgen->add_option("--out", gen.out, "output directory")->required();
  cgen->callback([&] { run_generate_scene(gen); });

  FitArgs fit;
  auto* cfit = app.add_subcommand("fit-ldm", "fit a layered depth map to a bundle");
  cfit->add_option("--scene", fit.scene, "bundle directory")->required();
  cfit->add_option("--layers", fit.layers, "layer count")->check(CLI::Range(1, 64));
  cfit->add_option("--steps", fit.steps, "optimizer steps")->check(CLI::NonNegativeNumber);
  cfit->add_option("--out", fit.out, "fitted artifact path")->required();
  cfit->add_option("--report", fit.report, "loss/psnr csv path");
  cfit->callback([&] { run_fit_ldm(fit); });

  RenderArgs ren;
  auto* cren = app.add_subcommand("render", "render a fitted layered depth map");
  cren->add_option("--ldm", ren.ldm, "fitted artifact path")->required();
  cren->add_option("--scene", ren.scene, "bundle directory")->required();
  cren->add_option("--camera-index", ren.camera_index, "input view index, -1 for the fit target");
  cren->add_option("--out", ren.out, "output image (pfm)")->required();
  cren->add_option("--depth", ren.depth, "optional composited depth map (pfm)");
  cren->add_option("--coverage", ren.coverage, "optional composited coverage map (pfm)");
  cren->callback([&] { run_render(ren); });

  BenchArgs bench;
  auto* cbench = app.add_subcommand("bench-attention", "attention cost tables");
  cbench->add_option("--dk", bench.dk, "per-head key width")->check(CLI::PositiveNumber);
  cbench->add_option("--sweep", bench.sweep, "restrict to one sweep")
      ->check(CLI::IsMember({"heads", "inputs"}));
  cbench->add_option("--csv", bench.csv, "also write rows as csv");
  cbench->callback([&] { run_bench_attention(bench); });

  GradcheckArgs gc;
  auto* cgc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  cgc->add_option("--module", gc.module, "which op family to check")
      ->check(CLI::IsMember({"all", "geometry", "ldm", "attention", "network"}));
  cgc->callback([&] { run_gradcheck(gc); });

  DemoArgs demo;
  auto* cdemo = app.add_subcommand("forward-demo", "run the solver on a bundle");
  cdemo->add_option("--scene", demo.scene, "bundle directory")->required();
  cdemo->add_option("--config", demo.config, "model config json")->required();
  cdemo->add_option("--seed", demo.seed, "weight init seed");
  cdemo->add_option("--out", demo.out, "output directory")->required();
  cdemo->callback([&] { run_forward_demo(demo); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DimError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
