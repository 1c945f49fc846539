#include <cmath>
#include <vector>

#include "doctest.h"
#include "lvs/ldm.hpp"
#include "lvs/scenes.hpp"
#include "lvs/tape.hpp"
#include "test_util.hpp"

using namespace lvs;
using namespace lvs::test;

namespace {

Frustum scene_frustum(int64_t w, int64_t h, double focal, double near, double far) {
  return Frustum{Camera::make(focal, focal, double(w) / 2.0, double(h) / 2.0, w, h,
                              Eigen::Matrix4d::Identity()),
                 near, far};
}

bool same_scene(const PlaneScene& a, const PlaneScene& b) {
  if (a.planes.size() != b.planes.size()) return false;
  for (size_t i = 0; i < a.planes.size(); ++i) {
    const ScenePlane &p = a.planes[i], &q = b.planes[i];
    if (p.z != q.z || p.x0 != q.x0 || p.x1 != q.x1 || p.y0 != q.y0 || p.y1 != q.y1 ||
        p.opacity != q.opacity)
      return false;
    if (p.texture.base != q.texture.base || p.texture.waves.size() != q.texture.waves.size())
      return false;
    for (size_t w = 0; w < p.texture.waves.size(); ++w) {
      const auto &x = p.texture.waves[w], &y = q.texture.waves[w];
      if (x.fu != y.fu || x.fv != y.fv || x.phase != y.phase || x.amp != y.amp) return false;
    }
  }
  return a.background == b.background && a.background_depth == b.background_depth;
}

}  // namespace

TEST_CASE("scene generation is deterministic and respects the frustum") {
  Frustum fr = scene_frustum(32, 24, 32.0, 1.0, 6.0);
  PlaneScene a = make_scene(7, 3, fr);
  PlaneScene b = make_scene(7, 3, fr);
  CHECK(same_scene(a, b));
  CHECK_FALSE(same_scene(a, make_scene(8, 3, fr)));

  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    PlaneScene sc = make_scene(seed, 4, fr);
    REQUIRE(sc.planes.size() == 4);
    double prev = fr.near;
    for (const ScenePlane& p : sc.planes) {
      CHECK(p.z > prev);
      CHECK(p.z < fr.far);
      CHECK(p.opacity > 0.0);
      CHECK(p.opacity <= 1.0);
      for (const auto& w : p.texture.waves) {
        CHECK(w.fu <= 3.0);  // band-limited: at most 3 cycles per extent
        CHECK(w.fv <= 3.0);
      }
      prev = p.z;
    }
    CHECK(sc.background_depth > prev);
    CHECK(sc.background_depth < fr.far);
  }

  CHECK_THROWS_AS(make_scene(1, 0, fr), DimError);
}

TEST_CASE("single-plane scene renders as a textured wall") {
  Frustum fr = scene_frustum(24, 20, 24.0, 1.0, 5.0);
  PlaneScene sc = make_scene(11, 1, fr);
  REQUIRE(sc.planes.size() == 1);
  const ScenePlane& p = sc.planes[0];
  CHECK(p.opacity == 1.0);

  auto [img, dep] = oracle_render(sc, fr.camera);
  for (int64_t i = 0; i < 20; ++i)
    for (int64_t j = 0; j < 24; ++j) {
      // Wall covers the full view: depth is the plane depth everywhere.
      CHECK(dep(i, j) == doctest::Approx(p.z).epsilon(1e-12));
      // Independent re-evaluation of the analytic texture at the hit point.
      double x = (double(j) + 0.5 - 12.0) / 24.0 * p.z;
      double y = (double(i) + 0.5 - 10.0) / 24.0 * p.z;
      double u = (x - p.x0) / (p.x1 - p.x0), v = (y - p.y0) / (p.y1 - p.y0);
      double want[3] = {p.texture.base[0], p.texture.base[1], p.texture.base[2]};
      for (const auto& w : p.texture.waves) {
        double s = std::sin(2.0 * M_PI * (w.fu * u + w.fv * v) + w.phase);
        for (int k = 0; k < 3; ++k) want[k] += w.amp[size_t(k)] * s;
      }
      for (int k = 0; k < 3; ++k) {
        CHECK(img(i, j, k) == doctest::Approx(want[k]).epsilon(1e-12));
        CHECK(img(i, j, k) >= 0.0);
        CHECK(img(i, j, k) <= 1.0);
      }
    }

  // Re-rendering is bit-identical.
  auto [img2, dep2] = oracle_render(sc, fr.camera);
  CHECK(bit_equal(img.vec(), img2.vec()));
  CHECK(bit_equal(dep.vec(), dep2.vec()));
}

TEST_CASE("stereo pair shows the closed-form disparity") {
  // Integer disparity: fx*b/z = 32*0.1875/2 = 3 px exactly.
  const double z = 2.0, b = 0.1875;
  const int64_t W = 32, H = 16;
  PlaneScene sc;
  sc.near = 1.0;
  sc.far = 5.0;
  ScenePlane p;
  p.z = z;
  p.x0 = -4.0, p.x1 = 4.0, p.y0 = -2.0, p.y1 = 2.0;  // far larger than either view
  p.opacity = 1.0;
  p.texture.base = {0.5, 0.45, 0.55};
  p.texture.waves.push_back({2.0, 1.0, 0.4, {0.1, 0.12, 0.08}});
  sc.planes.push_back(p);
  sc.background = {0.2, 0.2, 0.2};
  sc.background_depth = 4.5;

  Camera left = Camera::make(32, 32, W / 2.0, H / 2.0, W, H,
                             pose_cam_from_world(Eigen::Matrix3d::Identity(),
                                                 Eigen::Vector3d::Zero()));
  Camera right = Camera::make(32, 32, W / 2.0, H / 2.0, W, H,
                              pose_cam_from_world(Eigen::Matrix3d::Identity(),
                                                  Eigen::Vector3d(b, 0, 0)));
  auto [il, dl] = oracle_render(sc, left);
  auto [ir, dr] = oracle_render(sc, right);
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j + 3 < W; ++j)
      for (int64_t k = 0; k < 3; ++k)
        CHECK(std::abs(ir(i, j, k) - il(i, j + 3, k)) < 1e-12);
}

TEST_CASE("half-opacity plane blends with what lies behind") {
  PlaneScene sc;
  sc.near = 1.0;
  sc.far = 6.0;
  ScenePlane front;
  front.z = 1.5;
  front.x0 = -3, front.x1 = 3, front.y0 = -3, front.y1 = 3;
  front.opacity = 0.5;
  front.texture.base = {0.8, 0.2, 0.4};  // constant: no waves
  ScenePlane back;
  back.z = 3.0;
  back.x0 = -6, back.x1 = 6, back.y0 = -6, back.y1 = 6;
  back.opacity = 1.0;
  back.texture.base = {0.1, 0.6, 0.3};
  sc.planes = {front, back};
  sc.background = {0.9, 0.9, 0.9};
  sc.background_depth = 5.0;

  Camera cam = Camera::make(16, 16, 8.0, 8.0, 16, 16, Eigen::Matrix4d::Identity());
  auto [img, dep] = oracle_render(sc, cam);
  for (int64_t i = 0; i < 16; ++i)
    for (int64_t j = 0; j < 16; ++j) {
      for (int64_t k = 0; k < 3; ++k) {
        double want = 0.5 * front.texture.base[size_t(k)] + 0.5 * back.texture.base[size_t(k)];
        CHECK(img(i, j, k) == doctest::Approx(want).epsilon(1e-15));
      }
      // Depth tracks the nearest opaque hit, not the translucent front.
      CHECK(dep(i, j) == doctest::Approx(back.z).epsilon(1e-12));
    }
}

TEST_CASE("rig cameras form a centered grid with shared intrinsics") {
  RigSpec rig;
  rig.rows = 2;
  rig.cols = 3;
  rig.baseline = 0.05;
  rig.width = 40;
  rig.height = 30;
  rig.focal = 42.0;

  auto cams = rig.cameras();
  REQUIRE(cams.size() == 6);
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const Camera& c : cams) {
    centroid += c.center();
    CHECK(c.fx == 42.0);
    CHECK(c.width == 40);
    CHECK((c.rotation_cw() - Eigen::Matrix3d::Identity()).norm() == 0.0);
    CHECK(c.center().z() == 0.0);
  }
  CHECK(centroid.norm() < 1e-15);
  // Adjacent columns are one baseline apart.
  CHECK((cams[1].center() - cams[0].center() - Eigen::Vector3d(0.05, 0, 0)).norm() < 1e-15);
  CHECK((cams[3].center() - cams[0].center() - Eigen::Vector3d(0, 0.05, 0)).norm() < 1e-15);
  CHECK(rig.target().center().norm() == 0.0);

  RigSpec bad = rig;
  bad.baseline = 0.0;
  CHECK_THROWS_AS(bad.cameras(), DimError);
  bad = rig;
  bad.rows = 0;
  CHECK_THROWS_AS(bad.validate(), DimError);
}

TEST_CASE("plane-induced correspondences satisfy the rig homography") {
  Frustum fr = scene_frustum(48, 48, 48.0, 1.0, 6.0);
  PlaneScene sc = make_scene(5, 3, fr);
  RigSpec rig;
  rig.rows = 2;
  rig.cols = 2;
  rig.baseline = 0.08;
  rig.width = 48;
  rig.height = 48;
  rig.focal = 48.0;
  auto cams = rig.cameras();

  for (const ScenePlane& p : sc.planes)
    for (size_t a = 0; a < cams.size(); ++a)
      for (size_t b = a + 1; b < cams.size(); ++b) {
        Eigen::Vector3d dc = cams[b].center() - cams[a].center();
        for (double u1 : {6.5, 17.0, 30.5, 43.0})
          for (double v1 : {8.5, 24.0, 41.5}) {
            // Back-project from camera a onto the plane, reproject into b.
            Eigen::Vector3d dir = cams[a].ray_dir_cam(u1, v1);
            double t = (p.z - cams[a].center().z()) / dir.z();
            Eigen::Vector3d X = cams[a].center() + t * dir;
            Eigen::Vector3d uvz = cams[b].project(X);
            // Fronto-parallel identity-rotation rig: pure shift by f*b/z.
            CHECK(std::abs(uvz.x() - (u1 - rig.focal * dc.x() / p.z)) < 1e-4);
            CHECK(std::abs(uvz.y() - (v1 - rig.focal * dc.y() / p.z)) < 1e-4);
            CHECK(uvz.z() == doctest::Approx(p.z).epsilon(1e-12));
          }
      }
}

TEST_CASE("ground-truth layered render matches the ray-cast oracle") {
  // Two full-coverage walls: near one half transparent, far one opaque. The
  // exact LDM for this scene has flat per-layer depths inside their bands.
  const int64_t Wt = 64, Ht = 64;
  Frustum fr = scene_frustum(Wt, Ht, 64.0, 1.0, 6.0);

  PlaneScene sc;
  sc.near = 1.0;
  sc.far = 6.0;
  ScenePlane nearp;
  nearp.z = 1.3;  // inside the near band: disparity in [7/12, 1]
  nearp.opacity = 0.5;
  nearp.texture.base = {0.45, 0.5, 0.55};
  nearp.texture.waves.push_back({1.0, 0.0, 0.7, {0.1, 0.06, 0.03}});
  nearp.texture.waves.push_back({0.0, 2.0, 2.1, {0.04, 0.08, 0.06}});
  ScenePlane farp;
  farp.z = 2.6;  // inside the far band: disparity in [1/6, 7/12]
  farp.opacity = 1.0;
  farp.texture.base = {0.55, 0.45, 0.5};
  farp.texture.waves.push_back({2.0, 1.0, 1.3, {0.07, 0.1, 0.05}});
  for (ScenePlane* p : {&nearp, &farp}) {
    double half = 0.9 * p->z;  // ~1.8x the half-FOV at depth z
    p->x0 = -half, p->x1 = half, p->y0 = -half, p->y1 = half;
  }
  sc.planes = {nearp, farp};
  sc.background = {0.3, 0.4, 0.5};
  sc.background_depth = 5.5;
  sc.validate();

  // Four input views on a tight rig, rendered with margin around the target
  // field of view so every back-projection lands inside them.
  RigSpec rig;
  rig.rows = 2;
  rig.cols = 2;
  rig.baseline = 0.02;
  rig.width = 72;
  rig.height = 72;
  rig.focal = 64.0;
  auto cams = rig.cameras();

  Tape<double> tape;
  std::vector<Var> inputs;
  for (const Camera& c : cams) inputs.push_back(tape.constant(oracle_render(sc, c).first));

  Tensor<double> depth({2, Ht, Wt}), sigma({2, Ht, Wt}), beta({2, Ht, Wt, 4});
  for (int64_t l = 0; l < 2; ++l)
    for (int64_t p = 0; p < Ht * Wt; ++p) {
      depth[l * Ht * Wt + p] = l == 0 ? farp.z : nearp.z;  // layer 0 is the far band
      sigma[l * Ht * Wt + p] = l == 0 ? 1.0 : 0.5;
      for (int64_t m = 0; m < 4; ++m) beta[(l * Ht * Wt + p) * 4 + m] = m == 0 ? 1.0 : 0.0;
    }

  Ldm<double> ldm;
  ldm.depth = tape.constant(std::move(depth));
  ldm.density = tape.constant(std::move(sigma));
  ldm.blend = tape.constant(std::move(beta));
  ldm.frustum = fr;
  ldm.views = 4;

  Var out = render_target(tape, ldm, inputs, cams);
  Tensor<double> want = oracle_render(sc, fr.camera).first;
  double p = psnr_unit(tape.value(out), want);
  CHECK(p > 40.0);
}
