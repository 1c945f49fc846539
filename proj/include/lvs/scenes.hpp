#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "lvs/camera.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

// Analytic band-limited texture: a base color plus a few sinusoidal waves in
// normalized plane coordinates. Evaluable at any real coordinate, so renders
// carry no rasterization error at any resolution.
struct Texture {
  struct Wave {
    double fu = 0, fv = 0, phase = 0;  // cycles per extent, radians
    std::array<double, 3> amp{};
  };
  std::array<double, 3> base{};
  std::vector<Wave> waves;

  std::array<double, 3> eval(double u, double v) const;
};

// Fronto-parallel textured rectangle at world depth z.
struct ScenePlane {
  double z = 0;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double opacity = 1;  // (0,1]
  Texture texture;

  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

// Plane stack sorted nearest first, closed by an opaque backdrop.
struct PlaneScene {
  std::vector<ScenePlane> planes;
  std::array<double, 3> background{};
  double background_depth = 0;
  double near = 0, far = 0;  // frustum the scene was built for

  void validate() const;
};

// Planar camera grid at z=0 facing +z, centered on the origin, shared
// intrinsics with the principal point at the image center.
struct RigSpec {
  int64_t rows = 1;
  int64_t cols = 2;
  double baseline = 0.1;  // meters between adjacent cameras
  int64_t width = 64;
  int64_t height = 64;
  double focal = 64.0;

  void validate() const;
  std::vector<Camera> cameras() const;  // row-major, M = rows*cols
  Camera target() const;                // same intrinsics at the grid centroid
};

// Deterministic scene: depths spread over the frustum's disparity range,
// farthest plane an opaque full-coverage wall, textures band-limited.
PlaneScene make_scene(uint64_t seed, int64_t num_planes, const Frustum& fr);

// Exact per-pixel ray cast: front-to-back alpha blend of plane hits, closed
// by the backdrop. depth is the camera-frame z of the nearest opaque hit.
std::pair<Tensor<double>, Tensor<double>> oracle_render(const PlaneScene& scene, const Camera& cam);

}  // namespace lvs
