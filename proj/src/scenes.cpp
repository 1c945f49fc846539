#include "lvs/scenes.hpp"

#include <algorithm>
#include <cmath>

#include "lvs/rng.hpp"

namespace lvs {

std::array<double, 3> Texture::eval(double u, double v) const {
  std::array<double, 3> c = base;
  for (const Wave& w : waves) {
    double s = std::sin(2.0 * M_PI * (w.fu * u + w.fv * v) + w.phase);
    for (int k = 0; k < 3; ++k) c[k] += w.amp[k] * s;
  }
  return c;
}

void PlaneScene::validate() const {
  if (planes.empty()) throw DimError("PlaneScene: no planes");
  if (!(near > 0 && far > near)) throw DimError("PlaneScene: bad depth range");
  double prev = near;
  for (const ScenePlane& p : planes) {
    if (!(p.z > prev)) throw DimError("PlaneScene: plane depths must increase strictly inside the frustum");
    if (!(p.z < far)) throw DimError("PlaneScene: plane depth outside frustum");
    if (!(p.opacity > 0.0 && p.opacity <= 1.0)) throw DimError("PlaneScene: opacity must be in (0,1]");
    if (!(p.x1 > p.x0 && p.y1 > p.y0)) throw DimError("PlaneScene: empty plane extent");
    prev = p.z;
  }
  if (!(background_depth > prev && background_depth < far))
    throw DimError("PlaneScene: backdrop must sit behind every plane inside the frustum");
}

void RigSpec::validate() const {
  if (rows < 1 || cols < 1) throw DimError("RigSpec: camera grid must be at least 1x1");
  if (!(baseline > 0)) throw DimError("RigSpec: baseline must be positive");
  if (width < 1 || height < 1 || !(focal > 0)) throw DimError("RigSpec: bad image spec");
}

std::vector<Camera> RigSpec::cameras() const {
  validate();
  std::vector<Camera> cams;
  cams.reserve(size_t(rows * cols));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      double x = (double(c) - double(cols - 1) / 2.0) * baseline;
      double y = (double(r) - double(rows - 1) / 2.0) * baseline;
      cams.push_back(Camera::make(focal, focal, double(width) / 2.0, double(height) / 2.0, width,
                                  height,
                                  pose_cam_from_world(Eigen::Matrix3d::Identity(),
                                                      Eigen::Vector3d(x, y, 0.0))));
    }
  return cams;
}

Camera RigSpec::target() const {
  validate();
  return Camera::make(focal, focal, double(width) / 2.0, double(height) / 2.0, width, height,
                      Eigen::Matrix4d::Identity());
}

PlaneScene make_scene(uint64_t seed, int64_t num_planes, const Frustum& fr) {
  if (num_planes < 1) throw DimError("make_scene: need at least one plane");
  fr.validate();
  Rng rng(seed_for(seed, "plane-scene"));

  PlaneScene sc;
  sc.near = fr.near;
  sc.far = fr.far;

  // Depths spread uniformly in disparity with jitter, then sorted nearest
  // first with a minimum separation.
  double lo = fr.near * 1.1, hi = fr.far * 0.88;
  std::vector<double> zs(static_cast<size_t>(num_planes));
  for (int64_t i = 0; i < num_planes; ++i) {
    double f = (double(i) + 0.5 + 0.3 * rng.uniform(-1.0, 1.0)) / double(num_planes);
    zs[size_t(i)] = 1.0 / (1.0 / hi + f * (1.0 / lo - 1.0 / hi));
  }
  std::sort(zs.begin(), zs.end());
  double minsep = (fr.far - fr.near) * 0.02;
  for (size_t i = 1; i < zs.size(); ++i) zs[i] = std::max(zs[i], zs[i - 1] + minsep);

  const Camera& cam = fr.camera;
  auto half_w = [&](double z) { return z * (double(cam.width) / 2.0) / cam.fx; };
  auto half_h = [&](double z) { return z * (double(cam.height) / 2.0) / cam.fy; };

  for (int64_t i = 0; i < num_planes; ++i) {
    bool last = i + 1 == num_planes;
    ScenePlane p;
    p.z = zs[size_t(i)];
    // The farthest plane is an opaque full-coverage wall so every ray
    // terminates on textured content.
    double scale = last ? 1.6 : rng.uniform(0.75, 1.35);
    double cxw = last ? 0.0 : rng.uniform(-0.15, 0.15) * half_w(p.z);
    double cyw = last ? 0.0 : rng.uniform(-0.15, 0.15) * half_h(p.z);
    p.x0 = cxw - scale * half_w(p.z);
    p.x1 = cxw + scale * half_w(p.z);
    p.y0 = cyw - scale * half_h(p.z);
    p.y1 = cyw + scale * half_h(p.z);
    p.opacity = last ? 1.0 : rng.uniform(0.5, 1.0);

    for (int k = 0; k < 3; ++k) p.texture.base[size_t(k)] = rng.uniform(0.3, 0.7);
    for (int w = 0; w < 3; ++w) {
      Texture::Wave wave;
      wave.fu = double(rng.index(4));
      wave.fv = double(rng.index(4));
      if (wave.fu == 0 && wave.fv == 0) wave.fu = 1;
      wave.phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int k = 0; k < 3; ++k) wave.amp[size_t(k)] = rng.uniform(0.02, 0.25 / 3.0);
      p.texture.waves.push_back(wave);
    }
    sc.planes.push_back(std::move(p));
  }

  for (int k = 0; k < 3; ++k) sc.background[size_t(k)] = rng.uniform(0.25, 0.75);
  sc.background_depth = std::max(zs.back() + minsep, fr.far * 0.93);

  sc.validate();
  return sc;
}

std::pair<Tensor<double>, Tensor<double>> oracle_render(const PlaneScene& scene, const Camera& cam) {
  scene.validate();
  cam.validate();
  if (cam.center().z() >= scene.planes.front().z)
    throw DimError("oracle_render: camera must sit in front of the nearest plane");

  int64_t H = cam.height, W = cam.width;
  Tensor<double> img({H, W, 3});
  Tensor<double> dep({H, W});
  Eigen::Matrix3d Rwc = cam.rotation_cw().transpose();
  Eigen::Vector3d o = cam.center();

  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      Eigen::Vector3d d = Rwc * cam.ray_dir_cam(double(j) + 0.5, double(i) + 0.5);
      double trans = 1.0;
      double rgb[3] = {0, 0, 0};
      double depth = 0;
      bool opaque = false;

      auto blend = [&](double t, const std::array<double, 3>& c, double a) {
        for (int k = 0; k < 3; ++k) rgb[k] += trans * a * c[size_t(k)];
        if (!opaque && a >= 0.999) {
          depth = t;  // dir is z-normalized in the camera frame, so t is z-depth
          opaque = true;
        }
        trans *= 1.0 - a;
      };

      if (std::abs(d.z()) > 1e-12) {
        for (const ScenePlane& p : scene.planes) {  // nearest first == front to back
          double t = (p.z - o.z()) / d.z();
          if (t <= 1e-9) continue;
          double x = o.x() + t * d.x(), y = o.y() + t * d.y();
          if (!p.contains(x, y)) continue;
          blend(t, p.texture.eval((x - p.x0) / (p.x1 - p.x0), (y - p.y0) / (p.y1 - p.y0)),
                p.opacity);
          if (trans < 1e-12) break;
        }
        if (trans > 0) {
          double t = (scene.background_depth - o.z()) / d.z();
          if (t > 0) blend(t, scene.background, 1.0);
        }
      }

      for (int k = 0; k < 3; ++k) img(i, j, k) = rgb[k];
      dep(i, j) = depth;
    }
  return {std::move(img), std::move(dep)};
}

}  // namespace lvs
