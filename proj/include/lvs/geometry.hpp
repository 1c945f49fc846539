#pragma once

#include <cmath>
#include <vector>

#include "lvs/camera.hpp"
#include "lvs/tape.hpp"

namespace lvs::geo {

// Plain-struct camera mirror so backward closures never hold Eigen types.
struct CamPod {
  double R[9];  // cam_from_world rotation, row major
  double t[3];
  double fx, fy, cx, cy;
  int64_t W, H;

  static CamPod from(const Camera& c) {
    CamPod p;
    Eigen::Matrix3d R = c.rotation_cw();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p.R[i * 3 + j] = R(i, j);
    Eigen::Vector3d tr = c.cam_from_world.topRightCorner<3, 1>();
    for (int i = 0; i < 3; ++i) p.t[i] = tr[i];
    p.fx = c.fx;
    p.fy = c.fy;
    p.cx = c.cx;
    p.cy = c.cy;
    p.W = c.width;
    p.H = c.height;
    return p;
  }

  void to_cam(const double* pw, double* pc) const {
    for (int i = 0; i < 3; ++i)
      pc[i] = R[i * 3 + 0] * pw[0] + R[i * 3 + 1] * pw[1] + R[i * 3 + 2] * pw[2] + t[i];
  }
  void rot_transpose(const double* v, double* out) const {
    for (int i = 0; i < 3; ++i) out[i] = R[0 * 3 + i] * v[0] + R[1 * 3 + i] * v[1] + R[2 * 3 + i] * v[2];
  }
};

constexpr double kZMin = 1e-6;

// Bilinear footprint around continuous pixel coords (u, v). A sample is
// usable only when the full 4-tap footprint lies inside the image; gather
// masking and splat tap dropping share this one rule so the two operators
// stay exact adjoints of each other.
struct Footprint {
  int64_t x0, x1, y0, y1;
  double fx, fy;
  bool valid;
};

// Validity is tolerance-padded and coordinates clamp onto the sampled strip.
// Axis-aligned rigs put whole texel rows exactly on the 0.5 margin, where a
// strict test would flip with the last ulp of the projection arithmetic.
constexpr double kEdgeTol = 1e-4;

inline Footprint footprint(double u, double v, int64_t W, int64_t H) {
  Footprint f;
  f.valid = u >= 0.5 - kEdgeTol && u <= double(W) - 0.5 + kEdgeTol && v >= 0.5 - kEdgeTol &&
            v <= double(H) - 0.5 + kEdgeTol;
  if (!f.valid) {
    f.x0 = f.x1 = f.y0 = f.y1 = 0;
    f.fx = f.fy = 0;
    return f;
  }
  u = std::min(std::max(u, 0.5), double(W) - 0.5);
  v = std::min(std::max(v, 0.5), double(H) - 0.5);
  double xf = std::floor(u - 0.5), yf = std::floor(v - 0.5);
  f.x0 = int64_t(xf);
  f.y0 = int64_t(yf);
  f.fx = u - 0.5 - xf;
  f.fy = v - 0.5 - yf;
  f.x1 = std::min(f.x0 + 1, W - 1);  // clamped tap carries weight 0 when it matters
  f.y1 = std::min(f.y0 + 1, H - 1);
  return f;
}

// depth[L,H,W] -> world-space texel positions [L,H,W,3]. Rays go through
// texel centers of the target camera digitized at (W,H); depth is z-depth
// along the target optical axis, so point = dir(u,v) * d in the camera frame.
template <typename T>
Var world_points(Tape<T>& tape, const Frustum& fr, Var depth, double slack_frac = 1e-3) {
  const Tensor<T>& d = tape.value(depth);
  if (d.rank() != 3) throw DimError("world_points: depth must be [L,H,W]");
  int64_t L = d.dim(0), H = d.dim(1), W = d.dim(2);
  Camera cam = fr.camera.scaled(W, H);
  Eigen::Matrix3d Rwc = cam.rotation_cw().transpose();
  Eigen::Vector3d c = cam.center();

  // Per-texel world ray directions (z-normalized), shared across layers.
  Tensor<double> dirs({H, W, 3});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      Eigen::Vector3d a = Rwc * cam.ray_dir_cam(double(j) + 0.5, double(i) + 0.5);
      for (int64_t k = 0; k < 3; ++k) dirs(i, j, k) = a[k];
    }

  double slack = slack_frac * (fr.far - fr.near);
  Tensor<T> out({L, H, W, 3});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        double dv = double(d(l, i, j));
        if (dv < fr.near - slack || dv > fr.far + slack)
          throw DimError("world_points: depth " + std::to_string(dv) + " outside [" +
                         std::to_string(fr.near) + ", " + std::to_string(fr.far) + "]");
        for (int64_t k = 0; k < 3; ++k)
          out(l, i, j, k) = T(dv * dirs(i, j, k) + c[k]);
      }

  return tape.node(
      std::move(out), {depth},
      [depth, dirs, L, H, W](Tape<T>& t, const Tensor<T>& g) {
        if (!t.needs_grad(depth)) return;
        Tensor<T>& gd = t.grad_acc(depth);
        for (int64_t l = 0; l < L; ++l)
          for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
              double acc = 0;
              for (int64_t k = 0; k < 3; ++k)
                acc += double(g(l, i, j, k)) * dirs(i, j, k);
              gd(l, i, j) += T(acc);
            }
      },
      4 * L * H * W);
}

template <typename T>
struct Gather {
  Var values;      // [L,H,W,C], zero where masked out
  Tensor<T> mask;  // [L,H,W], 1 where the full footprint is usable
};

// Bilinear backprojection of one input image onto layer texels.
template <typename T>
Gather<T> gather_backproject(Tape<T>& tape, Var image, const Camera& cam, Var points) {
  const Tensor<T>& img = tape.value(image);
  const Tensor<T>& pts = tape.value(points);
  if (img.rank() != 3) throw DimError("gather_backproject: image must be [Hi,Wi,C]");
  if (pts.rank() != 4 || pts.dim(3) != 3)
    throw DimError("gather_backproject: points must be [L,H,W,3]");
  int64_t Hi = img.dim(0), Wi = img.dim(1), C = img.dim(2);
  int64_t L = pts.dim(0), H = pts.dim(1), W = pts.dim(2);
  int64_t P = L * H * W;
  CamPod cp = CamPod::from(cam);

  Tensor<T> out({L, H, W, C});
  Tensor<T> mask({L, H, W});
  for (int64_t p = 0; p < P; ++p) {
    double pw[3] = {double(pts[p * 3]), double(pts[p * 3 + 1]), double(pts[p * 3 + 2])};
    double q[3];
    cp.to_cam(pw, q);
    if (q[2] <= kZMin) continue;
    double u = cp.fx * q[0] / q[2] + cp.cx;
    double v = cp.fy * q[1] / q[2] + cp.cy;
    Footprint f = footprint(u, v, Wi, Hi);
    if (!f.valid) continue;
    mask[p] = T(1);
    double w00 = (1 - f.fx) * (1 - f.fy), w10 = f.fx * (1 - f.fy);
    double w01 = (1 - f.fx) * f.fy, w11 = f.fx * f.fy;
    const T* i00 = img.data() + (f.y0 * Wi + f.x0) * C;
    const T* i10 = img.data() + (f.y0 * Wi + f.x1) * C;
    const T* i01 = img.data() + (f.y1 * Wi + f.x0) * C;
    const T* i11 = img.data() + (f.y1 * Wi + f.x1) * C;
    for (int64_t c = 0; c < C; ++c)
      out[p * C + c] =
          T(w00 * double(i00[c]) + w10 * double(i10[c]) + w01 * double(i01[c]) + w11 * double(i11[c]));
  }

  Var values = tape.node(
      std::move(out), {image, points},
      [image, points, cp, Hi, Wi, C, P](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& img = t.value(image);
        const Tensor<T>& pts = t.value(points);
        bool ni = t.needs_grad(image), np = t.needs_grad(points);
        for (int64_t p = 0; p < P; ++p) {
          double pw[3] = {double(pts[p * 3]), double(pts[p * 3 + 1]), double(pts[p * 3 + 2])};
          double q[3];
          cp.to_cam(pw, q);
          if (q[2] <= kZMin) continue;
          double u = cp.fx * q[0] / q[2] + cp.cx;
          double v = cp.fy * q[1] / q[2] + cp.cy;
          Footprint f = footprint(u, v, Wi, Hi);
          if (!f.valid) continue;
          double w00 = (1 - f.fx) * (1 - f.fy), w10 = f.fx * (1 - f.fy);
          double w01 = (1 - f.fx) * f.fy, w11 = f.fx * f.fy;
          int64_t o00 = (f.y0 * Wi + f.x0) * C, o10 = (f.y0 * Wi + f.x1) * C;
          int64_t o01 = (f.y1 * Wi + f.x0) * C, o11 = (f.y1 * Wi + f.x1) * C;
          if (ni) {
            Tensor<T>& gi = t.grad_acc(image);
            for (int64_t c = 0; c < C; ++c) {
              T gv = g[p * C + c];
              gi[o00 + c] += T(w00) * gv;
              gi[o10 + c] += T(w10) * gv;
              gi[o01 + c] += T(w01) * gv;
              gi[o11 + c] += T(w11) * gv;
            }
          }
          if (np) {
            double dLdu = 0, dLdv = 0;
            for (int64_t c = 0; c < C; ++c) {
              double gv = double(g[p * C + c]);
              double gx = (1 - f.fy) * (double(img[o10 + c]) - double(img[o00 + c])) +
                          f.fy * (double(img[o11 + c]) - double(img[o01 + c]));
              double gy = (1 - f.fx) * (double(img[o01 + c]) - double(img[o00 + c])) +
                          f.fx * (double(img[o11 + c]) - double(img[o10 + c]));
              dLdu += gv * gx;
              dLdv += gv * gy;
            }
            double dq[3] = {dLdu * cp.fx / q[2], dLdv * cp.fy / q[2],
                            -(dLdu * cp.fx * q[0] + dLdv * cp.fy * q[1]) / (q[2] * q[2])};
            double dp[3];
            cp.rot_transpose(dq, dp);
            Tensor<T>& gp = t.grad_acc(points);
            for (int64_t k = 0; k < 3; ++k) gp[p * 3 + k] += T(dp[k]);
          }
        }
      },
      P * (20 + 8 * C));
  return {values, std::move(mask)};
}

// Bilinear scatter of per-layer values into a destination view. Output
// [L,Hi,Wi,C+1]; the last channel accumulates the bilinear weights so the
// caller can normalize. Texels whose footprint fails the gather rule
// contribute nothing at all.
template <typename T>
Var splat_accumulate(Tape<T>& tape, Var values, const Camera& cam, Var points) {
  const Tensor<T>& val = tape.value(values);
  const Tensor<T>& pts = tape.value(points);
  if (val.rank() != 4) throw DimError("splat_accumulate: values must be [L,H,W,C]");
  if (pts.rank() != 4 || pts.dim(3) != 3)
    throw DimError("splat_accumulate: points must be [L,H,W,3]");
  int64_t L = val.dim(0), H = val.dim(1), W = val.dim(2), C = val.dim(3);
  if (pts.dim(0) != L || pts.dim(1) != H || pts.dim(2) != W)
    throw DimError("splat_accumulate: values/points extent mismatch");
  int64_t Hi = cam.height, Wi = cam.width;
  int64_t PL = H * W;
  CamPod cp = CamPod::from(cam);

  Tensor<T> out({L, Hi, Wi, C + 1});
  for (int64_t l = 0; l < L; ++l)
    for (int64_t s = 0; s < PL; ++s) {
      int64_t p = l * PL + s;
      double pw[3] = {double(pts[p * 3]), double(pts[p * 3 + 1]), double(pts[p * 3 + 2])};
      double q[3];
      cp.to_cam(pw, q);
      if (q[2] <= kZMin) continue;
      double u = cp.fx * q[0] / q[2] + cp.cx;
      double v = cp.fy * q[1] / q[2] + cp.cy;
      Footprint f = footprint(u, v, Wi, Hi);
      if (!f.valid) continue;
      double w[4] = {(1 - f.fx) * (1 - f.fy), f.fx * (1 - f.fy), (1 - f.fx) * f.fy, f.fx * f.fy};
      int64_t tap[4] = {(l * Hi + f.y0) * Wi + f.x0, (l * Hi + f.y0) * Wi + f.x1,
                        (l * Hi + f.y1) * Wi + f.x0, (l * Hi + f.y1) * Wi + f.x1};
      for (int k = 0; k < 4; ++k) {
        T* dst = out.data() + tap[k] * (C + 1);
        for (int64_t c = 0; c < C; ++c) dst[c] += T(w[k]) * val[p * C + c];
        dst[C] += T(w[k]);
      }
    }

  return tape.node(
      std::move(out), {values, points},
      [values, points, cp, L, PL, C, Hi, Wi](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& val = t.value(values);
        const Tensor<T>& pts = t.value(points);
        bool nv = t.needs_grad(values), np = t.needs_grad(points);
        for (int64_t l = 0; l < L; ++l)
          for (int64_t s = 0; s < PL; ++s) {
            int64_t p = l * PL + s;
            double pw[3] = {double(pts[p * 3]), double(pts[p * 3 + 1]), double(pts[p * 3 + 2])};
            double q[3];
            cp.to_cam(pw, q);
            if (q[2] <= kZMin) continue;
            double u = cp.fx * q[0] / q[2] + cp.cx;
            double v = cp.fy * q[1] / q[2] + cp.cy;
            Footprint f = footprint(u, v, Wi, Hi);
            if (!f.valid) continue;
            double w[4] = {(1 - f.fx) * (1 - f.fy), f.fx * (1 - f.fy), (1 - f.fx) * f.fy,
                           f.fx * f.fy};
            double dwdu[4] = {-(1 - f.fy), (1 - f.fy), -f.fy, f.fy};
            double dwdv[4] = {-(1 - f.fx), -f.fx, (1 - f.fx), f.fx};
            int64_t tap[4] = {(l * Hi + f.y0) * Wi + f.x0, (l * Hi + f.y0) * Wi + f.x1,
                              (l * Hi + f.y1) * Wi + f.x0, (l * Hi + f.y1) * Wi + f.x1};
            double dLdu = 0, dLdv = 0;
            for (int k = 0; k < 4; ++k) {
              const T* gr = g.data() + tap[k] * (C + 1);
              if (nv) {
                Tensor<T>& gv = t.grad_acc(values);
                for (int64_t c = 0; c < C; ++c) gv[p * C + c] += T(w[k]) * gr[c];
              }
              if (np) {
                double dLdw = double(gr[C]);
                for (int64_t c = 0; c < C; ++c) dLdw += double(gr[c]) * double(val[p * C + c]);
                dLdu += dLdw * dwdu[k];
                dLdv += dLdw * dwdv[k];
              }
            }
            if (np) {
              double dq[3] = {dLdu * cp.fx / q[2], dLdv * cp.fy / q[2],
                              -(dLdu * cp.fx * q[0] + dLdv * cp.fy * q[1]) / (q[2] * q[2])};
              double dp[3];
              cp.rot_transpose(dq, dp);
              Tensor<T>& gp = t.grad_acc(points);
              for (int64_t k = 0; k < 3; ++k) gp[p * 3 + k] += T(dp[k]);
            }
          }
      },
      L * PL * (20 + 8 * C));
}

// Normalized splat: scatter, then divide by max(weight_sum, eps) on-tape.
template <typename T>
Var splat_project(Tape<T>& tape, Var values, const Camera& cam, Var points, double eps = 1e-4) {
  const Tensor<T>& val = tape.value(values);
  int64_t L = val.dim(0), C = val.dim(3);
  Var acc = splat_accumulate(tape, values, cam, points);
  Var raw = tape.slice_last(acc, 0, C);
  Var wsum = tape.reshape(tape.slice_last(acc, C, 1), {L, cam.height, cam.width});
  Var norm = tape.recip(tape.clamp_min(wsum, eps));
  return tape.row_scale(raw, norm);
}

// --- ray directional encoding ---

constexpr int kRayOctaves = 8;

inline int64_t ray_encoding_width(int octaves) { return 4 * int64_t(octaves); }

// Per-ray near/far plane crossing difference in target NDC, tanh-squashed.
// Returns [h, w, 2]; pure geometry, no learned parameters.
//
// For a ray o + t*d in the target frame, the NDC difference between its far
// and near plane hits reduces in closed form to
//   delta_x = fx * (o.x - (d.x/d.z) * o.z) * (1/far - 1/near) / (W/2)
// (same for y). Evaluating this form directly makes the encoding exactly
// zero for rays through the target's optical center and keeps grazing rays
// finite: d.z is clamped away from zero and tanh saturates the result.
inline Tensor<double> ray_plane_delta(const Camera& input_cam, const Frustum& fr, int64_t h,
                                      int64_t w) {
  fr.validate();
  Camera grid_cam = input_cam.scaled(w, h);
  Eigen::Matrix3d Rwc_in = grid_cam.rotation_cw().transpose();
  Eigen::Vector3d origin_w = grid_cam.center();

  const Camera& tc = fr.camera;
  Eigen::Matrix3d Rcw_t = tc.rotation_cw();
  Eigen::Vector3d t_t = tc.cam_from_world.topRightCorner<3, 1>();
  Eigen::Vector3d o = Rcw_t * origin_w + t_t;  // input center in target frame

  double inv_span = 1.0 / fr.far - 1.0 / fr.near;
  double half_w = double(tc.width) / 2.0, half_h = double(tc.height) / 2.0;

  Tensor<double> delta({h, w, 2});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      Eigen::Vector3d dir_w = Rwc_in * grid_cam.ray_dir_cam(double(j) + 0.5, double(i) + 0.5);
      Eigen::Vector3d d = Rcw_t * dir_w;  // ray direction in target frame
      double dz = d.z() >= 0 ? std::max(d.z(), 1e-6) : std::min(d.z(), -1e-6);
      double sx = o.x() - (d.x() / dz) * o.z();
      double sy = o.y() - (d.y() / dz) * o.z();
      delta(i, j, 0) = std::tanh(tc.fx * sx * inv_span / half_w);
      delta(i, j, 1) = std::tanh(tc.fy * sy * inv_span / half_h);
    }
  return delta;
}

// Sinusoidal expansion of the squashed delta. Layout per texel: for each
// component (x then y), octaves ascending, sin before cos.
template <typename T>
Tensor<T> ray_encoding_base(const Camera& input_cam, const Frustum& fr, int64_t h, int64_t w,
                            int octaves = kRayOctaves) {
  Tensor<double> delta = ray_plane_delta(input_cam, fr, h, w);
  int64_t F = ray_encoding_width(octaves);
  Tensor<T> out({h, w, F});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t comp = 0; comp < 2; ++comp) {
        double e = delta(i, j, comp);
        for (int o = 0; o < octaves; ++o) {
          double arg = std::ldexp(M_PI, o) * e;  // 2^o * pi * e
          out(i, j, comp * 2 * octaves + 2 * o) = T(std::sin(arg));
          out(i, j, comp * 2 * octaves + 2 * o + 1) = T(std::cos(arg));
        }
      }
  return out;
}

// Full encoding with a resolution-specific projection to C channels.
template <typename T>
Tensor<T> ray_directional_encoding(const Camera& input_cam, const Frustum& fr, int64_t h,
                                   int64_t w, const Tensor<T>& projection,
                                   int octaves = kRayOctaves) {
  int64_t F = ray_encoding_width(octaves);
  if (projection.rank() != 2 || projection.dim(0) != F)
    throw DimError("ray_directional_encoding: projection must be [" + std::to_string(F) + ", C]");
  Tensor<T> base = ray_encoding_base<T>(input_cam, fr, h, w, octaves);
  int64_t C = projection.dim(1);
  Tensor<T> out({h, w, C});
  detail::Kern<T>::matmul(base.data(), projection.data(), out.data(), h * w, F, C);
  return out;
}

}  // namespace lvs::geo
