#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "lvs/tensor.hpp"

namespace lvs {

// Pinhole camera. Pixel (u,v) has u along +x (columns) and v along +y (rows);
// the texel at row i, column j is centered at (j+0.5, i+0.5). Projection uses
// z-depth: a point at camera-frame depth z projects to
// u = fx*x/z + cx, v = fy*y/z + cy.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int64_t width = 0, height = 0;
  Eigen::Matrix4d cam_from_world = Eigen::Matrix4d::Identity();

  static Camera make(double fx, double fy, double cx, double cy, int64_t width, int64_t height,
                     const Eigen::Matrix4d& cam_from_world);

  void validate() const;

  Eigen::Matrix3d K() const;
  Eigen::Matrix4d world_from_cam() const;
  Eigen::Vector3d center() const;  // world-space optical center
  Eigen::Matrix3d rotation_cw() const { return cam_from_world.topLeftCorner<3, 3>(); }

  // Camera-frame ray direction through pixel (u,v), normalized so z = 1.
  Eigen::Vector3d ray_dir_cam(double u, double v) const;

  // Pixel + z-depth to world point.
  Eigen::Vector3d unproject(double u, double v, double z) const;

  // World point to (u, v, z_cam). z_cam <= 0 means behind the camera.
  Eigen::Vector3d project(const Eigen::Vector3d& p_world) const;

  // Same physical camera digitized at a different resolution: intrinsics
  // scale proportionally per axis.
  Camera scaled(int64_t new_width, int64_t new_height) const;
};

// cam_from_world built from a world-frame camera orientation and position.
inline Eigen::Matrix4d pose_cam_from_world(const Eigen::Matrix3d& world_R_cam,
                                           const Eigen::Vector3d& center) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = world_R_cam.transpose();
  m.topRightCorner<3, 1>() = -world_R_cam.transpose() * center;
  return m;
}

// Target view volume: everything the layered representation covers.
struct Frustum {
  Camera camera;
  double near = 0;
  double far = 0;

  void validate() const;
};

}  // namespace lvs
