#include "lvs/camera.hpp"

namespace lvs {

Camera Camera::make(double fx, double fy, double cx, double cy, int64_t width, int64_t height,
                    const Eigen::Matrix4d& cam_from_world) {
  Camera c;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.width = width;
  c.height = height;
  c.cam_from_world = cam_from_world;
  c.validate();
  return c;
}

void Camera::validate() const {
  if (fx <= 0 || fy <= 0) throw DimError("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DimError("camera: image size must be positive");
  Eigen::Matrix3d R = rotation_cw();
  double dev = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (dev >= 1e-5)
    throw DimError("camera: rotation block not orthonormal (deviation " + std::to_string(dev) + ")");
  Eigen::RowVector4d bottom = cam_from_world.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    throw DimError("camera: transform bottom row must be (0,0,0,1)");
}

Eigen::Matrix3d Camera::K() const {
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

Eigen::Matrix4d Camera::world_from_cam() const {
  Eigen::Matrix3d R = rotation_cw();
  Eigen::Vector3d t = cam_from_world.topRightCorner<3, 1>();
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  inv.topLeftCorner<3, 3>() = R.transpose();
  inv.topRightCorner<3, 1>() = -R.transpose() * t;
  return inv;
}

Eigen::Vector3d Camera::center() const { return world_from_cam().topRightCorner<3, 1>(); }

Eigen::Vector3d Camera::ray_dir_cam(double u, double v) const {
  return {(u - cx) / fx, (v - cy) / fy, 1.0};
}

Eigen::Vector3d Camera::unproject(double u, double v, double z) const {
  Eigen::Vector3d p_cam = ray_dir_cam(u, v) * z;
  return world_from_cam().topLeftCorner<3, 3>() * p_cam + world_from_cam().topRightCorner<3, 1>();
}

Eigen::Vector3d Camera::project(const Eigen::Vector3d& p_world) const {
  Eigen::Vector3d p_cam =
      rotation_cw() * p_world + cam_from_world.topRightCorner<3, 1>();
  double z = p_cam.z();
  return {fx * p_cam.x() / z + cx, fy * p_cam.y() / z + cy, z};
}

Camera Camera::scaled(int64_t new_width, int64_t new_height) const {
  Camera c = *this;
  double sx = double(new_width) / double(width);
  double sy = double(new_height) / double(height);
  c.fx = fx * sx;
  c.cx = cx * sx;
  c.fy = fy * sy;
  c.cy = cy * sy;
  c.width = new_width;
  c.height = new_height;
  return c;
}

void Frustum::validate() const {
  camera.validate();
  if (!(near > 0 && far > near)) throw DimError("frustum: requires 0 < near < far");
}

}  // namespace lvs
