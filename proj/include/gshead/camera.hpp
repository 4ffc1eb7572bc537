// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/common.hpp"

namespace gshead {

// World-to-camera extrinsic (row-major 4x4) plus a 3x3 intrinsic whose focal
// lengths and principal point live in normalized [0,1]^2 image coordinates.
// Flattened the pose is 25 values: 16 extrinsic followed by 9 intrinsic.
struct CameraPose {
  Mat4 extrinsic = Mat4::Identity();
  Mat3 intrinsic = Mat3::Identity();

  Mat3 rotation() const { return extrinsic.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return extrinsic.topRightCorner<3, 1>(); }

  Vec3 to_camera(const Vec3& p_world) const { return rotation() * p_world + translation(); }

  // Perspective projection to pixel coordinates for a given image size.
  // Returns (px, py, camera z).
  Vec3 project_px(const Vec3& p_world, int img_w, int img_h) const {
    const Vec3 pc = to_camera(p_world);
    const double fx = intrinsic(0, 0) * img_w;
    const double fy = intrinsic(1, 1) * img_h;
    const double cx = intrinsic(0, 2) * img_w;
    const double cy = intrinsic(1, 2) * img_h;
    return {fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy, pc.z()};
  }

  // Flatten to the 25-value wire layout (row-major extrinsic, then intrinsic).
  Eigen::Matrix<double, 25, 1> flatten() const;
  static CameraPose from_flat(const Eigen::Matrix<double, 25, 1>& v);

  void validate() const;
};

// Camera on a ring of given radius looking at the origin. Yaw in degrees around
// the +Y (up) axis, pitch in degrees above the horizontal plane.
CameraPose make_ring_camera(double yaw_deg, double pitch_deg, double radius, double focal_norm);

}  // namespace gshead
