// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/camera.hpp"

namespace gshead {

Eigen::Matrix<double, 25, 1> CameraPose::flatten() const {
  Eigen::Matrix<double, 25, 1> v;
  int k = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v[k++] = extrinsic(r, c);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[k++] = intrinsic(r, c);
  return v;
}

CameraPose CameraPose::from_flat(const Eigen::Matrix<double, 25, 1>& v) {
  CameraPose cam;
  int k = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.extrinsic(r, c) = v[k++];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.intrinsic(r, c) = v[k++];
  return cam;
}

void CameraPose::validate() const {
  const Mat3 R = rotation();
  const Mat3 err = R.transpose() * R - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > 1e-5) throw DataError("camera extrinsic rotation is not orthonormal");
  if (R.determinant() < 0.0) throw DataError("camera extrinsic rotation has negative determinant");
  if (intrinsic(0, 0) <= 0.0 || intrinsic(1, 1) <= 0.0) throw DataError("camera focal entries must be positive");
  if (intrinsic(0, 1) != 0.0) throw DataError("camera intrinsic skew must be zero");
}

CameraPose make_ring_camera(double yaw_deg, double pitch_deg, double radius, double focal_norm) {
  const double yaw = yaw_deg * M_PI / 180.0;
  const double pitch = pitch_deg * M_PI / 180.0;
  // Camera center on the ring; world up is +Y.
  const Vec3 center(radius * std::cos(pitch) * std::sin(yaw), radius * std::sin(pitch),
                    radius * std::cos(pitch) * std::cos(yaw));
  const Vec3 target(0.0, 0.0, 0.0);
  const Vec3 up(0.0, 1.0, 0.0);

  // Look-at with camera +Z pointing at the target (z = depth into the scene),
  // +X right, +Y down in image space.
  const Vec3 fwd = (target - center).normalized();
  Vec3 right = fwd.cross(up);
  if (right.norm() < 1e-9) right = Vec3(1.0, 0.0, 0.0);
  right.normalize();
  const Vec3 down = fwd.cross(right).normalized();

  CameraPose cam;
  Mat3 R;
  R.row(0) = right.transpose();
  R.row(1) = down.transpose();
  R.row(2) = fwd.transpose();
  cam.extrinsic.setIdentity();
  cam.extrinsic.topLeftCorner<3, 3>() = R;
  cam.extrinsic.topRightCorner<3, 1>() = -R * center;
  cam.intrinsic.setIdentity();
  cam.intrinsic(0, 0) = focal_norm;
  cam.intrinsic(1, 1) = focal_norm;
  cam.intrinsic(0, 2) = 0.5;
  cam.intrinsic(1, 2) = 0.5;
  return cam;
}

}  // namespace gshead
