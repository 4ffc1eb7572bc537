// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/gaussians.hpp"

namespace gshead {

namespace {
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;
constexpr double kQuatEps = 1e-12;
}  // namespace

void GaussianPrimitive::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-6) throw DataError("gaussian quaternion is not unit");
  if (opacity < 0.0 || opacity > 1.0) throw DataError("gaussian opacity outside [0,1]");
  for (int i = 0; i < 3; ++i) {
    if (color[i] < 0.0 || color[i] > 1.0) throw DataError("gaussian color outside [0,1]");
    if (scale[i] <= 0.0) throw DataError("gaussian scale must be positive");
  }
  int ones = 0;
  for (int i = 0; i < 3; ++i) {
    if (label[i] == 1.0) ++ones;
    else if (label[i] != 0.0) throw DataError("gaussian label is not one-hot");
  }
  if (ones != 1) throw DataError("gaussian label is not one-hot");
}

void GaussianSet::append(const GaussianSet& other) {
  gaussians.insert(gaussians.end(), other.gaussians.begin(), other.gaussians.end());
  anchors.insert(anchors.end(), other.anchors.begin(), other.anchors.end());
  deltas.insert(deltas.end(), other.deltas.begin(), other.deltas.end());
}

GaussianSet spawn_gaussians(const GaussianTextureMap& texture, const UvRig& rig,
                            const TemplateMesh& mesh, double gamma, PartLabel label) {
  if (texture.resolution != rig.resolution)
    throw ShapeError("texture resolution does not match rig resolution");
  if (gamma <= 0.0) throw ConfigError("gamma must be positive");
  texture.require_finite();

  const std::vector<Vec3> anchors = surface_points(rig, mesh);
  const Vec3 one_hot = label_one_hot(label);

  GaussianSet set;
  set.gaussians.reserve(anchors.size());
  set.anchors = anchors;
  set.deltas.reserve(anchors.size());

  size_t gi = 0;
  const int res = texture.resolution;
  for (int row = 0; row < res; ++row) {
    for (int col = 0; col < res; ++col) {
      if (rig.at(row, col).face < 0) continue;
      const double* t = texture.texel(row, col);

      GaussianPrimitive g;
      const Vec3 delta(clamp(t[0], -gamma, gamma), clamp(t[1], -gamma, gamma),
                       clamp(t[2], -gamma, gamma));
      g.position = anchors[gi] + delta;

      const Vec4 raw_q(t[3], t[4], t[5], t[6]);
      const double qn = raw_q.norm();
      g.rotation = qn < kQuatEps ? Vec4(1.0, 0.0, 0.0, 0.0) : Vec4(raw_q / qn);

      for (int k = 0; k < 3; ++k) g.scale[k] = clamp(std::exp(t[7 + k]), kScaleMin, kScaleMax);
      for (int k = 0; k < 3; ++k) g.color[k] = sigmoid(t[10 + k]);
      g.opacity = sigmoid(t[13]);
      g.label = one_hot;

      set.gaussians.push_back(g);
      set.deltas.push_back(delta);
      ++gi;
    }
  }
  return set;
}

void spawn_gaussians_backward(const GaussianTextureMap& texture, const UvRig& rig,
                              const TemplateMesh& mesh, double gamma, const SetGrads& grads,
                              const std::vector<Vec3>* extra_d_delta,
                              GaussianTextureMap* d_texture, MatX* d_vertices) {
  if (texture.resolution != rig.resolution)
    throw ShapeError("texture resolution does not match rig resolution");
  if (d_texture->resolution != texture.resolution)
    throw ShapeError("texture gradient resolution mismatch");

  size_t gi = 0;
  const int res = texture.resolution;
  for (int row = 0; row < res; ++row) {
    for (int col = 0; col < res; ++col) {
      const auto& bind = rig.at(row, col);
      if (bind.face < 0) continue;
      const double* t = texture.texel(row, col);

      Vec3 d_pos = grads.d_position[gi];
      if (d_vertices != nullptr) {
        // Anchor is the barycentric combination of the face vertices.
        for (int k = 0; k < 3; ++k)
          d_vertices->row(mesh.faces(bind.face, k)) += bind.bary[k] * d_pos.transpose();
      }
      Vec3 d_delta = d_pos;
      if (extra_d_delta != nullptr) d_delta += (*extra_d_delta)[gi];
      for (int k = 0; k < 3; ++k) {
        // Hard clamp: zero gradient outside the interval.
        if (t[k] > -gamma && t[k] < gamma) d_texture->at(row, col, k) += d_delta[k];
      }

      const Vec4 raw_q(t[3], t[4], t[5], t[6]);
      const double qn = raw_q.norm();
      if (qn >= kQuatEps) {
        const Vec4 q = raw_q / qn;
        const Vec4 gq = grads.d_rotation[gi];
        const Vec4 d_raw = (gq - q * q.dot(gq)) / qn;
        for (int k = 0; k < 4; ++k) d_texture->at(row, col, 3 + k) += d_raw[k];
      }

      for (int k = 0; k < 3; ++k) {
        const double s = std::exp(t[7 + k]);
        if (s > kScaleMin && s < kScaleMax) d_texture->at(row, col, 7 + k) += grads.d_scale[gi][k] * s;
      }
      for (int k = 0; k < 3; ++k) {
        const double c = sigmoid(t[10 + k]);
        d_texture->at(row, col, 10 + k) += grads.d_color[gi][k] * c * (1.0 - c);
      }
      const double o = sigmoid(t[13]);
      d_texture->at(row, col, 13) += grads.d_opacity[gi] * o * (1.0 - o);
      ++gi;
    }
  }
}

}  // namespace gshead
