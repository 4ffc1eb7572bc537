// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/texture.hpp"
#include "gshead/uv_rig.hpp"

namespace gshead {

// Segmentation class ids; one-hot channel layout is [background, face, hair].
enum class PartLabel : int { Background = 0, Face = 1, Hair = 2 };

inline Vec3 label_one_hot(PartLabel label) {
  Vec3 v = Vec3::Zero();
  v[static_cast<int>(label)] = 1.0;
  return v;
}

// One splat: 14 parameters plus its one-hot part label. Position and scale are
// world millimeters, quaternion is (w, x, y, z) unit, color/opacity in [0,1].
struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  Vec3 scale = Vec3::Ones();
  Vec3 color = Vec3(0.5, 0.5, 0.5);
  double opacity = 0.5;
  Vec3 label = Vec3(1.0, 0.0, 0.0);

  void validate() const;
};

// Flat splat list plus per-Gaussian anchors and clamped delta positions, which
// the position regularizer consumes.
struct GaussianSet {
  std::vector<GaussianPrimitive> gaussians;
  std::vector<Vec3> anchors;
  std::vector<Vec3> deltas;  // position - anchor, post-clamp

  size_t size() const { return gaussians.size(); }
  void append(const GaussianSet& other);
};

// Decode a raw texture into splats anchored on the (possibly deformed) mesh.
// Activations: delta position clamped to [-gamma, gamma] per component,
// quaternion normalized (all-zero maps to identity), scale exp-clamped to
// [1e-4, 1e4], color and opacity through sigmoid.
GaussianSet spawn_gaussians(const GaussianTextureMap& texture, const UvRig& rig,
                            const TemplateMesh& mesh, double gamma, PartLabel label);

// Gradients flowing back from the renderer into a spawned set.
struct SetGrads {
  std::vector<Vec3> d_position;
  std::vector<Vec4> d_rotation;
  std::vector<Vec3> d_scale;
  std::vector<Vec3> d_color;
  std::vector<double> d_opacity;
  std::vector<Vec3> d_label;

  explicit SetGrads(size_t n = 0)
      : d_position(n, Vec3::Zero()),
        d_rotation(n, Vec4::Zero()),
        d_scale(n, Vec3::Zero()),
        d_color(n, Vec3::Zero()),
        d_opacity(n, 0.0),
        d_label(n, Vec3::Zero()) {}
};

// Backward of spawn_gaussians through the activations. Accumulates into the
// raw texture gradient and, via the anchors, into per-vertex gradients
// (d_vertices may be null when the mesh is fixed). extra_d_delta lets loss
// terms that consume the clamped deltas inject their gradient.
void spawn_gaussians_backward(const GaussianTextureMap& texture, const UvRig& rig,
                              const TemplateMesh& mesh, double gamma, const SetGrads& grads,
                              const std::vector<Vec3>* extra_d_delta,
                              GaussianTextureMap* d_texture, MatX* d_vertices);

}  // namespace gshead
