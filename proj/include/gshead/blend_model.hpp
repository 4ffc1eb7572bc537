// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/mesh.hpp"

namespace gshead {

// Linear blend-shape model over registered meshes: shape(theta) = mean +
// sigma * sum_n theta_n * X_n, with orthonormal component rows X.
struct HairBlendModel {
  VecX mean_shape;   // 3V
  double sigma = 1.0;
  MatX components;   // num_coeffs x 3V, orthonormal rows (zero-padded past rank)
  int num_coeffs = 0;
  int effective_rank = 0;

  int num_vertices() const { return static_cast<int>(mean_shape.size()) / 3; }
};

// PCA over the flattened vertex stacks of topologically identical meshes.
// Normalization: mean-centering plus one global standard deviation.
HairBlendModel build_blend_model(const std::vector<TemplateMesh>& meshes, int num_coeffs = 32);

// Exact linear evaluation; the Jacobian w.r.t. theta is sigma * X^T.
MatX blend_hair_shape(const HairBlendModel& model, const VecX& theta);

// Least-squares coefficients of a vertex configuration (projection onto the
// component rows).
VecX project_to_coeffs(const HairBlendModel& model, const MatX& vertices);

// Pullback of per-vertex gradients to theta: sigma * X * vec(d_vertices).
VecX blend_shape_adjoint(const HairBlendModel& model, const MatX& d_vertices);

}  // namespace gshead
