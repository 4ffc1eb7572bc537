// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/blend_model.hpp"

#include <Eigen/SVD>

namespace gshead {

namespace {

VecX flatten_vertices(const MatX& vertices) {
  VecX v(vertices.rows() * 3);
  for (int i = 0; i < vertices.rows(); ++i)
    for (int k = 0; k < 3; ++k) v[3 * i + k] = vertices(i, k);
  return v;
}

}  // namespace

HairBlendModel build_blend_model(const std::vector<TemplateMesh>& meshes, int num_coeffs) {
  if (meshes.size() < 2) throw ConfigError("blend model needs at least 2 meshes");
  if (num_coeffs < 1) throw ConfigError("blend model needs at least 1 coefficient");
  const int V = meshes[0].num_vertices();
  for (const auto& m : meshes) {
    if (m.num_vertices() != V || m.faces != meshes[0].faces)
      throw ShapeError("blend model meshes must share one topology");
  }

  const int N = static_cast<int>(meshes.size());
  MatX stack(N, 3 * V);
  for (int i = 0; i < N; ++i) stack.row(i) = flatten_vertices(meshes[i].vertices).transpose();

  HairBlendModel model;
  model.num_coeffs = num_coeffs;
  model.mean_shape = stack.colwise().mean().transpose();
  MatX centered = stack.rowwise() - model.mean_shape.transpose();

  // One global standard deviation over all entries (population convention, so
  // duplicating the mesh list leaves it unchanged).
  model.sigma = std::sqrt(centered.squaredNorm() / (double(N) * 3.0 * V));
  if (model.sigma <= 0.0) throw DataError("blend model meshes have no shape variance");
  centered /= model.sigma;

  Eigen::BDCSVD<MatX> svd(centered, Eigen::ComputeThinV);
  const VecX& sv = svd.singularValues();
  const double tol = 1e-10 * sv[0];
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) rank += (sv[i] > tol);
  model.effective_rank = std::min(rank, num_coeffs);

  model.components = MatX::Zero(num_coeffs, 3 * V);
  for (int i = 0; i < model.effective_rank; ++i) {
    VecX comp = svd.matrixV().col(i);
    // Deterministic sign: the entry of largest magnitude is positive.
    int arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp[arg] < 0.0) comp = -comp;
    model.components.row(i) = comp.transpose();
  }
  return model;
}

MatX blend_hair_shape(const HairBlendModel& model, const VecX& theta) {
  if (theta.size() != model.num_coeffs) throw ShapeError("theta length does not match the model");
  const VecX flat = model.mean_shape + model.sigma * (model.components.transpose() * theta);
  MatX vertices(model.num_vertices(), 3);
  for (int i = 0; i < vertices.rows(); ++i)
    for (int k = 0; k < 3; ++k) vertices(i, k) = flat[3 * i + k];
  return vertices;
}

VecX project_to_coeffs(const HairBlendModel& model, const MatX& vertices) {
  if (vertices.rows() != model.num_vertices()) throw ShapeError("vertex count mismatch");
  return model.components * (flatten_vertices(vertices) - model.mean_shape) / model.sigma;
}

VecX blend_shape_adjoint(const HairBlendModel& model, const MatX& d_vertices) {
  if (d_vertices.rows() != model.num_vertices()) throw ShapeError("vertex gradient count mismatch");
  return model.sigma * (model.components * flatten_vertices(d_vertices));
}

}  // namespace gshead
