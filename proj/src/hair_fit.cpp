// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/hair_fit.hpp"

#include "gshead/adam.hpp"
#include "gshead/losses.hpp"

namespace gshead {

namespace {

// Parameter layout: 9F jacobian entries (row-major per face) then the 3
// translation components.
VecX pack(const JacobianField& f) {
  const int F = static_cast<int>(f.jacobians.size());
  VecX p(9 * F + 3);
  for (int i = 0; i < F; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p[9 * i + 3 * r + c] = f.jacobians[i](r, c);
  p.tail(3) = f.translation;
  return p;
}

JacobianField unpack(const VecX& p, int F) {
  JacobianField f;
  f.jacobians.resize(F);
  for (int i = 0; i < F; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) f.jacobians[i](r, c) = p[9 * i + 3 * r + c];
  f.translation = p.tail(3);
  return f;
}

}  // namespace

HairFitResult fit_hair_mesh(const TemplateMesh& tmpl, const std::vector<FitTarget>& targets,
                            const HairFitConfig& config) {
  if (targets.empty()) throw ConfigError("hair fit needs at least one target view");
  for (const auto& t : targets) {
    if (t.labels.height != config.image_height || t.labels.width != config.image_width)
      throw ShapeError("target label image size does not match the fit config");
  }

  const MeshGradientOperator op(tmpl);
  const int F = op.num_faces();
  VecX params = pack(JacobianField::identity(F));
  Adam adam(config.learning_rate);

  HairFitResult result;
  result.mesh = tmpl;
  result.loss_trace.reserve(config.max_iterations);
  const double inv_views = 1.0 / static_cast<double>(targets.size());

  VecX best_params = params;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int it = 0; it < config.max_iterations; ++it) {
    // Cosine decay freezes the parameter walk once the silhouettes match.
    adam.lr = config.learning_rate * 0.5 *
              (1.0 + std::cos(M_PI * double(it) / double(config.max_iterations)));
    const JacobianField field = unpack(params, F);
    const MatX vertices = op.poisson_solve(field);

    TemplateMesh deformed = tmpl;
    deformed.vertices = vertices;
    LabeledMeshScene scene;
    scene.parts = {deformed};

    const double softness = config.softness_at(it);
    double loss = 0.0;
    MatX d_vertices = MatX::Zero(vertices.rows(), 3);
    for (const auto& target : targets) {
      const Image pred = render_mesh_labels(scene, target.camera, config.image_width,
                                            config.image_height, softness);
      Image d_pred(pred.height, pred.width, 1, 0.0);
      loss += inv_views * l1_loss(pred, target.labels, &d_pred, inv_views);
      const auto dv = render_mesh_labels_backward(scene, target.camera, config.image_width,
                                                  config.image_height, softness, d_pred);
      d_vertices += dv[0];
    }
    if (!std::isfinite(loss))
      throw NumericError("hair fit loss diverged at iteration " + std::to_string(it));
    result.loss_trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_params = params;
    }

    JacobianField d_field;
    op.poisson_solve_adjoint(d_vertices, &d_field);
    VecX grad = pack(d_field);
    adam.step(params, grad);
  }

  // Return the best iterate seen within the budget.
  const JacobianField field = unpack(best_params, F);
  result.field = field;
  result.mesh.vertices = op.poisson_solve(field);
  result.final_loss = best_loss;
  return result;
}

}  // namespace gshead
