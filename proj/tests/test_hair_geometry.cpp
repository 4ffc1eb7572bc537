// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/blend_model.hpp"
#include "gshead/hair_fit.hpp"
#include "gshead/jacobian.hpp"
#include "gshead/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace gshead;
using namespace gshead::testutil;

namespace {

MatX smooth_deformation(const TemplateMesh& mesh, uint64_t seed, double amp = 8.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 2.0 * M_PI);
  const double p0 = uni(rng), p1 = uni(rng), p2 = uni(rng);
  MatX out = mesh.vertices;
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const Vec3 v = mesh.vertex(i) / 100.0;
    out(i, 0) += amp * std::sin(v.y() + p0);
    out(i, 1) += amp * std::cos(v.z() + p1) * std::sin(v.x());
    out(i, 2) += amp * std::sin(v.x() + v.y() + p2);
  }
  return out;
}

}  // namespace

TEST_CASE("deformation gradients: identity at rest, equivariant under rotation") {
  const TemplateMesh mesh = make_hair_template(12, 8, 100.0);
  const MeshGradientOperator op(mesh);

  for (const Mat3& g : op.deformation_gradients(mesh.vertices))
    CHECK((g - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10);

  const Mat3 R = Eigen::AngleAxisd(0.73, Vec3(1, 2, 0.5).normalized()).toRotationMatrix();
  const MatX rotated = mesh.vertices * R.transpose();
  for (const Mat3& g : op.deformation_gradients(rotated))
    CHECK((g - R).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("deformation gradients match an independent per-face least-squares fit") {
  const TemplateMesh mesh = make_hair_template(10, 6, 100.0);
  const MeshGradientOperator op(mesh);
  const MatX deformed = smooth_deformation(mesh, 41);
  const auto grads = op.deformation_gradients(deformed);

  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3 v0 = mesh.vertex(mesh.faces(f, 0));
    const Vec3 e1 = mesh.vertex(mesh.faces(f, 1)) - v0;
    const Vec3 e2 = mesh.vertex(mesh.faces(f, 2)) - v0;
    const Vec3 n = e1.cross(e2).normalized();
    const Vec3 w0 = deformed.row(mesh.faces(f, 0)).transpose();
    const Vec3 f1 = Vec3(deformed.row(mesh.faces(f, 1)).transpose()) - w0;
    const Vec3 f2 = Vec3(deformed.row(mesh.faces(f, 2)).transpose()) - w0;
    const Vec3 fn = f1.cross(f2) / e1.cross(e2).norm();

    // Least-squares fit of the edge-vector map via a QR solve (independent of
    // the operator's cached inverse frames).
    Mat3 B, Bd;
    B.col(0) = e1;
    B.col(1) = e2;
    B.col(2) = n;
    Bd.col(0) = f1;
    Bd.col(1) = f2;
    Bd.col(2) = fn;
    const Mat3 fit = B.transpose().colPivHouseholderQr().solve(Bd.transpose()).transpose();
    CHECK((fit - grads[f]).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, fit.norm()));
  }
}

TEST_CASE("poisson solve: identity recenters the rest pose, scaling scales it") {
  const TemplateMesh mesh = make_hair_template(12, 8, 100.0);
  const MeshGradientOperator op(mesh);

  const JacobianField ident = JacobianField::identity(mesh.num_faces());
  const MatX sol = op.poisson_solve(ident);
  MatX expect = mesh.vertices;
  expect.rowwise() -= Eigen::RowVector3d(mesh.vertices.colwise().mean());
  CHECK((sol - expect).cwiseAbs().maxCoeff() < 1e-6);

  JacobianField scaled = ident;
  for (auto& J : scaled.jacobians) J = 2.5 * Mat3::Identity();
  const MatX sol2 = op.poisson_solve(scaled);
  CHECK((sol2 - 2.5 * expect).cwiseAbs().maxCoeff() < 1e-6);

  // Translation offsets the recentered solution exactly.
  JacobianField shifted = ident;
  shifted.translation = Vec3(3, -7, 11);
  const MatX sol3 = op.poisson_solve(shifted);
  CHECK((sol3 - (expect.rowwise() + Eigen::RowVector3d(3, -7, 11))).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("poisson solve round trip recovers deformed vertices up to translation") {
  const DatasetSpec spec;
  // ~500 vertex template.
  const TemplateMesh mesh = make_hair_template(24, 19, 100.0);
  REQUIRE(mesh.num_vertices() == 24 * 20 + 1);
  const MeshGradientOperator op(mesh);

  for (uint64_t seed = 0; seed < 5; ++seed) {
    const MatX deformed = smooth_deformation(mesh, 100 + seed);
    JacobianField field;
    field.jacobians = op.deformation_gradients(deformed);
    const MatX sol = op.poisson_solve(field);
    const Eigen::RowVector3d offset = (deformed - sol).colwise().mean();
    CHECK(((deformed.rowwise() - offset) - sol).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("poisson solve objective is locally optimal under random probes") {
  const TemplateMesh mesh = make_hair_template(10, 6, 100.0);
  const MeshGradientOperator op(mesh);
  std::mt19937_64 rng(51);
  std::normal_distribution<double> gauss(0.0, 1.0);

  JacobianField field = JacobianField::identity(mesh.num_faces());
  for (auto& J : field.jacobians)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) J(r, c) += 0.3 * gauss(rng);

  // Independent evaluation of the solve's quadratic objective: the edge part
  // varies with V while the normal slot stays at its rest image.
  auto objective = [&](const MatX& V) {
    double s = 0.0;
    for (int f = 0; f < mesh.num_faces(); ++f) {
      const Vec3 v0 = mesh.vertex(mesh.faces(f, 0));
      const Vec3 e1 = mesh.vertex(mesh.faces(f, 1)) - v0;
      const Vec3 e2 = mesh.vertex(mesh.faces(f, 2)) - v0;
      Mat3 B;
      B.col(0) = e1;
      B.col(1) = e2;
      B.col(2) = e1.cross(e2).normalized();
      const Vec3 w0 = V.row(mesh.faces(f, 0)).transpose();
      Mat3 Bd;
      Bd.col(0) = Vec3(V.row(mesh.faces(f, 1)).transpose()) - w0;
      Bd.col(1) = Vec3(V.row(mesh.faces(f, 2)).transpose()) - w0;
      Bd.col(2) = B.col(2);
      s += op.face_areas()[f] * (Bd * B.inverse() - field.jacobians[f]).squaredNorm();
    }
    return s;
  };

  const MatX sol = op.poisson_solve(field);
  const double at_sol = objective(sol);
  for (int probe = 0; probe < 1000; ++probe) {
    MatX perturbed = sol;
    for (int i = 0; i < perturbed.size(); ++i) perturbed.data()[i] += 0.05 * gauss(rng);
    CHECK(objective(perturbed) >= at_sol);
  }
}

TEST_CASE("poisson solve is linear: directional derivative matches finite differences") {
  const TemplateMesh mesh = make_hair_template(10, 6, 100.0);
  const MeshGradientOperator op(mesh);
  std::mt19937_64 rng(61);
  std::normal_distribution<double> gauss(0.0, 1.0);

  JacobianField field = JacobianField::identity(mesh.num_faces());
  JacobianField dir;
  dir.jacobians.resize(mesh.num_faces());
  for (auto& J : dir.jacobians)
    for (int i = 0; i < 9; ++i) J.data()[i] = gauss(rng);
  dir.translation = Vec3(gauss(rng), gauss(rng), gauss(rng));

  const double h = 1e-3;
  JacobianField fp = field, fm = field;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    fp.jacobians[f] += h * dir.jacobians[f];
    fm.jacobians[f] -= h * dir.jacobians[f];
  }
  fp.translation += h * dir.translation;
  fm.translation -= h * dir.translation;
  const MatX fd = (op.poisson_solve(fp) - op.poisson_solve(fm)) / (2 * h);

  // Same directional derivative via the adjoint: <dV, e_k> for random probes.
  std::uniform_int_distribution<int> pick(0, int(fd.size()) - 1);
  MatX probe = MatX::Zero(fd.rows(), 3);
  for (int k = 0; k < 20; ++k) probe.data()[pick(rng)] += gauss(rng);
  JacobianField adj;
  op.poisson_solve_adjoint(probe, &adj);
  double via_adjoint = adj.translation.dot(dir.translation);
  for (int f = 0; f < mesh.num_faces(); ++f)
    via_adjoint += (adj.jacobians[f].array() * dir.jacobians[f].array()).sum();
  double via_fd = (fd.array() * probe.array()).sum();
  CHECK(rel_error(via_fd, via_adjoint) < 1e-6);
}

TEST_CASE("gradient operator rejects degenerate and disconnected meshes") {
  TemplateMesh degen = make_hair_template(8, 4, 50.0);
  degen.vertices.row(degen.faces(0, 1)) = degen.vertices.row(degen.faces(0, 0));
  degen.vertices.row(degen.faces(0, 2)) = degen.vertices.row(degen.faces(0, 0));
  CHECK_THROWS_AS(MeshGradientOperator{degen}, ConfigError);

  // Two disjoint triangles: the reduced system is still singular.
  TemplateMesh split;
  split.vertices.resize(6, 3);
  split.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 10, 10, 10, 11, 10, 10, 10, 11, 10;
  split.faces.resize(2, 3);
  split.faces << 0, 1, 2, 3, 4, 5;
  split.uvs = {{Vec2(0, 0), Vec2(0.4, 0), Vec2(0, 0.4)}, {Vec2(0.6, 0.6), Vec2(1, 0.6), Vec2(0.6, 1)}};
  split.labels = VecX::Zero(6);
  CHECK_THROWS_AS(MeshGradientOperator{split}, ConfigError);
}

TEST_CASE("blend model two-mesh case") {
  TemplateMesh a = make_hair_template(8, 5, 100.0);
  TemplateMesh b = a;
  b.vertices = deform_hair_template(a, {1.3, 0.2, 0.0});
  const HairBlendModel model = build_blend_model({a, b}, 4);

  CHECK(model.effective_rank == 1);
  const VecX mean_expect = 0.5 * (model.mean_shape + model.mean_shape);
  const MatX mean_mesh = blend_hair_shape(model, VecX::Zero(4));
  CHECK((mean_mesh - 0.5 * (a.vertices + b.vertices)).cwiseAbs().maxCoeff() < 1e-9);

  // The single component points along the difference direction.
  VecX diff(3 * a.num_vertices());
  for (int i = 0; i < a.num_vertices(); ++i)
    for (int k = 0; k < 3; ++k) diff[3 * i + k] = b.vertices(i, k) - a.vertices(i, k);
  diff.normalize();
  const double align = std::abs(model.components.row(0).dot(diff));
  CHECK(align == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(model.components.row(1).norm() == 0.0);
}

TEST_CASE("blend model reconstruction, orthonormality, and duplication invariance") {
  const TemplateMesh tmpl = make_hair_template(12, 8, 100.0);
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<TemplateMesh> meshes;
  for (int i = 0; i < 10; ++i) {
    TemplateMesh m = tmpl;
    m.vertices = deform_hair_template(tmpl, {0.8 + 0.7 * uni(rng), -0.1 + 0.4 * uni(rng), 0.25 * uni(rng)});
    meshes.push_back(m);
  }
  const HairBlendModel model = build_blend_model(meshes, 9);

  // Orthonormal component rows.
  const MatX gram = model.components * model.components.transpose();
  CHECK((gram - MatX::Identity(9, 9)).cwiseAbs().maxCoeff() < 1e-6);

  // Full-rank round trip: every training mesh reconstructs through projection.
  double bbox_diag = 0.0;
  {
    MatX all(10 * tmpl.num_vertices(), 3);
    for (int i = 0; i < 10; ++i) all.middleRows(i * tmpl.num_vertices(), tmpl.num_vertices()) = meshes[i].vertices;
    bbox_diag = (all.colwise().maxCoeff() - all.colwise().minCoeff()).norm();
  }
  for (const auto& m : meshes) {
    const VecX theta = project_to_coeffs(model, m.vertices);
    const MatX recon = blend_hair_shape(model, theta);
    const double rms = std::sqrt((recon - m.vertices).squaredNorm() / double(m.vertices.size()));
    CHECK(rms <= 1e-5 * bbox_diag);
  }

  // Duplicating the list changes neither sigma nor the span of components.
  std::vector<TemplateMesh> doubled = meshes;
  doubled.insert(doubled.end(), meshes.begin(), meshes.end());
  const HairBlendModel model2 = build_blend_model(doubled, 9);
  CHECK(model2.sigma == doctest::Approx(model.sigma).epsilon(1e-9));
  for (int i = 0; i < 9; ++i) {
    const double align = std::abs(model.components.row(i).dot(model2.components.row(i)));
    CHECK(align == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("blend_hair_shape basis cases and affinity") {
  const TemplateMesh tmpl = make_hair_template(10, 6, 100.0);
  std::vector<TemplateMesh> meshes;
  for (int i = 0; i < 6; ++i) {
    TemplateMesh m = tmpl;
    m.vertices = deform_hair_template(tmpl, {0.8 + 0.12 * i, 0.05 * i, 0.03 * i});
    meshes.push_back(m);
  }
  const HairBlendModel model = build_blend_model(meshes, 5);

  // theta = 0 -> mean shape exactly.
  const MatX mean = blend_hair_shape(model, VecX::Zero(5));
  for (int i = 0; i < tmpl.num_vertices(); ++i)
    for (int k = 0; k < 3; ++k) CHECK(mean(i, k) == model.mean_shape[3 * i + k]);

  // theta = e1 -> mean + sigma * X_1.
  VecX e1 = VecX::Zero(5);
  e1[0] = 1.0;
  const MatX m1 = blend_hair_shape(model, e1);
  for (int i = 0; i < tmpl.num_vertices(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(m1(i, k) == doctest::Approx(model.mean_shape[3 * i + k] +
                                        model.sigma * model.components(0, 3 * i + k))
                            .epsilon(1e-12));

  // Affinity: M(a t1 + (1-a) t2) = a M(t1) + (1-a) M(t2).
  std::mt19937_64 rng(81);
  std::normal_distribution<double> gauss(0.0, 1.0);
  VecX t1(5), t2(5);
  for (int i = 0; i < 5; ++i) {
    t1[i] = gauss(rng);
    t2[i] = gauss(rng);
  }
  const double a = 0.3;
  const MatX lhs = blend_hair_shape(model, a * t1 + (1 - a) * t2);
  const MatX rhs = a * blend_hair_shape(model, t1) + (1 - a) * blend_hair_shape(model, t2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);

  VecX bad(4);
  bad.setZero();
  CHECK_THROWS_AS(blend_hair_shape(model, bad), ShapeError);
}

TEST_CASE("blend model validates topology") {
  TemplateMesh a = make_hair_template(8, 5, 100.0);
  TemplateMesh b = make_hair_template(8, 6, 100.0);
  CHECK_THROWS_AS(build_blend_model({a, b}, 4), ShapeError);
  CHECK_THROWS_AS(build_blend_model({a}, 4), ConfigError);
  CHECK_THROWS_AS(build_blend_model({a, a}, 4), DataError);
}

TEST_CASE("fit_hair_mesh is a fixed point when targets come from the template") {
  TemplateMesh tmpl = make_hair_template(12, 8, 100.0);
  // The solve recenters to the centroid, so a centered template is a fixed point.
  tmpl.vertices.rowwise() -= Eigen::RowVector3d(tmpl.vertices.colwise().mean());
  HairFitConfig cfg;
  cfg.image_width = 64;
  cfg.image_height = 64;
  cfg.max_iterations = 3;
  cfg.softness_end = cfg.softness_start;

  LabeledMeshScene scene;
  scene.parts = {tmpl};
  std::vector<FitTarget> targets;
  for (double yaw : {0.0, 90.0, 180.0, 270.0}) {
    FitTarget t;
    t.camera = make_test_camera(yaw);
    t.labels = render_mesh_labels(scene, t.camera, 64, 64, cfg.softness_start);
    targets.push_back(t);
  }
  const HairFitResult res = fit_hair_mesh(tmpl, targets, cfg);
  // The identity field already recenters the template; iteration-0 loss is
  // only the centroid offset, which is tiny for this template.
  CHECK(res.loss_trace[0] < 0.02);
  CHECK(std::isfinite(res.final_loss));
}

TEST_CASE("fit_hair_mesh on an all-background target shrinks the silhouette") {
  const TemplateMesh tmpl = make_hair_template(10, 6, 80.0);
  HairFitConfig cfg;
  cfg.image_width = 48;
  cfg.image_height = 48;
  cfg.max_iterations = 60;

  FitTarget t;
  t.camera = make_test_camera(0.0);
  t.labels = Image(48, 48, 1, 0.0);
  const HairFitResult res = fit_hair_mesh(tmpl, {t}, cfg);

  for (double v : res.loss_trace) CHECK(std::isfinite(v));
  CHECK(*std::min_element(res.loss_trace.begin(), res.loss_trace.end()) <= res.loss_trace[0]);
  // Foreground mass decreases across coarse checkpoints.
  const double head = res.loss_trace[0];
  const double mid = res.loss_trace[res.loss_trace.size() / 2];
  const double tail = res.loss_trace.back();
  CHECK(mid < head);
  CHECK(tail < mid);
  CHECK_THROWS_AS(fit_hair_mesh(tmpl, {}, cfg), ConfigError);
}
