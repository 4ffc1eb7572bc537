// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/mesh_raster.hpp"
#include "gshead/synthetic.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace gshead;
using namespace gshead::testutil;

namespace {

TemplateMesh big_triangle(double label, double z_offset) {
  TemplateMesh m;
  m.vertices.resize(3, 3);
  m.vertices << -150, -150, z_offset, 150, -150, z_offset, 0, 200, z_offset;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  m.uvs = {{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)}};
  m.labels = VecX::Constant(3, label);
  return m;
}

CameraPose frontal_camera() {
  CameraPose cam;
  cam.extrinsic.setIdentity();
  cam.extrinsic(2, 3) = 400.0;  // push the scene in front of the camera
  cam.intrinsic << 1.2, 0.0, 0.5, 0.0, 1.2, 0.5, 0.0, 0.0, 1.0;
  return cam;
}

}  // namespace

TEST_CASE("render_mesh_labels interior value equals the part label") {
  LabeledMeshScene scene;
  scene.parts = {big_triangle(2.0, 0.0)};
  const Image img = render_mesh_labels(scene, frontal_camera(), 64, 64, 1.5);
  CHECK(img.at(32, 32, 0) == 2.0);
  // Far corners are background.
  CHECK(img.at(0, 0, 0) == 0.0);
  CHECK(img.at(0, 63, 0) == 0.0);
}

TEST_CASE("render_mesh_labels depth test lets the front part win") {
  LabeledMeshScene scene;
  scene.parts = {big_triangle(1.0, -50.0), big_triangle(2.0, 50.0)};  // face nearer
  const Image img = render_mesh_labels(scene, frontal_camera(), 64, 64, 1.5);
  CHECK(img.at(32, 32, 0) == 1.0);
}

TEST_CASE("render_mesh_labels output stays in the label convex hull") {
  const TemplateMesh face = make_face_sphere(16, 12, 100.0);
  TemplateMesh hair = make_hair_template(16, 8, 107.0);
  hair.vertices = deform_hair_template(hair, {1.2, 0.2, 0.1});
  LabeledMeshScene scene;
  scene.parts = {face, hair};
  const Image img = render_mesh_labels(scene, make_test_camera(30.0), 96, 96, 1.5);
  for (double v : img.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
  // Both labels appear.
  CHECK(*std::max_element(img.data.begin(), img.data.end()) > 1.5);
}

TEST_CASE("render_mesh_labels away from edges equals hard rasterization") {
  LabeledMeshScene scene;
  scene.parts = {big_triangle(2.0, 0.0)};
  const CameraPose cam = frontal_camera();
  const Image soft_a = render_mesh_labels(scene, cam, 64, 64, 1.0);
  const Image soft_b = render_mesh_labels(scene, cam, 64, 64, 2.5);
  // Pixels whose value is hard under the wider band must agree with the
  // narrow band (both equal the hard rasterization there).
  int hard_pixels = 0;
  for (size_t i = 0; i < soft_b.data.size(); ++i) {
    if (soft_b.data[i] == 0.0 || soft_b.data[i] == 2.0) {
      CHECK(soft_a.data[i] == soft_b.data[i]);
      ++hard_pixels;
    }
  }
  CHECK(hard_pixels > 3000);
}

TEST_CASE("render_mesh_labels rejects degenerate scenes and bad softness") {
  TemplateMesh degen = big_triangle(1.0, 0.0);
  degen.vertices.row(1) = degen.vertices.row(0);
  degen.vertices.row(2) = degen.vertices.row(0);
  LabeledMeshScene scene;
  scene.parts = {degen};
  CHECK_THROWS_AS(render_mesh_labels(scene, frontal_camera(), 32, 32, 1.5), DataError);
  scene.parts = {big_triangle(1.0, 0.0)};
  CHECK_THROWS_AS(render_mesh_labels(scene, frontal_camera(), 32, 32, 0.0), ConfigError);
}

TEST_CASE("render_mesh_labels gradient matches finite differences under translation") {
  const double softness = 1.5;
  const int W = 96, H = 96;
  TemplateMesh hair = make_hair_template(14, 8, 100.0);
  hair.vertices = deform_hair_template(hair, {1.1, 0.15, 0.0});
  LabeledMeshScene scene;
  scene.parts = {hair};
  const CameraPose cam = make_test_camera(20.0, 8.0);

  std::mt19937_64 rng(31);
  const Image upstream = random_image(rng, H, W, 1);

  const auto d_verts = render_mesh_labels_backward(scene, cam, W, H, softness, upstream);

  auto loss = [&](const LabeledMeshScene& s) {
    const Image img = render_mesh_labels(s, cam, W, H, softness);
    double L = 0.0;
    for (size_t i = 0; i < img.data.size(); ++i) L += img.data[i] * upstream.data[i];
    return L;
  };

  // Translate the whole mesh along world axes; the directional derivative is
  // the sum of vertex gradients dotted with the direction.
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 dir = Vec3::Zero();
    dir[axis] = 1.0;
    const double h = 2e-3;
    LabeledMeshScene sp = scene, sm = scene;
    for (int v = 0; v < sp.parts[0].num_vertices(); ++v) {
      sp.parts[0].vertices.row(v) += h * dir.transpose();
      sm.parts[0].vertices.row(v) -= h * dir.transpose();
    }
    const double fd = (loss(sp) - loss(sm)) / (2 * h);
    double analytic = 0.0;
    for (int v = 0; v < scene.parts[0].num_vertices(); ++v)
      analytic += d_verts[0].row(v).dot(dir.transpose());
    CHECK(rel_error(fd, analytic) < 1e-2);
  }
}

TEST_CASE("render_mesh_labels vertices away from silhouettes get zero gradient") {
  TemplateMesh hair = make_hair_template(14, 8, 100.0);
  LabeledMeshScene scene;
  scene.parts = {hair};
  const CameraPose cam = make_test_camera(0.0, 5.0);
  std::mt19937_64 rng(33);
  const Image upstream = random_image(rng, 64, 64, 1);
  const auto d_verts = render_mesh_labels_backward(scene, cam, 64, 64, 1.5, upstream);

  // The pole vertex faces the camera dead-on from pitch 5 at yaw 0; it is
  // interior, far from any silhouette.
  int zero_rows = 0;
  for (int v = 0; v < hair.num_vertices(); ++v)
    if (d_verts[0].row(v).norm() == 0.0) ++zero_rows;
  CHECK(zero_rows > 0);
  // And silhouette vertices do receive gradient.
  CHECK(d_verts[0].norm() > 0.0);
}
