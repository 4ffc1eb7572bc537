// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/synthetic.hpp"

#include <random>

namespace gshead {

namespace {

double q32(double x) { return double(float(x)); }

void quantize_mesh(TemplateMesh* mesh) {
  for (int i = 0; i < mesh->num_vertices(); ++i)
    for (int k = 0; k < 3; ++k) mesh->vertices(i, k) = q32(mesh->vertices(i, k));
  for (auto& uv : mesh->uvs)
    for (auto& c : uv) c = Vec2(q32(c.x()), q32(c.y()));
}

void quantize_camera(CameraPose* cam) {
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam->extrinsic(r, c) = q32(cam->extrinsic(r, c));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam->intrinsic(r, c) = q32(cam->intrinsic(r, c));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kDeg = M_PI / 180.0;
constexpr double kLatTop = 85.0 * kDeg;

// Shared lat-long grid builder. Rows run from lat_start down to lat_end; the
// pole fan closes the top. open_rim leaves the last ring as a boundary.
TemplateMesh build_cap(int segments, int rings, double radius, double lat_start, double lat_end,
                       bool close_bottom, double label) {
  const int S = segments, R = rings;
  const int grid = (R + 1) * S;
  const int num_verts = grid + 1 + (close_bottom ? 1 : 0);

  TemplateMesh m;
  m.vertices.resize(num_verts, 3);
  auto lat_of = [&](int j) { return lat_start - (lat_start - lat_end) * double(j) / R; };
  for (int j = 0; j <= R; ++j) {
    const double lat = lat_of(j);
    for (int i = 0; i < S; ++i) {
      const double phi = 2.0 * M_PI * i / S;
      m.vertices.row(j * S + i) = radius * Vec3(std::cos(lat) * std::sin(phi), std::sin(lat),
                                                std::cos(lat) * std::cos(phi)).transpose();
    }
  }
  const int top_pole = grid;
  m.vertices.row(top_pole) = Vec3(0.0, radius, 0.0).transpose();
  if (close_bottom) m.vertices.row(grid + 1) = Vec3(0.0, -radius, 0.0).transpose();

  auto v_of = [&](int j) { return (j + 1) / double(R + 2); };
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2, 3>> uvs;
  // Top fan.
  for (int i = 0; i < S; ++i) {
    const int i1 = (i + 1) % S;
    faces.push_back({top_pole, i, i1});
    uvs.push_back({Vec2((i + 0.5) / S, 0.0), Vec2(double(i) / S, v_of(0)),
                   Vec2(double(i + 1) / S, v_of(0))});
  }
  // Quad strips.
  for (int j = 0; j < R; ++j) {
    for (int i = 0; i < S; ++i) {
      const int i1 = (i + 1) % S;
      const int a = j * S + i, b = (j + 1) * S + i, c = (j + 1) * S + i1, d = j * S + i1;
      const Vec2 ua(double(i) / S, v_of(j)), ub(double(i) / S, v_of(j + 1)),
          uc(double(i + 1) / S, v_of(j + 1)), ud(double(i + 1) / S, v_of(j));
      faces.push_back({a, b, c});
      uvs.push_back({ua, ub, uc});
      faces.push_back({a, c, d});
      uvs.push_back({ua, uc, ud});
    }
  }
  if (close_bottom) {
    const int bottom_pole = grid + 1;
    for (int i = 0; i < S; ++i) {
      const int i1 = (i + 1) % S;
      faces.push_back({bottom_pole, R * S + i1, R * S + i});
      uvs.push_back({Vec2((i + 0.5) / S, 1.0), Vec2(double(i + 1) / S, v_of(R)),
                     Vec2(double(i) / S, v_of(R))});
    }
  }

  m.faces.resize(int(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) m.faces(int(f), k) = faces[f][k];
  m.uvs = uvs;
  m.labels = VecX::Constant(num_verts, label);
  return m;
}

}  // namespace

TemplateMesh make_face_sphere(int segments, int rings, double radius, double bump_amp,
                              double bump_phase) {
  TemplateMesh m = build_cap(segments, rings, radius, kLatTop, -kLatTop, true, 1.0);
  // Mild radial bumps plus a head-like vertical stretch.
  for (int i = 0; i < m.num_vertices(); ++i) {
    Vec3 p = m.vertex(i);
    const double r = p.norm();
    if (r < 1e-9) continue;
    const double lat = std::asin(clamp(p.y() / r, -1.0, 1.0));
    const double phi = std::atan2(p.x(), p.z());
    const double bump = 1.0 + bump_amp * std::sin(3.0 * phi + bump_phase) * std::cos(lat);
    p *= bump;
    p.y() *= 1.08;
    m.vertices.row(i) = p.transpose();
  }
  return m;
}

TemplateMesh make_hair_template(int segments, int rings, double radius) {
  return build_cap(segments, rings, radius, 88.0 * kDeg, 25.0 * kDeg, false, 2.0);
}

MatX deform_hair_template(const TemplateMesh& tmpl, const HairStyleParams& params) {
  const double lat_top = 88.0 * kDeg;
  const double lat_bottom = 25.0 * kDeg;
  MatX out(tmpl.num_vertices(), 3);
  for (int i = 0; i < tmpl.num_vertices(); ++i) {
    const Vec3 p = tmpl.vertex(i);
    const double r = p.norm();
    const double lat = std::asin(clamp(p.y() / r, -1.0, 1.0));
    const double phi = std::atan2(p.x(), p.z());
    const double t = clamp((lat_top - lat) / (lat_top - lat_bottom), 0.0, 1.0);
    const double new_lat = lat_top - t * params.length * (lat_top - lat_bottom);
    const double radial = r * (1.0 + params.flare * t * t + params.fluff * std::sin(M_PI * t));
    out.row(i) = Vec3(radial * std::cos(new_lat) * std::sin(phi), radial * std::sin(new_lat),
                      radial * std::cos(new_lat) * std::cos(phi)).transpose();
  }
  return out;
}

namespace {

// Smooth procedural raw texture: colorful palette, near-identity rotations,
// sensible splat sizes for the given surface spacing.
GaussianTextureMap make_ground_truth_texture(int res, double spacing_mm, double delta_amp,
                                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double pr[6] = {uni(rng), uni(rng), uni(rng), uni(rng), uni(rng), uni(rng)};
  const double log_scale = std::log(std::max(0.5, 0.7 * spacing_mm));

  GaussianTextureMap tex(res);
  for (int row = 0; row < res; ++row) {
    for (int col = 0; col < res; ++col) {
      const double u = (col + 0.5) / res;
      const double v = (row + 0.5) / res;
      for (int k = 0; k < 3; ++k)
        tex.at(row, col, k) =
            delta_amp * std::sin(2.0 * M_PI * (u * (1.0 + k) + pr[k])) * std::sin(2.0 * M_PI * v + pr[k]);
      tex.at(row, col, 3) = 1.0;
      tex.at(row, col, 4) = 0.15 * std::sin(2.0 * M_PI * (u + pr[3]));
      tex.at(row, col, 5) = 0.15 * std::cos(2.0 * M_PI * (v + pr[4]));
      tex.at(row, col, 6) = 0.0;
      for (int k = 0; k < 3; ++k)
        tex.at(row, col, 7 + k) = log_scale + 0.1 * std::sin(2.0 * M_PI * (u + v + 0.3 * k));
      for (int k = 0; k < 3; ++k) {
        const double c =
            0.5 + 0.33 * std::sin(2.0 * M_PI * ((1.5 + 0.5 * k) * u + pr[k])) *
                      std::cos(2.0 * M_PI * ((1.0 + 0.3 * k) * v + pr[5]));
        tex.at(row, col, 10 + k) = logit(clamp(c, 0.12, 0.88));
      }
      tex.at(row, col, 13) = logit(0.93);
    }
  }
  for (auto& x : tex.data) x = q32(x);
  return tex;
}

double mean_spacing(const TemplateMesh& mesh, int valid_texels) {
  double area = 0.0;
  for (int f = 0; f < mesh.num_faces(); ++f) area += mesh.face_area(f);
  return std::sqrt(area / std::max(1, valid_texels));
}

}  // namespace

GaussianSet SyntheticScene::spawn_ground_truth(const UvRig& face_rig, const UvRig& hair_rig,
                                               const DatasetSpec& spec) const {
  GaussianSet set = spawn_gaussians(face_texture, face_rig, face_mesh, spec.gamma_face, PartLabel::Face);
  set.append(spawn_gaussians(hair_texture, hair_rig, hair_mesh, spec.gamma_hair, PartLabel::Hair));
  return set;
}

SyntheticView render_scene_view(const SyntheticScene& scene, const UvRig& face_rig,
                                const UvRig& hair_rig, const DatasetSpec& spec, double yaw_deg) {
  SyntheticView view;
  view.yaw_deg = yaw_deg;
  view.camera = make_ring_camera(yaw_deg, spec.camera_pitch_deg, spec.camera_radius, spec.focal_norm);
  quantize_camera(&view.camera);

  const GaussianSet set = scene.spawn_ground_truth(face_rig, hair_rig, spec);
  const RenderOutput out =
      reference_render(set, view.camera, spec.image_size, spec.image_size, Vec3::Zero());
  view.rgb = out.rgb;
  view.mask = out.mask;
  view.seg = out.seg;

  view.seg_classes = Image(spec.image_size, spec.image_size, 1);
  for (int y = 0; y < spec.image_size; ++y)
    for (int x = 0; x < spec.image_size; ++x)
      view.seg_classes.at(y, x, 0) = double(argmax_channel(view.seg, y, x));

  LabeledMeshScene mesh_scene;
  mesh_scene.parts = {scene.face_mesh, scene.hair_mesh};
  view.mesh_seg = render_mesh_labels(mesh_scene, view.camera, spec.image_size, spec.image_size,
                                     spec.mesh_softness);
  return view;
}

std::vector<SyntheticScene> make_synthetic_dataset(const DatasetSpec& spec, uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(fnv1a("dataset", seed));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<SyntheticScene> scenes;
  scenes.reserve(spec.num_scenes);
  for (int si = 0; si < spec.num_scenes; ++si) {
    SyntheticScene scene;
    scene.face_mesh = make_face_sphere(spec.sphere_segments, spec.sphere_rings, spec.face_radius,
                                       0.03 + 0.05 * uni(rng), 2.0 * M_PI * uni(rng));
    scene.hair_template =
        make_hair_template(spec.sphere_segments, spec.sphere_rings, spec.face_radius * 1.07);
    scene.style.length = 0.8 + 0.7 * uni(rng);
    scene.style.flare = -0.1 + 0.35 * uni(rng);
    scene.style.fluff = 0.25 * uni(rng);
    scene.hair_mesh = scene.hair_template;
    scene.hair_mesh.vertices = deform_hair_template(scene.hair_template, scene.style);
    quantize_mesh(&scene.face_mesh);
    quantize_mesh(&scene.hair_template);
    quantize_mesh(&scene.hair_mesh);

    const UvRig face_rig = build_uv_rig(scene.face_mesh, spec.texture_resolution);
    const UvRig hair_rig = build_uv_rig(scene.hair_mesh, spec.texture_resolution);
    scene.face_texture = make_ground_truth_texture(
        spec.texture_resolution, mean_spacing(scene.face_mesh, face_rig.valid_count()), 2.0,
        rng());
    scene.hair_texture = make_ground_truth_texture(
        spec.texture_resolution, mean_spacing(scene.hair_mesh, hair_rig.valid_count()), 3.0,
        rng());

    scene.views.reserve(spec.views_per_scene);
    for (int k = 0; k < spec.views_per_scene; ++k) {
      const double yaw = 360.0 * k / spec.views_per_scene;
      scene.views.push_back(render_scene_view(scene, face_rig, hair_rig, spec, yaw));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace gshead
