// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/uv_rig.hpp"

#include <algorithm>

namespace gshead {

namespace {

// Barycentric coordinates of p in triangle (a, b, c); returns false for
// degenerate triangles.
bool uv_barycentric(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p, Vec3* bary) {
  const Vec2 e0 = b - a;
  const Vec2 e1 = c - a;
  const double det = e0.x() * e1.y() - e0.y() * e1.x();
  if (std::abs(det) < 1e-14) return false;
  const Vec2 d = p - a;
  const double v = (d.x() * e1.y() - d.y() * e1.x()) / det;
  const double w = (e0.x() * d.y() - e0.y() * d.x()) / det;
  *bary = Vec3(1.0 - v - w, v, w);
  return true;
}

}  // namespace

UvRig build_uv_rig(const TemplateMesh& mesh, int resolution) {
  if (resolution < 1) throw ConfigError("uv rig resolution must be >= 1");
  bool has_uv_area = false;
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& uv = mesh.uvs[f];
    const Vec2 e0 = uv[1] - uv[0];
    const Vec2 e1 = uv[2] - uv[0];
    if (std::abs(e0.x() * e1.y() - e0.y() * e1.x()) > 1e-14) {
      has_uv_area = true;
      break;
    }
  }
  if (mesh.num_faces() == 0 || !has_uv_area) throw ConfigError("mesh has an empty UV layout");

  UvRig rig;
  rig.resolution = resolution;
  rig.source_vertex_count = mesh.num_vertices();
  rig.source_face_count = mesh.num_faces();
  rig.bindings.assign(static_cast<size_t>(resolution) * resolution, {});

  const double inv_res = 1.0 / resolution;
  // Faces in ascending index order; first hit wins, which resolves overlaps
  // to the lowest face index.
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const auto& uv = mesh.uvs[f];
    const double umin = std::min({uv[0].x(), uv[1].x(), uv[2].x()});
    const double umax = std::max({uv[0].x(), uv[1].x(), uv[2].x()});
    const double vmin = std::min({uv[0].y(), uv[1].y(), uv[2].y()});
    const double vmax = std::max({uv[0].y(), uv[1].y(), uv[2].y()});
    const int col0 = std::max(0, static_cast<int>(std::floor(umin * resolution - 0.5)));
    const int col1 = std::min(resolution - 1, static_cast<int>(std::ceil(umax * resolution - 0.5)));
    const int row0 = std::max(0, static_cast<int>(std::floor(vmin * resolution - 0.5)));
    const int row1 = std::min(resolution - 1, static_cast<int>(std::ceil(vmax * resolution - 0.5)));
    for (int row = row0; row <= row1; ++row) {
      for (int col = col0; col <= col1; ++col) {
        auto& slot = rig.bindings[static_cast<size_t>(row) * resolution + col];
        if (slot.face >= 0) continue;
        const Vec2 center((col + 0.5) * inv_res, (row + 0.5) * inv_res);
        Vec3 bary;
        if (!uv_barycentric(uv[0], uv[1], uv[2], center, &bary)) continue;
        if (bary.minCoeff() >= 0.0) {
          slot.face = f;
          slot.bary = bary;
        }
      }
    }
  }
  return rig;
}

std::vector<Vec3> surface_points(const UvRig& rig, const TemplateMesh& mesh) {
  if (mesh.num_vertices() != rig.source_vertex_count || mesh.num_faces() != rig.source_face_count)
    throw ShapeError("mesh does not match the rig's source topology");
  std::vector<Vec3> points;
  points.reserve(rig.valid_count());
  for (const auto& b : rig.bindings) {
    if (b.face < 0) continue;
    const Vec3 p = b.bary[0] * mesh.vertex(mesh.faces(b.face, 0)) +
                   b.bary[1] * mesh.vertex(mesh.faces(b.face, 1)) +
                   b.bary[2] * mesh.vertex(mesh.faces(b.face, 2));
    points.push_back(p);
  }
  return points;
}

}  // namespace gshead
