// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/mesh.hpp"

namespace gshead {

// Texel -> (face, barycentric) binding over a mesh's UV layout. Depends only
// on the UV coordinates, so it stays valid when vertices deform.
struct UvRig {
  struct Binding {
    int face = -1;  // -1 marks a texel outside all UV triangles
    Vec3 bary = Vec3::Zero();
  };

  int resolution = 0;
  int source_vertex_count = 0;
  int source_face_count = 0;
  std::vector<Binding> bindings;  // row-major, resolution^2 entries

  const Binding& at(int row, int col) const { return bindings[static_cast<size_t>(row) * resolution + col]; }
  int valid_count() const {
    int n = 0;
    for (const auto& b : bindings) n += (b.face >= 0);
    return n;
  }
};

// Bind each texel center to the UV triangle containing it; ties between
// overlapping triangles go to the lowest face index. Texel (row, col) has its
// center at uv = ((col + 0.5) / res, (row + 0.5) / res).
UvRig build_uv_rig(const TemplateMesh& mesh, int resolution);

// Barycentric surface point for every valid texel, in row-major texel order.
// Linear in the supplied vertex positions.
std::vector<Vec3> surface_points(const UvRig& rig, const TemplateMesh& mesh);

}  // namespace gshead
