// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/common.hpp"

#include <array>
#include <string>

namespace gshead {

// Triangle mesh with per-corner UVs and a per-vertex scalar segmentation label
// (2 hair, 1 face, 0 background). Vertices are world-space millimeters.
struct TemplateMesh {
  MatX vertices;                          // V x 3
  Eigen::MatrixXi faces;                  // F x 3
  std::vector<std::array<Vec2, 3>> uvs;   // per-face corner UVs in [0,1]^2
  VecX labels;                            // V, scalar segmentation label

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }

  Vec3 vertex(int i) const { return vertices.row(i).transpose(); }

  double face_area(int f) const {
    const Vec3 a = vertex(faces(f, 0));
    const Vec3 b = vertex(faces(f, 1));
    const Vec3 c = vertex(faces(f, 2));
    return 0.5 * (b - a).cross(c - a).norm();
  }

  void validate() const;
};

// Wavefront OBJ with `vt` per-corner UVs; labels round-trip through a comment
// extension (`#label <v0> <v1> ...`) so synthetic assets stay self-contained.
TemplateMesh load_obj(const std::string& path);
void save_obj(const TemplateMesh& mesh, const std::string& path);

}  // namespace gshead
