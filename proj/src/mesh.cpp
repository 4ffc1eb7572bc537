// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/mesh.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gshead {

void TemplateMesh::validate() const {
  const int nv = num_vertices();
  if (nv == 0 || num_faces() == 0) throw DataError("mesh has no geometry");
  if (static_cast<int>(uvs.size()) != num_faces()) throw DataError("mesh UV count does not match face count");
  if (labels.size() != nv) throw DataError("mesh label count does not match vertex count");
  for (int f = 0; f < num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (faces(f, k) < 0 || faces(f, k) >= nv) throw DataError("face index out of range");
      const Vec2& uv = uvs[f][k];
      if (uv.x() < 0.0 || uv.x() > 1.0 || uv.y() < 0.0 || uv.y() > 1.0)
        throw DataError("UV coordinate outside [0,1]");
    }
    if (face_area(f) <= 0.0) throw DataError("zero-area face in rest pose");
  }
  if (!all_finite(vertices.data(), vertices.size())) throw NumericError("non-finite mesh vertex");
}

TemplateMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open OBJ file: " + path);

  std::vector<Vec3> verts;
  std::vector<Vec2> texcoords;
  std::vector<std::array<int, 3>> face_v;
  std::vector<std::array<int, 3>> face_vt;
  std::vector<double> labels;

  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("#label", 0) == 0) {
      std::istringstream ss(line.substr(6));
      double v;
      while (ss >> v) labels.push_back(v);
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 p;
      ss >> p.x() >> p.y() >> p.z();
      verts.push_back(p);
    } else if (tag == "vt") {
      Vec2 t;
      ss >> t.x() >> t.y();
      texcoords.push_back(t);
    } else if (tag == "f") {
      std::array<int, 3> fv{}, ft{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        const size_t slash = tok.find('/');
        fv[k] = std::stoi(tok.substr(0, slash)) - 1;
        ft[k] = slash == std::string::npos ? -1 : std::stoi(tok.substr(slash + 1)) - 1;
      }
      face_v.push_back(fv);
      face_vt.push_back(ft);
    }
  }

  TemplateMesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<int>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<int>(face_v.size()), 3);
  mesh.uvs.resize(face_v.size());
  for (size_t f = 0; f < face_v.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      mesh.faces(static_cast<int>(f), k) = face_v[f][k];
      const int t = face_vt[f][k];
      if (t < 0 || t >= static_cast<int>(texcoords.size()))
        throw DataError("OBJ face without per-corner UV: " + path);
      mesh.uvs[f][k] = texcoords[t];
    }
  }
  mesh.labels = VecX::Zero(mesh.num_vertices());
  if (!labels.empty()) {
    if (static_cast<int>(labels.size()) != mesh.num_vertices())
      throw DataError("OBJ #label count does not match vertex count");
    for (int i = 0; i < mesh.num_vertices(); ++i) mesh.labels[i] = labels[i];
  }
  return mesh;
}

void save_obj(const TemplateMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write OBJ file: " + path);
  char buf[128];
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    // %.17g round-trips doubles exactly through the decimal text.
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", mesh.vertices(i, 0), mesh.vertices(i, 1),
                  mesh.vertices(i, 2));
    out << buf;
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      std::snprintf(buf, sizeof(buf), "vt %.17g %.17g\n", mesh.uvs[f][k].x(), mesh.uvs[f][k].y());
      out << buf;
    }
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int t = 3 * f;
    std::snprintf(buf, sizeof(buf), "f %d/%d %d/%d %d/%d\n", mesh.faces(f, 0) + 1, t + 1,
                  mesh.faces(f, 1) + 1, t + 2, mesh.faces(f, 2) + 1, t + 3);
    out << buf;
  }
  out << "#label";
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    std::snprintf(buf, sizeof(buf), " %.17g", mesh.labels[i]);
    out << buf;
  }
  out << "\n";
}

}  // namespace gshead
