// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gshead/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>

namespace gshead {

// Per-face 3x3 target deformation gradients plus a centroid translation.
struct JacobianField {
  std::vector<Mat3> jacobians;  // F entries
  Vec3 translation = Vec3::Zero();

  static JacobianField identity(int num_faces) {
    JacobianField f;
    f.jacobians.assign(num_faces, Mat3::Identity());
    return f;
  }
};

// Deformation-gradient operator of a rest mesh: per face, the unique linear
// map taking the rest edge pair and unit normal to the deformed edge pair and
// area-scaled normal. The edge part is a sparse linear operator in the vertex
// positions; the Poisson solve runs on its area-weighted normal equations with
// the system factored once per rest mesh.
class MeshGradientOperator {
 public:
  explicit MeshGradientOperator(const TemplateMesh& rest);

  int num_faces() const { return static_cast<int>(rest_inv_.size()); }
  int num_vertices() const { return num_vertices_; }
  const std::vector<double>& face_areas() const { return areas_; }

  // Exact deformation gradients at a vertex configuration (V x 3). Equals the
  // identity on the rest pose and R under a global rotation R.
  std::vector<Mat3> deformation_gradients(const MatX& vertices) const;

  // argmin_V sum_f A_f | G_f(V) - J_f |_F^2, recentered to a zero centroid and
  // offset by the field translation. Linear in (J, t).
  MatX poisson_solve(const JacobianField& field) const;

  // Adjoint of poisson_solve: gradients w.r.t. the Jacobians and translation.
  void poisson_solve_adjoint(const MatX& d_vertices, JacobianField* d_field) const;

 private:
  int num_vertices_ = 0;
  Eigen::MatrixXi faces_;
  std::vector<Mat3> rest_inv_;  // per-face inverse rest frame [e1 e2 n]^-1
  std::vector<double> areas_;
  Eigen::SparseMatrix<double> S_;  // 3F x V edge-part operator
  std::shared_ptr<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>> solver_;  // on the reduced system
};

}  // namespace gshead
