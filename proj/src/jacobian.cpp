// Copyright Contributors to the gshead Project
// SPDX-License-Identifier: Apache-2.0

#include "gshead/jacobian.hpp"

namespace gshead {

MeshGradientOperator::MeshGradientOperator(const TemplateMesh& rest) {
  num_vertices_ = rest.num_vertices();
  faces_ = rest.faces;
  const int F = rest.num_faces();
  rest_inv_.resize(F);
  areas_.resize(F);

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(F) * 9);
  for (int f = 0; f < F; ++f) {
    const Vec3 v0 = rest.vertex(rest.faces(f, 0));
    const Vec3 e1 = rest.vertex(rest.faces(f, 1)) - v0;
    const Vec3 e2 = rest.vertex(rest.faces(f, 2)) - v0;
    const Vec3 cr = e1.cross(e2);
    const double area = 0.5 * cr.norm();
    if (area <= 1e-12) throw ConfigError("zero-area rest face in gradient operator");
    areas_[f] = area;
    Mat3 B;
    B.col(0) = e1;
    B.col(1) = e2;
    B.col(2) = cr / cr.norm();
    rest_inv_[f] = B.inverse();

    // Edge part: G_f(V) = e1' rho1^T + e2' rho2^T with rho_j the rows of B^-1.
    // Row 3f + j of S holds basis direction j.
    for (int j = 0; j < 3; ++j) {
      const double r1 = rest_inv_[f](0, j);
      const double r2 = rest_inv_[f](1, j);
      trips.emplace_back(3 * f + j, rest.faces(f, 1), r1);
      trips.emplace_back(3 * f + j, rest.faces(f, 2), r2);
      trips.emplace_back(3 * f + j, rest.faces(f, 0), -(r1 + r2));
    }
  }
  S_.resize(3 * F, num_vertices_);
  S_.setFromTriplets(trips.begin(), trips.end());

  // Area-weighted normal equations, with vertex 0 pinned to remove the
  // translation kernel (the solution is recentered afterwards).
  Eigen::SparseMatrix<double> D(3 * F, 3 * F);
  std::vector<Eigen::Triplet<double>> dtrips;
  dtrips.reserve(static_cast<size_t>(3 * F));
  for (int f = 0; f < F; ++f)
    for (int j = 0; j < 3; ++j) dtrips.emplace_back(3 * f + j, 3 * f + j, areas_[f]);
  D.setFromTriplets(dtrips.begin(), dtrips.end());
  const Eigen::SparseMatrix<double> L = S_.transpose() * D * S_;
  const Eigen::SparseMatrix<double> L_red = L.bottomRightCorner(num_vertices_ - 1, num_vertices_ - 1);

  solver_ = std::make_shared<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>();
  solver_->compute(L_red);
  if (solver_->info() != Eigen::Success)
    throw ConfigError("poisson system is singular (disconnected mesh?)");
}

std::vector<Mat3> MeshGradientOperator::deformation_gradients(const MatX& vertices) const {
  if (vertices.rows() != num_vertices_ || vertices.cols() != 3)
    throw ShapeError("vertex matrix does not match the rest mesh");
  std::vector<Mat3> grads(num_faces());
  for (int f = 0; f < num_faces(); ++f) {
    const Vec3 v0 = vertices.row(faces_(f, 0)).transpose();
    const Vec3 e1 = vertices.row(faces_(f, 1)).transpose() - v0;
    const Vec3 e2 = vertices.row(faces_(f, 2)).transpose() - v0;
    const Vec3 scaled_normal = e1.cross(e2) / (2.0 * areas_[f]);
    Mat3 Bd;
    Bd.col(0) = e1;
    Bd.col(1) = e2;
    Bd.col(2) = scaled_normal;
    grads[f] = Bd * rest_inv_[f];
  }
  return grads;
}

MatX MeshGradientOperator::poisson_solve(const JacobianField& field) const {
  const int F = num_faces();
  if (static_cast<int>(field.jacobians.size()) != F)
    throw ShapeError("jacobian field face count mismatch");
  for (const Mat3& J : field.jacobians)
    if (!J.allFinite()) throw NumericError("non-finite jacobian field");

  // rhs = S^T D J_hat, with J_hat(3f + j, i) = (J_f B^-1-composed target)(i, j).
  // The target for the linear edge part is J_f itself; its normal-slot
  // component is orthogonal to the operator range and drops out in S^T.
  MatX jhat(3 * F, 3);
  for (int f = 0; f < F; ++f)
    jhat.block<3, 3>(3 * f, 0) = areas_[f] * field.jacobians[f].transpose();
  const MatX rhs = S_.transpose() * jhat;

  MatX sol = MatX::Zero(num_vertices_, 3);
  for (int c = 0; c < 3; ++c) {
    const VecX x = solver_->solve(rhs.col(c).tail(num_vertices_ - 1));
    if (solver_->info() != Eigen::Success) throw NumericError("poisson solve failed");
    sol.col(c).tail(num_vertices_ - 1) = x;
  }
  const Eigen::RowVector3d centroid = sol.colwise().mean();
  sol.rowwise() -= centroid;
  sol.rowwise() += field.translation.transpose();
  return sol;
}

void MeshGradientOperator::poisson_solve_adjoint(const MatX& d_vertices,
                                                 JacobianField* d_field) const {
  if (d_vertices.rows() != num_vertices_ || d_vertices.cols() != 3)
    throw ShapeError("vertex gradient does not match the rest mesh");
  const int F = num_faces();

  d_field->translation = d_vertices.colwise().sum().transpose();

  // Recenter is the symmetric projector I - (1/V) 1 1^T.
  MatX g = d_vertices;
  const Eigen::RowVector3d mean = g.colwise().mean();
  g.rowwise() -= mean;

  // Transposed solve (the factor is symmetric); pinned vertex row stays zero.
  MatX w = MatX::Zero(num_vertices_, 3);
  for (int c = 0; c < 3; ++c)
    w.col(c).tail(num_vertices_ - 1) = solver_->solve(g.col(c).tail(num_vertices_ - 1));

  const MatX d_jhat = S_ * w;  // 3F x 3
  d_field->jacobians.assign(F, Mat3::Zero());
  for (int f = 0; f < F; ++f)
    d_field->jacobians[f] = areas_[f] * d_jhat.block<3, 3>(3 * f, 0).transpose();
}

}  // namespace gshead
