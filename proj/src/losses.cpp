#include "rigfit/losses.hpp"

#include <cmath>

namespace rigfit {

double loss_vertex(const VertexMatrix& vp, const VertexMatrix& vg,
                   VertexLossForm form) {
  if (vp.rows() != vg.rows()) throw Error("loss_vertex: vertex count mismatch");
  if (vp.rows() == 0) throw Error("loss_vertex: empty mesh");
  const double n = static_cast<double>(vp.rows());
  const double ss = (vp - vg).squaredNorm();
  return form == VertexLossForm::AsPrinted ? std::sqrt(ss) / n
                                           : std::sqrt(ss / n);
}

double loss_magnitude(const Skeleton& skeleton, const PoseParams& pose) {
  const Eigen::VectorXd full = skeleton.unpack(pose);
  const double k = static_cast<double>(skeleton.joint_count());
  return (full - skeleton.rest_full()).lpNorm<1>() / k;
}

namespace {

double hinge(double x, double lo, double hi) {
  if (x > hi) return x - hi;
  if (x < lo) return lo - x;
  return 0.0;
}

bool in_group(int d, DofGroup g) {
  switch (g) {
    case DofGroup::Rotation: return d <= kDofRz;
    case DofGroup::Translation: return d >= kDofTx && d <= kDofTz;
    case DofGroup::Scale: return d >= kDofSx;
  }
  return false;
}

}  // namespace

double loss_box(const Skeleton& skeleton, const PoseParams& pose,
                DofGroup group) {
  const Eigen::VectorXd full = skeleton.unpack(pose);
  const Eigen::VectorXd& lo = skeleton.limit_lo_full();
  const Eigen::VectorXd& hi = skeleton.limit_hi_full();
  double total = 0.0;
  for (int k = 0; k < skeleton.joint_count(); ++k)
    for (int d = 0; d < kDofPerJoint; ++d)
      if (in_group(d, group)) {
        const int flat = k * kDofPerJoint + d;
        total += hinge(full[flat], lo[flat], hi[flat]);
      }
  return total / static_cast<double>(skeleton.joint_count());
}

double loss_box_total(const Skeleton& skeleton, const PoseParams& pose) {
  return loss_box(skeleton, pose, DofGroup::Rotation) +
         loss_box(skeleton, pose, DofGroup::Translation) +
         loss_box(skeleton, pose, DofGroup::Scale);
}

double loss_laplacian(const Mesh& mesh, const VertexMatrix& vp,
                      const VertexMatrix& vg) {
  if (vp.rows() != vg.rows())
    throw Error("loss_laplacian: vertex count mismatch");
  const VertexMatrix dp = laplacian(mesh, vp);
  const VertexMatrix dg = laplacian(mesh, vg);
  return std::sqrt((dp - dg).squaredNorm()) / static_cast<double>(vp.rows());
}

double loss_total(const Mesh& mesh, const VertexMatrix& vp,
                  const VertexMatrix& vg, const Skeleton& skeleton,
                  const PoseParams& pose, const LossWeights& weights) {
  return loss_vertex(vp, vg) + weights.lambda_m * loss_magnitude(skeleton, pose) +
         weights.lambda_x * loss_box_total(skeleton, pose) +
         weights.lambda_p * loss_laplacian(mesh, vp, vg);
}

Eigen::Vector2d PinholeCamera::project(const Vec3& p) const {
  if (p.z() <= 0.0)
    throw Error("PinholeCamera::project: point at or behind the camera");
  return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

double loss_landmarks_2d(const VertexMatrix& vertices,
                         const std::vector<int>& landmark_vertices,
                         const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
                         const PinholeCamera& camera) {
  if (landmark_vertices.empty()) throw Error("loss_landmarks_2d: no landmarks");
  if (targets.rows() != static_cast<Eigen::Index>(landmark_vertices.size()))
    throw Error("loss_landmarks_2d: target count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < landmark_vertices.size(); ++i) {
    const int v = landmark_vertices[i];
    if (v < 0 || v >= vertices.rows())
      throw Error("loss_landmarks_2d: landmark vertex " + std::to_string(v) +
                  " out of range");
    const Eigen::Vector2d p = camera.project(vertices.row(v).transpose());
    total += (p - targets.row(i).transpose()).norm();
  }
  return total / static_cast<double>(landmark_vertices.size());
}

ad::Var loss_vertex_tape(ad::Tape& t, ad::Var vp, const VertexMatrix& vg,
                         VertexLossForm form) {
  const Eigen::Index n = t.value(vp).rows();
  if (n != vg.rows()) throw Error("loss_vertex_tape: vertex count mismatch");
  const ad::Var diff = t.sub(vp, t.constant(vg));
  const ad::Var ss = ad::sumsq(t, diff);
  if (form == VertexLossForm::AsPrinted)
    return t.scale(t.sqrt(ss), 1.0 / static_cast<double>(n));
  return t.sqrt(t.scale(ss, 1.0 / static_cast<double>(n)));
}

ad::Var loss_magnitude_tape(ad::Tape& t, const Skeleton& skeleton,
                            ad::Var full) {
  const ad::Var dev = t.sub(full, t.constant(skeleton.rest_full()));
  return t.scale(t.sum(t.abs(dev)),
                 1.0 / static_cast<double>(skeleton.joint_count()));
}

ad::Var loss_box_total_tape(ad::Tape& t, const Skeleton& skeleton,
                            ad::Var full) {
  const ad::Var pen = t.box_penalty(full, skeleton.limit_lo_full(),
                                    skeleton.limit_hi_full());
  return t.scale(t.sum(pen), 1.0 / static_cast<double>(skeleton.joint_count()));
}

ad::Var loss_laplacian_tape(ad::Tape& t,
                            std::shared_ptr<const Eigen::SparseMatrix<double>> L,
                            ad::Var vp, const VertexMatrix& vg) {
  const Eigen::Index n = t.value(vp).rows();
  const ad::Var dp = t.sparse_matmul(L, vp);
  const VertexMatrix dg = (*L * vg).eval();
  const ad::Var diff = t.sub(dp, t.constant(dg));
  return t.scale(t.sqrt(ad::sumsq(t, diff)), 1.0 / static_cast<double>(n));
}

ad::Var loss_landmarks_2d_tape(
    ad::Tape& t, ad::Var vertices, const std::vector<int>& landmark_vertices,
    const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
    const PinholeCamera& camera) {
  const Eigen::Index n = t.value(vertices).rows();
  const int l = static_cast<int>(landmark_vertices.size());
  if (l == 0) throw Error("loss_landmarks_2d_tape: no landmarks");
  if (targets.rows() != l)
    throw Error("loss_landmarks_2d_tape: target count mismatch");
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < l; ++i) {
    const int v = landmark_vertices[i];
    if (v < 0 || v >= n)
      throw Error("loss_landmarks_2d_tape: landmark vertex out of range");
    trips.emplace_back(i, v, 1.0);
  }
  auto sel = std::make_shared<Eigen::SparseMatrix<double>>(l, n);
  sel->setFromTriplets(trips.begin(), trips.end());
  const ad::Var lm = t.sparse_matmul(sel, vertices);  // l x 3
  const ad::Var z = t.slice(lm, 0, 2, l, 1);
  if ((t.value(z).array() <= 0.0).any())
    throw Error("loss_landmarks_2d_tape: landmark at or behind the camera");
  const ad::Var u = t.add(
      t.scale(t.div(t.slice(lm, 0, 0, l, 1), z), camera.fx),
      t.constant(Eigen::MatrixXd::Constant(l, 1, camera.cx)));
  const ad::Var v = t.add(
      t.scale(t.div(t.slice(lm, 0, 1, l, 1), z), camera.fy),
      t.constant(Eigen::MatrixXd::Constant(l, 1, camera.cy)));
  const ad::Var du = t.sub(u, t.constant(targets.col(0).eval()));
  const ad::Var dv = t.sub(v, t.constant(targets.col(1).eval()));
  const ad::Var dist = t.sqrt(t.add(t.mul(du, du), t.mul(dv, dv)));
  return t.scale(t.sum(dist), 1.0 / static_cast<double>(l));
}

ad::Var coeff_box_tape(ad::Tape& t, ad::Var coeffs, const Eigen::VectorXd& lo,
                       const Eigen::VectorXd& hi) {
  return t.sum(t.box_penalty(coeffs, lo, hi));
}

}  // namespace rigfit
