#include "rigfit/rig.hpp"

#include <cmath>
#include <set>

namespace rigfit {

namespace {

bool is_flip_dof(int d) { return d == kDofTx || d == kDofRy || d == kDofRz; }

bool is_scale_dof(int d) { return d >= kDofSx; }

Eigen::Matrix3d euler_rotation(double rx, double ry, double rz) {
  Eigen::Matrix3d Rx, Ry, Rz;
  Rx << 1, 0, 0, 0, std::cos(rx), -std::sin(rx), 0, std::sin(rx), std::cos(rx);
  Ry << std::cos(ry), 0, std::sin(ry), 0, 1, 0, -std::sin(ry), 0, std::cos(ry);
  Rz << std::cos(rz), -std::sin(rz), 0, std::sin(rz), std::cos(rz), 0, 0, 0, 1;
  return Rz * Ry * Rx;
}

}  // namespace

Skeleton Skeleton::create(std::vector<Joint> joints) {
  if (joints.empty()) throw Error("Skeleton: no joints");
  Skeleton s;
  const int K = static_cast<int>(joints.size());
  for (int k = 0; k < K; ++k) {
    const Joint& j = joints[k];
    if (k == 0) {
      if (j.parent != -1) throw Error("Skeleton: joint 0 must be the root");
    } else {
      if (j.parent < 0 || j.parent >= k)
        throw Error("Skeleton: joint " + j.name +
                    " parent must precede it (topological order)");
    }
    for (int d = 0; d < kDofPerJoint; ++d)
      if (j.limit_lo[d] > j.limit_hi[d])
        throw Error("Skeleton: joint " + j.name + " has inverted limits");
    if (j.symmetry_partner >= 0) {
      if (j.symmetry_partner >= K || j.symmetry_partner == k)
        throw Error("Skeleton: joint " + j.name + " bad symmetry partner");
      const Joint& p = joints[j.symmetry_partner];
      if (p.symmetry_partner != k)
        throw Error("Skeleton: symmetry is not involutive at " + j.name);
      if (p.dof_mask != j.dof_mask)
        throw Error("Skeleton: symmetric pair " + j.name + "/" + p.name +
                    " must share a DOF mask");
    }
  }
  s.joints_ = std::move(joints);

  s.global_bind_.resize(K);
  s.global_bind_inv_.resize(K);
  for (int k = 0; k < K; ++k) {
    const Joint& j = s.joints_[k];
    s.global_bind_[k] = (j.parent < 0 ? j.bind_local
                                      : (s.global_bind_[j.parent] *
                                         j.bind_local).eval());
    const double det = s.global_bind_[k].determinant();
    if (std::abs(det) < 1e-12)
      throw Error("Skeleton: non-invertible bind at joint " + j.name);
    s.global_bind_inv_[k] = s.global_bind_[k].inverse();
  }

  // Pose packing: one slot per free DOF; the lower-indexed joint of a
  // symmetric pair owns the slot, the partner reuses it with mirrored signs.
  s.slot_of_dof_.assign(K * kDofPerJoint, -1);
  s.slot_sign_.assign(K * kDofPerJoint, 0.0);
  for (int k = 0; k < K; ++k) {
    const Joint& j = s.joints_[k];
    for (int d = 0; d < kDofPerJoint; ++d) {
      if (!j.dof_mask[d]) continue;
      const int flat = k * kDofPerJoint + d;
      if (j.symmetry_partner >= 0 && j.symmetry_partner < k) {
        const int primary = j.symmetry_partner * kDofPerJoint + d;
        s.slot_of_dof_[flat] = s.slot_of_dof_[primary];
        s.slot_sign_[flat] = is_flip_dof(d) ? -1.0 : 1.0;
      } else {
        s.slot_of_dof_[flat] = s.free_count_++;
        s.slot_sign_[flat] = 1.0;
        s.slot_primary_dof_.push_back(flat);
      }
    }
  }

  s.rest_full_.setZero(K * kDofPerJoint);
  s.limit_lo_full_.setZero(K * kDofPerJoint);
  s.limit_hi_full_.setZero(K * kDofPerJoint);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < kDofPerJoint; ++d) {
      const int flat = k * kDofPerJoint + d;
      const double rest = is_scale_dof(d) ? 1.0 : 0.0;
      s.rest_full_[flat] = rest;
      if (s.joints_[k].dof_mask[d]) {
        s.limit_lo_full_[flat] = s.joints_[k].limit_lo[d];
        s.limit_hi_full_[flat] = s.joints_[k].limit_hi[d];
      } else {
        s.limit_lo_full_[flat] = rest;
        s.limit_hi_full_[flat] = rest;
      }
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  for (int flat = 0; flat < K * kDofPerJoint; ++flat)
    if (s.slot_of_dof_[flat] >= 0)
      trips.emplace_back(flat, s.slot_of_dof_[flat], s.slot_sign_[flat]);
  auto pm = std::make_shared<Eigen::SparseMatrix<double>>(K * kDofPerJoint,
                                                          s.free_count_);
  pm->setFromTriplets(trips.begin(), trips.end());
  s.pack_matrix_ = pm;
  return s;
}

Eigen::VectorXd Skeleton::unpack(const PoseParams& packed) const {
  if (packed.size() != free_count_)
    throw Error("Skeleton::unpack: expected " + std::to_string(free_count_) +
                " params, got " + std::to_string(packed.size()));
  return *pack_matrix_ * packed + rest_full_;
}

PoseParams Skeleton::pack(const Eigen::VectorXd& full) const {
  if (full.size() != joint_count() * kDofPerJoint)
    throw Error("Skeleton::pack: full vector size mismatch");
  PoseParams packed(free_count_);
  for (int slot = 0; slot < free_count_; ++slot)
    packed[slot] =
        full[slot_primary_dof_[slot]] - rest_full_[slot_primary_dof_[slot]];
  return packed;
}

PoseParams Skeleton::mirror_packed(const PoseParams& packed) const {
  const Eigen::VectorXd full = unpack(packed);
  Eigen::VectorXd mirrored = rest_full_;
  for (int k = 0; k < joint_count(); ++k) {
    const int src = joints_[k].symmetry_partner >= 0
                        ? joints_[k].symmetry_partner
                        : k;
    for (int d = 0; d < kDofPerJoint; ++d) {
      const double sign = is_flip_dof(d) ? -1.0 : 1.0;
      const int flat = k * kDofPerJoint + d;
      const double rest = rest_full_[flat];
      mirrored[flat] = rest + sign * (full[src * kDofPerJoint + d] - rest);
    }
  }
  return pack(mirrored);
}

Eigen::VectorXd Skeleton::packed_limit_lo() const {
  Eigen::VectorXd lo(free_count_);
  for (int slot = 0; slot < free_count_; ++slot) {
    const int flat = slot_primary_dof_[slot];
    lo[slot] = limit_lo_full_[flat] - rest_full_[flat];
  }
  return lo;
}

Eigen::VectorXd Skeleton::packed_limit_hi() const {
  Eigen::VectorXd hi(free_count_);
  for (int slot = 0; slot < free_count_; ++slot) {
    const int flat = slot_primary_dof_[slot];
    hi[slot] = limit_hi_full_[flat] - rest_full_[flat];
  }
  return hi;
}

Eigen::Matrix4d local_transform(const Eigen::Matrix<double, 9, 1>& tau) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() =
      euler_rotation(tau[kDofRx], tau[kDofRy], tau[kDofRz]) *
      Eigen::Vector3d(tau[kDofSx], tau[kDofSy], tau[kDofSz]).asDiagonal();
  m.topRightCorner<3, 1>() << tau[kDofTx], tau[kDofTy], tau[kDofTz];
  return m;
}

std::vector<Eigen::Matrix4d> compose_skinning_matrices(
    const Skeleton& skeleton, const PoseParams& packed) {
  const Eigen::VectorXd full = skeleton.unpack(packed);
  const int K = skeleton.joint_count();
  std::vector<Eigen::Matrix4d> global(K), skin(K);
  for (int k = 0; k < K; ++k) {
    const Joint& j = skeleton.joints()[k];
    const Eigen::Matrix4d local =
        local_transform(full.segment<kDofPerJoint>(k * kDofPerJoint));
    global[k] = (j.parent < 0 ? (j.bind_local * local).eval()
                              : (global[j.parent] * j.bind_local * local).eval());
    skin[k] = global[k] * skeleton.global_bind_inverse(k);
  }
  return skin;
}

namespace {

struct Generators {
  ad::Var identity, e33;
  std::array<ad::Var, 3> K, K2;       // skew generators and squares (4x4)
  std::array<ad::Var, 3> T;           // translation basis
  std::array<ad::Var, 3> S;           // scale diag basis
  ad::Var one;

  static Generators make(ad::Tape& t) {
    using M4 = Eigen::Matrix4d;
    Generators g{};
    g.identity = t.constant(M4::Identity());
    M4 e33 = M4::Zero();
    e33(3, 3) = 1.0;
    g.e33 = t.constant(e33);
    const int ax[3][2] = {{1, 2}, {2, 0}, {0, 1}};
    for (int a = 0; a < 3; ++a) {
      M4 k = M4::Zero();
      k(ax[a][0], ax[a][1]) = -1.0;
      k(ax[a][1], ax[a][0]) = 1.0;
      g.K[a] = t.constant(k);
      g.K2[a] = t.constant((k * k).eval());
      M4 tr = M4::Zero();
      tr(a, 3) = 1.0;
      g.T[a] = t.constant(tr);
      M4 sc = M4::Zero();
      sc(a, a) = 1.0;
      g.S[a] = t.constant(sc);
    }
    g.one = t.scalar(1.0);
    return g;
  }
};

ad::Var axis_rotation(ad::Tape& t, const Generators& g, int axis,
                      ad::Var angle) {
  // R = I + sin(a) K + (1 - cos(a)) K^2
  const ad::Var s = t.sin(angle);
  const ad::Var omc = t.sub(g.one, t.cos(angle));
  return t.add(g.identity, t.add(t.scale(g.K[axis], s), t.scale(g.K2[axis], omc)));
}

}  // namespace

SkinningMatricesTape compose_skinning_matrices_tape(ad::Tape& tape,
                                                    const Skeleton& skeleton,
                                                    ad::Var packed) {
  const ad::Var full = tape.add(
      tape.sparse_matmul(skeleton.pack_matrix(), packed),
      tape.constant(skeleton.rest_full()));
  const Generators gen = Generators::make(tape);
  const int K = skeleton.joint_count();
  std::vector<ad::Var> global(K), skin(K);
  for (int k = 0; k < K; ++k) {
    const Joint& j = skeleton.joints()[k];
    auto dof = [&](int d) {
      return tape.slice(full, k * kDofPerJoint + d, 0, 1, 1);
    };
    const ad::Var rot =
        tape.matmul(axis_rotation(tape, gen, 2, dof(kDofRz)),
                    tape.matmul(axis_rotation(tape, gen, 1, dof(kDofRy)),
                                axis_rotation(tape, gen, 0, dof(kDofRx))));
    ad::Var trans = gen.identity;
    for (int a = 0; a < 3; ++a)
      trans = tape.add(trans, tape.scale(gen.T[a], dof(kDofTx + a)));
    ad::Var scale_mat = gen.e33;
    for (int a = 0; a < 3; ++a)
      scale_mat = tape.add(scale_mat, tape.scale(gen.S[a], dof(kDofSx + a)));
    const ad::Var local =
        tape.matmul(trans, tape.matmul(rot, scale_mat));
    const ad::Var with_bind =
        tape.matmul(tape.constant(j.bind_local), local);
    global[k] =
        j.parent < 0 ? with_bind : tape.matmul(global[j.parent], with_bind);
    skin[k] =
        tape.matmul(global[k], tape.constant(skeleton.global_bind_inverse(k)));
  }
  return {std::move(skin), full};
}

SkinningWeights SkinningWeights::create(
    int vertex_count, int joint_count,
    std::vector<std::vector<long>> class_cells, Eigen::VectorXd free_params) {
  if (vertex_count <= 0 || joint_count <= 0)
    throw Error("SkinningWeights: empty dimensions");
  SkinningWeights w;
  w.n_ = vertex_count;
  w.k_ = joint_count;
  const long total = static_cast<long>(vertex_count) * joint_count;
  w.support_.assign(total, false);
  for (std::size_t c = 0; c < class_cells.size(); ++c) {
    if (class_cells[c].empty())
      throw Error("SkinningWeights: empty symmetry class " + std::to_string(c));
    for (long cell : class_cells[c]) {
      if (cell < 0 || cell >= total)
        throw Error("SkinningWeights: cell index out of range");
      if (w.support_[cell])
        throw Error("SkinningWeights: cell assigned to two classes");
      w.support_[cell] = true;
    }
  }
  for (int v = 0; v < vertex_count; ++v) {
    bool any = false;
    for (int k = 0; k < joint_count && !any; ++k)
      any = w.support_[static_cast<long>(k) * vertex_count + v];
    if (!any)
      throw Error("SkinningWeights: vertex " + std::to_string(v) +
                  " has empty joint support");
  }
  if (free_params.size() != static_cast<Eigen::Index>(class_cells.size()))
    throw Error("SkinningWeights: free_params length must equal class count");
  if (!free_params.allFinite())
    throw Error("SkinningWeights: non-finite free params");

  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t c = 0; c < class_cells.size(); ++c)
    for (long cell : class_cells[c])
      trips.emplace_back(static_cast<int>(cell), static_cast<int>(c), 1.0);
  auto em = std::make_shared<Eigen::SparseMatrix<double>>(
      total, static_cast<int>(class_cells.size()));
  em->setFromTriplets(trips.begin(), trips.end());
  w.expand_matrix_ = em;
  w.class_cells_ = std::move(class_cells);
  w.free_params_ = std::move(free_params);
  return w;
}

void SkinningWeights::set_free_params(const Eigen::VectorXd& p) {
  if (p.size() != free_params_.size())
    throw Error("SkinningWeights::set_free_params: length mismatch");
  if (!p.allFinite())
    throw Error("SkinningWeights::set_free_params: non-finite values");
  free_params_ = p;
}

bool SkinningWeights::supported(int v, int k) const {
  return support_[static_cast<long>(k) * n_ + v];
}

Eigen::MatrixXd SkinningWeights::dense() const {
  const Eigen::VectorXd flat = *expand_matrix_ * free_params_;
  Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(flat.data(), n_, k_);
  const Eigen::VectorXd row_sum = m.rowwise().sum();
  for (int v = 0; v < n_; ++v)
    if (std::abs(row_sum[v]) < 1e-12)
      throw NumericalError("SkinningWeights: row " + std::to_string(v) +
                           " sums to ~0, cannot normalize");
  return (m.array().colwise() / row_sum.array()).matrix();
}

ad::Var expand_weights_tape(ad::Tape& tape, const SkinningWeights& weights,
                            ad::Var free_params) {
  const ad::Var flat = tape.sparse_matmul(weights.expand_matrix(), free_params);
  const ad::Var dense =
      tape.reshape(flat, weights.vertex_count(), weights.joint_count());
  const ad::Var ones =
      tape.constant(Eigen::MatrixXd::Ones(weights.joint_count(), 1));
  const ad::Var row_sum = tape.matmul(dense, ones);
  return tape.div_col_broadcast(dense, row_sum);
}

VertexMatrix apply_lbs(const VertexMatrix& vertices,
                       const Eigen::MatrixXd& dense_weights,
                       const std::vector<Eigen::Matrix4d>& matrices) {
  const int n = static_cast<int>(vertices.rows());
  if (dense_weights.rows() != n)
    throw Error("apply_lbs: weight row count mismatch");
  if (dense_weights.cols() != static_cast<Eigen::Index>(matrices.size()))
    throw Error("apply_lbs: weight column / matrix count mismatch");
  Eigen::MatrixXd vh(n, 4);
  vh.leftCols<3>() = vertices;
  vh.col(3).setOnes();
  VertexMatrix out = VertexMatrix::Zero(n, 3);
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    const Eigen::MatrixXd x = vh * matrices[k].transpose();
    out.array() +=
        x.leftCols<3>().array().colwise() * dense_weights.col(k).array();
  }
  return out;
}

ad::Var apply_lbs_tape(ad::Tape& tape, const VertexMatrix& vertices,
                       ad::Var dense_weights,
                       const std::vector<ad::Var>& matrices) {
  const int n = static_cast<int>(vertices.rows());
  Eigen::MatrixXd vh(n, 4);
  vh.leftCols<3>() = vertices;
  vh.col(3).setOnes();
  const ad::Var vh_const = tape.constant(vh);
  ad::Var out = tape.constant(Eigen::MatrixXd::Zero(n, 3));
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    const ad::Var x = tape.matmul(vh_const, tape.transpose(matrices[k]));
    const ad::Var xyz = tape.slice(x, 0, 0, n, 3);
    const ad::Var w_col =
        tape.slice(dense_weights, 0, static_cast<int>(k), n, 1);
    out = tape.add(out, tape.mul_col_broadcast(xyz, w_col));
  }
  return out;
}

VertexMatrix apply_expressions(const VertexMatrix& vertices,
                               const ExpressionBasis& basis,
                               const Eigen::VectorXd& coeffs) {
  if (coeffs.size() != basis.shape_count())
    throw Error("apply_expressions: coefficient count mismatch");
  VertexMatrix out = vertices;
  for (int e = 0; e < basis.shape_count(); ++e) {
    if (basis.deltas[e].rows() != vertices.rows())
      throw Error("apply_expressions: delta shape mismatch");
    out += coeffs[e] * basis.deltas[e];
  }
  return out;
}

ad::Var apply_expressions_tape(ad::Tape& tape, ad::Var vertices,
                               const ExpressionBasis& basis, ad::Var coeffs) {
  ad::Var out = vertices;
  for (int e = 0; e < basis.shape_count(); ++e) {
    const ad::Var c = tape.slice(coeffs, e, 0, 1, 1);
    out = tape.add(out, tape.scale(tape.constant(basis.deltas[e]), c));
  }
  return out;
}

std::pair<int, int> count_free_parameters(const Skeleton& skeleton,
                                          const SkinningWeights& weights) {
  return {skeleton.free_dof_count(), weights.class_count()};
}

VertexMatrix Rig::pose_mesh(const PoseParams& pose,
                            const Eigen::VectorXd& expr_coeffs) const {
  const auto matrices = compose_skinning_matrices(skeleton, pose);
  const VertexMatrix skinned =
      apply_lbs(mesh.vertices, weights.dense(), matrices);
  return apply_expressions(skinned, expressions, expr_coeffs);
}

VertexMatrix Rig::pose_mesh(const PoseParams& pose) const {
  return pose_mesh(pose, Eigen::VectorXd::Zero(expressions.shape_count()));
}

}  // namespace rigfit
