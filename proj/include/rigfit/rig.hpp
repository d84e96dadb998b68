#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rigfit/geometry.hpp"
#include "rigfit/tape.hpp"

namespace rigfit {

// Per-joint DOF layout: Rx Ry Rz Tx Ty Tz Sx Sy Sz.
constexpr int kDofPerJoint = 9;
constexpr int kDofRx = 0, kDofRy = 1, kDofRz = 2;
constexpr int kDofTx = 3, kDofTy = 4, kDofTz = 5;
constexpr int kDofSx = 6, kDofSy = 7, kDofSz = 8;

struct Joint {
  std::string name;
  int parent = -1;  // -1 for root; parent index < own index
  Eigen::Matrix4d bind_local = Eigen::Matrix4d::Identity();
  std::array<bool, kDofPerJoint> dof_mask{};  // true = free
  Eigen::Matrix<double, kDofPerJoint, 1> limit_lo, limit_hi;
  int symmetry_partner = -1;  // -1 for midline joints
};

// Packed pose vector: one slot per free DOF after masking and symmetry
// sharing. Mirrored partners share a slot with sign flips on Tx, Ry, Rz.
using PoseParams = Eigen::VectorXd;

class Skeleton {
 public:
  // Validates hierarchy (single root, topological order), symmetry
  // involution, limits and bind invertibility; derives global bind matrices
  // and the pose packing map.
  static Skeleton create(std::vector<Joint> joints);

  const std::vector<Joint>& joints() const { return joints_; }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  int free_dof_count() const { return free_count_; }

  const Eigen::Matrix4d& global_bind(int k) const { return global_bind_[k]; }
  const Eigen::Matrix4d& global_bind_inverse(int k) const {
    return global_bind_inv_[k];
  }

  // Rest pose in full 9K layout (zero R/T, unit S).
  const Eigen::VectorXd& rest_full() const { return rest_full_; }
  // Box limits in full layout; masked DOFs are pinned to rest.
  const Eigen::VectorXd& limit_lo_full() const { return limit_lo_full_; }
  const Eigen::VectorXd& limit_hi_full() const { return limit_hi_full_; }

  // tau_full = pack_matrix * packed + rest_full
  std::shared_ptr<const Eigen::SparseMatrix<double>> pack_matrix() const {
    return pack_matrix_;
  }
  Eigen::VectorXd unpack(const PoseParams& packed) const;
  // Reads free DOFs off the full vector (primary slot of each symmetry pair).
  PoseParams pack(const Eigen::VectorXd& full) const;
  PoseParams rest_packed() const {
    return PoseParams::Zero(free_count_);
  }
  // Mirror across the sagittal plane: partners swap, Tx/Ry/Rz flip sign.
  PoseParams mirror_packed(const PoseParams& packed) const;

  // Packed-space limits for optimizer-side clamping diagnostics.
  Eigen::VectorXd packed_limit_lo() const;
  Eigen::VectorXd packed_limit_hi() const;

 private:
  std::vector<Joint> joints_;
  std::vector<Eigen::Matrix4d> global_bind_, global_bind_inv_;
  int free_count_ = 0;
  // slot index per (joint, dof), -1 when masked; sign of the shared slot
  std::vector<int> slot_of_dof_;
  std::vector<double> slot_sign_;
  std::vector<int> slot_primary_dof_;  // flat (joint*9+dof) owning each slot
  Eigen::VectorXd rest_full_, limit_lo_full_, limit_hi_full_;
  std::shared_ptr<const Eigen::SparseMatrix<double>> pack_matrix_;
};

// Local joint transform: Translate * Rz * Ry * Rx * Scale (column-vector
// convention, intrinsic Euler).
Eigen::Matrix4d local_transform(const Eigen::Matrix<double, 9, 1>& tau);

// Skinning matrices M_k = G_k * global_bind_k^-1 with
// G_k = G_parent * bind_local_k * local(tau_k). Identity pose -> identity.
std::vector<Eigen::Matrix4d> compose_skinning_matrices(const Skeleton& skeleton,
                                                       const PoseParams& packed);

// Tape variant; `full` is the unpacked 9K vector node.
struct SkinningMatricesTape {
  std::vector<ad::Var> skin;
  ad::Var full;
};
SkinningMatricesTape compose_skinning_matrices_tape(ad::Tape& tape,
                                                    const Skeleton& skeleton,
                                                    ad::Var packed);

// Sparse, bilaterally symmetric N x K weights parameterized by one free
// value per symmetry class. Dense expansion scatters classes and
// renormalizes each row to sum 1.
class SkinningWeights {
 public:
  // class_cells[c] lists flat cell indices (cell = k * N + v).
  static SkinningWeights create(int vertex_count, int joint_count,
                                std::vector<std::vector<long>> class_cells,
                                Eigen::VectorXd free_params);

  int vertex_count() const { return n_; }
  int joint_count() const { return k_; }
  int class_count() const { return static_cast<int>(class_cells_.size()); }
  const std::vector<std::vector<long>>& class_cells() const {
    return class_cells_;
  }
  const Eigen::VectorXd& free_params() const { return free_params_; }
  void set_free_params(const Eigen::VectorXd& p);
  bool supported(int v, int k) const;

  // scatter matrix: dense_flat(NK) = expand_matrix * free_params
  std::shared_ptr<const Eigen::SparseMatrix<double>> expand_matrix() const {
    return expand_matrix_;
  }
  // Row-normalized dense matrix.
  Eigen::MatrixXd dense() const;

 private:
  int n_ = 0, k_ = 0;
  std::vector<std::vector<long>> class_cells_;
  Eigen::VectorXd free_params_;
  std::vector<bool> support_;  // flat k*N+v
  std::shared_ptr<const Eigen::SparseMatrix<double>> expand_matrix_;
};

// Row-normalized N x K weight node from a free-parameter node (C x 1).
ad::Var expand_weights_tape(ad::Tape& tape, const SkinningWeights& weights,
                            ad::Var free_params);

// v'_n = sum_k w_nk * (M_k v_n), homogeneous coordinate 1.
VertexMatrix apply_lbs(const VertexMatrix& vertices,
                       const Eigen::MatrixXd& dense_weights,
                       const std::vector<Eigen::Matrix4d>& matrices);
// Tape variant over a constant base mesh.
ad::Var apply_lbs_tape(ad::Tape& tape, const VertexMatrix& vertices,
                       ad::Var dense_weights,
                       const std::vector<ad::Var>& matrices);

struct ExpressionBasis {
  std::vector<VertexMatrix> deltas;  // E shapes, each N x 3
  Eigen::VectorXd coeff_lo, coeff_hi;  // per-coefficient bounds, default [0,1]

  int shape_count() const { return static_cast<int>(deltas.size()); }
  static ExpressionBasis empty() { return {}; }
};

// Additive offsets applied after skinning.
VertexMatrix apply_expressions(const VertexMatrix& vertices,
                               const ExpressionBasis& basis,
                               const Eigen::VectorXd& coeffs);
ad::Var apply_expressions_tape(ad::Tape& tape, ad::Var vertices,
                               const ExpressionBasis& basis, ad::Var coeffs);

// (pose DOF slots, weight symmetry classes)
std::pair<int, int> count_free_parameters(const Skeleton& skeleton,
                                          const SkinningWeights& weights);

// Whole rig bundle used across the pipeline.
struct Rig {
  Mesh mesh;
  Skeleton skeleton;
  SkinningWeights weights;
  ExpressionBasis expressions;

  // Plain forward through LBS + expressions.
  VertexMatrix pose_mesh(const PoseParams& pose,
                         const Eigen::VectorXd& expr_coeffs) const;
  VertexMatrix pose_mesh(const PoseParams& pose) const;
};

}  // namespace rigfit
