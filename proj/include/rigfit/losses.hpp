#pragma once

#include "rigfit/geometry.hpp"
#include "rigfit/rig.hpp"
#include "rigfit/tape.hpp"

namespace rigfit {

struct LossWeights {
  double lambda_m = 0.03;
  double lambda_x = 0.3;
  double lambda_p = 0.3;
};

// Vertex loss as printed: (1/N) * sqrt(sum_n ||vp_n - vg_n||^2).
// TrueRmse puts the 1/N inside the square root instead.
enum class VertexLossForm { AsPrinted, TrueRmse };

double loss_vertex(const VertexMatrix& vp, const VertexMatrix& vg,
                   VertexLossForm form = VertexLossForm::AsPrinted);

// (1/K) * sum_k (|R_k|_1 + |T_k|_1 + |S_k - 1|_1)
double loss_magnitude(const Skeleton& skeleton, const PoseParams& pose);

enum class DofGroup { Rotation, Translation, Scale };

// (1/K) * sum_k hinge distance outside [lo, hi] over the group's components.
double loss_box(const Skeleton& skeleton, const PoseParams& pose,
                DofGroup group);
// Sum of the three groups (what lambda_x multiplies).
double loss_box_total(const Skeleton& skeleton, const PoseParams& pose);

// (1/N) * sqrt(sum_n ||L vp_n - L vg_n||^2) with the umbrella Laplacian.
double loss_laplacian(const Mesh& mesh, const VertexMatrix& vp,
                      const VertexMatrix& vg);

// Weighted total: L_v + lm*L_m + lx*(L_R+L_T+L_S) + lp*L_p.
double loss_total(const Mesh& mesh, const VertexMatrix& vp,
                  const VertexMatrix& vg, const Skeleton& skeleton,
                  const PoseParams& pose, const LossWeights& weights = {});

struct PinholeCamera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  // Projects a camera-space point (camera at origin, looking down +z).
  Eigen::Vector2d project(const Vec3& p) const;
};

// Mean Euclidean pixel distance between projected model landmarks and
// 2D targets. Throws on out-of-range indices or points at/behind z = 0.
double loss_landmarks_2d(const VertexMatrix& vertices,
                         const std::vector<int>& landmark_vertices,
                         const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
                         const PinholeCamera& camera);

// --- tape builders (vp etc. are tape nodes; vg targets are constants) ---

ad::Var loss_vertex_tape(ad::Tape& t, ad::Var vp, const VertexMatrix& vg,
                         VertexLossForm form = VertexLossForm::AsPrinted);
// `full` is the unpacked 9K pose node.
ad::Var loss_magnitude_tape(ad::Tape& t, const Skeleton& skeleton, ad::Var full);
ad::Var loss_box_total_tape(ad::Tape& t, const Skeleton& skeleton, ad::Var full);
ad::Var loss_laplacian_tape(ad::Tape& t,
                            std::shared_ptr<const Eigen::SparseMatrix<double>> L,
                            ad::Var vp, const VertexMatrix& vg);
ad::Var loss_landmarks_2d_tape(
    ad::Tape& t, ad::Var vertices, const std::vector<int>& landmark_vertices,
    const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
    const PinholeCamera& camera);

// Generic box penalty for bounded auxiliary parameters (expression coeffs).
ad::Var coeff_box_tape(ad::Tape& t, ad::Var coeffs, const Eigen::VectorXd& lo,
                       const Eigen::VectorXd& hi);

}  // namespace rigfit
