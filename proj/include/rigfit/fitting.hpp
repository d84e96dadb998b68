#pragma once

#include <filesystem>

#include "rigfit/losses.hpp"
#include "rigfit/network.hpp"
#include "rigfit/synth.hpp"

namespace rigfit {

struct IcpThresholds {
  double max_distance = 0.25;       // absolute units
  double max_normal_angle_deg = 60.0;
};

// One entry per cloud point; weight 1 = retained, 0 = rejected.
struct Correspondence {
  std::vector<double> weight;
  std::vector<int> face;             // -1 when rejected
  std::vector<std::array<int, 3>> face_vertices;
  VertexMatrix surface_points;       // closest surface point per cloud point
  std::vector<Vec3> bary;            // barycentric coords on `face`
  int retained = 0;

  // retained x N selection matrix: S * V = model-side match points
  Eigen::SparseMatrix<double> selection_matrix(int vertex_count) const;
  // retained x 3 cloud-side match points
  VertexMatrix retained_targets(const PointCloud& cloud) const;
};

Correspondence build_correspondence(const Mesh& mesh, const PointCloud& cloud,
                                    const IcpThresholds& thresholds);

struct FitConfig {
  // test-time schedule: (pose, Z) x inner_cycles then expressions, x outer
  int pose_iters = 500;
  int z_iters = 500;
  int inner_cycles = 2;
  int expr_iters = 500;
  int outer_cycles = 2;
  double pose_lr = 1e-3;
  double z_lr = 1e-2;
  double expr_lr = 1e-2;
  LossWeights loss_weights;
  double lambda_m_floor = 0.003;     // pose magnitude weight decays to this
  IcpThresholds icp;
  int refresh_interval = 50;         // iterations between correspondence rebuilds
  std::uint64_t seed = 0;

  // stage-1 schedule (known-correspondence alternation)
  int stage1_cycles = 5;
  int stage1_pose_iters = 3000;
  int stage1_weight_iters = 3000;
  double stage1_pose_lr = 1e-3;
  double stage1_weight_lr = 1e-4;
  int snapshots_per_fit = 0;         // pose snapshots per scan per cycle
};

struct Stage1Result {
  std::vector<PoseParams> poses;       // one per scan
  Eigen::VectorXd learned_weights;     // free weight params (also set on rig)
  std::vector<PoseSnapshot> snapshots; // evenly spaced along each pose fit
  std::vector<double> loss_log;        // mean objective after each phase
};

// Alternates per-scan pose fits with a global weight fit across all scans.
// Targets are index-aligned meshes (known correspondence). Updates the
// rig's weights in place.
Stage1Result fit_stage1_linear(Rig& rig,
                               const std::vector<VertexMatrix>& targets,
                               const FitConfig& config);

struct FitResult {
  PoseParams pose;
  Eigen::VectorXd z;              // empty when no decoder in play
  Eigen::VectorXd expr_coeffs;
  VertexMatrix fitted_vertices;
  ErrorReport report;
  std::vector<double> loss_curve;  // objective per iteration, all phases
};

// Test-time fit against a point cloud. decoder may be null (linear weights
// only; the Z phases are skipped and z stays empty).
FitResult fit_test_time(const Rig& rig, const SkinDecoder* decoder,
                        const PointCloud& cloud, const FitConfig& config);

// Pose-only fit against 2D landmarks (no 3D target terms).
FitResult fit_landmarks_2d(const Rig& rig,
                           const std::vector<int>& landmark_vertices,
                           const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
                           const PinholeCamera& camera, const FitConfig& config);

struct RetargetOptions {
  std::vector<int> transfer_slots;   // packed pose slots copied from source
  bool transfer_expressions = true;
};

// Applies the source fit's designated pose slots and expression coeffs to
// the target rig and returns the posed vertices.
VertexMatrix retarget(const Rig& target_rig, const FitResult& source,
                      const RetargetOptions& options);

ErrorReport evaluate(const Mesh& fitted, const Mesh& reference);
ErrorReport evaluate(const Mesh& fitted, const PointCloud& reference);

// Structured text round-trip of pose/Z/coeffs/report/loss curve (vertices
// are recomputed from the rig on load paths that need them).
void save_fit_result(const FitResult& result, const std::filesystem::path& path);
FitResult load_fit_result(const std::filesystem::path& path);

}  // namespace rigfit
