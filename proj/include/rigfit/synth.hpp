#pragma once

#include "rigfit/rig.hpp"

namespace rigfit {

struct ToyRigConfig {
  int subdivision = 2;          // octahedron subdivision level
  int joint_count = 9;          // including root
  bool symmetric = true;
  int expression_count = 4;
  // masks for the root and for every other joint
  std::array<bool, kDofPerJoint> root_mask = {true, true, true, true, true,
                                              true, false, false, false};
  std::array<bool, kDofPerJoint> child_mask = {true, true, true, true, true,
                                               true, true, true, true};
  double rot_limit = 0.5;        // radians, symmetric bound
  double trans_limit_frac = 0.2; // fraction of mean radius
  double scale_limit_dev = 0.25; // S in [1-dev, 1+dev]
  double falloff_sigma_frac = 0.45;
  double support_threshold = 1e-3;
  std::uint64_t seed = 1;
};

// Ellipsoid head mesh + flat joint hierarchy + falloff weights with
// bilateral symmetry classes + bump expression shapes. Deterministic.
Rig make_toy_rig(const ToyRigConfig& config);

// Vertex index mirrored across the sagittal (x = 0) plane.
std::vector<int> mirror_vertex_map(const Mesh& mesh, double tol = 1e-9);

// Surface samples of the posed mesh + isotropic Gaussian noise, with one
// contiguous patch of `dropout_fraction` of the samples removed.
PointCloud synth_scan(const Rig& rig, const PoseParams& pose,
                      double noise_sigma, double dropout_fraction, int count,
                      Rng& rng);

struct CorpusSpec {
  int snapshots_per_fit = 4;   // s
  int cycles = 2;              // c
  int perturb_copies = 3;      // p
  double perturb_fraction = 0.05;
  double perturb_sparsity = 0.2;  // fraction of free DOFs touched per copy
  double split_train = 0.906, split_val = 0.021, split_test = 0.073;
  // vertex-loss bound each synthesized sample must reach on its target
  // (relative to the target bounding-box diagonal)
  double recon_bound_rel = 5e-3;
};

struct PoseSnapshot {
  int scan_index = -1;
  PoseParams pose;
};

// Expands base snapshots with p sparsely perturbed copies each: a random
// `round(sparsity * dofs)`-subset of free slots scaled by (1 +/- fraction).
std::vector<PoseSnapshot> harvest_transform_corpus(
    const std::vector<PoseSnapshot>& base, const CorpusSpec& spec, Rng& rng);

struct WeightFitOptions {
  double lr = 1e-2;
  int max_iters = 2000;
  double rel_tol = 1e-6;  // relative loss change over `window` steps
  int window = 50;
  double lambda_p = 0.3;
};

struct SkinningSample {
  Eigen::VectorXd free_params;
  double final_loss = 0.0;  // vertex loss at convergence
};

// Freezes the pose and optimizes the free weight parameters against a
// known-correspondence target mesh.
SkinningSample fit_weights_for_pose(const Rig& rig, const PoseParams& pose,
                                    const VertexMatrix& target,
                                    const WeightFitOptions& options = {});

struct CorpusSplit {
  std::vector<int> train, val, test;
};

// Disjoint, exhaustive, seed-deterministic; floor sizes then hand the
// remainder to train, val, test in that order.
CorpusSplit split_corpus(int count, double train_ratio, double val_ratio,
                         double test_ratio, std::uint64_t seed);

}  // namespace rigfit
