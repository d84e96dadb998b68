#include <filesystem>

#include "doctest.h"
#include "rigfit/fitting.hpp"

using namespace rigfit;
namespace fs = std::filesystem;

namespace {

Rig toy() { return make_toy_rig(ToyRigConfig{}); }

PoseParams small_pose(const Skeleton& s, std::uint64_t seed, double amp) {
  Rng rng(seed);
  PoseParams pose(s.free_dof_count());
  for (int i = 0; i < pose.size(); ++i) pose[i] = rng.uniform(-amp, amp);
  return pose;
}

}  // namespace

TEST_CASE("surface samples are fully retained by the correspondence") {
  const Rig rig = toy();
  Rng rng(3);
  const PointCloud cloud = sample_surface(rig.mesh, 300, rng);
  const Correspondence corr =
      build_correspondence(rig.mesh, cloud, IcpThresholds{});
  CHECK(corr.retained == 300);
  for (int i = 0; i < 300; ++i) {
    CHECK(corr.weight[static_cast<std::size_t>(i)] == 1.0);
    CHECK((corr.surface_points.row(i) - cloud.points.row(i)).norm() < 1e-9);
  }

  // S * V reproduces the matched surface points through barycentrics
  const Eigen::SparseMatrix<double> S =
      corr.selection_matrix(rig.mesh.vertex_count());
  CHECK(S.rows() == corr.retained);
  const VertexMatrix matched = S * rig.mesh.vertices;
  CHECK((matched - corr.surface_points).cwiseAbs().maxCoeff() < 1e-9);
  const VertexMatrix targets = corr.retained_targets(cloud);
  CHECK((targets - cloud.points).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("distant outliers are rejected") {
  const Rig rig = toy();
  Rng rng(5);
  PointCloud cloud = sample_surface(rig.mesh, 50, rng);
  cloud.points.row(0) << 50.0, 50.0, 50.0;
  const Correspondence corr =
      build_correspondence(rig.mesh, cloud, IcpThresholds{});
  CHECK(corr.retained == 49);
  CHECK(corr.weight[0] == 0.0);

  // a cloud made entirely of outliers cannot build a correspondence
  PointCloud far;
  far.points = VertexMatrix::Constant(10, 3, 100.0);
  CHECK_THROWS_AS(build_correspondence(rig.mesh, far, IcpThresholds{}), Error);
}

TEST_CASE("flipped normals are rejected by the angle threshold") {
  const Rig rig = toy();
  Rng rng(7);
  PointCloud cloud = sample_surface(rig.mesh, 40, rng);
  REQUIRE(cloud.normals.has_value());
  cloud.normals->row(0) = -cloud.normals->row(0);
  const Correspondence corr =
      build_correspondence(rig.mesh, cloud, IcpThresholds{});
  CHECK(corr.retained == 39);
  CHECK(corr.weight[0] == 0.0);
}

TEST_CASE("correspondence distances match a brute-force pairing") {
  const Rig rig = toy();
  Rng rng(11);
  VertexMatrix pts(30, 3);
  for (int i = 0; i < 30; ++i)
    for (int c = 0; c < 3; ++c) pts(i, c) = rng.uniform(-1.3, 1.3);
  PointCloud cloud;
  cloud.points = pts;
  IcpThresholds th;
  th.max_distance = 10.0;  // keep everything
  const Correspondence corr = build_correspondence(rig.mesh, cloud, th);
  CHECK(corr.retained == 30);
  for (int i = 0; i < 30; ++i) {
    double best = std::numeric_limits<double>::infinity();
    const Vec3 q = pts.row(i);
    for (const auto& f : rig.mesh.faces) {
      const Vec3 p = closest_point_on_triangle(q, rig.mesh.vertices.row(f[0]),
                                               rig.mesh.vertices.row(f[1]),
                                               rig.mesh.vertices.row(f[2]));
      best = std::min(best, (p - q).norm());
    }
    CHECK((corr.surface_points.row(i).transpose() - q).norm() ==
          doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("stage-1 alternation recovers pose and weights from clean targets") {
  Rig rig = toy();
  const Eigen::VectorXd true_weights = rig.weights.free_params();
  const PoseParams true_pose = small_pose(rig.skeleton, 13, 0.05);
  const std::vector<VertexMatrix> targets = {rig.pose_mesh(true_pose)};

  // start the weights off-truth and the pose at rest
  Eigen::VectorXd start = true_weights;
  Rng rng(17);
  for (int i = 0; i < start.size(); ++i)
    start[i] *= 1.0 + 0.2 * rng.uniform(-1.0, 1.0);
  rig.weights.set_free_params(start);

  FitConfig cfg;
  cfg.stage1_cycles = 2;
  cfg.stage1_pose_iters = 800;
  cfg.stage1_weight_iters = 800;
  cfg.stage1_pose_lr = 2e-3;
  cfg.stage1_weight_lr = 1e-2;
  cfg.loss_weights.lambda_m = 1e-5;
  cfg.loss_weights.lambda_p = 0.0;
  cfg.snapshots_per_fit = 2;
  const Stage1Result res = fit_stage1_linear(rig, targets, cfg);

  REQUIRE(res.poses.size() == 1);
  const double recon = loss_vertex(
      rig.pose_mesh(res.poses[0]), targets[0]);
  CHECK(recon < 1e-4);
  CHECK_FALSE(res.loss_log.empty());
  CHECK(res.loss_log.back() < res.loss_log.front());
  CHECK(static_cast<int>(res.snapshots.size()) ==
        cfg.snapshots_per_fit * cfg.stage1_cycles);
  for (const PoseSnapshot& snap : res.snapshots) CHECK(snap.scan_index == 0);
  // the rig's weights were updated in place
  CHECK((rig.weights.free_params() - res.learned_weights)
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("zero-iteration stage-1 changes nothing") {
  Rig rig = toy();
  const Eigen::VectorXd before = rig.weights.free_params();
  FitConfig cfg;
  cfg.stage1_cycles = 1;
  cfg.stage1_pose_iters = 0;
  cfg.stage1_weight_iters = 0;
  cfg.snapshots_per_fit = 0;
  const Stage1Result res =
      fit_stage1_linear(rig, {rig.mesh.vertices}, cfg);
  CHECK((rig.weights.free_params() - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK((res.poses[0] - rig.skeleton.rest_packed()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(res.snapshots.empty());
}

TEST_CASE("test-time fit without a decoder leaves z empty") {
  const Rig rig = toy();
  Rng rng(19);
  const PoseParams true_pose = small_pose(rig.skeleton, 23, 0.04);
  const PointCloud cloud = synth_scan(rig, true_pose, 0.0, 0.0, 500, rng);

  FitConfig cfg;
  cfg.pose_iters = 300;
  cfg.z_iters = 100;   // must be skipped without a decoder
  cfg.expr_iters = 0;
  cfg.inner_cycles = 1;
  cfg.outer_cycles = 1;
  cfg.pose_lr = 2e-3;
  cfg.refresh_interval = 25;
  cfg.loss_weights.lambda_m = 1e-5;
  cfg.loss_weights.lambda_p = 0.0;
  cfg.lambda_m_floor = 1e-6;
  const FitResult res = fit_test_time(rig, nullptr, cloud, cfg);
  CHECK(res.z.size() == 0);
  CHECK(res.expr_coeffs.cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(res.loss_curve.empty());
  const double start = evaluate(rig.mesh, cloud).mean;
  CHECK(res.report.mean < start);
  CHECK(res.fitted_vertices.rows() == rig.mesh.vertex_count());
}

TEST_CASE("fit results round-trip through their text format") {
  FitResult r;
  r.pose = PoseParams(3);
  r.pose << 0.125, -0.5, 1.0 / 3.0;
  r.z = Eigen::VectorXd(2);
  r.z << -1.5, 0.25;
  r.expr_coeffs = Eigen::VectorXd(1);
  r.expr_coeffs << 0.75;
  Eigen::VectorXd d(4);
  d << 0.1, 0.2, 0.3, 0.4;
  r.report = ErrorReport::from_distances(d);
  r.loss_curve = {1.0, 0.5, 0.25};
  const fs::path p = fs::temp_directory_path() / "fit_result_roundtrip.txt";
  save_fit_result(r, p);
  const FitResult back = load_fit_result(p);
  CHECK((back.pose - r.pose).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.z - r.z).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.expr_coeffs - r.expr_coeffs).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.report.mean == r.report.mean);
  CHECK(back.report.max == r.report.max);
  REQUIRE(back.loss_curve.size() == 3);
  CHECK(back.loss_curve[1] == 0.5);
  fs::remove(p);

  CHECK_THROWS_AS(load_fit_result(fs::temp_directory_path() / "nope_fit.txt"),
                  Error);
}

TEST_CASE("retargeting the full pose onto the same rig reproduces the mesh") {
  const Rig rig = toy();
  FitResult source;
  source.pose = small_pose(rig.skeleton, 29, 0.1);
  source.expr_coeffs = Eigen::VectorXd::Zero(rig.expressions.shape_count());
  source.expr_coeffs[0] = 0.6;
  RetargetOptions opts;
  for (int i = 0; i < rig.skeleton.free_dof_count(); ++i)
    opts.transfer_slots.push_back(i);
  const VertexMatrix out = retarget(rig, source, opts);
  const VertexMatrix want = rig.pose_mesh(source.pose, source.expr_coeffs);
  CHECK((out - want).cwiseAbs().maxCoeff() < 1e-9);

  // transferring no slots and no expressions yields the neutral mesh
  RetargetOptions none;
  none.transfer_expressions = false;
  const VertexMatrix neutral = retarget(rig, source, none);
  CHECK((neutral - rig.mesh.vertices).cwiseAbs().maxCoeff() < 1e-12);

  RetargetOptions bad;
  bad.transfer_slots = {100000};
  CHECK_THROWS_AS(retarget(rig, source, bad), Error);
}

TEST_CASE("evaluate wraps the geometric error metrics") {
  const Rig rig = toy();
  Mesh shifted = rig.mesh;
  shifted.vertices.col(2).array() += 0.25;
  const ErrorReport mm = evaluate(shifted, rig.mesh);
  CHECK(mm.mean == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(evaluate(rig.mesh, rig.mesh).max == doctest::Approx(0.0));

  Rng rng(31);
  const PointCloud cloud = sample_surface(rig.mesh, 200, rng);
  CHECK(evaluate(rig.mesh, cloud).max < 1e-9);
}

TEST_CASE("landmark fitting needs at least six landmarks and a valid camera") {
  const Rig rig = toy();
  PinholeCamera cam;
  cam.fx = cam.fy = 2.0;
  FitConfig cfg;
  cfg.pose_iters = 10;
  Eigen::Matrix<double, Eigen::Dynamic, 2> targets(3, 2);
  targets.setZero();
  CHECK_THROWS_AS(fit_landmarks_2d(rig, {0, 1, 2}, targets, cam, cfg), Error);

  // camera behind the head: every landmark is at or behind z = 0
  std::vector<int> lm = {0, 1, 2, 3, 4, 5};
  Eigen::Matrix<double, Eigen::Dynamic, 2> t6(6, 2);
  t6.setZero();
  Rig far_rig = toy();
  far_rig.mesh.vertices.col(2).array() -= 100.0;
  CHECK_THROWS_AS(fit_landmarks_2d(far_rig, lm, t6, cam, cfg), Error);
}

TEST_CASE("landmark fitting reduces reprojection error") {
  Rig rig = toy();
  // push the mesh in front of the camera
  rig.mesh.vertices.col(2).array() += 4.0;
  rig.mesh.finalize();
  const PoseParams true_pose = small_pose(rig.skeleton, 37, 0.05);
  const VertexMatrix posed = rig.pose_mesh(true_pose);
  PinholeCamera cam;
  cam.fx = cam.fy = 3.0;
  std::vector<int> lm;
  for (int i = 0; i < rig.mesh.vertex_count(); i += 4) lm.push_back(i);
  Eigen::Matrix<double, Eigen::Dynamic, 2> targets(
      static_cast<long>(lm.size()), 2);
  for (std::size_t i = 0; i < lm.size(); ++i)
    targets.row(static_cast<long>(i)) =
        cam.project(posed.row(lm[i])).transpose();

  FitConfig cfg;
  cfg.pose_iters = 400;
  cfg.inner_cycles = 1;
  cfg.outer_cycles = 1;
  cfg.pose_lr = 2e-3;
  cfg.loss_weights.lambda_m = 1e-5;
  const double before =
      loss_landmarks_2d(rig.mesh.vertices, lm, targets, cam);
  const FitResult res = fit_landmarks_2d(rig, lm, targets, cam, cfg);
  const double after =
      loss_landmarks_2d(rig.pose_mesh(res.pose), lm, targets, cam);
  CHECK(after < 0.5 * before);

  // zero iterations leave the pose at rest
  FitConfig zero = cfg;
  zero.pose_iters = 0;
  const FitResult still = fit_landmarks_2d(rig, lm, targets, cam, zero);
  CHECK(still.pose.cwiseAbs().maxCoeff() == 0.0);
}
