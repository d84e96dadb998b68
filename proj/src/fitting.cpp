#include "rigfit/fitting.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rigfit/adam.hpp"
#include "rigfit/mesh_io.hpp"

namespace rigfit {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 face_normal(const Mesh& mesh, int f) {
  const auto& face = mesh.faces[static_cast<std::size_t>(f)];
  const Vec3 a = mesh.vertices.row(face[0]);
  const Vec3 b = mesh.vertices.row(face[1]);
  const Vec3 c = mesh.vertices.row(face[2]);
  return (b - a).cross(c - a).normalized();
}

Vec3 barycentric_on_triangle(const Vec3& q, const Vec3& a, const Vec3& b,
                             const Vec3& c) {
  const Vec3 v0 = b - a, v1 = c - a, v2 = q - a;
  const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
  const double d20 = v2.dot(v0), d21 = v2.dot(v1);
  const double denom = d00 * d11 - d01 * d01;
  if (denom <= 0.0) return {1.0, 0.0, 0.0};
  double v = (d11 * d20 - d01 * d21) / denom;
  double w = (d00 * d21 - d01 * d20) / denom;
  double u = 1.0 - v - w;
  u = std::max(u, 0.0);
  v = std::max(v, 0.0);
  w = std::max(w, 0.0);
  const double s = u + v + w;
  return {u / s, v / s, w / s};
}

double lambda_m_at(const FitConfig& cfg, int iter, int total, bool decaying) {
  const double start = cfg.loss_weights.lambda_m;
  if (!decaying || total <= 1) return decaying ? start : cfg.lambda_m_floor;
  const double t = static_cast<double>(iter) / (total - 1);
  return start + (cfg.lambda_m_floor - start) * t;
}

}  // namespace

Eigen::SparseMatrix<double> Correspondence::selection_matrix(
    int vertex_count) const {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(retained) * 3);
  Eigen::SparseMatrix<double> s(retained, vertex_count);
  int row = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (weight[i] == 0.0) continue;
    for (int c = 0; c < 3; ++c)
      trips.emplace_back(row, face_vertices[i][static_cast<std::size_t>(c)],
                         bary[i][c]);
    ++row;
  }
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

VertexMatrix Correspondence::retained_targets(const PointCloud& cloud) const {
  VertexMatrix t(retained, 3);
  int row = 0;
  for (std::size_t i = 0; i < weight.size(); ++i)
    if (weight[i] != 0.0) t.row(row++) = cloud.points.row(static_cast<long>(i));
  return t;
}

Correspondence build_correspondence(const Mesh& mesh, const PointCloud& cloud,
                                    const IcpThresholds& thresholds) {
  if (mesh.vertex_count() == 0 || cloud.point_count() == 0)
    throw Error("build_correspondence: empty input");
  const int m = cloud.point_count();
  Correspondence corr;
  corr.weight.assign(static_cast<std::size_t>(m), 0.0);
  corr.face.assign(static_cast<std::size_t>(m), -1);
  corr.surface_points.resize(m, 3);
  corr.bary.assign(static_cast<std::size_t>(m), Vec3::Zero());
  corr.face_vertices.assign(static_cast<std::size_t>(m), {0, 0, 0});

  const double cos_max =
      std::cos(thresholds.max_normal_angle_deg * kPi / 180.0);
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
    const Vec3 q = cloud.points.row(static_cast<long>(i));
    const auto [p, f, d2] = closest_surface_point(mesh, q);
    corr.surface_points.row(static_cast<long>(i)) = p.transpose();
    corr.face[i] = f;
    const auto& fv = mesh.faces[static_cast<std::size_t>(f)];
    corr.face_vertices[i] = fv;
    corr.bary[i] = barycentric_on_triangle(p, mesh.vertices.row(fv[0]),
                                           mesh.vertices.row(fv[1]),
                                           mesh.vertices.row(fv[2]));
    bool keep = std::sqrt(d2) <= thresholds.max_distance;
    if (keep && cloud.normals) {
      const Vec3 n = cloud.normals->row(static_cast<long>(i));
      keep = face_normal(mesh, f).dot(n) >= cos_max;
    }
    corr.weight[i] = keep ? 1.0 : 0.0;
  });
  for (double w : corr.weight) corr.retained += w != 0.0 ? 1 : 0;
  if (corr.retained == 0)
    throw Error("build_correspondence: every pair rejected by thresholds");
  return corr;
}

namespace {

// One optimization phase of the test-time fit; `kind` selects the free block.
enum class Block { Pose, Latent, Expr };

struct TestTimeState {
  PoseParams pose;
  Eigen::VectorXd z;
  Eigen::VectorXd coeffs;
};

Eigen::VectorXd current_free_weights(const Rig& rig, const SkinDecoder* decoder,
                                     const Eigen::VectorXd& z) {
  if (decoder == nullptr) return rig.weights.free_params();
  return decoder->forward(z);
}

VertexMatrix posed_vertices(const Rig& rig, const SkinDecoder* decoder,
                            const TestTimeState& st) {
  SkinningWeights w = rig.weights;
  w.set_free_params(current_free_weights(rig, decoder, st.z));
  const auto mats = compose_skinning_matrices(rig.skeleton, st.pose);
  VertexMatrix v = apply_lbs(rig.mesh.vertices, w.dense(), mats);
  if (rig.expressions.shape_count() > 0)
    v = apply_expressions(v, rig.expressions, st.coeffs);
  return v;
}

void run_phase(const Rig& rig, const SkinDecoder* decoder,
               const PointCloud& cloud, const FitConfig& cfg, Block block,
               int iters, double lr, TestTimeState& st,
               std::vector<double>& loss_curve,
               const std::shared_ptr<const Eigen::SparseMatrix<double>>& lap) {
  if (iters <= 0) return;
  const int expr_count = rig.expressions.shape_count();
  Eigen::Index dim = 0;
  switch (block) {
    case Block::Pose: dim = st.pose.size(); break;
    case Block::Latent: dim = st.z.size(); break;
    case Block::Expr: dim = expr_count; break;
  }
  if (dim == 0) return;
  const char* name = block == Block::Pose ? "pose"
                     : block == Block::Latent ? "latent"
                                              : "expressions";
  Adam opt(name, dim, {lr});

  std::shared_ptr<const Eigen::SparseMatrix<double>> sel;
  VertexMatrix corr_targets;
  Eigen::MatrixXd dense_w;  // fixed weights when the latent is not active
  if (block != Block::Latent) {
    SkinningWeights w = rig.weights;
    w.set_free_params(current_free_weights(rig, decoder, st.z));
    dense_w = w.dense();
  }

  for (int it = 0; it < iters; ++it) {
    if (it % cfg.refresh_interval == 0) {
      Mesh posed = rig.mesh;
      posed.vertices = posed_vertices(rig, decoder, st);
      const Correspondence corr =
          build_correspondence(posed, cloud, cfg.icp);
      sel = std::make_shared<const Eigen::SparseMatrix<double>>(
          corr.selection_matrix(rig.mesh.vertex_count()));
      corr_targets = corr.retained_targets(cloud);
    }

    ad::Tape tape;
    const ad::Var pose_var = block == Block::Pose
                                 ? tape.input(st.pose)
                                 : tape.constant(st.pose);
    const SkinningMatricesTape mats =
        compose_skinning_matrices_tape(tape, rig.skeleton, pose_var);

    ad::Var z_var{};
    ad::Var weights_var{};
    if (block == Block::Latent) {
      z_var = tape.input(st.z.transpose());  // 1 x latent
      const DecoderVars dv = make_decoder_vars(tape, *decoder, false);
      const ad::Var residual = decoder_residual_tape(tape, *decoder, dv, z_var);
      const ad::Var free_abs = tape.add(
          tape.reshape(residual, decoder->output_dim(), 1),
          tape.constant(decoder->linear_weights));
      weights_var = expand_weights_tape(tape, rig.weights, free_abs);
    } else {
      weights_var = tape.constant(dense_w);
    }

    ad::Var v = apply_lbs_tape(tape, rig.mesh.vertices, weights_var, mats.skin);
    ad::Var coeff_var{};
    if (expr_count > 0) {
      coeff_var = block == Block::Expr ? tape.input(st.coeffs)
                                       : tape.constant(st.coeffs);
      v = apply_expressions_tape(tape, v, rig.expressions, coeff_var);
    }

    const ad::Var matched = tape.sparse_matmul(sel, v);
    const ad::Var corr_loss =
        tape.scale(tape.sqrt(ad::sumsq(tape, tape.sub(
                       matched, tape.constant(corr_targets)))),
                   1.0 / static_cast<double>(corr_targets.rows()));
    const double lm =
        lambda_m_at(cfg, it, iters, /*decaying=*/block == Block::Pose);
    ad::Var loss = tape.add(
        corr_loss,
        tape.scale(loss_magnitude_tape(tape, rig.skeleton, mats.full), lm));
    loss = tape.add(loss,
                    tape.scale(loss_box_total_tape(tape, rig.skeleton, mats.full),
                               cfg.loss_weights.lambda_x));
    loss = tape.add(
        loss, tape.scale(loss_laplacian_tape(tape, lap, v, rig.mesh.vertices),
                         cfg.loss_weights.lambda_p));
    if (expr_count > 0)
      loss = tape.add(loss, tape.scale(coeff_box_tape(tape, coeff_var,
                                                      rig.expressions.coeff_lo,
                                                      rig.expressions.coeff_hi),
                                       cfg.loss_weights.lambda_x));

    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value))
      throw NumericalError(std::string("fit_test_time: non-finite loss in ") +
                           name + " phase");
    loss_curve.push_back(value);
    tape.backward(loss);

    ad::Var active = block == Block::Pose ? pose_var
                     : block == Block::Latent ? z_var
                                              : coeff_var;
    const ad::Mat& adj = tape.adjoint(active);
    Eigen::VectorXd grad =
        Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size());
    switch (block) {
      case Block::Pose: opt.step(st.pose, grad); break;
      case Block::Latent: opt.step(st.z, grad); break;
      case Block::Expr: opt.step(st.coeffs, grad); break;
    }
  }
}

}  // namespace

FitResult fit_test_time(const Rig& rig, const SkinDecoder* decoder,
                        const PointCloud& cloud, const FitConfig& config) {
  if (cloud.point_count() == 0) throw Error("fit_test_time: empty cloud");
  if (decoder != nullptr &&
      decoder->output_dim() != rig.weights.class_count())
    throw ConfigError("fit_test_time: decoder output dim != weight params");

  TestTimeState st;
  st.pose = rig.skeleton.rest_packed();
  st.z = decoder ? Eigen::VectorXd::Zero(decoder->config.latent_dim)
                 : Eigen::VectorXd();
  st.coeffs = Eigen::VectorXd::Zero(rig.expressions.shape_count());
  const auto lap = std::make_shared<const Eigen::SparseMatrix<double>>(
      laplacian_matrix(rig.mesh));

  FitResult result;
  for (int outer = 0; outer < config.outer_cycles; ++outer) {
    for (int inner = 0; inner < config.inner_cycles; ++inner) {
      run_phase(rig, decoder, cloud, config, Block::Pose, config.pose_iters,
                config.pose_lr, st, result.loss_curve, lap);
      if (decoder != nullptr)
        run_phase(rig, decoder, cloud, config, Block::Latent, config.z_iters,
                  config.z_lr, st, result.loss_curve, lap);
    }
    run_phase(rig, decoder, cloud, config, Block::Expr, config.expr_iters,
              config.expr_lr, st, result.loss_curve, lap);
  }

  result.pose = st.pose;
  result.z = st.z;
  result.expr_coeffs = st.coeffs;
  result.fitted_vertices = posed_vertices(rig, decoder, st);
  Mesh fitted = rig.mesh;
  fitted.vertices = result.fitted_vertices;
  result.report = scan_to_mesh_distance(cloud, fitted);
  return result;
}

Stage1Result fit_stage1_linear(Rig& rig,
                               const std::vector<VertexMatrix>& targets,
                               const FitConfig& config) {
  if (targets.empty()) throw Error("fit_stage1_linear: no targets");
  for (const VertexMatrix& t : targets)
    if (t.rows() != rig.mesh.vertices.rows())
      throw Error("fit_stage1_linear: target topology mismatch");
  const int scans = static_cast<int>(targets.size());
  const Eigen::Index pose_dim = rig.skeleton.free_dof_count();
  const auto lap = std::make_shared<const Eigen::SparseMatrix<double>>(
      laplacian_matrix(rig.mesh));

  Stage1Result result;
  result.poses.assign(static_cast<std::size_t>(scans),
                      rig.skeleton.rest_packed());

  auto pose_objective = [&](ad::Tape& tape, ad::Var pose_var, ad::Var w_var,
                            const VertexMatrix& target) {
    const SkinningMatricesTape mats =
        compose_skinning_matrices_tape(tape, rig.skeleton, pose_var);
    const ad::Var v =
        apply_lbs_tape(tape, rig.mesh.vertices, w_var, mats.skin);
    ad::Var loss = loss_vertex_tape(tape, v, target);
    loss = tape.add(loss, tape.scale(loss_magnitude_tape(tape, rig.skeleton,
                                                         mats.full),
                                     config.loss_weights.lambda_m));
    loss = tape.add(loss,
                    tape.scale(loss_box_total_tape(tape, rig.skeleton, mats.full),
                               config.loss_weights.lambda_x));
    loss = tape.add(loss, tape.scale(loss_laplacian_tape(tape, lap, v, target),
                                     config.loss_weights.lambda_p));
    return loss;
  };

  for (int cycle = 0; cycle < config.stage1_cycles; ++cycle) {
    // per-scan pose fits against the shared current weights
    const Eigen::MatrixXd dense_w = rig.weights.dense();
    double cycle_pose_loss = 0.0;
    for (int s = 0; s < scans; ++s) {
      PoseParams& pose = result.poses[static_cast<std::size_t>(s)];
      Adam opt("pose", pose_dim, {config.stage1_pose_lr});
      double last = 0.0;
      for (int it = 0; it < config.stage1_pose_iters; ++it) {
        ad::Tape tape;
        const ad::Var pose_var = tape.input(pose);
        const ad::Var loss = pose_objective(
            tape, pose_var, tape.constant(dense_w),
            targets[static_cast<std::size_t>(s)]);
        last = tape.value(loss)(0, 0);
        if (!std::isfinite(last))
          throw NumericalError("fit_stage1_linear: non-finite pose loss");
        tape.backward(loss);
        const ad::Mat& adj = tape.adjoint(pose_var);
        opt.step(pose,
                 Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
        if (config.snapshots_per_fit > 0) {
          const int j = it + 1;
          for (int snap = 1; snap <= config.snapshots_per_fit; ++snap)
            if (j == (snap * config.stage1_pose_iters) /
                         config.snapshots_per_fit)
              result.snapshots.push_back({s, pose});
        }
      }
      cycle_pose_loss += last;
    }
    if (config.stage1_pose_iters > 0)
      result.loss_log.push_back(cycle_pose_loss / scans);

    // one global weight fit across all scans with poses frozen
    if (config.stage1_weight_iters > 0) {
      std::vector<std::vector<Eigen::Matrix4d>> mats;
      mats.reserve(static_cast<std::size_t>(scans));
      for (int s = 0; s < scans; ++s)
        mats.push_back(compose_skinning_matrices(
            rig.skeleton, result.poses[static_cast<std::size_t>(s)]));
      Eigen::VectorXd free = rig.weights.free_params();
      Adam opt("weights", free.size(), {config.stage1_weight_lr});
      double last = 0.0;
      for (int it = 0; it < config.stage1_weight_iters; ++it) {
        ad::Tape tape;
        const ad::Var fp = tape.input(free);
        const ad::Var w = expand_weights_tape(tape, rig.weights, fp);
        ad::Var total{};
        for (int s = 0; s < scans; ++s) {
          std::vector<ad::Var> mat_vars;
          for (const auto& m : mats[static_cast<std::size_t>(s)])
            mat_vars.push_back(tape.constant(m));
          const ad::Var v =
              apply_lbs_tape(tape, rig.mesh.vertices, w, mat_vars);
          const VertexMatrix& target = targets[static_cast<std::size_t>(s)];
          ad::Var loss = loss_vertex_tape(tape, v, target);
          loss = tape.add(loss,
                          tape.scale(loss_laplacian_tape(tape, lap, v, target),
                                     config.loss_weights.lambda_p));
          total = s == 0 ? loss : tape.add(total, loss);
        }
        total = tape.scale(total, 1.0 / scans);
        last = tape.value(total)(0, 0);
        if (!std::isfinite(last))
          throw NumericalError("fit_stage1_linear: non-finite weight loss");
        tape.backward(total);
        const ad::Mat& adj = tape.adjoint(fp);
        opt.step(free,
                 Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
      }
      rig.weights.set_free_params(free);
      result.loss_log.push_back(last);
    }
  }
  result.learned_weights = rig.weights.free_params();
  return result;
}

FitResult fit_landmarks_2d(const Rig& rig,
                           const std::vector<int>& landmark_vertices,
                           const Eigen::Matrix<double, Eigen::Dynamic, 2>& targets,
                           const PinholeCamera& camera, const FitConfig& config) {
  if (landmark_vertices.size() < 6)
    throw ConfigError("fit_landmarks_2d: need at least 6 landmarks");
  if (targets.rows() != static_cast<long>(landmark_vertices.size()))
    throw ConfigError("fit_landmarks_2d: landmark/target count mismatch");

  PoseParams pose = rig.skeleton.rest_packed();
  const int total =
      config.pose_iters * config.inner_cycles * config.outer_cycles;
  Adam opt("pose", pose.size(), {config.pose_lr});
  FitResult result;
  for (int it = 0; it < total; ++it) {
    ad::Tape tape;
    const ad::Var pose_var = tape.input(pose);
    const SkinningMatricesTape mats =
        compose_skinning_matrices_tape(tape, rig.skeleton, pose_var);
    const ad::Var v = apply_lbs_tape(tape, rig.mesh.vertices,
                                     tape.constant(rig.weights.dense()),
                                     mats.skin);
    const double lm = lambda_m_at(config, it, total, /*decaying=*/true);
    ad::Var loss = loss_landmarks_2d_tape(tape, v, landmark_vertices, targets,
                                          camera);
    loss = tape.add(loss, tape.scale(loss_magnitude_tape(tape, rig.skeleton,
                                                         mats.full),
                                     lm));
    loss = tape.add(loss,
                    tape.scale(loss_box_total_tape(tape, rig.skeleton, mats.full),
                               config.loss_weights.lambda_x));
    const double value = tape.value(loss)(0, 0);
    if (!std::isfinite(value))
      throw NumericalError("fit_landmarks_2d: non-finite loss");
    result.loss_curve.push_back(value);
    tape.backward(loss);
    const ad::Mat& adj = tape.adjoint(pose_var);
    opt.step(pose, Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
  }

  result.pose = pose;
  result.expr_coeffs = Eigen::VectorXd::Zero(rig.expressions.shape_count());
  result.fitted_vertices = rig.pose_mesh(pose);
  Eigen::VectorXd dists(targets.rows());
  for (long i = 0; i < targets.rows(); ++i) {
    const Vec3 p = result.fitted_vertices.row(landmark_vertices[static_cast<std::size_t>(i)]);
    dists[i] = (camera.project(p) - targets.row(i).transpose()).norm();
  }
  result.report = ErrorReport::from_distances(dists);
  return result;
}

VertexMatrix retarget(const Rig& target_rig, const FitResult& source,
                      const RetargetOptions& options) {
  const Eigen::Index dim = target_rig.skeleton.free_dof_count();
  if (source.pose.size() != dim)
    throw Error("retarget: pose schema mismatch between source and target");
  PoseParams pose = target_rig.skeleton.rest_packed();
  for (int slot : options.transfer_slots) {
    if (slot < 0 || slot >= dim)
      throw ConfigError("retarget: transfer slot out of range");
    pose[slot] = source.pose[slot];
  }
  Eigen::VectorXd coeffs =
      Eigen::VectorXd::Zero(target_rig.expressions.shape_count());
  if (options.transfer_expressions && source.expr_coeffs.size() > 0) {
    if (source.expr_coeffs.size() != coeffs.size())
      throw Error("retarget: expression schema mismatch");
    coeffs = source.expr_coeffs;
  }
  return target_rig.pose_mesh(pose, coeffs);
}

ErrorReport evaluate(const Mesh& fitted, const Mesh& reference) {
  return point_to_point_error(fitted, reference);
}

ErrorReport evaluate(const Mesh& fitted, const PointCloud& reference) {
  return scan_to_mesh_distance(reference, fitted);
}

void save_fit_result(const FitResult& result,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  auto write_vector = [&](const char* tag, const Eigen::VectorXd& v) {
    out << tag << " " << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i)
      out << " " << format_double(v[i]);
    out << "\n";
  };
  out << "rigfit_fit 1\n";
  write_vector("pose", result.pose);
  write_vector("z", result.z);
  write_vector("coeffs", result.expr_coeffs);
  out << "report " << format_double(result.report.mean) << " "
      << format_double(result.report.rms) << " "
      << format_double(result.report.max) << " "
      << format_double(result.report.stddev) << " " << result.report.count
      << "\n";
  out << "loss " << result.loss_curve.size();
  for (double v : result.loss_curve) out << " " << format_double(v);
  out << "\n";
  if (!out) throw Error("write failed: " + path.string());
}

FitResult load_fit_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string tag;
  int version = 0;
  in >> tag >> version;
  if (!in || tag != "rigfit_fit" || version != 1)
    throw Error("bad fit result file: " + path.string());
  auto read_vector = [&](const char* expect) {
    std::string t;
    Eigen::Index n = 0;
    in >> t >> n;
    if (!in || t != expect || n < 0)
      throw Error("bad fit result field '" + std::string(expect) + "' in " +
                  path.string());
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) in >> v[i];
    return v;
  };
  FitResult result;
  result.pose = read_vector("pose");
  result.z = read_vector("z");
  result.expr_coeffs = read_vector("coeffs");
  in >> tag;
  if (tag != "report") throw Error("bad fit result file: " + path.string());
  in >> result.report.mean >> result.report.rms >> result.report.max >>
      result.report.stddev >> result.report.count;
  const Eigen::VectorXd loss = read_vector("loss");
  result.loss_curve.assign(loss.data(), loss.data() + loss.size());
  if (!in) throw Error("truncated fit result file: " + path.string());
  return result;
}

}  // namespace rigfit
