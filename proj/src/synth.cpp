#include "rigfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "rigfit/adam.hpp"
#include "rigfit/losses.hpp"

namespace rigfit {

namespace {

// ellipsoid radii of the toy head (x, y, z)
constexpr double kRadX = 1.0, kRadY = 1.25, kRadZ = 1.05;
constexpr double kMeanRad = (kRadX + kRadY + kRadZ) / 3.0;

Mesh make_ellipsoid(int subdivision) {
  if (subdivision < 0 || subdivision > 7)
    throw ConfigError("make_toy_rig: subdivision out of range");
  std::vector<Vec3> verts = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0},
                             {0, -1, 0}, {0, 0, 1},  {0, 0, -1}};
  std::vector<std::array<int, 3>> faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4},
                                           {3, 0, 4}, {2, 0, 5}, {1, 2, 5},
                                           {3, 1, 5}, {0, 3, 5}};
  for (int level = 0; level < subdivision; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = 0.5 * (verts[a] + verts[b]);
      m /= m.norm();
      verts.push_back(m);
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]);
      const int bc = mid(f[1], f[2]);
      const int ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  Mesh mesh;
  mesh.vertices.resize(static_cast<long>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) {
    mesh.vertices(static_cast<long>(i), 0) = verts[i].x() * kRadX;
    mesh.vertices(static_cast<long>(i), 1) = verts[i].y() * kRadY;
    mesh.vertices(static_cast<long>(i), 2) = verts[i].z() * kRadZ;
  }
  mesh.faces = std::move(faces);
  mesh.finalize();
  return mesh;
}

struct JointTemplate {
  const char* name;
  Vec3 unit_pos;  // scaled by the ellipsoid radii
  bool paired;
};

const std::vector<JointTemplate>& joint_templates() {
  static const std::vector<JointTemplate> t = {
      {"jaw", {0.0, -0.55, 0.45}, false},
      {"nose", {0.0, 0.0, 0.85}, false},
      {"forehead", {0.0, 0.55, 0.55}, false},
      {"cheek", {0.55, -0.05, 0.45}, true},
      {"brow", {0.30, 0.45, 0.60}, true},
      {"mouth", {0.25, -0.45, 0.55}, true},
      {"eye", {0.30, 0.25, 0.65}, true},
      {"temple", {0.60, 0.30, 0.30}, true},
      {"ear", {0.85, 0.0, 0.0}, true},
      {"chin", {0.0, -0.85, 0.25}, false},
      {"scalp", {0.0, 0.90, 0.0}, false},
  };
  return t;
}

Vec3 scaled(const Vec3& unit) {
  return {unit.x() * kRadX, unit.y() * kRadY, unit.z() * kRadZ};
}

Eigen::Matrix4d translation(const Vec3& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 1>(0, 3) = p;
  return m;
}

void fill_limits(Joint& j, const ToyRigConfig& cfg) {
  const double t = cfg.trans_limit_frac * kMeanRad;
  for (int d = 0; d < 3; ++d) {
    j.limit_lo[kDofRx + d] = -cfg.rot_limit;
    j.limit_hi[kDofRx + d] = cfg.rot_limit;
    j.limit_lo[kDofTx + d] = -t;
    j.limit_hi[kDofTx + d] = t;
    j.limit_lo[kDofSx + d] = 1.0 - cfg.scale_limit_dev;
    j.limit_hi[kDofSx + d] = 1.0 + cfg.scale_limit_dev;
  }
}

// ellipsoid outward normal direction at a surface point
Vec3 outward_dir(const Vec3& p) {
  Vec3 n(p.x() / (kRadX * kRadX), p.y() / (kRadY * kRadY),
         p.z() / (kRadZ * kRadZ));
  const double len = n.norm();
  if (len == 0.0) return {0.0, 1.0, 0.0};
  return n / len;
}

}  // namespace

std::vector<int> mirror_vertex_map(const Mesh& mesh, double tol) {
  const int n = mesh.vertex_count();
  std::vector<int> map(n, -1);
  // bucket by quantized (|x|, y, z) so exact mirrors collide
  std::unordered_map<std::uint64_t, std::vector<int>> buckets;
  auto key_of = [&](const Vec3& p) {
    const auto q = [&](double v) {
      return static_cast<std::uint64_t>(
          static_cast<std::int64_t>(std::floor(v / (tol * 16.0))));
    };
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint64_t part : {q(std::abs(p.x())), q(p.y()), q(p.z())}) {
      h ^= part;
      h *= 1099511628211ull;
    }
    return h;
  };
  for (int i = 0; i < n; ++i)
    buckets[key_of(mesh.vertices.row(i))].push_back(i);
  for (int i = 0; i < n; ++i) {
    const Vec3 p = mesh.vertices.row(i);
    const Vec3 m(-p.x(), p.y(), p.z());
    int best = -1;
    double best_d = tol;
    // probe the mirror's bucket plus neighbors along x to dodge edge cases
    for (double dx : {0.0, -tol * 16.0, tol * 16.0}) {
      const Vec3 probe(m.x() + dx, m.y(), m.z());
      auto it = buckets.find(key_of(probe));
      if (it == buckets.end()) continue;
      for (int j : it->second) {
        const double d = (mesh.vertices.row(j).transpose() - m).norm();
        if (d < best_d || (d == best_d && (best < 0 || j < best))) {
          best = j;
          best_d = d;
        }
      }
    }
    if (best < 0)
      throw Error("mirror_vertex_map: no mirror partner for vertex " +
                  std::to_string(i));
    map[i] = best;
  }
  for (int i = 0; i < n; ++i)
    if (map[map[i]] != i)
      throw Error("mirror_vertex_map: pairing is not an involution");
  return map;
}

Rig make_toy_rig(const ToyRigConfig& config) {
  Mesh mesh = make_ellipsoid(config.subdivision);
  if (mesh.vertex_count() < 50)
    throw ConfigError("make_toy_rig: need subdivision >= 2 for 50+ vertices");

  // --- skeleton ---
  if (config.joint_count < 2)
    throw ConfigError("make_toy_rig: joint_count must be at least 2");
  std::vector<Joint> joints;
  Joint root;
  root.name = "root";
  root.parent = -1;
  root.dof_mask = config.root_mask;
  fill_limits(root, config);
  joints.push_back(root);

  for (const JointTemplate& jt : joint_templates()) {
    const int remaining = config.joint_count - static_cast<int>(joints.size());
    if (remaining <= 0) break;
    const bool as_pair = jt.paired && config.symmetric;
    if (jt.paired && remaining < 2) continue;
    if (!jt.paired || !config.symmetric) {
      auto add_single = [&](const char* suffix, const Vec3& pos) {
        Joint j;
        j.name = std::string(jt.name) + suffix;
        j.parent = 0;
        j.bind_local = translation(pos);
        j.dof_mask = config.child_mask;
        fill_limits(j, config);
        joints.push_back(j);
      };
      if (!jt.paired) {
        add_single("", scaled(jt.unit_pos));
      } else {
        add_single("_l", scaled(jt.unit_pos));
        Vec3 mirrored = jt.unit_pos;
        mirrored.x() = -mirrored.x();
        add_single("_r", scaled(mirrored));
      }
    } else if (as_pair) {
      const int li = static_cast<int>(joints.size());
      Joint l, r;
      l.name = std::string(jt.name) + "_l";
      r.name = std::string(jt.name) + "_r";
      l.parent = r.parent = 0;
      l.bind_local = translation(scaled(jt.unit_pos));
      Vec3 mirrored = jt.unit_pos;
      mirrored.x() = -mirrored.x();
      r.bind_local = translation(scaled(mirrored));
      l.dof_mask = r.dof_mask = config.child_mask;
      fill_limits(l, config);
      fill_limits(r, config);
      l.symmetry_partner = li + 1;
      r.symmetry_partner = li;
      joints.push_back(l);
      joints.push_back(r);
    }
  }
  if (static_cast<int>(joints.size()) != config.joint_count)
    throw ConfigError("make_toy_rig: joint_count " +
                      std::to_string(config.joint_count) +
                      " cannot be met by the joint catalog");
  Skeleton skeleton = Skeleton::create(std::move(joints));

  // --- falloff weights with mirror symmetry classes ---
  const int n = mesh.vertex_count();
  const int k = skeleton.joint_count();
  const double sigma = config.falloff_sigma_frac * kMeanRad;
  Eigen::MatrixXd raw(n, k);
  for (int j = 0; j < k; ++j) {
    if (j == 0) {
      raw.col(0).setConstant(0.25);  // root keeps every vertex supported
      continue;
    }
    const Vec3 p = skeleton.global_bind(j).block<3, 1>(0, 3);
    for (int v = 0; v < n; ++v) {
      const double d2 = (mesh.vertices.row(v).transpose() - p).squaredNorm();
      raw(v, j) = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
  for (int v = 0; v < n; ++v) raw.row(v) /= raw.row(v).sum();

  const std::vector<int> vmap =
      config.symmetric ? mirror_vertex_map(mesh)
                       : std::vector<int>();
  std::vector<std::vector<long>> class_cells;
  Eigen::VectorXd free_values(static_cast<long>(n) * k);
  long class_count = 0;
  std::vector<char> visited(static_cast<std::size_t>(n) * k, 0);
  for (int j = 0; j < k; ++j) {
    const int pj = skeleton.joints()[j].symmetry_partner;
    for (int v = 0; v < n; ++v) {
      const long flat = static_cast<long>(j) * n + v;
      if (visited[flat]) continue;
      long mflat = flat;
      if (config.symmetric) {
        const int mj = pj >= 0 ? pj : j;
        mflat = static_cast<long>(mj) * n + vmap[v];
      }
      visited[flat] = 1;
      visited[mflat] = 1;
      if (raw(v, j) < config.support_threshold) continue;
      std::vector<long> cells = {flat};
      if (mflat != flat) cells.push_back(mflat);
      class_cells.push_back(std::move(cells));
      free_values[class_count++] = raw(v, j);
    }
  }
  SkinningWeights weights = SkinningWeights::create(
      n, k, std::move(class_cells), free_values.head(class_count));

  // --- bump expression shapes (midline centers keep them symmetric) ---
  static const std::vector<Vec3> expr_centers = {
      {0.0, -0.45, 0.75}, {0.0, 0.45, 0.65}, {0.0, -0.75, 0.55},
      {0.0, 0.10, 0.95},  {0.0, 0.70, 0.50}, {0.0, -0.20, 0.85}};
  if (config.expression_count < 0 ||
      config.expression_count > static_cast<int>(expr_centers.size()))
    throw ConfigError("make_toy_rig: expression_count out of range");
  ExpressionBasis basis;
  const double amp = 0.06 * kMeanRad;
  const double esigma = 0.5 * kMeanRad;
  for (int e = 0; e < config.expression_count; ++e) {
    const Vec3 c = scaled(expr_centers[static_cast<std::size_t>(e)]);
    VertexMatrix delta(n, 3);
    for (int v = 0; v < n; ++v) {
      const Vec3 p = mesh.vertices.row(v);
      const double w = std::exp(-(p - c).squaredNorm() / (2.0 * esigma * esigma));
      delta.row(v) = (amp * w * outward_dir(p)).transpose();
    }
    basis.deltas.push_back(std::move(delta));
  }
  basis.coeff_lo = Eigen::VectorXd::Zero(config.expression_count);
  basis.coeff_hi = Eigen::VectorXd::Ones(config.expression_count);

  Rig rig;
  rig.mesh = std::move(mesh);
  rig.skeleton = std::move(skeleton);
  rig.weights = std::move(weights);
  rig.expressions = std::move(basis);
  return rig;
}

PointCloud synth_scan(const Rig& rig, const PoseParams& pose,
                      double noise_sigma, double dropout_fraction, int count,
                      Rng& rng) {
  if (count <= 0) throw ConfigError("synth_scan: count must be positive");
  if (noise_sigma < 0.0) throw ConfigError("synth_scan: negative noise sigma");
  if (dropout_fraction < 0.0 || dropout_fraction >= 1.0)
    throw ConfigError("synth_scan: dropout fraction must be in [0, 1)");

  Mesh posed = rig.mesh;
  posed.vertices = rig.pose_mesh(pose);
  PointCloud cloud = sample_surface(posed, count, rng);
  for (int i = 0; i < count; ++i)
    for (int c = 0; c < 3; ++c)
      cloud.points(i, c) += rng.normal(0.0, noise_sigma);

  const int drop = static_cast<int>(std::lround(dropout_fraction * count));
  if (drop > 0) {
    const int center = static_cast<int>(rng.below(count));
    const Vec3 cp = cloud.points.row(center);
    std::vector<int> order(count);
    for (int i = 0; i < count; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = (cloud.points.row(a).transpose() - cp).squaredNorm();
      const double db = (cloud.points.row(b).transpose() - cp).squaredNorm();
      if (da != db) return da < db;
      return a < b;
    });
    std::vector<char> removed(count, 0);
    for (int i = 0; i < drop; ++i) removed[order[i]] = 1;
    PointCloud kept;
    kept.points.resize(count - drop, 3);
    if (cloud.normals) kept.normals.emplace(count - drop, 3);
    int at = 0;
    for (int i = 0; i < count; ++i) {
      if (removed[i]) continue;
      kept.points.row(at) = cloud.points.row(i);
      if (cloud.normals) kept.normals->row(at) = cloud.normals->row(i);
      ++at;
    }
    cloud = std::move(kept);
  }
  return cloud;
}

std::vector<PoseSnapshot> harvest_transform_corpus(
    const std::vector<PoseSnapshot>& base, const CorpusSpec& spec, Rng& rng) {
  if (spec.perturb_copies < 0)
    throw ConfigError("harvest_transform_corpus: negative perturb count");
  if (spec.perturb_fraction < 0.0)
    throw ConfigError("harvest_transform_corpus: negative perturb fraction");
  if (spec.perturb_sparsity < 0.0 || spec.perturb_sparsity > 1.0)
    throw ConfigError("harvest_transform_corpus: sparsity outside [0, 1]");

  std::vector<PoseSnapshot> out;
  out.reserve(base.size() * (1 + spec.perturb_copies));
  for (const PoseSnapshot& snap : base) {
    out.push_back(snap);
    const int dofs = static_cast<int>(snap.pose.size());
    const int touched = static_cast<int>(
        std::lround(spec.perturb_sparsity * dofs));
    for (int copy = 0; copy < spec.perturb_copies; ++copy) {
      PoseSnapshot p = snap;
      std::vector<int> slots(dofs);
      for (int i = 0; i < dofs; ++i) slots[i] = i;
      for (int i = 0; i < touched; ++i) {
        const int pick =
            i + static_cast<int>(rng.below(static_cast<std::uint64_t>(dofs - i)));
        std::swap(slots[i], slots[pick]);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        p.pose[slots[i]] *= 1.0 + sign * spec.perturb_fraction;
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

SkinningSample fit_weights_for_pose(const Rig& rig, const PoseParams& pose,
                                    const VertexMatrix& target,
                                    const WeightFitOptions& options) {
  if (target.rows() != rig.mesh.vertices.rows())
    throw ConfigError("fit_weights_for_pose: target vertex count mismatch");
  const std::vector<Eigen::Matrix4d> mats =
      compose_skinning_matrices(rig.skeleton, pose);
  const auto lap = std::make_shared<const Eigen::SparseMatrix<double>>(
      laplacian_matrix(rig.mesh));

  Eigen::VectorXd free = rig.weights.free_params();
  Adam opt("weights", free.size(), {options.lr});
  std::vector<double> history;
  double last_loss = 0.0;
  for (int iter = 0; iter < options.max_iters; ++iter) {
    ad::Tape tape;
    const ad::Var fp = tape.input(free);
    const ad::Var w = expand_weights_tape(tape, rig.weights, fp);
    std::vector<ad::Var> mat_vars;
    mat_vars.reserve(mats.size());
    for (const auto& m : mats) mat_vars.push_back(tape.constant(m));
    const ad::Var vp = apply_lbs_tape(tape, rig.mesh.vertices, w, mat_vars);
    const ad::Var loss =
        tape.add(loss_vertex_tape(tape, vp, target),
                 tape.scale(loss_laplacian_tape(tape, lap, vp, target),
                            options.lambda_p));
    last_loss = tape.value(loss)(0, 0);
    if (!std::isfinite(last_loss))
      throw NumericalError("fit_weights_for_pose: non-finite loss");
    history.push_back(last_loss);
    const int w_ago = static_cast<int>(history.size()) - 1 - options.window;
    if (w_ago >= 0) {
      const double ref = history[static_cast<std::size_t>(w_ago)];
      if (std::abs(ref - last_loss) <= options.rel_tol * std::max(ref, 1e-12))
        break;
    }
    tape.backward(loss);
    const ad::Mat& adj = tape.adjoint(fp);
    opt.step(free, Eigen::Map<const Eigen::VectorXd>(adj.data(), adj.size()));
  }

  SkinningSample sample;
  sample.free_params = free;
  SkinningWeights fitted = rig.weights;
  fitted.set_free_params(free);
  sample.final_loss =
      loss_vertex(apply_lbs(rig.mesh.vertices, fitted.dense(), mats), target);
  return sample;
}

CorpusSplit split_corpus(int count, double train_ratio, double val_ratio,
                         double test_ratio, std::uint64_t seed) {
  if (count < 0) throw ConfigError("split_corpus: negative count");
  if (train_ratio < 0.0 || val_ratio < 0.0 || test_ratio < 0.0)
    throw ConfigError("split_corpus: negative ratio");
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
    throw ConfigError("split_corpus: ratios must sum to 1");

  std::array<int, 3> sizes = {
      static_cast<int>(std::floor(train_ratio * count)),
      static_cast<int>(std::floor(val_ratio * count)),
      static_cast<int>(std::floor(test_ratio * count))};
  int rem = count - sizes[0] - sizes[1] - sizes[2];
  for (int i = 0; rem > 0; i = (i + 1) % 3, --rem) ++sizes[static_cast<std::size_t>(i)];

  std::vector<int> order(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (int i = count - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[rng.below(static_cast<std::uint64_t>(i + 1))]);

  CorpusSplit split;
  split.train.assign(order.begin(), order.begin() + sizes[0]);
  split.val.assign(order.begin() + sizes[0],
                   order.begin() + sizes[0] + sizes[1]);
  split.test.assign(order.begin() + sizes[0] + sizes[1], order.end());
  return split;
}

}  // namespace rigfit
