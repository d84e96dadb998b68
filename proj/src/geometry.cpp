#include "rigfit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rigfit {

void Mesh::finalize() {
  const int n = vertex_count();
  adjacency.assign(n, {});
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto& [a, b, c] = faces[f];
    for (int idx : {a, b, c}) {
      if (idx < 0 || idx >= n)
        throw Error("Mesh: face " + std::to_string(f) + " index " +
                    std::to_string(idx) + " out of range [0, " +
                    std::to_string(n) + ")");
    }
    if (a == b || b == c || a == c)
      throw Error("Mesh: degenerate face " + std::to_string(f));
  }
  auto link = [&](int i, int j) {
    auto& lst = adjacency[i];
    if (std::find(lst.begin(), lst.end(), j) == lst.end()) lst.push_back(j);
  };
  for (const auto& [a, b, c] : faces) {
    link(a, b); link(b, a);
    link(b, c); link(c, b);
    link(c, a); link(a, c);
  }
  for (auto& lst : adjacency) std::sort(lst.begin(), lst.end());
}

double Mesh::bounding_box_diagonal() const {
  if (vertices.rows() == 0) return 0.0;
  const Vec3 lo = vertices.colwise().minCoeff();
  const Vec3 hi = vertices.colwise().maxCoeff();
  return (hi - lo).norm();
}

ErrorReport ErrorReport::from_distances(const Eigen::VectorXd& d) {
  if (d.size() == 0) throw Error("ErrorReport: empty distance vector");
  ErrorReport r;
  r.count = static_cast<std::size_t>(d.size());
  r.mean = d.mean();
  r.rms = std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
  r.max = d.maxCoeff();
  r.stddev = std::sqrt((d.array() - r.mean).square().sum() /
                       static_cast<double>(d.size()));
  return r;
}

SpatialIndex::SpatialIndex(const VertexMatrix& points) : points_(points) {
  if (points_.rows() == 0) throw Error("SpatialIndex: empty point set");
  order_.resize(points_.rows());
  std::iota(order_.begin(), order_.end(), 0);
  root_ = build(0, static_cast<int>(order_.size()), 0);
}

int SpatialIndex::build(int begin, int end, int depth) {
  Node node;
  if (end - begin <= 8) {
    node.begin = begin;
    node.end = end;
    // stable index order inside leaves keeps tie-breaking deterministic
    std::sort(order_.begin() + begin, order_.begin() + end);
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     if (points_(a, axis) != points_(b, axis))
                       return points_(a, axis) < points_(b, axis);
                     return a < b;
                   });
  node.axis = axis;
  node.split = points_(order_[mid], axis);
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

void SpatialIndex::search(int ni, const Vec3& q, int& best,
                          double& best_d2) const {
  const Node& node = nodes_[ni];
  if (node.axis < 0) {
    for (int k = node.begin; k < node.end; ++k) {
      const int idx = order_[k];
      const double d2 = (points_.row(idx).transpose() - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0 ? node.left : node.right;
  const int far = diff < 0 ? node.right : node.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<int, double> SpatialIndex::nearest(const Vec3& query) const {
  int best = std::numeric_limits<int>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, query, best, best_d2);
  return {best, best_d2};
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return a + v * ab + w * ac;
}

std::tuple<Vec3, int, double> closest_surface_point(const Mesh& mesh,
                                                    const Vec3& query) {
  if (mesh.faces.empty()) throw Error("closest_surface_point: mesh has no faces");
  Vec3 best_p = Vec3::Zero();
  int best_f = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& [a, b, c] = mesh.faces[f];
    const Vec3 q = closest_point_on_triangle(
        query, mesh.vertices.row(a), mesh.vertices.row(b), mesh.vertices.row(c));
    const double d2 = (q - query).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_p = q;
      best_f = static_cast<int>(f);
    }
  }
  return {best_p, best_f, best_d2};
}

VertexMatrix laplacian(const Mesh& mesh, const VertexMatrix& vertices) {
  if (vertices.rows() != mesh.vertices.rows())
    throw Error("laplacian: vertex count mismatch");
  VertexMatrix out(vertices.rows(), 3);
  for (int i = 0; i < vertices.rows(); ++i) {
    const auto& nbrs = mesh.adjacency[i];
    if (nbrs.empty()) {
      out.row(i).setZero();
      continue;
    }
    Vec3 mean = Vec3::Zero();
    for (int j : nbrs) mean += vertices.row(j).transpose();
    mean /= static_cast<double>(nbrs.size());
    out.row(i) = vertices.row(i).transpose() - mean;
  }
  return out;
}

Eigen::SparseMatrix<double> laplacian_matrix(const Mesh& mesh) {
  const int n = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < n; ++i) {
    const auto& nbrs = mesh.adjacency[i];
    if (nbrs.empty()) continue;
    trips.emplace_back(i, i, 1.0);
    const double w = -1.0 / static_cast<double>(nbrs.size());
    for (int j : nbrs) trips.emplace_back(i, j, w);
  }
  Eigen::SparseMatrix<double> L(n, n);
  L.setFromTriplets(trips.begin(), trips.end());
  return L;
}

ErrorReport point_to_point_error(const Mesh& a, const Mesh& b) {
  if (a.vertices.rows() != b.vertices.rows())
    throw Error("point_to_point_error: vertex count mismatch");
  const Eigen::VectorXd d = (a.vertices - b.vertices).rowwise().norm();
  return ErrorReport::from_distances(d);
}

ErrorReport scan_to_mesh_distance(const PointCloud& cloud, const Mesh& mesh) {
  if (cloud.point_count() == 0) throw Error("scan_to_mesh_distance: empty cloud");
  if (mesh.faces.empty()) throw Error("scan_to_mesh_distance: mesh has no faces");
  Eigen::VectorXd d(cloud.point_count());
  parallel_for(cloud.point_count(), [&](std::size_t i) {
    const auto [p, f, d2] =
        closest_surface_point(mesh, cloud.points.row(static_cast<int>(i)));
    (void)p; (void)f;
    d[static_cast<int>(i)] = std::sqrt(d2);
  });
  return ErrorReport::from_distances(d);
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.point_count() == 0 || b.point_count() == 0)
    throw Error("chamfer_distance: empty cloud");
  const SpatialIndex ib(b.points), ia(a.points);
  double sum_ab = 0.0, sum_ba = 0.0;
  for (int i = 0; i < a.point_count(); ++i)
    sum_ab += ib.nearest(a.points.row(i)).second;
  for (int i = 0; i < b.point_count(); ++i)
    sum_ba += ia.nearest(b.points.row(i)).second;
  return 0.5 * (sum_ab / a.point_count() + sum_ba / b.point_count());
}

PointCloud sample_surface(const Mesh& mesh, int count, Rng& rng) {
  if (mesh.faces.empty()) throw Error("sample_surface: mesh has no faces");
  if (count <= 0) throw Error("sample_surface: count must be positive");
  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& [a, b, c] = mesh.faces[f];
    const Vec3 va = mesh.vertices.row(a), vb = mesh.vertices.row(b),
               vc = mesh.vertices.row(c);
    total += 0.5 * (vb - va).cross(vc - va).norm();
    cum[f] = total;
  }
  PointCloud out;
  out.points.resize(count, 3);
  VertexMatrix normals(count, 3);
  for (int i = 0; i < count; ++i) {
    const double r = rng.uniform() * total;
    const std::size_t f =
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    const auto& [a, b, c] = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    const Vec3 va = mesh.vertices.row(a), vb = mesh.vertices.row(b),
               vc = mesh.vertices.row(c);
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    out.points.row(i) = (va + u * (vb - va) + v * (vc - va)).transpose();
    Vec3 n = (vb - va).cross(vc - va);
    const double len = n.norm();
    normals.row(i) = (len > 0 ? (n / len).eval() : Vec3(0, 0, 1)).transpose();
  }
  out.normals = normals;
  return out;
}

}  // namespace rigfit
