#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <optional>
#include <vector>

#include "rigfit/common.hpp"

namespace rigfit {

using Vec3 = Eigen::Vector3d;
using VertexMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct Mesh {
  VertexMatrix vertices;                        // N x 3
  std::vector<std::array<int, 3>> faces;        // triangles
  std::vector<std::vector<int>> adjacency;      // per-vertex neighbor lists

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int face_count() const { return static_cast<int>(faces.size()); }

  // Validates faces and rebuilds adjacency. Throws on out-of-range or
  // degenerate faces.
  void finalize();
  double bounding_box_diagonal() const;
};

struct PointCloud {
  VertexMatrix points;                      // M x 3
  std::optional<VertexMatrix> normals;      // unit length when present

  int point_count() const { return static_cast<int>(points.rows()); }
};

struct ErrorReport {
  double mean = 0.0;
  double rms = 0.0;
  double max = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;

  static ErrorReport from_distances(const Eigen::VectorXd& d);
};

// Exact nearest neighbor over a fixed point set; ties broken by lowest index.
class SpatialIndex {
 public:
  explicit SpatialIndex(const VertexMatrix& points);

  // returns (index, squared distance)
  std::pair<int, double> nearest(const Vec3& query) const;
  int size() const { return static_cast<int>(points_.rows()); }

 private:
  struct Node {
    int axis = -1;       // -1 marks leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };
  int build(int begin, int end, int depth);
  void search(int node, const Vec3& q, int& best, double& best_d2) const;

  VertexMatrix points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Closest point on triangle (a,b,c) to p.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);

// Closest point on the mesh surface; returns (point, face index, squared
// distance). Exhaustive over faces, parallel over queries at the call sites.
std::tuple<Vec3, int, double> closest_surface_point(const Mesh& mesh,
                                                    const Vec3& query);

// Uniform umbrella operator: delta_i = v_i - mean(neighbors of i).
// Isolated vertices get delta = 0.
VertexMatrix laplacian(const Mesh& mesh, const VertexMatrix& vertices);

// Same operator as a sparse matrix L with laplacian(m, V) = L * V.
Eigen::SparseMatrix<double> laplacian_matrix(const Mesh& mesh);

ErrorReport point_to_point_error(const Mesh& a, const Mesh& b);
ErrorReport scan_to_mesh_distance(const PointCloud& cloud, const Mesh& mesh);

// 0.5 * (mean_A min_B d^2 + mean_B min_A d^2)
double chamfer_distance(const PointCloud& a, const PointCloud& b);

// Deterministic area-weighted surface sampling (with outward normals).
PointCloud sample_surface(const Mesh& mesh, int count, Rng& rng);

}  // namespace rigfit
