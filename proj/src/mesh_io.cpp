#include "rigfit/mesh_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace rigfit {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path.string());
  return out;
}

}  // namespace

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  Mesh mesh;
  std::vector<Vec3> verts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v[0] >> v[1] >> v[2]))
        throw Error(path.string() + ":" + std::to_string(lineno) +
                    ": malformed vertex line");
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // accept "i", "i/t", "i/t/n"
        const std::size_t slash = tok.find('/');
        const int raw = std::stoi(tok.substr(0, slash));
        if (raw == 0)
          throw Error(path.string() + ":" + std::to_string(lineno) +
                      ": OBJ face index 0 (indices are 1-based)");
        if (raw < 0)
          throw Error(path.string() + ":" + std::to_string(lineno) +
                      ": negative face indices not supported");
        idx.push_back(raw - 1);
      }
      if (idx.size() < 3)
        throw Error(path.string() + ":" + std::to_string(lineno) +
                    ": face with fewer than 3 vertices");
      for (std::size_t k = 2; k < idx.size(); ++k)
        mesh.faces.push_back({idx[0], idx[k - 1], idx[k]});
    }
    // other records (vn, vt, comments, groups) ignored
  }
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<int>(i)) = verts[i].transpose();
  mesh.finalize();
  return mesh;
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  if (mesh.vertex_count() == 0) throw Error("save_mesh: empty mesh");
  if (!mesh.vertices.allFinite())
    throw Error("save_mesh: mesh contains non-finite vertex coordinates");
  std::ofstream out = open_output(path);
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    out << "v " << format_double(mesh.vertices(i, 0)) << ' '
        << format_double(mesh.vertices(i, 1)) << ' '
        << format_double(mesh.vertices(i, 2)) << '\n';
  }
  for (const auto& [a, b, c] : mesh.faces)
    out << "f " << a + 1 << ' ' << b + 1 << ' ' << c + 1 << '\n';
  if (!out) throw Error("save_mesh: write failed: " + path.string());
}

namespace {

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::vector<double> data;
  int cols = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (row.empty()) continue;
    if (cols == 0) {
      if (row.size() != 3 && row.size() != 6)
        throw Error(path.string() + ":" + std::to_string(lineno) +
                    ": expected 3 or 6 columns, got " +
                    std::to_string(row.size()));
      cols = static_cast<int>(row.size());
    } else if (static_cast<int>(row.size()) != cols) {
      throw Error(path.string() + ":" + std::to_string(lineno) +
                  ": inconsistent column count");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  const int m = cols == 0 ? 0 : static_cast<int>(data.size()) / cols;
  if (m == 0) throw Error(path.string() + ": empty point cloud");
  PointCloud cloud;
  cloud.points.resize(m, 3);
  if (cols == 6) cloud.normals = VertexMatrix(m, 3);
  for (int i = 0; i < m; ++i) {
    cloud.points.row(i) << data[i * cols], data[i * cols + 1], data[i * cols + 2];
    if (cols == 6) {
      Vec3 n(data[i * cols + 3], data[i * cols + 4], data[i * cols + 5]);
      const double len = n.norm();
      if (len == 0.0)
        throw Error(path.string() + ": zero normal at point " + std::to_string(i));
      cloud.normals->row(i) = (n / len).transpose();
    }
  }
  return cloud;
}

PointCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
    throw Error(path.string() + ": missing ply magic");
  int count = -1;
  std::vector<std::string> props;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw Error(path.string() + ": only ascii PLY supported");
    } else if (tag == "element") {
      std::string name;
      ss >> name;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) ss >> count;
    } else if (tag == "property" && in_vertex_element) {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (count < 0) throw Error(path.string() + ": no vertex element in header");
  auto find_prop = [&](const std::string& n) {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = find_prop("x"), iy = find_prop("y"), iz = find_prop("z");
  const int inx = find_prop("nx"), iny = find_prop("ny"), inz = find_prop("nz");
  if (ix < 0 || iy < 0 || iz < 0)
    throw Error(path.string() + ": PLY vertex element lacks x/y/z");
  const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.points.resize(count, 3);
  if (has_normals) cloud.normals = VertexMatrix(count, 3);
  for (int i = 0; i < count; ++i) {
    if (!std::getline(in, line))
      throw Error(path.string() + ": truncated vertex data");
    std::istringstream ss(line);
    std::vector<double> row(props.size());
    for (double& v : row)
      if (!(ss >> v)) throw Error(path.string() + ": malformed vertex line");
    cloud.points.row(i) << row[ix], row[iy], row[iz];
    if (has_normals) {
      Vec3 n(row[inx], row[iny], row[inz]);
      const double len = n.norm();
      if (len == 0.0)
        throw Error(path.string() + ": zero normal at point " + std::to_string(i));
      cloud.normals->row(i) = (n / len).transpose();
    }
  }
  if (count == 0) throw Error(path.string() + ": empty point cloud");
  return cloud;
}

}  // namespace

PointCloud load_point_cloud(const std::filesystem::path& path) {
  if (path.extension() == ".ply") return load_ply(path);
  return load_xyz(path);
}

void save_point_cloud(const PointCloud& cloud,
                      const std::filesystem::path& path) {
  if (cloud.point_count() == 0) throw Error("save_point_cloud: empty cloud");
  std::ofstream out = open_output(path);
  const bool ply = path.extension() == ".ply";
  if (ply) {
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.point_count()
        << "\nproperty double x\nproperty double y\nproperty double z\n";
    if (cloud.normals)
      out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "end_header\n";
  }
  for (int i = 0; i < cloud.point_count(); ++i) {
    out << format_double(cloud.points(i, 0)) << ' '
        << format_double(cloud.points(i, 1)) << ' '
        << format_double(cloud.points(i, 2));
    if (cloud.normals)
      out << ' ' << format_double((*cloud.normals)(i, 0)) << ' '
          << format_double((*cloud.normals)(i, 1)) << ' '
          << format_double((*cloud.normals)(i, 2));
    out << '\n';
  }
  if (!out) throw Error("save_point_cloud: write failed: " + path.string());
}

}  // namespace rigfit
