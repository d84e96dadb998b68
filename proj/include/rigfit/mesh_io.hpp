#pragma once

#include <filesystem>
#include <string>

#include "rigfit/geometry.hpp"

namespace rigfit {

// ASCII OBJ subset: v / f records, polygons triangulated by fan.
Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);

// ASCII PLY or whitespace XYZ with optional normal columns (picked by
// extension: .ply vs anything else). Non-unit normals are normalized on load.
PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

// "%.17g" — round-trips doubles exactly in ASCII.
std::string format_double(double v);

}  // namespace rigfit
