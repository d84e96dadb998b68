#pragma once

#include <filesystem>

#include "rigfit/rig.hpp"

namespace rigfit {

// Rig directory layout:
//   mesh.obj          ascii OBJ base mesh
//   skeleton.txt      joint list (parent, bind_local row-major, dof mask,
//                     limits, symmetry partner)
//   weights.txt       symmetry classes with free values, cells flat k*N+v
//   expressions.txt   per-shape N x 3 vertex deltas (optional file)
void save_rig(const Rig& rig, const std::filesystem::path& dir);
Rig load_rig(const std::filesystem::path& dir);

}  // namespace rigfit
