#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rigfit/rig_io.hpp"
#include "rigfit/synth.hpp"

using namespace rigfit;
namespace fs = std::filesystem;

TEST_CASE("rig directories round-trip bit-identically") {
  ToyRigConfig cfg;
  cfg.subdivision = 2;
  cfg.joint_count = 5;
  cfg.seed = 404;
  const Rig rig = make_toy_rig(cfg);

  const fs::path dir = fs::temp_directory_path() / "rigfit_rig_roundtrip";
  fs::remove_all(dir);
  save_rig(rig, dir);
  const Rig back = load_rig(dir);

  CHECK((back.mesh.vertices - rig.mesh.vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.mesh.faces == rig.mesh.faces);

  REQUIRE(back.skeleton.joint_count() == rig.skeleton.joint_count());
  for (int k = 0; k < rig.skeleton.joint_count(); ++k) {
    const Joint& a = rig.skeleton.joints()[static_cast<std::size_t>(k)];
    const Joint& b = back.skeleton.joints()[static_cast<std::size_t>(k)];
    CHECK(a.name == b.name);
    CHECK(a.parent == b.parent);
    CHECK(a.symmetry_partner == b.symmetry_partner);
    CHECK(a.dof_mask == b.dof_mask);
    CHECK((a.bind_local - b.bind_local).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.limit_lo - b.limit_lo).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.limit_hi - b.limit_hi).cwiseAbs().maxCoeff() == 0.0);
  }

  CHECK(back.weights.class_cells() == rig.weights.class_cells());
  CHECK((back.weights.free_params() - rig.weights.free_params())
            .cwiseAbs()
            .maxCoeff() == 0.0);

  REQUIRE(back.expressions.shape_count() == rig.expressions.shape_count());
  for (int e = 0; e < rig.expressions.shape_count(); ++e)
    CHECK((back.expressions.deltas[static_cast<std::size_t>(e)] -
           rig.expressions.deltas[static_cast<std::size_t>(e)])
              .cwiseAbs()
              .maxCoeff() == 0.0);
  CHECK((back.expressions.coeff_lo - rig.expressions.coeff_lo)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("loading a missing or damaged rig directory fails") {
  CHECK_THROWS_AS(load_rig(fs::temp_directory_path() / "no_such_rig"), Error);

  ToyRigConfig cfg;
  cfg.subdivision = 2;
  cfg.joint_count = 3;
  const fs::path dir = fs::temp_directory_path() / "rigfit_rig_damaged";
  fs::remove_all(dir);
  save_rig(make_toy_rig(cfg), dir);
  fs::remove(dir / "skeleton.txt");
  CHECK_THROWS_AS(load_rig(dir), Error);
  fs::remove_all(dir);
}
