#include "rigfit/rig_io.hpp"

#include <fstream>
#include <sstream>

#include "rigfit/mesh_io.hpp"

namespace rigfit {

namespace {

void expect(std::istream& in, const std::string& tag,
            const std::filesystem::path& file) {
  std::string got;
  if (!(in >> got) || got != tag)
    throw Error(file.string() + ": expected '" + tag + "', got '" + got + "'");
}

}  // namespace

void save_rig(const Rig& rig, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mesh(rig.mesh, dir / "mesh.obj");

  {
    std::ofstream out(dir / "skeleton.txt");
    if (!out) throw Error("cannot write " + (dir / "skeleton.txt").string());
    out << "joints " << rig.skeleton.joint_count() << '\n';
    for (const Joint& j : rig.skeleton.joints()) {
      out << "joint " << j.name << '\n';
      out << "parent " << j.parent << '\n';
      out << "bind";
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) out << ' ' << format_double(j.bind_local(r, c));
      out << '\n';
      out << "dof";
      for (bool b : j.dof_mask) out << ' ' << (b ? 1 : 0);
      out << '\n';
      out << "limits";
      for (int d = 0; d < kDofPerJoint; ++d)
        out << ' ' << format_double(j.limit_lo[d]) << ' '
            << format_double(j.limit_hi[d]);
      out << '\n';
      out << "partner " << j.symmetry_partner << '\n';
    }
  }

  {
    std::ofstream out(dir / "weights.txt");
    if (!out) throw Error("cannot write " + (dir / "weights.txt").string());
    out << "weights " << rig.weights.vertex_count() << ' '
        << rig.weights.joint_count() << ' ' << rig.weights.class_count()
        << '\n';
    for (int c = 0; c < rig.weights.class_count(); ++c) {
      const auto& cells = rig.weights.class_cells()[c];
      out << "class " << format_double(rig.weights.free_params()[c]) << ' '
          << cells.size();
      for (long cell : cells) out << ' ' << cell;
      out << '\n';
    }
  }

  {
    std::ofstream out(dir / "expressions.txt");
    if (!out) throw Error("cannot write " + (dir / "expressions.txt").string());
    const int e_count = rig.expressions.shape_count();
    const int n = rig.mesh.vertex_count();
    out << "expressions " << e_count << ' ' << n << '\n';
    for (int e = 0; e < e_count; ++e) {
      out << "shape " << e << ' ' << format_double(rig.expressions.coeff_lo[e])
          << ' ' << format_double(rig.expressions.coeff_hi[e]) << '\n';
      const VertexMatrix& d = rig.expressions.deltas[e];
      for (int i = 0; i < n; ++i)
        out << format_double(d(i, 0)) << ' ' << format_double(d(i, 1)) << ' '
            << format_double(d(i, 2)) << '\n';
    }
  }
}

Rig load_rig(const std::filesystem::path& dir) {
  Rig rig;
  rig.mesh = load_mesh(dir / "mesh.obj");
  const int n = rig.mesh.vertex_count();

  {
    const auto file = dir / "skeleton.txt";
    std::ifstream in(file);
    if (!in) throw Error("cannot open " + file.string());
    expect(in, "joints", file);
    int count = 0;
    in >> count;
    if (count <= 0) throw Error(file.string() + ": bad joint count");
    std::vector<Joint> joints(count);
    for (Joint& j : joints) {
      expect(in, "joint", file);
      in >> j.name;
      expect(in, "parent", file);
      in >> j.parent;
      expect(in, "bind", file);
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) in >> j.bind_local(r, c);
      expect(in, "dof", file);
      for (int d = 0; d < kDofPerJoint; ++d) {
        int b = 0;
        in >> b;
        j.dof_mask[d] = b != 0;
      }
      expect(in, "limits", file);
      for (int d = 0; d < kDofPerJoint; ++d) in >> j.limit_lo[d] >> j.limit_hi[d];
      expect(in, "partner", file);
      in >> j.symmetry_partner;
      if (!in) throw Error(file.string() + ": truncated joint record");
    }
    rig.skeleton = Skeleton::create(std::move(joints));
  }

  {
    const auto file = dir / "weights.txt";
    std::ifstream in(file);
    if (!in) throw Error("cannot open " + file.string());
    expect(in, "weights", file);
    int wn = 0, wk = 0, wc = 0;
    in >> wn >> wk >> wc;
    if (wn != n)
      throw Error(file.string() + ": vertex count does not match mesh");
    if (wk != rig.skeleton.joint_count())
      throw Error(file.string() + ": joint count does not match skeleton");
    std::vector<std::vector<long>> class_cells(wc);
    Eigen::VectorXd free_params(wc);
    for (int c = 0; c < wc; ++c) {
      expect(in, "class", file);
      std::size_t ncells = 0;
      in >> free_params[c] >> ncells;
      class_cells[c].resize(ncells);
      for (long& cell : class_cells[c]) in >> cell;
      if (!in) throw Error(file.string() + ": truncated class record");
    }
    rig.weights = SkinningWeights::create(wn, wk, std::move(class_cells),
                                          std::move(free_params));
  }

  const auto expr_file = dir / "expressions.txt";
  if (std::filesystem::exists(expr_file)) {
    std::ifstream in(expr_file);
    if (!in) throw Error("cannot open " + expr_file.string());
    expect(in, "expressions", expr_file);
    int e_count = 0, en = 0;
    in >> e_count >> en;
    if (en != n)
      throw Error(expr_file.string() + ": vertex count does not match mesh");
    rig.expressions.deltas.resize(e_count);
    rig.expressions.coeff_lo.resize(e_count);
    rig.expressions.coeff_hi.resize(e_count);
    for (int e = 0; e < e_count; ++e) {
      expect(in, "shape", expr_file);
      int idx = 0;
      in >> idx >> rig.expressions.coeff_lo[e] >> rig.expressions.coeff_hi[e];
      rig.expressions.deltas[e].resize(n, 3);
      for (int i = 0; i < n; ++i)
        in >> rig.expressions.deltas[e](i, 0) >>
            rig.expressions.deltas[e](i, 1) >> rig.expressions.deltas[e](i, 2);
      if (!in) throw Error(expr_file.string() + ": truncated shape record");
    }
  }
  return rig;
}

}  // namespace rigfit
