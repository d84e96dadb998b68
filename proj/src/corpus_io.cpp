#include "rigfit/corpus_io.hpp"

#include <cstring>
#include <fstream>

#include "../vendor/json.hpp"

namespace rigfit {

namespace {

using nlohmann::json;

void write_f32_table(const std::filesystem::path& path, const char magic[8],
                     std::uint32_t rows, std::uint32_t cols,
                     const std::function<double(std::uint32_t, std::uint32_t)>&
                         at) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(magic, 8);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  std::vector<float> row(cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c)
      row[c] = static_cast<float>(at(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(cols * sizeof(float)));
  }
  if (!out) throw Error("write failed: " + path.string());
}

Eigen::MatrixXd read_f32_table(const std::filesystem::path& path,
                               const char magic[8]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char got[8];
  std::uint32_t rows = 0, cols = 0;
  in.read(got, 8);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in || std::memcmp(got, magic, 8) != 0)
    throw Error("bad header in " + path.string());
  std::vector<float> data(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw Error("truncated table in " + path.string());
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      m(r, c) = data[static_cast<std::size_t>(r) * cols + c];
  return m;
}

}  // namespace

CorpusSplit Corpus::split() const {
  return split_corpus(size(), spec.split_train, spec.split_val,
                      spec.split_test, seed);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  if (corpus.poses.size() != corpus.targets.size())
    throw Error("save_corpus: poses/targets count mismatch");
  if (corpus.samples.rows() != 0 &&
      corpus.samples.rows() != static_cast<long>(corpus.poses.size()))
    throw Error("save_corpus: samples row count mismatch");
  std::filesystem::create_directories(dir);

  const std::uint32_t count = static_cast<std::uint32_t>(corpus.poses.size());
  const std::uint32_t pose_dim =
      count ? static_cast<std::uint32_t>(corpus.poses[0].pose.size()) : 0;
  const std::uint32_t nverts =
      count ? static_cast<std::uint32_t>(corpus.targets[0].rows()) : 0;
  for (const PoseSnapshot& p : corpus.poses)
    if (static_cast<std::uint32_t>(p.pose.size()) != pose_dim)
      throw Error("save_corpus: inconsistent pose dims");
  for (const VertexMatrix& t : corpus.targets)
    if (static_cast<std::uint32_t>(t.rows()) != nverts)
      throw Error("save_corpus: inconsistent target vertex counts");

  write_f32_table(dir / "poses.bin", "RFPOSE01", count, pose_dim,
                  [&](std::uint32_t r, std::uint32_t c) {
                    return corpus.poses[r].pose[c];
                  });
  write_f32_table(dir / "samples.bin", "RFSAMP01",
                  static_cast<std::uint32_t>(corpus.samples.rows()),
                  static_cast<std::uint32_t>(corpus.samples.cols()),
                  [&](std::uint32_t r, std::uint32_t c) {
                    return corpus.samples(r, c);
                  });
  write_f32_table(dir / "targets.bin", "RFTARG01", count, nverts * 3,
                  [&](std::uint32_t r, std::uint32_t c) {
                    return corpus.targets[r](c / 3, c % 3);
                  });

  json spec = {
      {"snapshots_per_fit", corpus.spec.snapshots_per_fit},
      {"cycles", corpus.spec.cycles},
      {"perturb_copies", corpus.spec.perturb_copies},
      {"perturb_fraction", corpus.spec.perturb_fraction},
      {"perturb_sparsity", corpus.spec.perturb_sparsity},
      {"split", {corpus.spec.split_train, corpus.spec.split_val,
                 corpus.spec.split_test}},
      {"recon_bound_rel", corpus.spec.recon_bound_rel},
  };
  json scan_indices = json::array();
  for (const PoseSnapshot& p : corpus.poses) scan_indices.push_back(p.scan_index);
  json manifest = {
      {"format", 1},
      {"seed", corpus.seed},
      {"pose_count", count},
      {"pose_dim", pose_dim},
      {"sample_dim", corpus.samples.cols()},
      {"target_vertex_count", nverts},
      {"spec", spec},
      {"scan_indices", scan_indices},
  };
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw Error("bad manifest in " + dir.string() + ": " + e.what());
  }

  Corpus corpus;
  try {
    if (manifest.at("format").get<int>() != 1)
      throw Error("unsupported corpus format in " + dir.string());
    corpus.seed = manifest.at("seed").get<std::uint64_t>();
    const json& spec = manifest.at("spec");
    corpus.spec.snapshots_per_fit = spec.at("snapshots_per_fit").get<int>();
    corpus.spec.cycles = spec.at("cycles").get<int>();
    corpus.spec.perturb_copies = spec.at("perturb_copies").get<int>();
    corpus.spec.perturb_fraction = spec.at("perturb_fraction").get<double>();
    corpus.spec.perturb_sparsity = spec.at("perturb_sparsity").get<double>();
    corpus.spec.split_train = spec.at("split").at(0).get<double>();
    corpus.spec.split_val = spec.at("split").at(1).get<double>();
    corpus.spec.split_test = spec.at("split").at(2).get<double>();
    corpus.spec.recon_bound_rel = spec.at("recon_bound_rel").get<double>();
  } catch (const json::exception& e) {
    throw Error("bad manifest in " + dir.string() + ": " + e.what());
  }

  const Eigen::MatrixXd poses = read_f32_table(dir / "poses.bin", "RFPOSE01");
  corpus.samples = read_f32_table(dir / "samples.bin", "RFSAMP01");
  const Eigen::MatrixXd targets = read_f32_table(dir / "targets.bin", "RFTARG01");

  const long count = poses.rows();
  if (targets.rows() != count)
    throw Error("corpus tables disagree on pose count in " + dir.string());
  if (count != manifest.at("pose_count").get<long>())
    throw Error("manifest pose count mismatch in " + dir.string());
  if (targets.cols() % 3 != 0)
    throw Error("target table width not divisible by 3 in " + dir.string());
  const long nverts = targets.cols() / 3;

  const json& scan_indices = manifest.at("scan_indices");
  if (static_cast<long>(scan_indices.size()) != count)
    throw Error("manifest scan index count mismatch in " + dir.string());
  corpus.poses.resize(static_cast<std::size_t>(count));
  corpus.targets.resize(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    auto& snap = corpus.poses[static_cast<std::size_t>(i)];
    snap.scan_index = scan_indices.at(static_cast<std::size_t>(i)).get<int>();
    snap.pose = poses.row(i).transpose();
    VertexMatrix v(nverts, 3);
    for (long n = 0; n < nverts; ++n)
      v.row(n) = targets.block<1, 3>(i, n * 3);
    corpus.targets[static_cast<std::size_t>(i)] = std::move(v);
  }
  return corpus;
}

}  // namespace rigfit
