#pragma once

#include <filesystem>

#include "rigfit/synth.hpp"

namespace rigfit {

// In-memory corpus: poses, optional fitted skinning samples (one row per
// pose, absolute free-weight vectors), and per-pose target vertices.
struct Corpus {
  CorpusSpec spec;
  std::uint64_t seed = 0;
  std::vector<PoseSnapshot> poses;
  Eigen::MatrixXd samples;             // poses x weight params; 0 rows = unfit
  std::vector<VertexMatrix> targets;   // one per pose

  int size() const { return static_cast<int>(poses.size()); }
  CorpusSplit split() const;
};

// Directory layout: manifest.json + poses.bin / samples.bin / targets.bin
// (magic + little-endian u32 dims header, float32 payload, row-major).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace rigfit
