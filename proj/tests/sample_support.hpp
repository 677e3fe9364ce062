#pragma once

#include <cstdint>
#include <vector>

#include "reviewgraph/embeddings.hpp"
#include "reviewgraph/synthetic.hpp"
#include "reviewgraph/training.hpp"

namespace rvg::testing {

/// Hash embeddings for every node text of g.
inline NodeEmbeddings hashed_rows(const DebateGraph& g, std::size_t dim, std::uint64_t seed = 0) {
  NodeEmbeddings rows;
  for (const Node& n : g.nodes()) rows.push_back(hash_embedding(n.text, dim, seed));
  return rows;
}

inline std::vector<Sample> synthetic_samples(const std::vector<SyntheticPaper>& papers, std::size_t dim,
                                             AblationMode mode = AblationMode::Full) {
  std::vector<Sample> out;
  for (const auto& p : papers) {
    const DebateGraph full = synthetic_graph(p);
    const DebateGraph g = apply_ablation(full, mode).graph;
    out.push_back({g, hashed_rows(g, dim), p.label});
  }
  return out;
}

inline ModelConfig config_for(AblationMode mode, ModelConfig base = {}) {
  base.homogeneous = mode == AblationMode::Homogeneous;
  return base;
}

}  // namespace rvg::testing
