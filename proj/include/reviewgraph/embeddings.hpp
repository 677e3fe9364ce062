#pragma once

// Content hashing and the text-keyed embedding store.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/sha.h>

#include <json.hpp>

#include "reviewgraph/error.hpp"
#include "reviewgraph/graph.hpp"
#include "reviewgraph/hgt.hpp"

namespace rvg {

inline std::string sha256_hex(std::string_view text) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(text.data()), text.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

/// 64-bit seed from the first bytes of sha256(salt || text).
inline std::uint64_t text_seed(std::string_view text, std::uint64_t salt) {
  const std::string h = sha256_hex(std::to_string(salt) + ":" + std::string(text));
  return std::stoull(h.substr(0, 16), nullptr, 16);
}

/// Deterministic unit vector for a text: Gaussian entries from a generator
/// seeded by the text hash, normalized to length 1.
inline std::vector<double> hash_embedding(std::string_view text, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(text_seed(text, seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& x : v) x /= norm;
  return v;
}

/// Embeddings keyed by sha256 of the text. File form: one JSON object per
/// line, {"sha256": str, "dim": int, "vector": [floats]}.
class EmbeddingStore {
 public:
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return by_hash_.size(); }
  bool contains(std::string_view text) const { return by_hash_.count(sha256_hex(text)) > 0; }
  bool contains_hash(const std::string& hash) const { return by_hash_.count(hash) > 0; }

  void put_hash(const std::string& hash, std::vector<double> v) {
    if (v.empty()) throw Error(ErrorKind::InconsistentDimension, "empty embedding for " + hash);
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_)
      throw Error(ErrorKind::InconsistentDimension, "embedding for " + hash + " has " +
                                                        std::to_string(v.size()) + " entries, store has " +
                                                        std::to_string(dim_));
    by_hash_[hash] = std::move(v);
  }
  void put(std::string_view text, std::vector<double> v) { put_hash(sha256_hex(text), std::move(v)); }

  const std::vector<double>* find(std::string_view text) const {
    auto it = by_hash_.find(sha256_hex(text));
    return it == by_hash_.end() ? nullptr : &it->second;
  }

  std::string to_jsonl() const {
    std::ostringstream out;
    for (const auto& [hash, v] : by_hash_)
      out << Json{{"sha256", hash}, {"dim", v.size()}, {"vector", v}}.dump() << "\n";
    return out.str();
  }

  static EmbeddingStore from_jsonl(std::string_view text) {
    EmbeddingStore store;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const Json j = Json::parse(line);
        auto v = j.at("vector").get<std::vector<double>>();
        if (j.at("dim").get<std::size_t>() != v.size())
          throw Error(ErrorKind::InconsistentDimension, "line " + std::to_string(lineno) + ": dim disagrees with vector");
        store.put_hash(j.at("sha256").get<std::string>(), std::move(v));
      } catch (const Json::exception& ex) {
        throw Error(ErrorKind::BadGraphFile, "embedding line " + std::to_string(lineno) + ": " + ex.what());
      }
    }
    return store;
  }

  static EmbeddingStore load(const std::filesystem::path& path) {
    return from_jsonl(read_text_file(path));
  }
  void save(const std::filesystem::path& path) const { write_text_file(path, to_jsonl()); }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> by_hash_;
};

/// Every text a graph needs an embedding for, in node order, deduplicated.
inline std::vector<std::string> node_texts(const DebateGraph& g) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const Node& n : g.nodes())
    if (seen.insert(n.text).second) out.push_back(n.text);
  return out;
}

/// One embedding row per node, resolved through the node's text.
inline NodeEmbeddings node_embeddings(const DebateGraph& g, const EmbeddingStore& store) {
  NodeEmbeddings rows;
  rows.reserve(g.size());
  for (const Node& n : g.nodes()) {
    const auto* v = store.find(n.text);
    if (!v) throw Error(ErrorKind::MissingEmbedding, "node " + std::to_string(n.id) + " of " + g.graph_id());
    rows.push_back(*v);
  }
  return rows;
}

/// Rows of the ablated graph, following the ablation's id map.
inline NodeEmbeddings remap_embeddings(const NodeEmbeddings& rows, const std::vector<std::optional<NodeId>>& id_map) {
  std::size_t n = 0;
  for (const auto& m : id_map)
    if (m) n = std::max<std::size_t>(n, *m + 1);
  NodeEmbeddings out(n);
  for (std::size_t old = 0; old < id_map.size() && old < rows.size(); ++old)
    if (id_map[old]) out[*id_map[old]] = rows[old];
  return out;
}

}  // namespace rvg
