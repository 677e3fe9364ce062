#pragma once

// Straight-line reference implementation of the model: plain nested loops
// over the edge list, no autodiff tensors, no gather/scatter. Parameters are
// read by name from the store; everything else is recomputed here.

#include <cmath>
#include <string>
#include <vector>

#include "reviewgraph/graph.hpp"
#include "reviewgraph/hgt.hpp"

namespace rvg::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat as_matrix(const num::Tensor& t) {
  const std::size_t r = t.shape()[0], c = t.shape()[1];
  Mat m(r, Vec(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

inline Vec times(const Vec& v, const Mat& m) {
  Vec out(m.empty() ? 0 : m[0].size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += v[i] * m[i][j];
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct DenseResult {
  std::vector<Mat> layers;  // H^(0..L)
  // attention[l][k][i]: layer l, k-th consumed edge of g.edges(), head i
  std::vector<std::vector<Vec>> attention;
  std::vector<std::size_t> edge_index;  // positions in g.edges() that the model consumes
  Vec probabilities;
};

inline std::string type_name(const ModelConfig& c, NodeType t) {
  return c.homogeneous ? "node" : std::string(to_string(t));
}

inline bool consumed(const ModelConfig& c, const Edge& e) { return c.use_inverse_edges || !e.inverse; }

inline std::string rel_name(const ModelConfig& c, const Edge& e) {
  if (c.homogeneous) return "connected";
  return (e.inverse ? "inv_" : "") + std::string(to_string(e.relation));
}

inline std::size_t rel_slot(const ModelConfig& c, const Edge& e) {
  if (c.homogeneous) return 0;
  return static_cast<std::size_t>(e.relation) + (e.inverse ? 13 : 0);
}

inline std::size_t type_slot(const ModelConfig& c, NodeType t) {
  return c.homogeneous ? 0 : static_cast<std::size_t>(t);
}

inline DenseResult dense_forward(const DebateGraph& g, const NodeEmbeddings& emb, const HgtParams& params) {
  const ModelConfig& c = params.config;
  const auto& P = params.store;
  const std::size_t n = g.size(), d = c.hidden_dim, Z = c.num_heads, dh = d / Z;
  const double scale = std::sqrt(static_cast<double>(c.attention_scale == AttentionScale::SqrtD ? d : dh));
  auto L = [](std::size_t l) { return "layer" + std::to_string(l); };

  DenseResult out;
  for (std::size_t k = 0; k < g.edges().size(); ++k)
    if (consumed(c, g.edges()[k])) out.edge_index.push_back(k);

  Mat H(n);
  for (std::size_t v = 0; v < n; ++v)
    H[v] = times(emb[v], as_matrix(P.get("input." + type_name(c, g.node(v).type))));
  out.layers.push_back(H);

  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const Vec mu(P.get(L(l) + ".mu").data().begin(), P.get(L(l) + ".mu").data().end());
    const Vec lambda(P.get(L(l) + ".lambda").data().begin(), P.get(L(l) + ".lambda").data().end());
    std::vector<Vec> att(out.edge_index.size(), Vec(Z, 0.0));
    Mat Htilde(n, Vec(d, 0.0));
    for (std::size_t i = 0; i < Z; ++i) {
      const std::string head = L(l) + ".head" + std::to_string(i);
      // raw scores and messages for each consumed edge
      Vec score(out.edge_index.size());
      Mat msg(out.edge_index.size());
      for (std::size_t k = 0; k < out.edge_index.size(); ++k) {
        const Edge& e = g.edges()[out.edge_index[k]];
        const NodeType ts = g.node(e.src).type, tt = g.node(e.dst).type;
        const Vec key = times(H[e.src], as_matrix(P.get(head + ".key." + type_name(c, ts))));
        const Vec query = times(H[e.dst], as_matrix(P.get(head + ".query." + type_name(c, tt))));
        const Vec keyed = times(key, as_matrix(P.get(L(l) + ".attn." + rel_name(c, e))));
        score[k] = dot(keyed, query) * mu[rel_slot(c, e)] / scale;
        const Vec m = times(H[e.src], as_matrix(P.get(head + ".message." + type_name(c, ts))));
        msg[k] = times(m, as_matrix(P.get(L(l) + ".msg." + rel_name(c, e))));
      }
      for (std::size_t t = 0; t < n; ++t) {
        double mx = -1e300;
        for (std::size_t k = 0; k < score.size(); ++k)
          if (g.edges()[out.edge_index[k]].dst == t) mx = std::max(mx, score[k]);
        double z = 0;
        for (std::size_t k = 0; k < score.size(); ++k)
          if (g.edges()[out.edge_index[k]].dst == t) z += std::exp(score[k] - mx);
        for (std::size_t k = 0; k < score.size(); ++k) {
          if (g.edges()[out.edge_index[k]].dst != t) continue;
          const double w = std::exp(score[k] - mx) / z;
          att[k][i] = w;
          for (std::size_t j = 0; j < dh; ++j) Htilde[t][i * dh + j] += w * msg[k][j];
        }
      }
    }
    Mat next(n);
    for (std::size_t t = 0; t < n; ++t) {
      const NodeType tt = g.node(t).type;
      Vec scaled = Htilde[t];
      for (auto& x : scaled) x *= lambda[type_slot(c, tt)];
      next[t] = times(scaled, as_matrix(P.get(L(l) + ".aggregate." + type_name(c, tt))));
      for (std::size_t j = 0; j < d; ++j) next[t][j] += H[t][j];
    }
    H = std::move(next);
    out.layers.push_back(H);
    out.attention.push_back(std::move(att));
  }

  const NodeType order[4] = {NodeType::Title, NodeType::EvaluationDimension, NodeType::ReviewerOpinion,
                             NodeType::AuthorOpinion};
  Vec h_concat;
  for (std::size_t slot = 0; slot < 4; ++slot) {
    Vec pooled(d, 0.0);
    std::size_t count = 0;
    for (std::size_t v = 0; v < n; ++v) {
      const bool member = c.homogeneous ? slot == 0 : g.node(v).type == order[slot];
      if (!member) continue;
      ++count;
      for (std::size_t j = 0; j < d; ++j) pooled[j] += H[v][j];
    }
    if (count)
      for (auto& x : pooled) x /= static_cast<double>(count);
    h_concat.insert(h_concat.end(), pooled.begin(), pooled.end());
  }
  Vec hidden = times(h_concat, as_matrix(P.get("head.w1")));
  for (std::size_t j = 0; j < hidden.size(); ++j) hidden[j] = std::max(0.0, hidden[j] + P.get("head.b1").data()[j]);
  Vec logits = times(hidden, as_matrix(P.get("head.w2")));
  for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += P.get("head.b2").data()[j];
  const double mx = std::max(logits[0], logits[1]);
  const double z = std::exp(logits[0] - mx) + std::exp(logits[1] - mx);
  out.probabilities = {std::exp(logits[0] - mx) / z, std::exp(logits[1] - mx) / z};
  return out;
}

}  // namespace rvg::oracle
