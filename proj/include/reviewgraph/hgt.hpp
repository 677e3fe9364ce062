#pragma once

// Heterogeneous Graph Transformer over debate graphs, plus type-wise mean
// pooling and the two-layer classification head.
//
// Conventions: node representations are rows; projections multiply on the
// right (h . W). Per layer and head, a node of type a is projected with its
// own key/query/message matrices; each relation owns an attention and a
// message matrix shared by all heads, and each meta-relation a prior mu.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reviewgraph/error.hpp"
#include "reviewgraph/graph.hpp"
#include "reviewgraph/numerics.hpp"

namespace rvg {

enum class AttentionScale { SqrtD, SqrtDh };

struct ModelConfig {
  std::size_t hidden_dim = 128;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t input_dim = 64;
  std::size_t ffn_hidden = 128;
  std::size_t num_classes = kNumClasses;
  bool use_inverse_edges = true;
  AttentionScale attention_scale = AttentionScale::SqrtD;
  /// One node type and one relation (the homogeneous ablation).
  bool homogeneous = false;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return hidden_dim / num_heads; }
  std::size_t num_node_types() const { return homogeneous ? 1 : kNodeTypes.size(); }
  std::size_t num_relations() const {
    if (homogeneous) return 1;
    return use_inverse_edges ? 2 * kForwardRelationCount : kForwardRelationCount;
  }

  void validate() const {
    auto bad = [](const std::string& m) { return Error(ErrorKind::BadConfig, m); };
    if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0)
      throw bad("hidden_dim must be a positive multiple of num_heads");
    if (num_layers < 1) throw bad("num_layers must be at least 1");
    if (input_dim == 0) throw bad("input_dim must be positive");
    if (ffn_hidden == 0) throw bad("ffn_hidden must be positive");
    if (num_classes != kNumClasses) throw bad("num_classes must be 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline Json to_json(const ModelConfig& c) {
  return Json{{"hidden_dim", c.hidden_dim},
              {"num_heads", c.num_heads},
              {"num_layers", c.num_layers},
              {"input_dim", c.input_dim},
              {"ffn_hidden", c.ffn_hidden},
              {"num_classes", c.num_classes},
              {"use_inverse_edges", c.use_inverse_edges},
              {"attention_scale", c.attention_scale == AttentionScale::SqrtD ? "sqrt_d" : "sqrt_dh"},
              {"homogeneous", c.homogeneous},
              {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  try {
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.input_dim = j.value("input_dim", c.input_dim);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.use_inverse_edges = j.value("use_inverse_edges", c.use_inverse_edges);
    const std::string scale = j.value("attention_scale", std::string("sqrt_d"));
    if (scale == "sqrt_d") c.attention_scale = AttentionScale::SqrtD;
    else if (scale == "sqrt_dh") c.attention_scale = AttentionScale::SqrtDh;
    else throw Error(ErrorKind::BadConfig, "attention_scale must be sqrt_d or sqrt_dh");
    c.homogeneous = j.value("homogeneous", c.homogeneous);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadConfig, ex.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Type and relation indexing

/// Model-side node type of slot i (parameter names use these).
inline std::string type_key(const ModelConfig& c, std::size_t i) {
  return c.homogeneous ? std::string("node") : std::string(to_string(kNodeTypes[i]));
}

inline std::string relation_key(const ModelConfig& c, std::size_t i) {
  if (c.homogeneous) return "connected";
  const auto base = static_cast<RelationType>(i % kForwardRelationCount);
  return (i >= kForwardRelationCount ? "inv_" : "") + std::string(to_string(base));
}

inline std::size_t model_type_index(const ModelConfig& c, NodeType t) {
  return c.homogeneous ? 0 : static_cast<std::size_t>(t);
}

/// Relation slot of an edge, or nullopt when the model ignores it.
inline std::optional<std::size_t> model_relation_index(const ModelConfig& c, RelationType r,
                                                       bool inverse) {
  if (inverse && !c.use_inverse_edges) return std::nullopt;
  if (c.homogeneous) return 0;
  if (r == RelationType::Connected)
    throw Error(ErrorKind::BadConfig, "typed model cannot consume 'connected' edges");
  return static_cast<std::size_t>(r) + (inverse ? kForwardRelationCount : 0);
}

// ---------------------------------------------------------------------------
// Parameters

struct HgtParams {
  ModelConfig config;
  num::ParamStore store;

  const num::Tensor& operator[](const std::string& name) const { return store.get(name); }
};

namespace names {
inline std::string input(const ModelConfig& c, std::size_t a) { return "input." + type_key(c, a); }
inline std::string key(const ModelConfig& c, std::size_t l, std::size_t i, std::size_t a) {
  return "layer" + std::to_string(l) + ".head" + std::to_string(i) + ".key." + type_key(c, a);
}
inline std::string query(const ModelConfig& c, std::size_t l, std::size_t i, std::size_t a) {
  return "layer" + std::to_string(l) + ".head" + std::to_string(i) + ".query." + type_key(c, a);
}
inline std::string message(const ModelConfig& c, std::size_t l, std::size_t i, std::size_t a) {
  return "layer" + std::to_string(l) + ".head" + std::to_string(i) + ".message." + type_key(c, a);
}
inline std::string attn(const ModelConfig& c, std::size_t l, std::size_t r) {
  return "layer" + std::to_string(l) + ".attn." + relation_key(c, r);
}
inline std::string msg(const ModelConfig& c, std::size_t l, std::size_t r) {
  return "layer" + std::to_string(l) + ".msg." + relation_key(c, r);
}
inline std::string mu(std::size_t l) { return "layer" + std::to_string(l) + ".mu"; }
inline std::string aggregate(const ModelConfig& c, std::size_t l, std::size_t a) {
  return "layer" + std::to_string(l) + ".aggregate." + type_key(c, a);
}
inline std::string lambda(std::size_t l) { return "layer" + std::to_string(l) + ".lambda"; }
}  // namespace names

/// Glorot-uniform weights, zero biases, mu = lambda = 1. Deterministic in seed.
inline HgtParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = dist(rng);
    return num::Tensor::from({fan_in, fan_out}, std::move(v), true);
  };
  auto filled = [](std::size_t n, double value) {
    return num::Tensor::from({n}, std::vector<double>(n, value), true);
  };

  const std::size_t d = config.hidden_dim, dh = config.head_dim();
  const std::size_t T = config.num_node_types(), R = config.num_relations();
  HgtParams p{config, {}};
  for (std::size_t a = 0; a < T; ++a) p.store.add(names::input(config, a), glorot(config.input_dim, d));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    for (std::size_t i = 0; i < config.num_heads; ++i)
      for (std::size_t a = 0; a < T; ++a) {
        p.store.add(names::key(config, l, i, a), glorot(d, dh));
        p.store.add(names::query(config, l, i, a), glorot(d, dh));
        p.store.add(names::message(config, l, i, a), glorot(d, dh));
      }
    for (std::size_t r = 0; r < R; ++r) {
      p.store.add(names::attn(config, l, r), glorot(dh, dh));
      p.store.add(names::msg(config, l, r), glorot(dh, dh));
    }
    p.store.add(names::mu(l), filled(R, 1.0));
    for (std::size_t a = 0; a < T; ++a) p.store.add(names::aggregate(config, l, a), glorot(d, d));
    p.store.add(names::lambda(l), filled(T, 1.0));
  }
  p.store.add("head.w1", glorot(kNodeTypes.size() * d, config.ffn_hidden));
  p.store.add("head.b1", filled(config.ffn_hidden, 0.0));
  p.store.add("head.w2", glorot(config.ffn_hidden, config.num_classes));
  p.store.add("head.b2", filled(config.num_classes, 0.0));
  return p;
}

// ---------------------------------------------------------------------------
// Per-graph view used by the forward pass

/// Edges the model consumes, ordered by target and then by the graph's
/// incoming order (source id, relation ordinal).
struct ModelEdges {
  std::vector<std::size_t> src, dst, relation;
  std::size_t size() const { return src.size(); }
};

struct GraphView {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> node_type;               // model type slot per node
  std::vector<std::vector<std::size_t>> of_type;    // node ids per type slot
  ModelEdges edges;
  /// For each relation present: its slot and the positions of its edges.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> by_relation;
};

inline GraphView make_view(const DebateGraph& g, const ModelConfig& c) {
  if (g.homogeneous() && !c.homogeneous)
    throw Error(ErrorKind::BadConfig, "graph " + g.graph_id() + " is homogeneous; model is typed");
  GraphView v;
  v.num_nodes = g.size();
  v.of_type.resize(c.num_node_types());
  for (const Node& n : g.nodes()) {
    const std::size_t a = model_type_index(c, n.type);
    v.node_type.push_back(a);
    v.of_type[a].push_back(n.id);
  }
  std::vector<std::vector<std::size_t>> positions(c.num_relations());
  for (NodeId t = 0; t < g.size(); ++t) {
    for (const IncomingEdge& in : g.incoming(t)) {
      auto r = model_relation_index(c, in.relation, in.inverse);
      if (!r) continue;
      positions[*r].push_back(v.edges.size());
      v.edges.src.push_back(in.src);
      v.edges.dst.push_back(t);
      v.edges.relation.push_back(*r);
    }
  }
  for (std::size_t r = 0; r < positions.size(); ++r)
    if (!positions[r].empty()) v.by_relation.emplace_back(r, std::move(positions[r]));
  return v;
}

/// Node embeddings indexed by node id (one row per node).
using NodeEmbeddings = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Forward pass

inline num::Tensor featurize(const DebateGraph& g, const NodeEmbeddings& embeddings,
                             const HgtParams& params) {
  const ModelConfig& c = params.config;
  const std::size_t n = g.size();
  std::vector<double> flat;
  flat.reserve(n * c.input_dim);
  for (NodeId id = 0; id < n; ++id) {
    if (id >= embeddings.size() || embeddings[id].empty())
      throw Error(ErrorKind::MissingEmbedding, "node " + std::to_string(id) + " of " + g.graph_id());
    if (embeddings[id].size() != c.input_dim)
      throw Error(ErrorKind::DimMismatch, "node " + std::to_string(id) + " embedding has " +
                                              std::to_string(embeddings[id].size()) +
                                              " entries, model expects " + std::to_string(c.input_dim));
    flat.insert(flat.end(), embeddings[id].begin(), embeddings[id].end());
  }
  const num::Tensor x = num::Tensor::from({n, c.input_dim}, std::move(flat));
  const GraphView view = make_view(g, c);
  std::vector<num::Tensor> parts;
  std::vector<std::vector<std::size_t>> where;
  for (std::size_t a = 0; a < view.of_type.size(); ++a) {
    if (view.of_type[a].empty()) continue;
    parts.push_back(num::matmul(num::gather_rows(x, view.of_type[a]), params[names::input(c, a)]));
    where.push_back(view.of_type[a]);
  }
  return num::scatter_rows(parts, where, n, c.hidden_dim);
}

struct LayerResult {
  num::Tensor h;                       // N x d
  std::vector<num::Tensor> attention;  // per head, E x 1
  std::vector<num::Tensor> messages;   // per head, E x d_h (before weighting)
};

inline double attention_divisor(const ModelConfig& c) {
  return std::sqrt(static_cast<double>(c.attention_scale == AttentionScale::SqrtD ? c.hidden_dim
                                                                                   : c.head_dim()));
}

inline LayerResult run_layer(const num::Tensor& h_prev, const GraphView& view,
                             const HgtParams& params, std::size_t l) {
  using namespace num;
  const ModelConfig& c = params.config;
  const std::size_t n = view.num_nodes, d = c.hidden_dim, dh = c.head_dim();
  const std::size_t E = view.edges.size();
  const double inv_scale = 1.0 / attention_divisor(c);
  const Tensor& mu = params[names::mu(l)];

  std::vector<Tensor> rows_of_type(view.of_type.size());
  for (std::size_t a = 0; a < view.of_type.size(); ++a)
    if (!view.of_type[a].empty()) rows_of_type[a] = gather_rows(h_prev, view.of_type[a]);

  auto typed_projection = [&](auto name_of, std::size_t head) {
    std::vector<Tensor> parts;
    std::vector<std::vector<std::size_t>> where;
    for (std::size_t a = 0; a < view.of_type.size(); ++a) {
      if (view.of_type[a].empty()) continue;
      parts.push_back(matmul(rows_of_type[a], params[name_of(c, l, head, a)]));
      where.push_back(view.of_type[a]);
    }
    return scatter_rows(parts, where, n, dh);
  };

  LayerResult out;
  std::vector<Tensor> head_updates;
  for (std::size_t i = 0; i < c.num_heads; ++i) {
    const Tensor K = typed_projection(names::key, i);
    const Tensor Q = typed_projection(names::query, i);
    const Tensor M = typed_projection(names::message, i);

    std::vector<Tensor> score_parts, msg_parts;
    std::vector<std::vector<std::size_t>> where;
    for (const auto& [r, pos] : view.by_relation) {
      std::vector<std::size_t> src, dst;
      for (std::size_t e : pos) {
        src.push_back(view.edges.src[e]);
        dst.push_back(view.edges.dst[e]);
      }
      const Tensor keyed = matmul(gather_rows(K, src), params[names::attn(c, l, r)]);
      const Tensor raw = row_dot(keyed, gather_rows(Q, dst));
      score_parts.push_back(scale(mul_entry(raw, mu, r), inv_scale));
      msg_parts.push_back(matmul(gather_rows(M, src), params[names::msg(c, l, r)]));
      where.push_back(pos);
    }
    if (E == 0) {
      out.attention.push_back(Tensor::zeros({0, 1}));
      out.messages.push_back(Tensor::zeros({0, dh}));
      head_updates.push_back(Tensor::zeros({n, dh}));
      continue;
    }
    const Tensor scores = scatter_rows(score_parts, where, E, 1);
    const Tensor weights = segment_softmax(scores, view.edges.dst, n);
    const Tensor messages = scatter_rows(msg_parts, where, E, dh);
    head_updates.push_back(index_add_rows(scale_rows(messages, weights), view.edges.dst, n));
    out.attention.push_back(weights);
    out.messages.push_back(messages);
  }

  const Tensor aggregated = concat(head_updates, 1);
  const Tensor& lambda = params[names::lambda(l)];
  std::vector<Tensor> parts;
  std::vector<std::vector<std::size_t>> where;
  for (std::size_t a = 0; a < view.of_type.size(); ++a) {
    if (view.of_type[a].empty()) continue;
    const Tensor rescaled = mul_entry(gather_rows(aggregated, view.of_type[a]), lambda, a);
    parts.push_back(matmul(rescaled, params[names::aggregate(c, l, a)]));
    where.push_back(view.of_type[a]);
  }
  out.h = add(scatter_rows(parts, where, n, d), h_prev);
  return out;
}

/// Per-edge, per-head attention weights of layer l: [E x Z], edge order as in
/// make_view(g, config).edges.
inline std::vector<std::vector<double>> hgt_attention(const num::Tensor& h_prev, const DebateGraph& g,
                                                      const HgtParams& params, std::size_t l) {
  const GraphView view = make_view(g, params.config);
  const LayerResult r = run_layer(h_prev, view, params, l);
  std::vector<std::vector<double>> out(view.edges.size(), std::vector<double>(params.config.num_heads));
  for (std::size_t i = 0; i < params.config.num_heads; ++i)
    for (std::size_t e = 0; e < view.edges.size(); ++e) out[e][i] = r.attention[i][e];
  return out;
}

/// Per-edge messages of layer l with heads concatenated: [E x d].
inline std::vector<std::vector<double>> hgt_message(const num::Tensor& h_prev, const DebateGraph& g,
                                                    const HgtParams& params, std::size_t l) {
  const GraphView view = make_view(g, params.config);
  const LayerResult r = run_layer(h_prev, view, params, l);
  const std::size_t dh = params.config.head_dim();
  std::vector<std::vector<double>> out(view.edges.size(), std::vector<double>(params.config.hidden_dim));
  for (std::size_t i = 0; i < params.config.num_heads; ++i)
    for (std::size_t e = 0; e < view.edges.size(); ++e)
      for (std::size_t j = 0; j < dh; ++j) out[e][i * dh + j] = r.messages[i].at(e, j);
  return out;
}

inline num::Tensor hgt_layer(const num::Tensor& h_prev, const DebateGraph& g, const HgtParams& params,
                             std::size_t l) {
  return run_layer(h_prev, make_view(g, params.config), params, l).h;
}

struct ForwardTrace {
  std::vector<std::vector<double>> layers;                  // H^(0..L), each N*d row-major
  std::vector<std::vector<std::vector<double>>> attention;  // [layer][edge][head]
  ModelEdges edges;
  std::vector<std::vector<double>> pooled;                  // per type slot, width d
  std::vector<double> h_concat;
  std::vector<double> probabilities;
};

struct ForwardResult {
  num::Tensor probabilities;  // 1 x 2, differentiable w.r.t. params
  ForwardTrace trace;
};

/// Pooling slot order for h_concat.
inline std::size_t pooling_slot(const ModelConfig& c, std::size_t type_slot) {
  return c.homogeneous ? 0 : type_slot;
}

inline ForwardResult forward(const DebateGraph& g, const NodeEmbeddings& embeddings,
                             const HgtParams& params, bool keep_trace = true) {
  using namespace num;
  const ModelConfig& c = params.config;
  const GraphView view = make_view(g, c);
  ForwardResult out;

  Tensor h = featurize(g, embeddings, params);
  if (keep_trace) {
    out.trace.edges = view.edges;
    out.trace.layers.emplace_back(h.data().begin(), h.data().end());
  }
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerResult r = run_layer(h, view, params, l);
    h = r.h;
    if (keep_trace) {
      out.trace.layers.emplace_back(h.data().begin(), h.data().end());
      std::vector<std::vector<double>> att(view.edges.size(), std::vector<double>(c.num_heads));
      for (std::size_t i = 0; i < c.num_heads; ++i)
        for (std::size_t e = 0; e < view.edges.size(); ++e) att[e][i] = r.attention[i][e];
      out.trace.attention.push_back(std::move(att));
    }
  }

  std::vector<Tensor> pooled(kNodeTypes.size());
  for (std::size_t a = 0; a < view.of_type.size(); ++a)
    if (!view.of_type[a].empty()) pooled[pooling_slot(c, a)] = mean_rows(gather_rows(h, view.of_type[a]));
  for (auto& p : pooled)
    if (!p.defined()) p = Tensor::zeros({1, c.hidden_dim});
  const Tensor h_concat = concat(pooled, 1);
  const Tensor hidden = relu(add_bias(matmul(h_concat, params["head.w1"]), params["head.b1"]));
  const Tensor logits = add_bias(matmul(hidden, params["head.w2"]), params["head.b2"]);
  out.probabilities = softmax(logits);

  if (keep_trace) {
    for (const auto& p : pooled) out.trace.pooled.emplace_back(p.data().begin(), p.data().end());
    out.trace.h_concat.assign(h_concat.data().begin(), h_concat.data().end());
  }
  out.trace.probabilities.assign(out.probabilities.data().begin(), out.probabilities.data().end());
  return out;
}

/// Class probabilities (index 0 = accept, 1 = reject) and the forward trace.
inline std::pair<std::vector<double>, ForwardTrace> predict(const DebateGraph& g,
                                                            const NodeEmbeddings& embeddings,
                                                            const HgtParams& params) {
  ForwardResult r = forward(g, embeddings, params, true);
  return {r.trace.probabilities, std::move(r.trace)};
}

inline Decision decide(const std::vector<double>& probs) {
  return probs.at(0) >= probs.at(1) ? Decision::Accept : Decision::Reject;
}

inline std::size_t class_index(Decision d) { return d == Decision::Accept ? 0 : 1; }

}  // namespace rvg
