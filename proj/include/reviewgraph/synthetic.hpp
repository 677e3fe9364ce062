#pragma once

// Seeded generators: random schema-valid graphs for property tests and a
// labeled synthetic corpus whose decision is a rule over the extracted
// reviewer-author relations.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "reviewgraph/extraction.hpp"
#include "reviewgraph/graph.hpp"
#include "reviewgraph/hgt.hpp"

namespace rvg {

struct RandomGraphOptions {
  bool inverse_edges = true;
  double irr_prob = 0.25;          // per ordered reviewer pair
  double author_link_prob = 0.85;  // author nodes with at least one RAR edge
};

/// Schema-valid graph with exactly num_nodes nodes (at least 5): title, the
/// four dimensions, then a random mix of reviewer and author opinions.
inline DebateGraph random_debate_graph(std::mt19937_64& rng, std::size_t num_nodes,
                                       const RandomGraphOptions& opt = {},
                                       const std::string& graph_id = "random") {
  if (num_nodes < 5) throw Error(ErrorKind::BadConfig, "random graph needs at least 5 nodes");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  std::vector<Node> nodes;
  std::vector<Edge> edges;
  auto link = [&](NodeId s, NodeId t, RelationType r) {
    for (const Edge& e : edges)
      if (e.src == s && e.dst == t && e.relation == r && !e.inverse) return;
    edges.push_back({s, t, r, false});
    if (opt.inverse_edges) edges.push_back({t, s, r, true});
  };

  nodes.push_back({0, NodeType::Title, "Random paper " + std::to_string(rng() % 100000), {}, {}});
  for (std::size_t k = 0; k < kDimensions.size(); ++k) {
    const NodeId id = static_cast<NodeId>(nodes.size());
    nodes.push_back({id, NodeType::EvaluationDimension, std::string(display_name(kDimensions[k])), {}, {}});
    link(0, id, RelationType::HasAspect);
  }
  std::vector<NodeId> reviewers, authors;
  while (nodes.size() < num_nodes) {
    const NodeId id = static_cast<NodeId>(nodes.size());
    if (reviewers.empty() || coin(rng) < 0.6) {
      const AgentRole who = kReviewers[pick(3)];
      const std::size_t dim = pick(4);
      nodes.push_back({id, NodeType::ReviewerOpinion, "Reviewer opinion " + std::to_string(id), who, kDimensions[dim]});
      link(id, static_cast<NodeId>(1 + dim), RelationType::ReviewedBy);
      reviewers.push_back(id);
    } else {
      nodes.push_back({id, NodeType::AuthorOpinion, "Author opinion " + std::to_string(id), AgentRole::Author, {}});
      authors.push_back(id);
    }
  }
  static constexpr std::array<RelationType, 6> kRar = {RelationType::Accept, RelationType::Reject,
                                                       RelationType::Clarify, RelationType::Compromise,
                                                       RelationType::Extend, RelationType::Neutral};
  static constexpr std::array<RelationType, 5> kIrr = {RelationType::Agree, RelationType::Disagree,
                                                       RelationType::Complement, RelationType::Progressive,
                                                       RelationType::Independent};
  for (NodeId a : authors) {
    if (coin(rng) >= opt.author_link_prob) continue;
    const std::size_t links = 1 + pick(2);
    for (std::size_t k = 0; k < links; ++k) link(reviewers[pick(reviewers.size())], a, kRar[pick(kRar.size())]);
  }
  for (NodeId s : reviewers)
    for (NodeId t : reviewers)
      if (s != t && nodes[s].speaker != nodes[t].speaker && coin(rng) < opt.irr_prob)
        link(s, t, kIrr[pick(kIrr.size())]);
  return DebateGraph(graph_id, std::move(nodes), std::move(edges));
}

/// Gaussian rows, one per node.
inline NodeEmbeddings random_embeddings(std::mt19937_64& rng, std::size_t num_nodes, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  NodeEmbeddings rows(num_nodes, std::vector<double>(dim));
  for (auto& r : rows)
    for (auto& x : r) x = normal(rng);
  return rows;
}

// ---------------------------------------------------------------------------
// Labeled synthetic corpus

/// Decision for a batch, or nullopt when the rule is undecided (the
/// generator then adds a decisive relation and asks again).
using LabelRule = std::function<std::optional<Decision>(const TripleBatch&)>;

/// Majority of Accept versus Reject reviewer-author relations.
inline std::optional<Decision> majority_accept_reject(const TripleBatch& batch) {
  int accept = 0, reject = 0;
  for (const auto& t : batch.reviewer_author) {
    const RelationType r = canonical_relation(t.relation_label, TripleGroup::ReviewerAuthor);
    accept += r == RelationType::Accept;
    reject += r == RelationType::Reject;
  }
  if (accept == reject) return std::nullopt;
  return accept > reject ? Decision::Accept : Decision::Reject;
}

struct SyntheticOptions {
  std::size_t min_opinions = 4;
  std::size_t max_opinions = 12;
  double response_prob = 0.8;
  double irr_prob = 0.15;
  /// Weights over Accept, Reject, Clarify, Compromise, Extend, Neutral.
  std::array<double, 6> rar_weights = {0.3, 0.3, 0.1, 0.1, 0.1, 0.1};
  /// Per-paper lean in [0, 1): one of Accept/Reject (coin flip) has its
  /// weight scaled by 1 + stance, the other by 1 - stance.
  double stance = 0.0;
  LabelRule label_rule = majority_accept_reject;
};

struct SyntheticPaper {
  std::string paper_id;
  std::string title;
  std::string body;
  TripleBatch batch;
  std::vector<DimensionAssignment> dimensions;
  Decision label = Decision::Accept;
};

inline SyntheticPaper synthetic_paper(std::mt19937_64& rng, const std::string& paper_id,
                                      const SyntheticOptions& opt = {}) {
  static constexpr std::array<const char*, 6> kRarLabels = {"Accept", "Reject", "Clarify",
                                                            "Compromise", "Extend", "Neutral"};
  static constexpr std::array<const char*, 5> kIrrLabels = {"Agree", "Disagree", "Complement",
                                                            "Progressive", "Independent"};
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto weights = opt.rar_weights;
  if (opt.stance > 0.0) {
    const bool leans_accept = coin(rng) < 0.5;
    weights[0] *= leans_accept ? 1.0 + opt.stance : 1.0 - opt.stance;
    weights[1] *= leans_accept ? 1.0 - opt.stance : 1.0 + opt.stance;
  }
  std::discrete_distribution<std::size_t> rar_label(weights.begin(), weights.end());

  SyntheticPaper p;
  p.paper_id = paper_id;
  p.title = "Synthetic study " + paper_id;
  p.body = "We study problem " + paper_id + " and report experiments on two benchmarks.";
  p.batch.graph_id = paper_id;

  const std::size_t n_opinions =
      opt.min_opinions + pick(opt.max_opinions - opt.min_opinions + 1);
  struct Opinion { AgentRole who; std::string text; };
  std::vector<Opinion> opinions;
  for (std::size_t k = 0; k < n_opinions; ++k) {
    const AgentRole who = kReviewers[k < 3 ? k : pick(3)];
    const Dimension dim = kDimensions[pick(4)];
    Opinion o{who, speaker_tag(who) + " remark " + std::to_string(k) + " on " + paper_id + " about " +
                       std::string(display_name(dim))};
    p.dimensions.push_back({who, o.text, dim});
    opinions.push_back(std::move(o));
  }

  std::size_t responses = 0;
  auto respond = [&](const Opinion& o, const std::string& label) {
    OpinionTriplet t;
    t.speaker_a = o.who;
    t.text_a = o.text;
    t.speaker_b = AgentRole::Author;
    t.text_b = "Author reply " + std::to_string(responses++) + " on " + paper_id;
    t.relation_label = label;
    t.group = TripleGroup::ReviewerAuthor;
    p.batch.reviewer_author.push_back(std::move(t));
  };
  for (const auto& o : opinions)
    if (coin(rng) < opt.response_prob) respond(o, kRarLabels[rar_label(rng)]);
  for (std::size_t a = 0; a < opinions.size(); ++a)
    for (std::size_t b = 0; b < opinions.size(); ++b)
      if (a != b && opinions[a].who != opinions[b].who && coin(rng) < opt.irr_prob) {
        OpinionTriplet t;
        t.speaker_a = opinions[a].who;
        t.text_a = opinions[a].text;
        t.speaker_b = opinions[b].who;
        t.text_b = opinions[b].text;
        t.relation_label = kIrrLabels[pick(kIrrLabels.size())];
        t.group = TripleGroup::InterReviewer;
        p.batch.inter_reviewer.push_back(std::move(t));
      }

  for (auto decided = opt.label_rule(p.batch); !decided; decided = opt.label_rule(p.batch))
    respond(opinions[pick(opinions.size())], kRarLabels[pick(2)]);
  p.label = *opt.label_rule(p.batch);
  return p;
}

inline std::vector<SyntheticPaper> synthetic_corpus(std::uint64_t seed, std::size_t count,
                                                    const SyntheticOptions& opt = {},
                                                    const std::string& prefix = "syn") {
  std::mt19937_64 rng(seed);
  std::vector<SyntheticPaper> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_paper(rng, prefix + std::to_string(i), opt));
  return out;
}

inline DebateGraph synthetic_graph(const SyntheticPaper& p, const BuildOptions& base = {}) {
  BuildOptions o = base;
  o.label = p.label;
  return build_graph(p.title, p.batch, p.dimensions, o);
}

}  // namespace rvg
