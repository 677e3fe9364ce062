#pragma once

// Heterogeneous debate graph: typed nodes, typed directed edges over a fixed
// meta-relation schema, the incoming-neighbour index the model consumes, the
// ablation transforms and the JSON graph file format.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reviewgraph/error.hpp"

namespace rvg {

using Json = nlohmann::json;
using NodeId = std::uint32_t;

enum class NodeType { Title, EvaluationDimension, ReviewerOpinion, AuthorOpinion };
inline constexpr std::array<NodeType, 4> kNodeTypes = {
    NodeType::Title, NodeType::EvaluationDimension, NodeType::ReviewerOpinion,
    NodeType::AuthorOpinion};

enum class Dimension {
  MethodologicalNovelty,
  ExperimentalCompleteness,
  MotivationClarity,
  WritingFluency
};
inline constexpr std::array<Dimension, 4> kDimensions = {
    Dimension::MethodologicalNovelty, Dimension::ExperimentalCompleteness,
    Dimension::MotivationClarity, Dimension::WritingFluency};

// Declaration order is the relation ordinal used for deterministic sorting.
enum class RelationType {
  HasAspect,
  ReviewedBy,
  Agree,
  Disagree,
  Complement,
  Progressive,
  Independent,
  Accept,
  Reject,
  Clarify,
  Compromise,
  Extend,
  Neutral,
  Connected
};
inline constexpr std::size_t kForwardRelationCount = 13;  // excludes Connected
inline constexpr std::size_t kRelationOrdinalSpan = 14;

enum class RelationGroup { Structural, InterReviewer, ReviewerAuthor, Homogeneous };

enum class AgentRole { Reviewer1, Reviewer2, Reviewer3, Author, SeniorReviewer };
inline constexpr std::array<AgentRole, 3> kReviewers = {
    AgentRole::Reviewer1, AgentRole::Reviewer2, AgentRole::Reviewer3};

enum class Decision { Accept, Reject };
inline constexpr std::size_t kNumClasses = 2;

enum class AblationMode { Full, NoTitle, NoEval, NoRAR, NoIRR, Homogeneous };
inline constexpr std::array<AblationMode, 6> kAblationModes = {
    AblationMode::Full,  AblationMode::NoTitle, AblationMode::NoEval,
    AblationMode::NoRAR, AblationMode::NoIRR,   AblationMode::Homogeneous};

// ---------------------------------------------------------------------------
// Enum spellings (snake_case on the wire)

namespace detail {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table,
                        std::string_view text) {
  for (const auto& [value, name] : table)
    if (name == text) return value;
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table,
                         E value) {
  for (const auto& [v, name] : table)
    if (v == value) return name;
  return "?";
}

inline constexpr std::array<std::pair<NodeType, std::string_view>, 4> kNodeTypeNames = {{
    {NodeType::Title, "title"},
    {NodeType::EvaluationDimension, "evaluation_dimension"},
    {NodeType::ReviewerOpinion, "reviewer_opinion"},
    {NodeType::AuthorOpinion, "author_opinion"},
}};

inline constexpr std::array<std::pair<Dimension, std::string_view>, 4> kDimensionNames = {{
    {Dimension::MethodologicalNovelty, "methodological_novelty"},
    {Dimension::ExperimentalCompleteness, "experimental_completeness"},
    {Dimension::MotivationClarity, "motivation_clarity"},
    {Dimension::WritingFluency, "writing_fluency"},
}};

inline constexpr std::array<std::pair<Dimension, std::string_view>, 4> kDimensionTitles = {{
    {Dimension::MethodologicalNovelty, "Methodological Novelty"},
    {Dimension::ExperimentalCompleteness, "Experimental Completeness"},
    {Dimension::MotivationClarity, "Motivation Clarity"},
    {Dimension::WritingFluency, "Writing Fluency"},
}};

inline constexpr std::array<std::pair<RelationType, std::string_view>, 14> kRelationNames = {{
    {RelationType::HasAspect, "has_aspect"},
    {RelationType::ReviewedBy, "reviewed_by"},
    {RelationType::Agree, "agree"},
    {RelationType::Disagree, "disagree"},
    {RelationType::Complement, "complement"},
    {RelationType::Progressive, "progressive"},
    {RelationType::Independent, "independent"},
    {RelationType::Accept, "accept"},
    {RelationType::Reject, "reject"},
    {RelationType::Clarify, "clarify"},
    {RelationType::Compromise, "compromise"},
    {RelationType::Extend, "extend"},
    {RelationType::Neutral, "neutral"},
    {RelationType::Connected, "connected"},
}};

inline constexpr std::array<std::pair<AgentRole, std::string_view>, 5> kRoleNames = {{
    {AgentRole::Reviewer1, "reviewer1"},
    {AgentRole::Reviewer2, "reviewer2"},
    {AgentRole::Reviewer3, "reviewer3"},
    {AgentRole::Author, "author"},
    {AgentRole::SeniorReviewer, "senior_reviewer"},
}};

inline constexpr std::array<std::pair<Decision, std::string_view>, 2> kDecisionNames = {{
    {Decision::Accept, "accept"},
    {Decision::Reject, "reject"},
}};

inline constexpr std::array<std::pair<AblationMode, std::string_view>, 6> kAblationNames = {{
    {AblationMode::Full, "full"},
    {AblationMode::NoTitle, "no_title"},
    {AblationMode::NoEval, "no_eval"},
    {AblationMode::NoRAR, "no_rar"},
    {AblationMode::NoIRR, "no_irr"},
    {AblationMode::Homogeneous, "homogeneous"},
}};

}  // namespace detail

inline std::string_view to_string(NodeType v) { return detail::name_of(detail::kNodeTypeNames, v); }
inline std::string_view to_string(Dimension v) { return detail::name_of(detail::kDimensionNames, v); }
inline std::string_view to_string(RelationType v) { return detail::name_of(detail::kRelationNames, v); }
inline std::string_view to_string(AgentRole v) { return detail::name_of(detail::kRoleNames, v); }
inline std::string_view to_string(Decision v) { return detail::name_of(detail::kDecisionNames, v); }
inline std::string_view to_string(AblationMode v) { return detail::name_of(detail::kAblationNames, v); }

/// Human-readable dimension name; also the text of the dimension node.
inline std::string_view display_name(Dimension v) {
  return detail::name_of(detail::kDimensionTitles, v);
}

inline std::optional<NodeType> parse_node_type(std::string_view s) { return detail::lookup(detail::kNodeTypeNames, s); }
inline std::optional<Dimension> parse_dimension(std::string_view s) { return detail::lookup(detail::kDimensionNames, s); }
inline std::optional<RelationType> parse_relation(std::string_view s) { return detail::lookup(detail::kRelationNames, s); }
inline std::optional<AgentRole> parse_role(std::string_view s) { return detail::lookup(detail::kRoleNames, s); }
inline std::optional<Decision> parse_decision(std::string_view s) { return detail::lookup(detail::kDecisionNames, s); }
inline std::optional<AblationMode> parse_ablation(std::string_view s) { return detail::lookup(detail::kAblationNames, s); }

/// Lowercases and drops spaces, underscores and hyphens, so "Writing Fluency",
/// "writing_fluency" and "WRITING-FLUENCY" compare equal.
inline std::string squash_name(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (c == ' ' || c == '_' || c == '-' || c == '\t' || c == '\n' || c == '\r') continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::optional<Dimension> dimension_from_name(std::string_view s) {
  const std::string key = squash_name(s);
  for (Dimension d : kDimensions)
    if (squash_name(to_string(d)) == key) return d;
  return std::nullopt;
}

inline bool is_reviewer(AgentRole r) {
  return r == AgentRole::Reviewer1 || r == AgentRole::Reviewer2 || r == AgentRole::Reviewer3;
}

inline bool is_opinion(NodeType t) {
  return t == NodeType::ReviewerOpinion || t == NodeType::AuthorOpinion;
}

inline RelationGroup group_of(RelationType r) {
  switch (r) {
    case RelationType::HasAspect:
    case RelationType::ReviewedBy:
      return RelationGroup::Structural;
    case RelationType::Agree:
    case RelationType::Disagree:
    case RelationType::Complement:
    case RelationType::Progressive:
    case RelationType::Independent:
      return RelationGroup::InterReviewer;
    case RelationType::Connected:
      return RelationGroup::Homogeneous;
    default:
      return RelationGroup::ReviewerAuthor;
  }
}

/// Sort key of a (relation, inverse) pair: forward relations first in
/// declaration order, then their inverses.
inline std::size_t relation_ordinal(RelationType r, bool inverse) {
  return static_cast<std::size_t>(r) + (inverse ? kRelationOrdinalSpan : 0);
}

// ---------------------------------------------------------------------------
// Data model

struct Node {
  NodeId id = 0;
  NodeType type = NodeType::Title;
  std::string text;
  std::optional<AgentRole> speaker;
  std::optional<Dimension> dimension;

  bool operator==(const Node&) const = default;
};

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  RelationType relation = RelationType::HasAspect;
  bool inverse = false;

  bool operator==(const Edge&) const = default;
};

struct MetaRelation {
  NodeType src;
  RelationType relation;
  bool inverse;
  NodeType dst;

  auto operator<=>(const MetaRelation&) const = default;
};

struct IncomingEdge {
  NodeId src;
  RelationType relation;
  bool inverse;

  bool operator==(const IncomingEdge&) const = default;
};

/// Forward meta-relations of the schema (13), followed by their inverses when
/// requested (13 more). Connected is never part of the typed schema.
inline std::vector<MetaRelation> legal_meta_relations(bool include_inverse = true) {
  std::vector<MetaRelation> out;
  out.push_back({NodeType::Title, RelationType::HasAspect, false, NodeType::EvaluationDimension});
  out.push_back({NodeType::ReviewerOpinion, RelationType::ReviewedBy, false,
                 NodeType::EvaluationDimension});
  for (auto r : {RelationType::Agree, RelationType::Disagree, RelationType::Complement,
                 RelationType::Progressive, RelationType::Independent})
    out.push_back({NodeType::ReviewerOpinion, r, false, NodeType::ReviewerOpinion});
  for (auto r : {RelationType::Accept, RelationType::Reject, RelationType::Clarify,
                 RelationType::Compromise, RelationType::Extend, RelationType::Neutral})
    out.push_back({NodeType::ReviewerOpinion, r, false, NodeType::AuthorOpinion});
  if (include_inverse) {
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({out[i].dst, out[i].relation, true, out[i].src});
  }
  return out;
}

/// The unique (source type, target type) pair a forward relation may connect.
inline std::pair<NodeType, NodeType> endpoint_types(RelationType r) {
  switch (group_of(r)) {
    case RelationGroup::Structural:
      return r == RelationType::HasAspect
                 ? std::pair{NodeType::Title, NodeType::EvaluationDimension}
                 : std::pair{NodeType::ReviewerOpinion, NodeType::EvaluationDimension};
    case RelationGroup::InterReviewer:
      return {NodeType::ReviewerOpinion, NodeType::ReviewerOpinion};
    case RelationGroup::ReviewerAuthor:
      return {NodeType::ReviewerOpinion, NodeType::AuthorOpinion};
    case RelationGroup::Homogeneous:
      break;
  }
  throw Error(ErrorKind::BadGraphFile, "relation 'connected' has no typed endpoints");
}

inline bool is_legal_meta_relation(const MetaRelation& m) {
  if (m.relation == RelationType::Connected) return false;
  auto [s, t] = endpoint_types(m.relation);
  if (m.inverse) std::swap(s, t);
  return m.src == s && m.dst == t;
}

/// Immutable heterogeneous debate graph. The incoming index is derived from
/// the edge list at construction and ordered by (source id, relation ordinal).
class DebateGraph {
 public:
  DebateGraph() = default;

  DebateGraph(std::string graph_id, std::vector<Node> nodes, std::vector<Edge> edges,
              std::optional<Decision> label = std::nullopt,
              std::vector<AblationMode> ablations = {})
      : graph_id_(std::move(graph_id)),
        nodes_(std::move(nodes)),
        edges_(std::move(edges)),
        label_(label),
        ablations_(std::move(ablations)) {
    std::sort(ablations_.begin(), ablations_.end());
    ablations_.erase(std::unique(ablations_.begin(), ablations_.end()), ablations_.end());
    incoming_.resize(nodes_.size());
    for (const Edge& e : edges_) {
      if (e.src >= nodes_.size() || e.dst >= nodes_.size()) continue;
      incoming_[e.dst].push_back({e.src, e.relation, e.inverse});
    }
    for (auto& list : incoming_) {
      std::stable_sort(list.begin(), list.end(), [](const IncomingEdge& a, const IncomingEdge& b) {
        return std::tuple(a.src, relation_ordinal(a.relation, a.inverse)) <
               std::tuple(b.src, relation_ordinal(b.relation, b.inverse));
      });
    }
  }

  const std::string& graph_id() const { return graph_id_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::optional<Decision>& label() const { return label_; }
  const std::vector<AblationMode>& ablations() const { return ablations_; }
  std::size_t size() const { return nodes_.size(); }

  bool has_ablation(AblationMode m) const {
    return std::find(ablations_.begin(), ablations_.end(), m) != ablations_.end();
  }
  bool homogeneous() const { return has_ablation(AblationMode::Homogeneous); }

  const Node& node(NodeId id) const {
    if (id >= nodes_.size())
      throw Error(ErrorKind::UnknownNode, "node id " + std::to_string(id) + " out of range");
    return nodes_[id];
  }

  const std::vector<IncomingEdge>& incoming(NodeId t) const {
    if (t >= incoming_.size())
      throw Error(ErrorKind::UnknownNode, "node id " + std::to_string(t) + " out of range");
    return incoming_[t];
  }

  std::vector<NodeId> nodes_of_type(NodeType type) const {
    std::vector<NodeId> out;
    for (const Node& n : nodes_)
      if (n.type == type) out.push_back(n.id);
    return out;
  }

  std::size_t count_edges(RelationGroup group) const {
    return static_cast<std::size_t>(std::count_if(edges_.begin(), edges_.end(), [&](const Edge& e) {
      return group_of(e.relation) == group;
    }));
  }

  DebateGraph with_label(std::optional<Decision> label) const {
    DebateGraph copy = *this;
    copy.label_ = label;
    return copy;
  }

  bool operator==(const DebateGraph& o) const {
    return graph_id_ == o.graph_id_ && nodes_ == o.nodes_ && edges_ == o.edges_ &&
           label_ == o.label_ && ablations_ == o.ablations_;
  }

 private:
  std::string graph_id_;
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::optional<Decision> label_;
  std::vector<AblationMode> ablations_;
  std::vector<std::vector<IncomingEdge>> incoming_;
};

/// Free-function form of DebateGraph::incoming.
inline const std::vector<IncomingEdge>& incoming(const DebateGraph& g, NodeId t) {
  return g.incoming(t);
}

// ---------------------------------------------------------------------------
// Validation

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;

  void add(std::string v) {
    ok = false;
    violations.push_back(std::move(v));
  }
};

/// Never throws; every problem found is listed in the report. The schema is
/// relaxed according to the ablations recorded on the graph.
inline ValidationReport validate_graph(const DebateGraph& g) {
  ValidationReport report;
  const auto& nodes = g.nodes();
  const bool homogeneous = g.homogeneous();

  std::size_t titles = 0;
  std::set<Dimension> dims_seen;
  std::size_t dim_nodes = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    const std::string where = "node " + std::to_string(i);
    if (n.id != i) report.add(where + ": ids are not dense (found id " + std::to_string(n.id) + ")");
    if (n.text.empty()) report.add(where + ": empty text");
    if (is_opinion(n.type) != n.speaker.has_value())
      report.add(where + ": speaker must be present exactly on opinion nodes");
    if (n.speaker) {
      if (n.type == NodeType::ReviewerOpinion && !is_reviewer(*n.speaker))
        report.add(where + ": reviewer opinion spoken by a non-reviewer");
      if (n.type == NodeType::AuthorOpinion && *n.speaker != AgentRole::Author)
        report.add(where + ": author opinion spoken by a non-author");
    }
    if ((n.type == NodeType::ReviewerOpinion) != n.dimension.has_value())
      report.add(where + ": dimension must be present exactly on reviewer opinions");
    if (n.type == NodeType::Title) ++titles;
    if (n.type == NodeType::EvaluationDimension) {
      ++dim_nodes;
      if (auto d = dimension_from_name(n.text)) {
        if (!dims_seen.insert(*d).second) report.add(where + ": duplicate dimension node");
      } else {
        report.add(where + ": dimension node text is not a known dimension");
      }
    }
  }

  const std::size_t want_titles = g.has_ablation(AblationMode::NoTitle) ? 0 : 1;
  if (titles != want_titles)
    report.add("expected " + std::to_string(want_titles) + " title node(s), found " +
               std::to_string(titles));
  const std::size_t want_dims = g.has_ablation(AblationMode::NoEval) ? 0 : kDimensions.size();
  if (dim_nodes != want_dims || dims_seen.size() != want_dims)
    report.add("expected " + std::to_string(want_dims) + " distinct dimension node(s), found " +
               std::to_string(dim_nodes));

  std::set<std::tuple<NodeId, NodeId, std::size_t>> seen;
  for (std::size_t k = 0; k < g.edges().size(); ++k) {
    const Edge& e = g.edges()[k];
    const std::string where = "edge " + std::to_string(k);
    if (e.src >= nodes.size() || e.dst >= nodes.size()) {
      report.add(where + ": endpoint out of range");
      continue;
    }
    if (homogeneous) {
      if (e.relation != RelationType::Connected || e.inverse)
        report.add(where + ": homogeneous graphs carry only 'connected' edges");
      continue;  // parallel connected edges are allowed
    }
    const MetaRelation m{nodes[e.src].type, e.relation, e.inverse, nodes[e.dst].type};
    if (!is_legal_meta_relation(m)) {
      report.add(where + ": illegal meta-relation (" + std::string(to_string(m.src)) + ", " +
                 (e.inverse ? "inverse " : "") + std::string(to_string(e.relation)) + ", " +
                 std::string(to_string(m.dst)) + ")");
      continue;
    }
    const auto grp = group_of(e.relation);
    if (grp == RelationGroup::ReviewerAuthor && g.has_ablation(AblationMode::NoRAR))
      report.add(where + ": reviewer-author edge in a no_rar graph");
    if (grp == RelationGroup::InterReviewer && g.has_ablation(AblationMode::NoIRR))
      report.add(where + ": inter-reviewer edge in a no_irr graph");
    if (e.relation == RelationType::ReviewedBy) {
      const Node& op = nodes[e.inverse ? e.dst : e.src];
      const Node& dim = nodes[e.inverse ? e.src : e.dst];
      if (op.dimension && dimension_from_name(dim.text) != op.dimension)
        report.add(where + ": reviewed_by points at the wrong dimension");
    }
    if (!seen.insert({e.src, e.dst, relation_ordinal(e.relation, e.inverse)}).second)
      report.add(where + ": duplicate edge");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationResult {
  DebateGraph graph;
  /// old node id -> new node id (nullopt when the node was removed).
  std::vector<std::optional<NodeId>> id_map;
};

inline AblationResult apply_ablation(const DebateGraph& g, AblationMode mode) {
  std::vector<bool> keep_node(g.size(), true);
  for (const Node& n : g.nodes()) {
    if (mode == AblationMode::NoTitle && n.type == NodeType::Title) keep_node[n.id] = false;
    if (mode == AblationMode::NoEval && n.type == NodeType::EvaluationDimension)
      keep_node[n.id] = false;
  }

  AblationResult out;
  out.id_map.assign(g.size(), std::nullopt);
  std::vector<Node> nodes;
  for (const Node& n : g.nodes()) {
    if (!keep_node[n.id]) continue;
    Node copy = n;
    copy.id = static_cast<NodeId>(nodes.size());
    out.id_map[n.id] = copy.id;
    nodes.push_back(std::move(copy));
  }
  if (nodes.empty())
    throw Error(ErrorKind::EmptyGraph,
                "ablation '" + std::string(to_string(mode)) + "' removes every node of " + g.graph_id());

  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) {
    if (e.src >= g.size() || e.dst >= g.size()) continue;
    if (!keep_node[e.src] || !keep_node[e.dst]) continue;
    const auto grp = group_of(e.relation);
    if (mode == AblationMode::NoRAR && grp == RelationGroup::ReviewerAuthor) continue;
    if (mode == AblationMode::NoIRR && grp == RelationGroup::InterReviewer) continue;
    Edge copy{*out.id_map[e.src], *out.id_map[e.dst], e.relation, e.inverse};
    if (mode == AblationMode::Homogeneous) {
      copy.relation = RelationType::Connected;
      copy.inverse = false;
    }
    edges.push_back(copy);
  }

  auto ablations = g.ablations();
  if (mode != AblationMode::Full) ablations.push_back(mode);
  out.graph = DebateGraph(g.graph_id(), std::move(nodes), std::move(edges), g.label(),
                          std::move(ablations));
  return out;
}

// ---------------------------------------------------------------------------
// Graph file (JSON)

inline Json to_json(const DebateGraph& g) {
  Json j;
  j["graph_id"] = g.graph_id();
  j["label"] = g.label() ? Json(std::string(to_string(*g.label()))) : Json(nullptr);
  if (!g.ablations().empty()) {
    Json list = Json::array();
    for (auto m : g.ablations()) list.push_back(std::string(to_string(m)));
    j["ablations"] = list;
  }
  Json nodes = Json::array();
  for (const Node& n : g.nodes()) {
    nodes.push_back({
        {"id", n.id},
        {"type", std::string(to_string(n.type))},
        {"text", n.text},
        {"speaker", n.speaker ? Json(std::string(to_string(*n.speaker))) : Json(nullptr)},
        {"dimension", n.dimension ? Json(std::string(to_string(*n.dimension))) : Json(nullptr)},
    });
  }
  j["nodes"] = std::move(nodes);
  Json edges = Json::array();
  for (const Edge& e : g.edges()) {
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"relation", std::string(to_string(e.relation))},
                     {"inverse", e.inverse}});
  }
  j["edges"] = std::move(edges);
  return j;
}

namespace detail {

template <typename T>
T require_enum(const std::optional<T>& v, const Json& raw, std::string_view what) {
  if (!v) throw Error(ErrorKind::BadGraphFile, "unknown " + std::string(what) + ": " + raw.dump());
  return *v;
}

inline std::string require_string(const Json& j, std::string_view key) {
  auto it = j.find(std::string(key));
  if (it == j.end() || !it->is_string())
    throw Error(ErrorKind::BadGraphFile, "missing string field '" + std::string(key) + "'");
  return it->get<std::string>();
}

}  // namespace detail

inline DebateGraph graph_from_json(const Json& j) {
  try {
    if (!j.is_object()) throw Error(ErrorKind::BadGraphFile, "graph file is not a JSON object");
    std::optional<Decision> label;
    if (j.contains("label") && !j.at("label").is_null())
      label = detail::require_enum(parse_decision(j.at("label").get<std::string>()), j.at("label"),
                                   "label");
    std::vector<AblationMode> ablations;
    if (j.contains("ablations"))
      for (const auto& a : j.at("ablations"))
        ablations.push_back(detail::require_enum(parse_ablation(a.get<std::string>()), a, "ablation"));

    std::vector<Node> nodes;
    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<NodeId>();
      n.type = detail::require_enum(parse_node_type(detail::require_string(jn, "type")), jn.at("type"),
                                    "node type");
      n.text = detail::require_string(jn, "text");
      if (jn.contains("speaker") && !jn.at("speaker").is_null())
        n.speaker = detail::require_enum(parse_role(jn.at("speaker").get<std::string>()),
                                         jn.at("speaker"), "speaker");
      if (jn.contains("dimension") && !jn.at("dimension").is_null())
        n.dimension = detail::require_enum(parse_dimension(jn.at("dimension").get<std::string>()),
                                           jn.at("dimension"), "dimension");
      nodes.push_back(std::move(n));
    }
    std::vector<Edge> edges;
    for (const auto& je : j.at("edges")) {
      Edge e;
      e.src = je.at("src").get<NodeId>();
      e.dst = je.at("dst").get<NodeId>();
      e.relation = detail::require_enum(parse_relation(detail::require_string(je, "relation")),
                                        je.at("relation"), "relation");
      e.inverse = je.value("inverse", false);
      edges.push_back(e);
    }
    return DebateGraph(detail::require_string(j, "graph_id"), std::move(nodes), std::move(edges),
                       label, std::move(ablations));
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadGraphFile, ex.what());
  }
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

inline DebateGraph read_graph_file(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& ex) {
    throw Error(ErrorKind::BadGraphFile, path.string() + ": " + ex.what());
  }
  return graph_from_json(j);
}

inline void write_graph_file(const std::filesystem::path& path, const DebateGraph& g) {
  write_text_file(path, to_json(g).dump(2) + "\n");
}

}  // namespace rvg
