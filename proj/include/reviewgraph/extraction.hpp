#pragma once

// Parsing of triple-extraction and dimension-classification replies, and
// instantiation of debate graphs from them.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reviewgraph/error.hpp"
#include "reviewgraph/graph.hpp"

namespace rvg {

enum class TripleGroup { ReviewerAuthor, InterReviewer };

inline std::string_view to_string(TripleGroup g) {
  return g == TripleGroup::ReviewerAuthor ? "Reviewer_Author_Relations" : "Inter_Reviewer_Relations";
}

struct OpinionTriplet {
  AgentRole speaker_a = AgentRole::Reviewer1;
  std::string text_a;
  AgentRole speaker_b = AgentRole::Author;
  std::string text_b;
  std::string relation_label;  // raw, as emitted by the model
  TripleGroup group = TripleGroup::ReviewerAuthor;

  bool operator==(const OpinionTriplet&) const = default;
};

struct MalformedElement {
  TripleGroup group;
  std::size_t index;
  std::string raw;
  std::string reason;
};

struct TripleBatch {
  std::string graph_id;
  std::vector<OpinionTriplet> reviewer_author;
  std::vector<OpinionTriplet> inter_reviewer;
  std::vector<MalformedElement> malformed;

  std::size_t element_count() const {
    return reviewer_author.size() + inter_reviewer.size() + malformed.size();
  }
  double malformed_ratio() const {
    const std::size_t n = element_count();
    return n == 0 ? 0.0 : static_cast<double>(malformed.size()) / static_cast<double>(n);
  }
};

/// Opinion identity: speaker plus whitespace-normalized text.
using OpinionKey = std::pair<AgentRole, std::string>;

struct DimensionAssignment {
  AgentRole speaker = AgentRole::Reviewer1;
  std::string text;
  Dimension dimension = Dimension::MethodologicalNovelty;

  OpinionKey key() const;
  bool operator==(const DimensionAssignment&) const = default;
};

// ---------------------------------------------------------------------------
// Text helpers

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Collapses every whitespace run to one space and trims both ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

inline OpinionKey DimensionAssignment::key() const { return {speaker, normalize_whitespace(text)}; }

namespace detail {

inline constexpr std::array<std::string_view, 7> kQuoteMarks = {
    "'", "\"", "`", "\xE2\x80\x98", "\xE2\x80\x99", "\xE2\x80\x9C", "\xE2\x80\x9D"};

inline std::string strip_one_quote(std::string s) {
  for (auto q : kQuoteMarks) {
    if (s.size() >= q.size() && s.compare(0, q.size(), q) == 0) {
      s.erase(0, q.size());
      break;
    }
  }
  for (auto q : kQuoteMarks) {
    if (s.size() >= q.size() && s.compare(s.size() - q.size(), q.size(), q) == 0) {
      s.erase(s.size() - q.size());
      break;
    }
  }
  return s;
}

inline bool ends_with_quote(std::string_view s) {
  for (auto q : kQuoteMarks)
    if (s.size() >= q.size() && s.substr(s.size() - q.size()) == q) return true;
  return false;
}

inline bool iequals_at(std::string_view s, std::size_t pos, std::string_view word) {
  if (pos + word.size() > s.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[pos + i])) != word[i]) return false;
  return true;
}

inline std::size_t skip_markup(std::string_view s, std::size_t pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' || s[pos] == '*' ||
                            s[pos] == '\r'))
    ++pos;
  return pos;
}

struct Anchor {
  AgentRole role;
  std::size_t end;  // one past the ':'
};

/// Matches a speaker tag such as "Reviewer 2:", "**Reviewer #1**:" or
/// "Author:" starting exactly at pos.
inline std::optional<Anchor> match_anchor(std::string_view s, std::size_t pos) {
  std::optional<AgentRole> role;
  std::size_t p = pos;
  if (iequals_at(s, p, "reviewer")) {
    p += 8;
    while (p < s.size() && (s[p] == ' ' || s[p] == '#' || s[p] == '_')) ++p;
    std::size_t digits_begin = p;
    while (p < s.size() && std::isdigit(static_cast<unsigned char>(s[p]))) ++p;
    if (p == digits_begin || p - digits_begin > 2) return std::nullopt;
    const int number = std::stoi(std::string(s.substr(digits_begin, p - digits_begin)));
    if (number < 1 || number > 3) return std::nullopt;
    role = kReviewers[static_cast<std::size_t>(number - 1)];
  } else if (iequals_at(s, p, "author")) {
    p += 6;
    if (p < s.size() && (s[p] == 's' || s[p] == 'S')) ++p;
    role = AgentRole::Author;
  } else {
    return std::nullopt;
  }
  p = skip_markup(s, p);
  if (p >= s.size() || s[p] != ':') return std::nullopt;
  return Anchor{*role, p + 1};
}

inline std::string clean_label(std::string_view raw) {
  std::string s = trim(raw);
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    const std::string before = s;
    s = trim(strip_one_quote(s));
    while (!s.empty() && (s.front() == '*' || s.front() == '[')) s.erase(s.begin());
    while (!s.empty() && (s.back() == '*' || s.back() == ']' || s.back() == '.')) s.pop_back();
    s = trim(s);
    changed = s != before;
  }
  return s;
}

}  // namespace detail

/// Renders a speaker the way extraction prompts and replies spell it.
inline std::string speaker_tag(AgentRole r) {
  switch (r) {
    case AgentRole::Reviewer1: return "Reviewer 1";
    case AgentRole::Reviewer2: return "Reviewer 2";
    case AgentRole::Reviewer3: return "Reviewer 3";
    case AgentRole::Author: return "Author";
    case AgentRole::SeniorReviewer: return "Senior Reviewer";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Triple strings

/// Parses one array element `(Speaker: 'text', Speaker: 'text', Label)`.
/// Quotes are matched loosely: the two statements are separated by locating
/// the second speaker anchor, so apostrophes and commas inside a statement
/// are harmless.
inline OpinionTriplet parse_triple_string(std::string_view input, TripleGroup group) {
  auto malformed = [&](const std::string& why) {
    return Error(ErrorKind::MalformedTriple, why + " in: " + std::string(input.substr(0, 200)));
  };

  std::string s = trim(input);
  if (!s.empty() && s.front() == '(') s.erase(s.begin());
  s = trim(s);
  if (!s.empty() && s.back() == ')') s.pop_back();

  const std::size_t start = detail::skip_markup(s, 0);
  const auto first = detail::match_anchor(s, start);
  if (!first) throw malformed("expected a speaker tag at the start");

  const std::size_t last_comma = s.rfind(',');
  if (last_comma == std::string::npos || last_comma < first->end)
    throw malformed("missing relation label");
  const std::string label = detail::clean_label(std::string_view(s).substr(last_comma + 1));
  if (label.empty()) throw malformed("empty relation label");

  const std::string_view body = std::string_view(s).substr(first->end, last_comma - first->end);
  std::optional<std::pair<std::size_t, detail::Anchor>> second;
  std::optional<std::pair<std::size_t, detail::Anchor>> fallback;
  for (std::size_t p = 0; p < body.size(); ++p) {
    if (body[p] != ',') continue;
    const auto anchor = detail::match_anchor(body, detail::skip_markup(body, p + 1));
    if (!anchor) continue;
    if (detail::ends_with_quote(trim(body.substr(0, p)))) {
      second = {p, *anchor};
      break;
    }
    if (!fallback) fallback = {p, *anchor};
  }
  if (!second) second = fallback;
  if (!second) throw malformed("missing second speaker tag");

  OpinionTriplet t;
  t.group = group;
  t.speaker_a = first->role;
  t.speaker_b = second->second.role;
  t.text_a = trim(detail::strip_one_quote(trim(body.substr(0, second->first))));
  t.text_b = trim(detail::strip_one_quote(trim(body.substr(second->second.end))));
  t.relation_label = label;
  if (t.text_a.empty() || t.text_b.empty()) throw malformed("empty statement");

  if (group == TripleGroup::ReviewerAuthor) {
    if (!is_reviewer(t.speaker_a) || t.speaker_b != AgentRole::Author)
      throw Error(ErrorKind::WrongGroupSpeaker,
                  "reviewer-author triple must pair a reviewer with the author: " +
                      speaker_tag(t.speaker_a) + " / " + speaker_tag(t.speaker_b));
  } else if (!is_reviewer(t.speaker_a) || !is_reviewer(t.speaker_b)) {
    throw Error(ErrorKind::WrongGroupSpeaker, "inter-reviewer triple must pair two reviewers: " +
                                                  speaker_tag(t.speaker_a) + " / " +
                                                  speaker_tag(t.speaker_b));
  }
  return t;
}

/// Inverse of parse_triple_string using straight single quotes.
inline std::string format_triple_string(const OpinionTriplet& t) {
  return "(" + speaker_tag(t.speaker_a) + ": '" + t.text_a + "', " + speaker_tag(t.speaker_b) +
         ": '" + t.text_b + "', " + t.relation_label + ")";
}

inline RelationType canonical_relation(std::string_view label, TripleGroup group) {
  static constexpr std::array kRar = {RelationType::Accept,     RelationType::Reject,
                                      RelationType::Clarify,    RelationType::Compromise,
                                      RelationType::Extend,     RelationType::Neutral};
  static constexpr std::array kIrr = {RelationType::Agree, RelationType::Disagree,
                                      RelationType::Complement, RelationType::Progressive,
                                      RelationType::Independent};
  const std::string key = squash_name(label);
  if (group == TripleGroup::ReviewerAuthor) {
    for (auto r : kRar)
      if (squash_name(to_string(r)) == key) return r;
  } else {
    for (auto r : kIrr)
      if (squash_name(to_string(r)) == key) return r;
  }
  throw Error(ErrorKind::UnknownRelationLabel,
              "'" + std::string(label) + "' is not a " + std::string(to_string(group)) + " label");
}

// ---------------------------------------------------------------------------
// JSON helpers for model replies

/// Longest balanced {...} span in text, honouring double-quoted strings.
inline std::optional<std::string> locate_json_object(std::string_view text) {
  std::optional<std::pair<std::size_t, std::size_t>> best;
  for (std::size_t begin = 0; begin < text.size(); ++begin) {
    if (text[begin] != '{') continue;
    if (best && begin < best->first + best->second) continue;  // nested in the best span
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = begin; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        const std::size_t len = i - begin + 1;
        if (!best || len > best->second) best = {begin, len};
        break;
      }
    }
  }
  if (!best) return std::nullopt;
  return std::string(text.substr(best->first, best->second));
}

/// Drops commas that directly precede a closing bracket or brace (outside
/// string literals), a frequent defect in model-emitted JSON.
inline std::string strip_trailing_commas(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false, escaped = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (c == ',') {
      std::size_t j = i + 1;
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j < text.size() && (text[j] == ']' || text[j] == '}')) continue;
    }
    out.push_back(c);
  }
  return out;
}

/// Parses the reply as JSON; failing that, the longest balanced object in it.
inline Json parse_lenient_json(std::string_view text) {
  Json doc = Json::parse(strip_trailing_commas(text), nullptr, false);
  if (!doc.is_discarded()) return doc;
  const auto span = locate_json_object(text);
  if (!span) throw Error(ErrorKind::NotJson, "no JSON object in reply");
  try {
    return Json::parse(strip_trailing_commas(*span));
  } catch (const Json::parse_error& ex) {
    throw Error(ErrorKind::NotJson, ex.what());
  }
}

// ---------------------------------------------------------------------------
// Triple batches

inline constexpr double kMaxMalformedRatio = 0.5;

/// Parses both relation arrays. Bad elements are skipped and reported in
/// `malformed`; the batch only fails when more than half are bad.
inline TripleBatch parse_triple_batch(std::string_view json_text, std::string graph_id) {
  const Json doc = parse_lenient_json(json_text);
  if (!doc.is_object()) throw Error(ErrorKind::NotJson, "reply is not a JSON object");

  auto find_array = [&](TripleGroup group) -> const Json& {
    const std::string want = squash_name(to_string(group));
    for (auto it = doc.begin(); it != doc.end(); ++it)
      if (squash_name(it.key()) == want && it->is_array()) return *it;
    throw Error(ErrorKind::MissingArrayKey, "missing array '" + std::string(to_string(group)) + "'");
  };

  TripleBatch batch;
  batch.graph_id = std::move(graph_id);
  for (auto group : {TripleGroup::ReviewerAuthor, TripleGroup::InterReviewer}) {
    const Json& arr = find_array(group);
    auto& dest = group == TripleGroup::ReviewerAuthor ? batch.reviewer_author : batch.inter_reviewer;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string raw = arr[i].is_string() ? arr[i].get<std::string>() : arr[i].dump();
      try {
        if (!arr[i].is_string()) throw Error(ErrorKind::MalformedTriple, "element is not a string");
        OpinionTriplet t = parse_triple_string(raw, group);
        canonical_relation(t.relation_label, group);
        dest.push_back(std::move(t));
      } catch (const Error& ex) {
        batch.malformed.push_back({group, i, raw, ex.what()});
      }
    }
  }
  if (batch.malformed_ratio() > kMaxMalformedRatio)
    throw Error(ErrorKind::TooManyMalformed,
                std::to_string(batch.malformed.size()) + " of " +
                    std::to_string(batch.element_count()) + " elements malformed in " +
                    batch.graph_id);
  return batch;
}

/// Serializes a batch back into the reply schema (only well-formed elements).
inline Json batch_to_json(const TripleBatch& batch) {
  Json rar = Json::array(), irr = Json::array();
  for (const auto& t : batch.reviewer_author) rar.push_back(format_triple_string(t));
  for (const auto& t : batch.inter_reviewer) irr.push_back(format_triple_string(t));
  return Json{{std::string(to_string(TripleGroup::ReviewerAuthor)), rar},
              {std::string(to_string(TripleGroup::InterReviewer)), irr}};
}

/// Distinct reviewer opinions of a batch in order of first appearance.
inline std::vector<OpinionKey> distinct_reviewer_opinions(const TripleBatch& batch) {
  std::vector<OpinionKey> out;
  auto add = [&](AgentRole who, const std::string& text) {
    if (!is_reviewer(who)) return;
    OpinionKey key{who, normalize_whitespace(text)};
    if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(std::move(key));
  };
  for (const auto& t : batch.reviewer_author) add(t.speaker_a, t.text_a);
  for (const auto& t : batch.inter_reviewer) {
    add(t.speaker_a, t.text_a);
    add(t.speaker_b, t.text_b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dimension classification

inline Dimension parse_dimension_reply(std::string_view reply) {
  auto located = locate_json_object(reply);
  if (!located) throw Error(ErrorKind::NotJson, "no JSON object in reply");
  const Json doc = parse_lenient_json(*located);
  auto it = doc.find("category");
  if (it == doc.end() || !it->is_string())
    throw Error(ErrorKind::UnknownCategory, "reply has no string 'category': " + doc.dump());
  const std::string category = it->get<std::string>();
  if (auto d = dimension_from_name(category)) return *d;
  throw Error(ErrorKind::UnknownCategory, "'" + category + "'");
}

inline Json to_json(const DimensionAssignment& a) {
  return Json{{"speaker", std::string(to_string(a.speaker))},
              {"text", a.text},
              {"category", std::string(to_string(a.dimension))}};
}

inline DimensionAssignment dimension_assignment_from_json(const Json& j) {
  try {
    DimensionAssignment a;
    auto role = parse_role(j.at("speaker").get<std::string>());
    if (!role) throw Error(ErrorKind::BadGraphFile, "unknown speaker " + j.at("speaker").dump());
    a.speaker = *role;
    a.text = j.at("text").get<std::string>();
    auto dim = dimension_from_name(j.at("category").get<std::string>());
    if (!dim) throw Error(ErrorKind::UnknownCategory, j.at("category").dump());
    a.dimension = *dim;
    return a;
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadGraphFile, std::string("dimension record: ") + ex.what());
  }
}

/// JSON lines, one assignment per line.
inline std::string dimension_assignments_to_jsonl(const std::vector<DimensionAssignment>& dims) {
  std::string out;
  for (const auto& d : dims) out += to_json(d).dump() + "\n";
  return out;
}

inline std::vector<DimensionAssignment> dimension_assignments_from_jsonl(std::string_view text) {
  std::vector<DimensionAssignment> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(dimension_assignment_from_json(Json::parse(line)));
    } catch (const Json::parse_error& ex) {
      throw Error(ErrorKind::NotJson, ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph instantiation

struct BuildOptions {
  bool inverse_edges = true;
  AblationMode ablation = AblationMode::Full;
  std::optional<Decision> label;
};

/// Instantiates the debate graph: title node, the four dimension nodes, one
/// node per distinct (speaker, text) opinion, the structural edges, one edge
/// per distinct triplet and, optionally, the inverse of every edge.
inline DebateGraph build_graph(const std::string& title, const TripleBatch& batch,
                               const std::vector<DimensionAssignment>& dims,
                               const BuildOptions& options = {}) {
  std::map<OpinionKey, Dimension> dim_of;
  for (const auto& a : dims) dim_of.emplace(a.key(), a.dimension);

  std::vector<std::string> orphans;
  for (const auto& key : distinct_reviewer_opinions(batch))
    if (!dim_of.count(key)) orphans.push_back(speaker_tag(key.first) + ": '" + key.second + "'");
  if (!orphans.empty()) {
    std::string msg = std::to_string(orphans.size()) + " reviewer opinion(s) without a dimension:";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw Error(ErrorKind::MissingDimensionAssignment, msg);
  }

  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::set<std::tuple<NodeId, NodeId, std::size_t>> seen;
  auto add_edge = [&](NodeId s, NodeId t, RelationType r) {
    if (!seen.insert({s, t, relation_ordinal(r, false)}).second) return;
    edges.push_back({s, t, r, false});
    if (options.inverse_edges) edges.push_back({t, s, r, true});
  };

  nodes.push_back({0, NodeType::Title, normalize_whitespace(title), std::nullopt, std::nullopt});
  std::map<Dimension, NodeId> dim_node;
  for (Dimension d : kDimensions) {
    const auto id = static_cast<NodeId>(nodes.size());
    dim_node[d] = id;
    nodes.push_back({id, NodeType::EvaluationDimension, std::string(display_name(d)), std::nullopt,
                     std::nullopt});
  }
  for (Dimension d : kDimensions) add_edge(0, dim_node[d], RelationType::HasAspect);

  std::map<OpinionKey, NodeId> opinion_node;
  std::vector<NodeId> reviewer_nodes;
  auto node_for = [&](AgentRole who, const std::string& raw) {
    OpinionKey key{who, normalize_whitespace(raw)};
    if (auto it = opinion_node.find(key); it != opinion_node.end()) return it->second;
    const auto id = static_cast<NodeId>(nodes.size());
    Node n{id, NodeType::AuthorOpinion, key.second, who, std::nullopt};
    if (is_reviewer(who)) {
      n.type = NodeType::ReviewerOpinion;
      n.dimension = dim_of.at(key);
      reviewer_nodes.push_back(id);
    }
    nodes.push_back(std::move(n));
    opinion_node.emplace(std::move(key), id);
    return id;
  };

  struct Pending {
    NodeId src, dst;
    RelationType relation;
  };
  std::vector<Pending> relational;
  for (const auto& t : batch.reviewer_author) {
    const NodeId r = node_for(t.speaker_a, t.text_a);
    const NodeId a = node_for(t.speaker_b, t.text_b);
    relational.push_back({r, a, canonical_relation(t.relation_label, TripleGroup::ReviewerAuthor)});
  }
  for (const auto& t : batch.inter_reviewer) {
    const NodeId a = node_for(t.speaker_a, t.text_a);
    const NodeId b = node_for(t.speaker_b, t.text_b);
    relational.push_back({a, b, canonical_relation(t.relation_label, TripleGroup::InterReviewer)});
  }

  for (NodeId r : reviewer_nodes) add_edge(r, dim_node[*nodes[r].dimension], RelationType::ReviewedBy);
  for (const auto& p : relational) add_edge(p.src, p.dst, p.relation);

  DebateGraph g(batch.graph_id, std::move(nodes), std::move(edges), options.label);
  if (options.ablation == AblationMode::Full) return g;
  return apply_ablation(g, options.ablation).graph;
}

}  // namespace rvg
