#pragma once

// Dataset manifests, run configuration and the stage commands behind the
// command-line tool. Each cmd_* returns a process exit code; library errors
// are mapped by exit_code_for().

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reviewgraph/embeddings.hpp"
#include "reviewgraph/extraction.hpp"
#include "reviewgraph/graph.hpp"
#include "reviewgraph/hgt.hpp"
#include "reviewgraph/http_client.hpp"
#include "reviewgraph/numerics.hpp"
#include "reviewgraph/orchestration.hpp"
#include "reviewgraph/synthetic.hpp"
#include "reviewgraph/training.hpp"

namespace rvg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Exit codes

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitEndpoint = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitGradcheck = 5,
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::BadConfig:
      return kExitUsage;
    case ErrorKind::EndpointError:
    case ErrorKind::EmptyCompletion:
    case ErrorKind::ExtractionFailed:
    case ErrorKind::ClassificationFailed:
      return kExitEndpoint;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NonFiniteGradient:
      return kExitNumeric;
    case ErrorKind::GradcheckFailed:
      return kExitGradcheck;
    default:
      return kExitData;
  }
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { Train, Val, Test };

inline constexpr std::array<std::pair<Split, std::string_view>, 3> kSplitNames = {{
    {Split::Train, "train"},
    {Split::Val, "val"},
    {Split::Test, "test"},
}};

inline std::string_view to_string(Split s) { return detail::name_of(kSplitNames, s); }
inline std::optional<Split> parse_split(std::string_view s) { return detail::lookup(kSplitNames, s); }

enum class Artifact { Paper, Transcript, Triples, Dimensions, Graph, Embeddings };

struct ArtifactPaths {
  std::optional<std::string> paper;
  std::optional<std::string> transcript;
  std::optional<std::string> triples;
  std::optional<std::string> dimensions;
  std::optional<std::string> graph;
  std::optional<std::string> embeddings;

  const std::optional<std::string>& get(Artifact a) const {
    switch (a) {
      case Artifact::Paper: return paper;
      case Artifact::Transcript: return transcript;
      case Artifact::Triples: return triples;
      case Artifact::Dimensions: return dimensions;
      case Artifact::Graph: return graph;
      case Artifact::Embeddings: return embeddings;
    }
    return paper;
  }
  std::optional<std::string>& get(Artifact a) {
    return const_cast<std::optional<std::string>&>(static_cast<const ArtifactPaths&>(*this).get(a));
  }
};

inline constexpr std::array<std::pair<Artifact, std::string_view>, 6> kArtifactKeys = {{
    {Artifact::Paper, "paper"},
    {Artifact::Transcript, "transcript"},
    {Artifact::Triples, "triples"},
    {Artifact::Dimensions, "dimensions"},
    {Artifact::Graph, "graph"},
    {Artifact::Embeddings, "embeddings"},
}};

struct ManifestRecord {
  std::string paper_id;
  Split split = Split::Train;
  Decision label = Decision::Accept;
  std::optional<std::string> title;
  ArtifactPaths paths;
};

inline Json to_json(const ManifestRecord& r) {
  Json paths = Json::object();
  for (const auto& [a, key] : kArtifactKeys)
    if (const auto& p = r.paths.get(a)) paths[std::string(key)] = *p;
  Json j{{"paper_id", r.paper_id},
         {"split", std::string(to_string(r.split))},
         {"label", std::string(to_string(r.label))},
         {"paths", paths}};
  if (r.title) j["title"] = *r.title;
  return j;
}

/// JSON lines, one record per paper. Paths inside records are relative to
/// base_dir unless absolute; absent paths fall back to the default layout
/// (see artifact_path).
struct DatasetManifest {
  fs::path base_dir;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(Split s) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
  }
};

inline DatasetManifest parse_manifest(std::string_view text, fs::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  std::set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& why) {
    return Error(ErrorKind::BadGraphFile, "manifest line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw bad("not a JSON object");
    ManifestRecord r;
    try {
      r.paper_id = j.at("paper_id").get<std::string>();
      if (r.paper_id.empty()) throw bad("empty paper_id");
      if (!j.contains("label")) throw bad(r.paper_id + " has no label");
      const auto label = parse_decision(j.at("label").get<std::string>());
      if (!label) throw bad(r.paper_id + ": label must be accept or reject");
      r.label = *label;
      const auto split = parse_split(j.at("split").get<std::string>());
      if (!split) throw bad(r.paper_id + ": split must be train, val or test");
      r.split = *split;
      if (j.contains("title")) r.title = j["title"].get<std::string>();
      if (j.contains("paths")) {
        for (const auto& [a, key] : kArtifactKeys)
          if (j["paths"].contains(key)) r.paths.get(a) = j["paths"][std::string(key)].get<std::string>();
      }
    } catch (const Json::exception& ex) {
      throw bad(ex.what());
    }
    if (!ids.insert(r.paper_id).second) throw bad("duplicate paper_id " + r.paper_id);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw Error(ErrorKind::BadGraphFile, "manifest has no records");
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::Usage, "manifest not found: " + path.string());
  return parse_manifest(read_text_file(path), path.parent_path());
}

/// Where a record's artifact lives. Graphs built under an ablation go to a
/// per-mode directory so they never overwrite the full graphs; a graph path
/// given in the manifest names the full graph.
inline fs::path artifact_path(const DatasetManifest& m, const ManifestRecord& r, Artifact a,
                              AblationMode mode = AblationMode::Full) {
  const auto& p = r.paths.get(a);
  if (p && (a != Artifact::Graph || mode == AblationMode::Full)) {
    const fs::path given(*p);
    return given.is_absolute() ? given : m.base_dir / given;
  }
  const std::string& id = r.paper_id;
  switch (a) {
    case Artifact::Paper: return m.base_dir / "papers" / (id + ".json");
    case Artifact::Transcript: return m.base_dir / "transcripts" / (id + ".json");
    case Artifact::Triples: return m.base_dir / "triples" / (id + ".json");
    case Artifact::Dimensions: return m.base_dir / "dimensions" / (id + ".jsonl");
    case Artifact::Graph:
      if (mode == AblationMode::Full) return m.base_dir / "graphs" / (id + ".json");
      return m.base_dir / "graphs" / std::string(to_string(mode)) / (id + ".json");
    case Artifact::Embeddings: return m.base_dir / "embeddings.jsonl";
  }
  return m.base_dir;
}

// ---------------------------------------------------------------------------
// Run configuration

/// The finite-difference check runs on a narrow copy of the model: central
/// differences cost two forward passes per scalar parameter.
struct GradcheckConfig {
  std::size_t nodes = 10;
  std::size_t hidden_dim = 8;
  std::size_t num_heads = 2;
  std::size_t input_dim = 6;
  std::size_t ffn_hidden = 8;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

struct RunPaths {
  std::optional<fs::path> manifest;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> history;
  std::optional<fs::path> report;
  std::optional<fs::path> ablation_report;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AblationMode ablation = AblationMode::Full;
  EndpointConfig endpoint;
  Prompts prompts;
  GradcheckConfig gradcheck;
  RunPaths paths;
  std::string client = "http";  // or "mock"
  bool meta_review = true;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;

  /// One seed for parameter init, shuffling, the mock client and gradcheck.
  void apply_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    train.seed = s;
  }

  void validate() const {
    model.validate();
    train.validate();
    endpoint.validate();
    if (client != "http" && client != "mock") throw Error(ErrorKind::BadConfig, "client must be http or mock");
    if (jobs == 0) throw Error(ErrorKind::BadConfig, "jobs must be at least 1");
    if (gradcheck.nodes < 6) throw Error(ErrorKind::BadConfig, "gradcheck needs at least 6 nodes");
    if (!(gradcheck.eps > 0) || !(gradcheck.tolerance > 0))
      throw Error(ErrorKind::BadConfig, "gradcheck eps and tolerance must be positive");
  }
};

inline Json to_json(const GradcheckConfig& g) {
  return Json{{"nodes", g.nodes},           {"hidden_dim", g.hidden_dim}, {"num_heads", g.num_heads},
              {"input_dim", g.input_dim},   {"ffn_hidden", g.ffn_hidden}, {"eps", g.eps},
              {"tolerance", g.tolerance}};
}

inline Json to_json(const RunConfig& c) {
  Json paths = Json::object();
  auto put = [&](const char* key, const std::optional<fs::path>& p) {
    if (p) paths[key] = p->string();
  };
  put("manifest", c.paths.manifest);
  put("checkpoint", c.paths.checkpoint);
  put("history", c.paths.history);
  put("report", c.paths.report);
  put("ablation_report", c.paths.ablation_report);
  return Json{{"client", c.client},
              {"seed", c.seed},
              {"jobs", c.jobs},
              {"ablation", std::string(to_string(c.ablation))},
              {"meta_review", c.meta_review},
              {"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"endpoint", to_json(c.endpoint)},
              {"prompts", to_json(c.prompts)},
              {"gradcheck", to_json(c.gradcheck)},
              {"paths", paths}};
}

/// Missing keys keep their defaults; unknown top-level keys are rejected.
/// Relative paths are resolved against base_dir. A top-level "seed"
/// overrides the seeds inside "model" and "train".
inline RunConfig run_config_from_json(const Json& j, const fs::path& base_dir = {}) {
  static const std::set<std::string> kKeys = {"client", "seed",     "jobs",     "ablation",  "meta_review", "model",
                                              "train",  "endpoint", "prompts",  "gradcheck", "paths"};
  if (!j.is_object()) throw Error(ErrorKind::BadConfig, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kKeys.count(key)) throw Error(ErrorKind::BadConfig, "unknown config key '" + key + "'");
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("endpoint")) c.endpoint = endpoint_config_from_json(j["endpoint"]);
    if (j.contains("prompts")) c.prompts = prompts_from_json(j["prompts"]);
    c.client = j.value("client", c.client);
    c.meta_review = j.value("meta_review", c.meta_review);
    c.jobs = j.value("jobs", c.jobs);
    if (j.contains("ablation")) {
      const auto mode = parse_ablation(j["ablation"].get<std::string>());
      if (!mode) throw Error(ErrorKind::BadConfig, "unknown ablation mode " + j["ablation"].dump());
      c.ablation = *mode;
    }
    if (j.contains("gradcheck")) {
      const Json& g = j["gradcheck"];
      c.gradcheck.nodes = g.value("nodes", c.gradcheck.nodes);
      c.gradcheck.hidden_dim = g.value("hidden_dim", c.gradcheck.hidden_dim);
      c.gradcheck.num_heads = g.value("num_heads", c.gradcheck.num_heads);
      c.gradcheck.input_dim = g.value("input_dim", c.gradcheck.input_dim);
      c.gradcheck.ffn_hidden = g.value("ffn_hidden", c.gradcheck.ffn_hidden);
      c.gradcheck.eps = g.value("eps", c.gradcheck.eps);
      c.gradcheck.tolerance = g.value("tolerance", c.gradcheck.tolerance);
    }
    if (j.contains("paths")) {
      const Json& p = j["paths"];
      auto get = [&](const char* key, std::optional<fs::path>& dst) {
        if (!p.contains(key)) return;
        const fs::path v(p[key].get<std::string>());
        dst = v.is_absolute() || base_dir.empty() ? v : base_dir / v;
      };
      get("manifest", c.paths.manifest);
      get("checkpoint", c.paths.checkpoint);
      get("history", c.paths.history);
      get("report", c.paths.report);
      get("ablation_report", c.paths.ablation_report);
    }
    if (j.contains("seed")) c.apply_seed(j["seed"].get<std::uint64_t>());
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadConfig, std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::Usage, "config not found: " + path.string());
  const Json j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::BadConfig, path.string() + " is not valid JSON");
  return run_config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Command context

struct Context {
  RunConfig config;
  bool force = false;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  /// Injected client; when null one is built from the config on first use.
  std::shared_ptr<ChatClient> client;

  ChatClient& chat() {
    if (!client) {
      if (config.client == "mock") {
        MockOptions o;
        o.seed = config.seed;
        o.embedding_dim = config.model.input_dim;
        client = std::make_shared<MockClient>(o);
      } else {
        client = std::make_shared<HttpChatClient>(config.endpoint);
      }
    }
    return *client;
  }

  RetryPolicy retry() const {
    RetryPolicy p = RetryPolicy::from(config.endpoint);
    if (config.client == "mock") p.sleep = nullptr;
    return p;
  }

  std::size_t jobs() const { return std::max<std::size_t>(1, std::min(config.jobs, config.endpoint.max_concurrency)); }

  DatasetManifest manifest() const {
    if (!config.paths.manifest) throw Error(ErrorKind::Usage, "no manifest given (--manifest or paths.manifest)");
    return load_manifest(*config.paths.manifest);
  }

  fs::path output_path(const std::optional<fs::path>& configured, const DatasetManifest& m,
                       const std::string& fallback) const {
    return configured ? *configured : m.base_dir / fallback;
  }
};

/// Re-raises an error with the paper id in front, keeping its kind.
template <typename F>
auto for_paper(const std::string& paper_id, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.find(paper_id) != std::string::npos) throw;
    throw Error(e.kind(), paper_id + ": " + what);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::BadGraphFile, paper_id + ": " + e.what());
  }
}

inline std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

inline std::string paper_title(const DatasetManifest& m, const ManifestRecord& r) {
  const fs::path p = artifact_path(m, r, Artifact::Paper);
  if (fs::exists(p)) {
    const Json j = Json::parse(read_text_file(p), nullptr, false);
    if (j.is_object() && j.contains("title") && j["title"].is_string()) return j["title"].get<std::string>();
  }
  return r.title.value_or(r.paper_id);
}

inline TripleBatch read_triples(const DatasetManifest& m, const ManifestRecord& r) {
  return parse_triple_batch(read_text_file(artifact_path(m, r, Artifact::Triples)), r.paper_id);
}

inline std::vector<DimensionAssignment> read_dimensions(const DatasetManifest& m, const ManifestRecord& r) {
  return dimension_assignments_from_jsonl(read_text_file(artifact_path(m, r, Artifact::Dimensions)));
}

inline DebateGraph build_record_graph(const Context& ctx, const DatasetManifest& m, const ManifestRecord& r,
                                      AblationMode mode) {
  BuildOptions o;
  o.inverse_edges = ctx.config.model.use_inverse_edges;
  o.ablation = mode;
  o.label = r.label;
  DebateGraph g = build_graph(paper_title(m, r), read_triples(m, r), read_dimensions(m, r), o);
  return DebateGraph(r.paper_id, g.nodes(), g.edges(), g.label(), g.ablations());
}

struct StageCounts {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

/// Runs `work` for every record whose output is missing (or all with
/// force), up to jobs at a time. Outputs are written by `work` itself, so a
/// failure part-way keeps everything finished before it.
template <typename F>
StageCounts run_stage(Context& ctx, const DatasetManifest& m, Artifact output, F&& work) {
  std::vector<const ManifestRecord*> todo;
  StageCounts counts;
  for (const auto& r : m.records) {
    if (!ctx.force && fs::exists(artifact_path(m, r, output))) {
      ++counts.skipped;
      continue;
    }
    todo.push_back(&r);
  }
  fan_out<int>(todo.size(), ctx.jobs(), [&](std::size_t i) {
    for_paper(todo[i]->paper_id, [&] { work(*todo[i]); });
    return 0;
  });
  counts.written = todo.size();
  return counts;
}

inline void report_stage(Context& ctx, const char* name, const StageCounts& c) {
  *ctx.out << name << ": " << c.written << " written, " << c.skipped << " skipped\n";
}

// ---------------------------------------------------------------------------
// Stage commands

inline int cmd_simulate(Context& ctx) {
  const auto m = ctx.manifest();
  ChatClient& client = ctx.chat();
  const auto policy = ctx.retry();
  const auto counts = run_stage(ctx, m, Artifact::Transcript, [&](const ManifestRecord& r) {
    const Json j = Json::parse(read_text_file(artifact_path(m, r, Artifact::Paper)));
    const PaperInput paper = paper_from_json(j, r.paper_id);
    if (paper.paper_id != r.paper_id)
      throw Error(ErrorKind::BadGraphFile, "paper file names " + paper.paper_id);
    const Transcript t = simulate_debate(paper, client, ctx.config.prompts, policy, ctx.config.meta_review);
    write_text_file(artifact_path(m, r, Artifact::Transcript), to_json(t).dump(2) + "\n");
  });
  report_stage(ctx, "simulate", counts);
  return kExitOk;
}

inline int cmd_extract(Context& ctx) {
  const auto m = ctx.manifest();
  ChatClient& client = ctx.chat();
  const auto policy = ctx.retry();
  const auto counts = run_stage(ctx, m, Artifact::Triples, [&](const ManifestRecord& r) {
    const Transcript t = transcript_from_json(Json::parse(read_text_file(artifact_path(m, r, Artifact::Transcript))));
    const TripleBatch batch = extract_triples(t, client, policy);
    for (const auto& bad : batch.malformed)
      *ctx.err << r.paper_id << ": dropped " << to_string(bad.group) << "[" << bad.index << "]: " << bad.reason << "\n";
    write_text_file(artifact_path(m, r, Artifact::Triples), batch_to_json(batch).dump(2) + "\n");
  });
  report_stage(ctx, "extract", counts);
  return kExitOk;
}

inline int cmd_classify(Context& ctx) {
  const auto m = ctx.manifest();
  ChatClient& client = ctx.chat();
  const auto policy = ctx.retry();
  const auto counts = run_stage(ctx, m, Artifact::Dimensions, [&](const ManifestRecord& r) {
    const auto dims = classify_dimensions(read_triples(m, r), client, 1, policy);
    write_text_file(artifact_path(m, r, Artifact::Dimensions), dimension_assignments_to_jsonl(dims));
  });
  report_stage(ctx, "classify", counts);
  return kExitOk;
}

/// Embeds every node text of every paper into the (shared) embedding
/// files. Texts already cached cost no request.
inline int cmd_embed(Context& ctx) {
  const auto m = ctx.manifest();
  std::map<fs::path, std::vector<std::string>> texts_by_store;
  for (const auto& r : m.records) {
    const DebateGraph g = for_paper(r.paper_id, [&] { return build_record_graph(ctx, m, r, AblationMode::Full); });
    auto& texts = texts_by_store[artifact_path(m, r, Artifact::Embeddings)];
    for (auto& t : node_texts(g)) texts.push_back(std::move(t));
  }
  ChatClient& client = ctx.chat();
  std::size_t requested = 0, cached = 0;
  for (auto& [path, texts] : texts_by_store) {
    EmbeddingStore store = !ctx.force && fs::exists(path) ? EmbeddingStore::load(path) : EmbeddingStore{};
    const std::size_t before = store.size();
    embed_texts(texts, client, store, ctx.jobs(), ctx.retry());
    if (store.dim() != ctx.config.model.input_dim)
      throw Error(ErrorKind::DimMismatch, path.string() + " holds " + std::to_string(store.dim()) +
                                              "-dim vectors, model.input_dim is " +
                                              std::to_string(ctx.config.model.input_dim));
    requested += store.size() - before;
    cached += before;
    store.save(path);
  }
  *ctx.out << "embed: " << requested << " new vectors, " << cached << " cached\n";
  return kExitOk;
}

/// Builds, validates and writes the graph of every paper under the
/// configured ablation. Failing papers are listed together.
inline int cmd_build_graph(Context& ctx) {
  const auto m = ctx.manifest();
  const AblationMode mode = ctx.config.ablation;
  std::vector<std::string> failures;
  StageCounts counts;
  for (const auto& r : m.records) {
    const fs::path out = artifact_path(m, r, Artifact::Graph, mode);
    if (!ctx.force && fs::exists(out)) {
      ++counts.skipped;
      continue;
    }
    try {
      const DebateGraph g = build_record_graph(ctx, m, r, mode);
      const ValidationReport report = validate_graph(g);
      if (!report.ok) {
        std::string why = r.paper_id + ": invalid graph";
        for (const auto& v : report.violations) why += "\n    " + v;
        failures.push_back(why);
        continue;
      }
      write_graph_file(out, g);
      ++counts.written;
    } catch (const Error& e) {
      if (exit_code_for(e.kind()) != kExitData) throw;
      failures.push_back(r.paper_id + ": " + e.what());
    } catch (const Json::exception& e) {
      failures.push_back(r.paper_id + ": " + e.what());
    }
  }
  report_stage(ctx, "build-graph", counts);
  if (!failures.empty()) {
    for (const auto& f : failures) *ctx.err << "error: " << f << "\n";
    *ctx.err << failures.size() << " paper(s) failed\n";
    return kExitData;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Loading samples

class StoreCache {
 public:
  const EmbeddingStore& get(const fs::path& path) {
    auto it = stores_.find(path);
    if (it == stores_.end()) it = stores_.emplace(path, EmbeddingStore::load(path)).first;
    return it->second;
  }

 private:
  std::map<fs::path, EmbeddingStore> stores_;
};

struct LoadedSplit {
  std::vector<std::string> ids;
  std::vector<Sample> samples;
};

/// Graph for `mode`: one built under that mode if present, else the full
/// graph with the ablation applied here.
inline DebateGraph load_record_graph(const DatasetManifest& m, const ManifestRecord& r, AblationMode mode) {
  fs::path path = artifact_path(m, r, Artifact::Graph, mode);
  if (!fs::exists(path)) path = artifact_path(m, r, Artifact::Graph, AblationMode::Full);
  DebateGraph g = read_graph_file(path);
  if (mode != AblationMode::Full && !g.has_ablation(mode)) g = apply_ablation(g, mode).graph;
  if (g.label() && *g.label() != r.label)
    throw Error(ErrorKind::BadGraphFile, "graph label " + std::string(to_string(*g.label())) +
                                             " disagrees with manifest label " + std::string(to_string(r.label)));
  return g;
}

inline LoadedSplit load_split(const DatasetManifest& m, Split split, AblationMode mode, StoreCache& stores) {
  LoadedSplit out;
  for (const ManifestRecord* r : m.split(split)) {
    for_paper(r->paper_id, [&] {
      DebateGraph g = load_record_graph(m, *r, mode);
      NodeEmbeddings rows = node_embeddings(g, stores.get(artifact_path(m, *r, Artifact::Embeddings)));
      out.ids.push_back(r->paper_id);
      out.samples.push_back({std::move(g), std::move(rows), r->label});
    });
  }
  return out;
}

inline ModelConfig model_for(ModelConfig base, AblationMode mode) {
  base.homogeneous = mode == AblationMode::Homogeneous;
  return base;
}

inline void require_training_splits(const DatasetManifest& m) {
  if (m.split(Split::Train).empty()) throw Error(ErrorKind::Usage, "manifest has no train split");
  if (m.split(Split::Val).empty()) throw Error(ErrorKind::Usage, "manifest has no val split");
}

inline void check_input_dim(const ModelConfig& c, const std::vector<Sample>& samples) {
  for (const auto& s : samples)
    for (const auto& row : s.embeddings)
      if (row.size() != c.input_dim)
        throw Error(ErrorKind::DimMismatch, s.graph.graph_id() + ": embedding width " + std::to_string(row.size()) +
                                                " but model.input_dim is " + std::to_string(c.input_dim));
}

// ---------------------------------------------------------------------------
// Training and evaluation

struct TrainOptions {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> history;
};

inline std::string train_summary(const TrainResult& r) {
  return "best epoch " + std::to_string(r.best.epoch) + " | best val macro-F1 " + pct(r.best.best_val_macro_f1) +
         " | epochs run " + std::to_string(r.history.size());
}

inline int cmd_train(Context& ctx, const TrainOptions& opt = {}) {
  const auto m = ctx.manifest();
  require_training_splits(m);
  const AblationMode mode = ctx.config.ablation;
  const ModelConfig model = model_for(ctx.config.model, mode);
  StoreCache stores;
  const auto train_split = load_split(m, Split::Train, mode, stores);
  const auto val_split = load_split(m, Split::Val, mode, stores);
  check_input_dim(model, train_split.samples);
  check_input_dim(model, val_split.samples);

  const TrainResult result = train(train_split.samples, val_split.samples, model, ctx.config.train,
                                   [&](const EpochRecord& e) {
                                     *ctx.err << "epoch " << e.epoch << " loss " << e.train_loss << " train acc "
                                              << pct(e.train_accuracy) << " val f1 " << pct(e.val.macro_f1)
                                              << (e.improved ? " *" : "") << "\n";
                                   });
  const fs::path ckpt = opt.checkpoint ? *opt.checkpoint : ctx.output_path(ctx.config.paths.checkpoint, m, "model.rvgc");
  const fs::path hist = opt.history ? *opt.history : ctx.output_path(ctx.config.paths.history, m, "history.jsonl");
  save_checkpoint(result.best, ckpt);
  write_text_file(hist, history_to_jsonl(result.history));
  *ctx.out << train_summary(result) << "\n";
  return kExitOk;
}

struct EvaluateOptions {
  Split split = Split::Test;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> output;
  std::optional<fs::path> compare;
};

/// Per-paper correctness from another run: either an evaluate report (its
/// "per_paper" object) or a bare {paper_id: 0/1} object.
inline std::map<std::string, double> read_correctness(const fs::path& path) {
  const Json j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::BadGraphFile, path.string() + " is not a JSON object");
  const Json& table = j.contains("per_paper") ? j["per_paper"] : j;
  std::map<std::string, double> out;
  for (const auto& [id, v] : table.items()) {
    if (v.is_boolean()) out[id] = v.get<bool>() ? 1.0 : 0.0;
    else if (v.is_number()) out[id] = v.get<double>();
    else throw Error(ErrorKind::BadGraphFile, path.string() + ": entry for " + id + " is not 0/1");
  }
  return out;
}

inline int cmd_evaluate(Context& ctx, const EvaluateOptions& opt = {}) {
  const auto m = ctx.manifest();
  const fs::path ckpt_path =
      opt.checkpoint ? *opt.checkpoint : ctx.output_path(ctx.config.paths.checkpoint, m, "model.rvgc");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const AblationMode mode = ctx.config.ablation;
  if (ckpt.params.config.homogeneous != (mode == AblationMode::Homogeneous))
    throw Error(ErrorKind::Usage, "checkpoint and --ablation disagree on the homogeneous ablation");
  if (m.split(opt.split).empty())
    throw Error(ErrorKind::EmptySplit, "manifest has no " + std::string(to_string(opt.split)) + " split");
  StoreCache stores;
  const auto loaded = load_split(m, opt.split, mode, stores);
  check_input_dim(ckpt.params.config, loaded.samples);

  const auto preds = predict_labels(loaded.samples, ckpt.params);
  std::vector<Decision> golds;
  for (const auto& s : loaded.samples) golds.push_back(s.label);
  EvalReport report = evaluate(preds, golds);

  Json per_paper = Json::object(), predictions = Json::object();
  std::vector<double> ours;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double ok = preds[i] == golds[i] ? 1.0 : 0.0;
    per_paper[loaded.ids[i]] = static_cast<int>(ok);
    predictions[loaded.ids[i]] = std::string(to_string(preds[i]));
    ours.push_back(ok);
  }
  if (opt.compare) {
    const auto theirs_by_id = read_correctness(*opt.compare);
    std::vector<double> theirs;
    for (const auto& id : loaded.ids) {
      auto it = theirs_by_id.find(id);
      if (it == theirs_by_id.end())
        throw Error(ErrorKind::BadGraphFile, opt.compare->string() + " has no entry for " + id);
      theirs.push_back(it->second);
    }
    report.t_test = welch_t_test(ours, theirs);
  }

  *ctx.out << nlohmann::ordered_json{{"acc", report.accuracy}, {"p", report.macro_precision}, {"r", report.macro_recall},
                   {"f1", report.macro_f1}}
                  .dump()
           << "\n";
  *ctx.out << "Acc " << pct(report.accuracy) << " | P " << pct(report.macro_precision) << " | R "
           << pct(report.macro_recall) << " | F1 " << pct(report.macro_f1) << "\n";
  if (report.t_test) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "welch t=%.4f df=%.2f p=%.4f\n", report.t_test->t, report.t_test->df,
                  report.t_test->p);
    *ctx.out << buf;
  }

  Json file = to_json(report);
  file["split"] = std::string(to_string(opt.split));
  file["ablation"] = std::string(to_string(mode));
  file["per_paper"] = per_paper;
  file["predictions"] = predictions;
  const fs::path out = opt.output ? *opt.output
                                  : ctx.output_path(ctx.config.paths.report, m,
                                                    "report_" + std::string(to_string(opt.split)) + ".json");
  write_text_file(out, file.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Ablation table

struct AblationRow {
  AblationMode mode = AblationMode::Full;
  EvalReport report;
  std::size_t best_epoch = 0;
};

struct AblationData {
  std::vector<Sample> train, val, test;
};

/// Trains and evaluates each mode from full-graph samples with the same
/// configs and seeds. Embedding rows follow the ablation's id map.
inline std::vector<AblationRow> run_ablation(const AblationData& full, const ModelConfig& model,
                                             const TrainConfig& train_config,
                                             const std::vector<AblationMode>& modes = {kAblationModes.begin(),
                                                                                       kAblationModes.end()},
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  auto ablate = [](const std::vector<Sample>& in, AblationMode mode) {
    std::vector<Sample> out;
    out.reserve(in.size());
    for (const auto& s : in) {
      AblationResult a = apply_ablation(s.graph, mode);
      out.push_back({std::move(a.graph), remap_embeddings(s.embeddings, a.id_map), s.label});
    }
    return out;
  };
  std::vector<AblationRow> rows;
  for (AblationMode mode : modes) {
    const auto tr = ablate(full.train, mode);
    const auto va = ablate(full.val, mode);
    const auto te = ablate(full.test, mode);
    const TrainResult r = train(tr, va, model_for(model, mode), train_config);
    AblationRow row{mode, evaluate_samples(te, r.best.params), r.best.epoch};
    if (on_row) on_row(row);
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string out = "| Mode | Acc | P | R | F1 |\n|---|---|---|---|---|\n";
  for (const auto& r : rows)
    out += "| " + std::string(to_string(r.mode)) + " | " + pct(r.report.accuracy) + " | " +
           pct(r.report.macro_precision) + " | " + pct(r.report.macro_recall) + " | " + pct(r.report.macro_f1) + " |\n";
  return out;
}

inline Json ablation_json(const std::vector<AblationRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json row = to_json(r.report);
    row["mode"] = std::string(to_string(r.mode));
    row["best_epoch"] = r.best_epoch;
    out.push_back(row);
  }
  return out;
}

struct AblateOptions {
  std::optional<fs::path> output;
  bool json = false;  // JSON instead of Markdown on stdout
};

/// Scores the test split, or val when the manifest has no test papers.
inline int cmd_ablate(Context& ctx, const AblateOptions& opt = {}) {
  const auto m = ctx.manifest();
  require_training_splits(m);
  StoreCache stores;
  AblationData data;
  data.train = load_split(m, Split::Train, AblationMode::Full, stores).samples;
  data.val = load_split(m, Split::Val, AblationMode::Full, stores).samples;
  const bool has_test = !m.split(Split::Test).empty();
  data.test = has_test ? load_split(m, Split::Test, AblationMode::Full, stores).samples : data.val;
  if (!has_test) *ctx.err << "no test split; scoring the val split\n";
  check_input_dim(ctx.config.model, data.train);

  const auto rows = run_ablation(data, ctx.config.model, ctx.config.train, {kAblationModes.begin(), kAblationModes.end()},
                                 [&](const AblationRow& r) {
                                   *ctx.err << to_string(r.mode) << ": f1 " << pct(r.report.macro_f1) << "\n";
                                 });
  const Json j = ablation_json(rows);
  *ctx.out << (opt.json ? j.dump(2) + "\n" : ablation_markdown(rows));
  const fs::path out = opt.output ? *opt.output : ctx.output_path(ctx.config.paths.ablation_report, m, "ablation.json");
  write_text_file(out, j.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckOptions {
  /// Negative control: perturbs the reverse-pass gradient of this tensor.
  std::optional<std::string> corrupt_tensor;
};

struct GradcheckReport {
  num::GradCheckResult result;
  double seconds = 0.0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
};

/// Full-loss check on a seeded random debate graph. The model keeps the
/// configured layer count, edge and scaling options and ablation but takes
/// its widths from the gradcheck section.
inline GradcheckReport run_gradcheck(const RunConfig& cfg, const GradcheckOptions& opt = {}) {
  ModelConfig c = model_for(cfg.model, cfg.ablation);
  c.hidden_dim = cfg.gradcheck.hidden_dim;
  c.num_heads = cfg.gradcheck.num_heads;
  c.input_dim = cfg.gradcheck.input_dim;
  c.ffn_hidden = cfg.gradcheck.ffn_hidden;
  c.validate();

  std::mt19937_64 rng(cfg.seed);
  HgtParams params = init_params(c, cfg.seed);
  // Move the skip weights and priors off their initial constants so their
  // gradients are exercised away from the symmetric point.
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : params.store)
    if (name.ends_with(".mu") || name.ends_with(".lambda") || name.starts_with("head.b"))
      for (auto& v : t.mutable_data()) v = u(rng);

  RandomGraphOptions go;
  go.inverse_edges = c.use_inverse_edges;
  DebateGraph g = random_debate_graph(rng, cfg.gradcheck.nodes, go);
  if (cfg.ablation != AblationMode::Full) g = apply_ablation(g, cfg.ablation).graph;
  const NodeEmbeddings emb = random_embeddings(rng, g.size(), c.input_dim);
  const std::size_t label = std::uniform_int_distribution<std::size_t>(0, 1)(rng);

  std::function<void(num::ParamStore&)> corrupt;
  if (opt.corrupt_tensor) {
    if (!params.store.contains(*opt.corrupt_tensor))
      throw Error(ErrorKind::Usage, "no parameter named " + *opt.corrupt_tensor);
    corrupt = [&](num::ParamStore& store) {
      auto grad = store.get(*opt.corrupt_tensor).mutable_grad();
      for (auto& v : grad) v = 1.5 * v + 0.1;
    };
  }

  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.result = num::grad_check(
      [&](const num::ParamStore&) { return num::cross_entropy(forward(g, emb, params, false).probabilities, label); },
      params.store, cfg.gradcheck.eps, corrupt);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.nodes = g.size();
  report.edges = g.edges().size();
  return report;
}

inline int cmd_gradcheck(Context& ctx, const GradcheckOptions& opt = {}) {
  const auto r = run_gradcheck(ctx.config, opt);
  char buf[256];
  std::snprintf(buf, sizeof buf, "max relative error %.3e over %zu entries (%zu nodes, %zu edges, %.2f s)\n",
                r.result.max_rel_error, r.result.entries_checked, r.nodes, r.edges, r.seconds);
  *ctx.out << buf;
  std::snprintf(buf, sizeof buf, "worst tensor %s[%zu]: analytic %.9e numeric %.9e\n", r.result.worst_tensor.c_str(),
                r.result.worst_index, r.result.worst_analytic, r.result.worst_numeric);
  *ctx.out << buf;
  if (!(r.result.max_rel_error < ctx.config.gradcheck.tolerance)) {
    *ctx.err << "error: gradcheck failed, worst tensor " << r.result.worst_tensor << "\n";
    return kExitGradcheck;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

struct SynthesizeOptions {
  fs::path out_dir;
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 50;
  double stance = 0.6;
};

/// Writes paper, triple and dimension files plus manifest.jsonl for a
/// synthetic corpus labelled by the accept/reject majority of
/// reviewer-author relations. Splits follow corpus order.
inline int cmd_synthesize(Context& ctx, const SynthesizeOptions& opt) {
  if (opt.out_dir.empty()) throw Error(ErrorKind::Usage, "synthesize needs an output directory");
  if (opt.train == 0 || opt.val == 0) throw Error(ErrorKind::Usage, "train and val counts must be positive");
  if (!(opt.stance >= 0.0 && opt.stance < 1.0)) throw Error(ErrorKind::Usage, "stance must lie in [0, 1)");
  SyntheticOptions so;
  so.stance = opt.stance;
  const auto papers = synthetic_corpus(ctx.config.seed, opt.train + opt.val + opt.test, so);
  DatasetManifest m;
  m.base_dir = opt.out_dir;
  for (std::size_t i = 0; i < papers.size(); ++i) {
    const auto& p = papers[i];
    ManifestRecord r;
    r.paper_id = p.paper_id;
    r.split = i < opt.train ? Split::Train : i < opt.train + opt.val ? Split::Val : Split::Test;
    r.label = p.label;
    write_text_file(artifact_path(m, r, Artifact::Paper), to_json(PaperInput{p.paper_id, p.title, p.body, {}}).dump(2) + "\n");
    write_text_file(artifact_path(m, r, Artifact::Triples), batch_to_json(p.batch).dump(2) + "\n");
    write_text_file(artifact_path(m, r, Artifact::Dimensions), dimension_assignments_to_jsonl(p.dimensions));
    m.records.push_back(std::move(r));
  }
  write_text_file(opt.out_dir / "manifest.jsonl", m.to_jsonl());
  *ctx.out << "synthesize: " << papers.size() << " papers in " << opt.out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Runs a command, printing any library error and returning its exit code.
template <typename F>
int run_guarded(Context& ctx, F&& command) {
  try {
    return command();
  } catch (const Error& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const Json::exception& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    *ctx.err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace rvg
