// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is non-zero if any ran and failed.

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dense_oracle.hpp"
#include "reviewgraph/pipeline.hpp"
#include "sample_support.hpp"
#include "test_support.hpp"

using namespace rvg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int run_cli(const std::string& args, std::string* output = nullptr) {
  const auto log = fs::temp_directory_path() / ("rvg_accept_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = std::string(RVG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_text_file(log);
  fs::remove(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ModelConfig small_config(bool inverse = true, bool homogeneous = false,
                         AttentionScale scale = AttentionScale::SqrtD) {
  ModelConfig c;
  c.hidden_dim = 16;
  c.num_heads = 4;
  c.input_dim = 12;
  c.ffn_hidden = 16;
  c.use_inverse_edges = inverse;
  c.homogeneous = homogeneous;
  c.attention_scale = scale;
  return c;
}

void jitter_priors(HgtParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& [name, t] : p.store)
    if (name.ends_with(".mu") || name.ends_with(".lambda") || name.starts_with("head.b"))
      for (auto& v : t.mutable_data()) v = u(rng);
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  std::string out;
  const int code = run_cli("--seed 0 gradcheck", &out);
  const double secs = seconds_since(t0);
  double err = -1;
  const auto pos = out.find("max relative error ");
  if (pos != std::string::npos) err = std::stod(out.substr(pos + 19));
  const auto worst = out.find("worst tensor ");
  const std::string tensor =
      worst == std::string::npos ? "?" : out.substr(worst + 13, out.find('[', worst) - worst - 13);
  return {code == 0 && err >= 0 && err < 1e-4 && secs < 10.0,
          fmt("max rel error %.2e (worst %s), exit %d, %.1f s", err, tensor.c_str(), code, secs)};
}

Outcome dense_oracle() {
  std::mt19937_64 rng(2002);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool inverse = trial % 2 == 0, homogeneous = trial % 5 == 4;
    const auto scale = trial % 3 == 0 ? AttentionScale::SqrtDh : AttentionScale::SqrtD;
    const ModelConfig c = small_config(inverse, homogeneous, scale);
    HgtParams p = init_params(c, 3000 + trial);
    jitter_priors(p, rng);
    DebateGraph g = random_debate_graph(rng, 6 + trial % 7);
    if (homogeneous) g = apply_ablation(g, AblationMode::Homogeneous).graph;
    const NodeEmbeddings emb = random_embeddings(rng, g.size(), c.input_dim);
    const auto dense = oracle::dense_forward(g, emb, p);
    const auto probs = predict(g, emb, p).first;
    for (std::size_t k = 0; k < 2; ++k) worst = std::max(worst, std::abs(probs[k] - dense.probabilities[k]));
  }
  return {worst <= 1e-10, fmt("50 graphs (6-12 nodes), max |p - p_dense| = %.2e", worst)};
}

Outcome attention_normalization() {
  std::mt19937_64 rng(3003);
  double worst = 0;
  std::size_t isolated = 0, passthrough_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelConfig c = small_config(trial % 2 == 0, false);
    HgtParams p = init_params(c, trial);
    jitter_priors(p, rng);
    DebateGraph g = random_debate_graph(rng, 5 + trial % 12);
    if (trial % 10 == 0) {
      auto nodes = g.nodes();
      nodes.push_back({static_cast<NodeId>(nodes.size()), NodeType::AuthorOpinion, "unanswered", AgentRole::Author,
                       std::nullopt});
      g = DebateGraph(g.graph_id(), nodes, g.edges());
    }
    const auto [probs, trace] = predict(g, random_embeddings(rng, g.size(), c.input_dim), p);
    std::vector<bool> has_in(g.size(), false);
    for (std::size_t e = 0; e < trace.edges.size(); ++e) has_in[trace.edges.dst[e]] = true;
    for (std::size_t l = 0; l < trace.attention.size(); ++l) {
      std::vector<std::vector<double>> total(g.size(), std::vector<double>(c.num_heads, 0.0));
      for (std::size_t e = 0; e < trace.edges.size(); ++e)
        for (std::size_t i = 0; i < c.num_heads; ++i) total[trace.edges.dst[e]][i] += trace.attention[l][e][i];
      for (std::size_t v = 0; v < g.size(); ++v) {
        if (has_in[v]) {
          for (double s : total[v]) worst = std::max(worst, std::abs(s - 1.0));
          continue;
        }
        isolated += l == 0;
        for (std::size_t j = 0; j < c.hidden_dim; ++j)
          passthrough_failures += trace.layers[l + 1][v * c.hidden_dim + j] != trace.layers[l][v * c.hidden_dim + j];
      }
    }
  }
  return {worst <= 1e-12 && isolated > 0 && passthrough_failures == 0,
          fmt("1000 graphs, max |sum - 1| = %.2e; %zu isolated nodes, %zu passthrough mismatches", worst, isolated,
              passthrough_failures)};
}

Outcome permutation_invariance() {
  std::mt19937_64 rng(4004);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const ModelConfig c = small_config(trial % 2 == 0, trial % 7 == 6);
    HgtParams p = init_params(c, 600 + trial);
    jitter_priors(p, rng);
    DebateGraph g = random_debate_graph(rng, 6 + trial % 10);
    if (c.homogeneous) g = apply_ablation(g, AblationMode::Homogeneous).graph;
    const NodeEmbeddings emb = random_embeddings(rng, g.size(), c.input_dim);
    std::vector<NodeId> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Node> nodes(g.size());
    NodeEmbeddings rows(g.size());
    for (NodeId old = 0; old < g.size(); ++old) {
      Node n = g.node(old);
      n.id = perm[old];
      nodes[perm[old]] = n;
      rows[perm[old]] = emb[old];
    }
    std::vector<Edge> edges;
    for (const Edge& e : g.edges()) edges.push_back({perm[e.src], perm[e.dst], e.relation, e.inverse});
    std::reverse(edges.begin(), edges.end());
    const DebateGraph h(g.graph_id(), nodes, edges, g.label(), g.ablations());
    const auto a = predict(g, emb, p).first, b = predict(h, rows, p).first;
    worst = std::max({worst, std::abs(a[0] - b[0]), std::abs(a[1] - b[1])});
  }
  return {worst <= 1e-9, fmt("100 graphs, max |y - y_perm| = %.2e", worst)};
}

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto papers = synthetic_corpus(11, 32);
  const ModelConfig mc;
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 100;
  const auto samples = rvg::testing::synthetic_samples(papers, mc.input_dim);
  const auto r = train(samples, samples, mc, tc);
  double best_train = 0;
  std::size_t first_perfect = 0;
  for (const auto& e : r.history) {
    if (e.train_accuracy == 1.0 && first_perfect == 0) first_perfect = e.epoch;
    best_train = std::max(best_train, e.train_accuracy);
  }
  const double secs = seconds_since(t0);
  return {best_train == 1.0 && r.history.size() <= 100 && secs < 60.0,
          fmt("32 graphs, train accuracy %.3f (first 1.0 at epoch %zu of %zu), %.1f s", best_train, first_perfect,
              r.history.size(), secs)};
}

Outcome ablation_signal() {
  const auto t0 = Clock::now();
  SyntheticOptions so;
  so.stance = 0.6;
  const auto papers = synthetic_corpus(2024, 300, so);
  const std::vector<SyntheticPaper> tr(papers.begin(), papers.begin() + 200), va(papers.begin() + 200,
                                                                                  papers.begin() + 250),
      te(papers.begin() + 250, papers.end());
  const ModelConfig mc;
  AblationData data{rvg::testing::synthetic_samples(tr, mc.input_dim),
                    rvg::testing::synthetic_samples(va, mc.input_dim),
                    rvg::testing::synthetic_samples(te, mc.input_dim)};
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 40;
  tc.early_stop_patience = 8;
  const auto rows = run_ablation(data, mc, tc, {AblationMode::Full, AblationMode::NoRAR});
  const double full = rows[0].report.macro_f1, norar = rows[1].report.macro_f1;
  return {full >= 0.95 && norar <= 0.65,
          fmt("200/50/50, test macro-F1 full %.4f (>= 0.95), no_rar %.4f (<= 0.65), %.0f s", full, norar,
              seconds_since(t0))};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(7007);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<Decision> preds, golds;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(rng() % 2 ? Decision::Accept : Decision::Reject);
      golds.push_back(rng() % 2 ? Decision::Accept : Decision::Reject);
    }
    std::size_t cm[2][2] = {{0, 0}, {0, 0}};  // [gold][pred]
    for (std::size_t i = 0; i < n; ++i) ++cm[class_index(golds[i])][class_index(preds[i])];
    double p = 0, r = 0, f = 0;
    for (int c = 0; c < 2; ++c) {
      const double tp = cm[c][c], fp = cm[1 - c][c], fn = cm[c][1 - c];
      const double pc = tp + fp > 0 ? tp / (tp + fp) : 0, rc = tp + fn > 0 ? tp / (tp + fn) : 0;
      p += pc / 2;
      r += rc / 2;
      f += (pc + rc > 0 ? 2 * pc * rc / (pc + rc) : 0) / 2;
    }
    const auto rep = evaluate(preds, golds);
    mismatches += rep.accuracy != static_cast<double>(cm[0][0] + cm[1][1]) / static_cast<double>(n) ||
                  rep.macro_precision != p || rep.macro_recall != r || rep.macro_f1 != f;
  }
  std::vector<Decision> golds(10, Decision::Accept);
  std::fill(golds.begin() + 5, golds.end(), Decision::Reject);
  const auto hand = evaluate(std::vector<Decision>(10, Decision::Accept), golds);
  const bool hand_ok = fmt("%.4f", hand.accuracy) == "0.5000" && fmt("%.4f", hand.macro_f1) == "0.3333";
  return {mismatches == 0 && hand_ok,
          fmt("200 sets, %zu mismatches; balanced all-accept Acc %.4f F1 %.4f", mismatches, hand.accuracy,
              hand.macro_f1)};
}

Outcome sample_fidelity() {
  const auto rejected = parse_triple_batch(rvg::testing::sample_triples_json(true), "rejected");
  const auto accepted = parse_triple_batch(rvg::testing::sample_triples_json(false), "accepted");
  BuildOptions o;
  o.label = Decision::Reject;
  std::vector<DimensionAssignment> dims;
  for (const auto& [who, text] : distinct_reviewer_opinions(rejected))
    dims.push_back({who, text, MockClient::keyword_dimension(text)});
  const DebateGraph g = build_graph("Sample paper", rejected, dims, o);
  const auto report = validate_graph(g);
  std::size_t rar = 0, irr = 0;
  for (const Edge& e : g.edges()) {
    if (e.inverse) continue;
    rar += group_of(e.relation) == RelationGroup::ReviewerAuthor;
    irr += group_of(e.relation) == RelationGroup::InterReviewer;
  }
  const bool counts = rejected.reviewer_author.size() == 7 && rejected.inter_reviewer.size() == 8 &&
                      accepted.reviewer_author.size() == 7 && accepted.inter_reviewer.size() == 7 &&
                      rejected.malformed.empty() && accepted.malformed.empty();
  return {counts && report.ok && rar == 7 && irr == 8,
          fmt("rejected %zu+%zu, accepted %zu+%zu triplets; graph valid=%s with %zu RAR + %zu IRR edges",
              rejected.reviewer_author.size(), rejected.inter_reviewer.size(), accepted.reviewer_author.size(),
              accepted.inter_reviewer.size(), report.ok ? "yes" : "no", rar, irr)};
}

Outcome pipeline_determinism() {
  const auto t0 = Clock::now();
  rvg::testing::TempDir root("determinism");
  std::vector<std::map<std::string, std::string>> runs;
  std::string failure;
  for (const char* tag : {"a", "b"}) {
    const fs::path dir = root / tag;
    fs::create_directories(dir);
    write_text_file(dir / "cfg.json", R"({"client":"mock","train":{"max_epochs":2,"early_stop_patience":2}})");
    std::string out;
    if (run_cli("--seed 7 synthesize --out " + dir.string() + " --train 4 --val 2 --test 2", &out) != 0) {
      failure = out;
      break;
    }
    fs::remove_all(dir / "triples");
    fs::remove_all(dir / "dimensions");
    const std::string base = "--config " + (dir / "cfg.json").string() + " --manifest " +
                             (dir / "manifest.jsonl").string() + " --seed 7 ";
    for (const char* cmd : {"simulate", "extract", "classify", "embed", "build-graph", "train"}) {
      if (run_cli(base + cmd, &out) != 0) {
        failure = std::string(cmd) + ": " + out;
        break;
      }
    }
    if (!failure.empty()) break;
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir / "graphs"))
      files["graphs/" + e.path().filename().string()] = read_text_file(e.path());
    files["history.jsonl"] = read_text_file(dir / "history.jsonl");
    runs.push_back(std::move(files));
  }
  const double secs = seconds_since(t0);
  if (!failure.empty()) return {false, "pipeline failed: " + failure};
  std::size_t history_lines = std::count(runs[0]["history.jsonl"].begin(), runs[0]["history.jsonl"].end(), '\n');
  return {runs[0] == runs[1] && runs[0].size() == 9 && history_lines == 2 && secs < 120.0,
          fmt("%zu graph files + history (%zu epochs) byte-identical=%s, %.1f s", runs[0].size() - 1, history_lines,
              runs[0] == runs[1] ? "yes" : "no", secs)};
}

Outcome persistence() {
  Checkpoint cp;
  cp.params = init_params(ModelConfig{}, 10010);
  std::mt19937_64 rng(10010);
  jitter_priors(cp.params, rng);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& [name, t] : cp.params.store)
    for (auto& v : t.mutable_data()) v += noise(rng);
  cp.epoch = 3;
  cp.best_val_macro_f1 = 0.75;
  rvg::testing::TempDir dir("persist");
  save_checkpoint(cp, dir / "m.rvgc");
  const Checkpoint back = load_checkpoint(dir / "m.rvgc");
  std::size_t bit_mismatches = 0, scalars = 0;
  for (const auto& [name, t] : cp.params.store) {
    const auto& u = back.params.store.get(name);
    for (std::size_t i = 0; i < t.numel(); ++i, ++scalars)
      bit_mismatches += std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])) !=
                        std::bit_cast<std::uint32_t>(static_cast<float>(u.data()[i]));
  }
  std::size_t label_changes = 0;
  for (int k = 0; k < 20; ++k) {
    const DebateGraph g = random_debate_graph(rng, 5 + rng() % 8);
    const NodeEmbeddings emb = random_embeddings(rng, g.size(), cp.params.config.input_dim);
    label_changes += decide(predict(g, emb, cp.params).first) != decide(predict(g, emb, back.params).first);
  }
  const bool again = serialize_checkpoint(back) == serialize_checkpoint(cp);
  return {bit_mismatches == 0 && label_changes == 0 && again,
          fmt("%zu fp32 scalars, %zu bit mismatches; %zu label changes on 20 graphs", scalars, bit_mismatches,
              label_changes)};
}

Outcome statistics() {
  const auto ref = welch_t_test({1, 2, 3, 4, 5}, {2, 3, 4, 5, 6});
  const auto same = welch_t_test({0, 1, 1, 0, 1}, {0, 1, 1, 0, 1});
  return {std::abs(ref.t + 1.0) < 1e-9 && std::abs(ref.p - 0.3466) <= 1e-3 && same.p == 1.0,
          fmt("reference t=%.6f df=%.3f p=%.6f; identical samples p=%.1f", ref.t, ref.df, ref.p, same.p)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"dense-oracle equivalence", dense_oracle},
      {"attention normalization", attention_normalization},
      {"permutation invariance", permutation_invariance},
      {"overfit check", overfit},
      {"ablation signal", ablation_signal},
      {"metrics oracle", metrics_oracle},
      {"sample transcript fidelity", sample_fidelity},
      {"pipeline determinism", pipeline_determinism},
      {"persistence", persistence},
      {"statistics", statistics},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
