#pragma once

// Optimization, evaluation metrics, significance testing and checkpoints.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reviewgraph/error.hpp"
#include "reviewgraph/graph.hpp"
#include "reviewgraph/hgt.hpp"
#include "reviewgraph/numerics.hpp"

namespace rvg {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    auto bad = [](const std::string& m) { return Error(ErrorKind::BadConfig, m); };
    if (!(learning_rate > 0)) throw bad("learning_rate must be positive");
    if (batch_size == 0) throw bad("batch_size must be positive");
    if (max_epochs == 0) throw bad("max_epochs must be positive");
    if (early_stop_patience > max_epochs) throw bad("early_stop_patience exceeds max_epochs");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw bad("adam betas must lie in [0, 1)");
    if (!(epsilon > 0)) throw bad("epsilon must be positive");
  }

  bool operator==(const TrainConfig&) const = default;
};

inline Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},       {"early_stop_patience", c.early_stop_patience},
              {"beta1", c.beta1},                 {"beta2", c.beta2},
              {"epsilon", c.epsilon},             {"seed", c.seed},
              {"shuffle", c.shuffle}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    c.shuffle = j.value("shuffle", c.shuffle);
  } catch (const Json::exception& ex) {
    throw Error(ErrorKind::BadConfig, ex.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m, v;
};

/// One Adam update with bias correction; t counts steps from 1. grads[k]
/// belongs to the k-th parameter in store order. All gradients are checked
/// before any parameter moves.
inline void adam_step(num::ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                      std::size_t t, const TrainConfig& config) {
  if (t == 0) throw Error(ErrorKind::BadConfig, "adam step counter starts at 1");
  if (grads.size() != params.size())
    throw Error(ErrorKind::ShapeMismatch, "adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                              std::to_string(params.size()) + " parameters");
  std::size_t k = 0;
  for (const auto& [name, tensor] : params) {
    if (grads[k].size() != tensor.numel())
      throw Error(ErrorKind::ShapeMismatch, "adam_step: gradient of '" + name + "' has wrong size");
    for (std::size_t i = 0; i < grads[k].size(); ++i)
      if (!std::isfinite(grads[k][i]))
        throw Error(ErrorKind::NonFiniteGradient, "'" + name + "'[" + std::to_string(i) + "] = " +
                                                      std::to_string(grads[k][i]));
    ++k;
  }
  if (state.m.empty()) {
    for (const auto& [name, tensor] : params) {
      state.m.emplace_back(tensor.numel(), 0.0);
      state.v.emplace_back(tensor.numel(), 0.0);
    }
  }
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  k = 0;
  for (auto& [name, tensor] : params) {
    auto values = tensor.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1, v_hat = v[i] / c2;
      values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    ++k;
  }
}

/// Current gradient buffers of every parameter, in store order.
inline std::vector<std::vector<double>> collect_grads(const num::ParamStore& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t.grad());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<std::size_t, kNumClasses> tp{}, fp{}, fn{};
  std::size_t n = 0;
  std::optional<WelchResult> t_test;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline EvalReport evaluate(const std::vector<Decision>& preds, const std::vector<Decision>& golds) {
  if (preds.size() != golds.size())
    throw Error(ErrorKind::LengthMismatch, std::to_string(preds.size()) + " predictions for " +
                                               std::to_string(golds.size()) + " gold labels");
  if (preds.empty()) throw Error(ErrorKind::EmptySplit, "evaluate() needs at least one sample");
  EvalReport r;
  r.n = preds.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t p = class_index(preds[i]), g = class_index(golds[i]);
    if (p == g) {
      ++correct;
      ++r.tp[p];
    } else {
      ++r.fp[p];
      ++r.fn[g];
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double prec = safe_ratio(static_cast<double>(r.tp[c]), static_cast<double>(r.tp[c] + r.fp[c]));
    const double rec = safe_ratio(static_cast<double>(r.tp[c]), static_cast<double>(r.tp[c] + r.fn[c]));
    r.macro_precision += prec / kNumClasses;
    r.macro_recall += rec / kNumClasses;
    r.macro_f1 += safe_ratio(2.0 * prec * rec, prec + rec) / kNumClasses;
  }
  return r;
}

inline Json to_json(const WelchResult& w) { return Json{{"t", w.t}, {"df", w.df}, {"p", w.p}}; }

inline Json to_json(const EvalReport& r) {
  Json j{{"acc", r.accuracy}, {"p", r.macro_precision}, {"r", r.macro_recall}, {"f1", r.macro_f1},
         {"n", r.n},          {"tp", r.tp},                {"fp", r.fp},          {"fn", r.fn}};
  if (r.t_test) j["t_test"] = to_json(*r.t_test);
  return j;
}

// ---------------------------------------------------------------------------
// Welch's t-test

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300, kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided p-value of Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw Error(ErrorKind::DegenerateSample, "each sample needs at least 2 values");
  auto moments = [](const std::vector<double>& x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair(mean, ss / static_cast<double>(x.size() - 1));
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (va == 0.0 && vb == 0.0) throw Error(ErrorKind::DegenerateSample, "both samples have zero variance");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

// ---------------------------------------------------------------------------
// Samples, prediction and the training loop

struct Sample {
  DebateGraph graph;
  NodeEmbeddings embeddings;
  Decision label = Decision::Accept;
};

inline std::vector<Decision> predict_labels(const std::vector<Sample>& samples, const HgtParams& params) {
  std::vector<Decision> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(decide(forward(s.graph, s.embeddings, params, false).trace.probabilities));
  return out;
}

inline EvalReport evaluate_samples(const std::vector<Sample>& samples, const HgtParams& params) {
  std::vector<Decision> golds;
  for (const auto& s : samples) golds.push_back(s.label);
  return evaluate(predict_labels(samples, params), golds);
}

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  TrainConfig train_config;
  std::size_t epoch = 0;
  double best_val_macro_f1 = 0.0;
  HgtParams params;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  EvalReport val;
  bool improved = false;
};

inline Json to_json(const EpochRecord& r) {
  return Json{{"epoch", r.epoch},
              {"train_loss", r.train_loss},
              {"train_accuracy", r.train_accuracy},
              {"val_accuracy", r.val.accuracy},
              {"val_macro_precision", r.val.macro_precision},
              {"val_macro_recall", r.val.macro_recall},
              {"val_macro_f1", r.val.macro_f1},
              {"improved", r.improved}};
}

inline std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += to_json(r).dump() + "\n";
  return out;
}

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean cross-entropy per batch of graphs, one Adam step per batch, early
/// stopping on validation macro-F1 (earliest best epoch wins ties).
/// Parameters are initialised from model_config.seed; shuffling uses
/// train_config.seed.
inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const ModelConfig& model_config, const TrainConfig& train_config,
                         const EpochCallback& on_epoch = {}) {
  if (train_set.empty()) throw Error(ErrorKind::EmptySplit, "training split is empty");
  if (val_set.empty()) throw Error(ErrorKind::EmptySplit, "validation split is empty");
  model_config.validate();
  train_config.validate();

  HgtParams params = init_params(model_config, model_config.seed);
  AdamState adam;
  std::size_t step = 0;
  std::mt19937_64 rng(train_config.seed);

  TrainResult result;
  result.best.train_config = train_config;
  result.best.params = HgtParams{model_config, params.store.clone()};
  bool have_best = false;
  std::size_t stale = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    if (train_config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    const std::size_t n_batches = (order.size() + train_config.batch_size - 1) / train_config.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t begin = b * train_config.batch_size;
      const std::size_t end = std::min(order.size(), begin + train_config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - begin);
      params.store.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = train_set[order[k]];
        const num::Tensor probs = forward(s.graph, s.embeddings, params, false).probabilities;
        const num::Tensor loss = num::cross_entropy(probs, class_index(s.label));
        if (!std::isfinite(loss.item()))
          throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) +
                                                    ", graph " + s.graph.graph_id() + ": loss " +
                                                    std::to_string(loss.item()));
        loss_sum += loss.item();
        num::scale(loss, inv).backward();
      }
      adam_step(params.store, collect_grads(params.store), adam, ++step, train_config);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = evaluate_samples(train_set, params).accuracy;
    rec.val = evaluate_samples(val_set, params);
    if (!have_best || rec.val.macro_f1 > result.best.best_val_macro_f1) {
      have_best = true;
      rec.improved = true;
      stale = 0;
      result.best.epoch = epoch;
      result.best.best_val_macro_f1 = rec.val.macro_f1;
      result.best.params = HgtParams{model_config, params.store.clone()};
    } else {
      ++stale;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stale > train_config.early_stop_patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint file: "RVGC", u32 LE manifest length, JSON manifest, fp32 LE payload

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& cp) {
  Json manifest{{"format_version", cp.format_version},
                {"model_config", to_json(cp.params.config)},
                {"train_config", to_json(cp.train_config)},
                {"epoch", cp.epoch},
                {"best_val_macro_f1", cp.best_val_macro_f1}};
  std::string payload;
  Json tensors = Json::array();
  for (const auto& [name, t] : cp.params.store) {
    const std::size_t offset = payload.size();
    for (double v : t.data()) detail::put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"length", payload.size() - offset}});
  }
  manifest["tensors"] = tensors;
  const std::string header = manifest.dump();
  std::string out = "RVGC";
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  auto corrupt = [](const std::string& m) { return Error(ErrorKind::CorruptPayload, m); };
  if (bytes.size() < 8 || bytes.compare(0, 4, "RVGC") != 0) throw corrupt("bad magic");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t header_len = detail::get_u32(raw + 4);
  if (8 + header_len > bytes.size()) throw corrupt("manifest extends past end of file");
  Json manifest;
  try {
    manifest = Json::parse(bytes.substr(8, header_len));
  } catch (const Json::exception& ex) {
    throw corrupt(std::string("manifest: ") + ex.what());
  }
  Checkpoint cp;
  try {
    cp.format_version = manifest.at("format_version").get<int>();
    if (cp.format_version != kCheckpointVersion)
      throw Error(ErrorKind::VersionMismatch, "checkpoint format " + std::to_string(cp.format_version) +
                                                  ", reader supports " + std::to_string(kCheckpointVersion));
    const ModelConfig mc = model_config_from_json(manifest.at("model_config"));
    cp.train_config = train_config_from_json(manifest.at("train_config"));
    cp.epoch = manifest.at("epoch").get<std::size_t>();
    cp.best_val_macro_f1 = manifest.at("best_val_macro_f1").get<double>();

    cp.params = init_params(mc, 0);
    const std::size_t payload_start = 8 + header_len;
    const std::size_t payload_len = bytes.size() - payload_start;
    const Json& tensors = manifest.at("tensors");
    if (tensors.size() != cp.params.store.size())
      throw corrupt("manifest lists " + std::to_string(tensors.size()) + " tensors, model has " +
                    std::to_string(cp.params.store.size()));
    std::size_t expected_end = 0;
    for (const Json& entry : tensors) {
      const std::string name = entry.at("name").get<std::string>();
      if (!cp.params.store.contains(name)) throw corrupt("unexpected tensor '" + name + "'");
      num::Tensor& t = cp.params.store.get(name);
      const auto shape = entry.at("shape").get<num::Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t length = entry.at("length").get<std::size_t>();
      if (shape != t.shape()) throw corrupt("tensor '" + name + "' has shape " + num::shape_str(shape));
      if (length != 4 * t.numel()) throw corrupt("tensor '" + name + "' length disagrees with its shape");
      if (offset + length > payload_len) throw corrupt("tensor '" + name + "' extends past end of payload");
      auto values = t.mutable_data();
      for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = std::bit_cast<float>(detail::get_u32(raw + payload_start + offset + 4 * i));
      expected_end = std::max(expected_end, offset + length);
    }
    if (expected_end != payload_len) throw corrupt("payload has " + std::to_string(payload_len - expected_end) + " trailing bytes");
  } catch (const Json::exception& ex) {
    throw corrupt(std::string("manifest: ") + ex.what());
  }
  return cp;
}

inline void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(cp));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path));
}

}  // namespace rvg
