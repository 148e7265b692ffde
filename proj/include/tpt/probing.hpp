#pragma once

// Decoder-representation probing and role-discreteness analysis.
//
// The decoder representation at input position i is aligned with the
// token the decoder emits at that position: feeding [BOS, y_0 .. y_{T-2}]
// puts the prediction of y_p at position p, so position p carries label
// p over the target tokens. Extraction runs the frozen model teacher
// forced and stores detached vectors only.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/adafactor.hpp"
#include "tpt/checkpoint.hpp"
#include "tpt/errors.hpp"
#include "tpt/model.hpp"
#include "tpt/tensor.hpp"
#include "tpt/trainer.hpp"
#include "tpt/vocab.hpp"

namespace tpt {

enum class RepSite { kRole, kFiller, kTpr, kFinal };

inline std::string to_string(RepSite s) {
  switch (s) {
    case RepSite::kRole: return "role";
    case RepSite::kFiller: return "filler";
    case RepSite::kTpr: return "tpr";
    case RepSite::kFinal: return "final";
  }
  return "?";
}

inline RepSite rep_site_from_string(const std::string& s) {
  if (s == "role") return RepSite::kRole;
  if (s == "filler") return RepSite::kFiller;
  if (s == "tpr") return RepSite::kTpr;
  if (s == "final") return RepSite::kFinal;
  throw ConfigError("site: expected role, filler, tpr or final, got '" + s + "'");
}

/// One probing example over id sequences. Token tasks carry one label per
/// target token; span tasks carry one label and half-open spans into the
/// target sequence. The source defaults to the target sequence itself
/// (plus EOS) when no separate document is given.
struct EncodedProbeExample {
  std::vector<int> source_ids;   // encoder input, EOS-terminated
  std::vector<int> target_ids;   // decoder tokens, no EOS
  bool token_task = true;
  std::vector<std::string> labels;  // token task
  std::array<int, 2> span1{0, 0}, span2{0, 0};
  bool has_span2 = false;
  std::string label;  // span task
};

template <class T>
struct ProbeRecord {
  long long example_id = 0;
  int layer = 1;  // 1-based
  RepSite site = RepSite::kFinal;
  std::array<int, 2> span1{0, 0}, span2{0, 0};
  bool has_span2 = false;
  std::string label;
  TensorT<T> reps1, reps2;  // [span_len, d_model], detached
};

// ---- probe data files ----

/// JSON-lines probe data. Token tasks: {"tokens": [...], "labels": [...]}
/// with equal lengths. Span tasks: {"tokens": [...], "span1": [i, j],
/// "span2": [i, j] | null, "label": "..."} with half-open 0-based spans.
/// Either form may add "document": "..." as the encoder-side text; the
/// token sequence itself is used otherwise.
inline std::vector<EncodedProbeExample> load_probe_data(const std::string& path,
                                                        const Vocabulary& vocab,
                                                        int max_source_len, int max_target_len) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open probe data: " + path);
  std::vector<EncodedProbeExample> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    if (!j.contains("tokens") || !j["tokens"].is_array() || j["tokens"].empty())
      throw DataError(where + ": field 'tokens' must be a non-empty array");
    EncodedProbeExample ex;
    std::vector<std::string> tokens;
    for (const auto& t : j["tokens"]) {
      if (!t.is_string()) throw DataError(where + ": 'tokens' entries must be strings");
      tokens.push_back(t.get<std::string>());
    }
    if (static_cast<int>(tokens.size()) > max_target_len - 1)
      tokens.resize(max_target_len - 1);
    for (const auto& t : tokens) ex.target_ids.push_back(vocab.id_of(t));
    if (j.contains("document") && j["document"].is_string()) {
      ex.source_ids = encode_text(j["document"].get<std::string>(), vocab, max_source_len);
    } else {
      ex.source_ids = ex.target_ids;
      ex.source_ids.push_back(kEosId);
    }
    if (j.contains("labels")) {
      ex.token_task = true;
      if (!j["labels"].is_array())
        throw DataError(where + ": field 'labels' must be an array");
      for (const auto& l : j["labels"]) ex.labels.push_back(l.get<std::string>());
      if (j["tokens"].size() != j["labels"].size())
        throw DataError(where + ": 'tokens' and 'labels' must have equal lengths");
      ex.labels.resize(ex.target_ids.size());  // follow any truncation
    } else if (j.contains("span1") && j.contains("label")) {
      ex.token_task = false;
      auto read_span = [&](const nlohmann::json& s, const char* name) -> std::array<int, 2> {
        if (!s.is_array() || s.size() != 2)
          throw DataError(where + ": field '" + name + "' must be [start, end)");
        const int a = s[0].get<int>(), b = s[1].get<int>();
        if (a < 0 || b <= a || b > static_cast<int>(ex.target_ids.size()))
          throw DataError(where + ": field '" + name + "' is outside the token sequence");
        return {a, b};
      };
      ex.span1 = read_span(j["span1"], "span1");
      if (j.contains("span2") && !j["span2"].is_null()) {
        ex.span2 = read_span(j["span2"], "span2");
        ex.has_span2 = true;
      }
      ex.label = j["label"].get<std::string>();
    } else {
      throw DataError(where + ": expected either 'labels' or 'span1'+'label'");
    }
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("probe data has no examples: " + path);
  return out;
}

// ---- extraction ----

namespace detail {

template <class T>
TensorT<T> slice_rows(const TensorT<T>& m, int lo, int hi) {
  const int d = m.dim(1);
  auto out = TensorT<T>::zeros({hi - lo, d});
  std::copy_n(m.data().data() + static_cast<std::size_t>(lo) * d,
              static_cast<std::size_t>(hi - lo) * d, out.data().data());
  return out;
}

template <class T>
const TensorT<T>& site_tensor(const StackRecorder<T>& rec, int layer0, RepSite site,
                              BindingSite binding, Variant variant) {
  const auto& sites =
      binding == BindingSite::kDecoderSelf ? rec.decoder_self : rec.decoder_cross;
  switch (site) {
    case RepSite::kRole:
      if (variant == Variant::kBaseline)
        throw std::invalid_argument("site=role is undefined for the baseline variant");
      return sites[layer0].roles;
    case RepSite::kFiller:
      return sites[layer0].filler;
    case RepSite::kTpr:
      return sites[layer0].tpr;
    case RepSite::kFinal:
      return rec.decoder_final[layer0];
  }
  throw std::invalid_argument("unknown representation site");
}

}  // namespace detail

/// Teacher-forced extraction at (layer, site) for every example. For
/// decoder layers with two bindings the cross-attention site is used
/// unless `binding` selects the self-attention one. Layer is 1-based.
template <class T>
std::vector<ProbeRecord<T>> extract_representations(
    const ModelT<T>& model, const std::vector<EncodedProbeExample>& examples, int layer,
    RepSite site, BindingSite binding = BindingSite::kDecoderCross) {
  const auto& cfg = model.config();
  if (layer < 1 || layer > cfg.layers)
    throw std::invalid_argument("layer must be in 1.." + std::to_string(cfg.layers));
  if (binding == BindingSite::kEncoderSelf)
    throw std::invalid_argument("probing extracts decoder sites; use dec-self or dec-cross");
  if (site == RepSite::kRole && cfg.variant == Variant::kBaseline)
    throw std::invalid_argument("site=role is undefined for the baseline variant");
  NoGradGuard ng;
  std::vector<ProbeRecord<T>> out;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    if (ex.target_ids.empty()) throw DataError("probe example has no target tokens");
    std::vector<int> dec_in;
    dec_in.reserve(ex.target_ids.size());
    dec_in.push_back(kBosId);
    dec_in.insert(dec_in.end(), ex.target_ids.begin(), ex.target_ids.end() - 1);
    StackRecorder<T> rec;
    auto h = model.encode(ex.source_ids, false, nullptr, &rec);
    model.decode(h, dec_in, false, nullptr, &rec);
    const auto& reps = detail::site_tensor(rec, layer - 1, site, binding, cfg.variant);
    if (ex.token_task) {
      for (std::size_t p = 0; p < ex.target_ids.size(); ++p) {
        ProbeRecord<T> r;
        r.example_id = static_cast<long long>(e);
        r.layer = layer;
        r.site = site;
        r.span1 = {static_cast<int>(p), static_cast<int>(p) + 1};
        r.label = ex.labels[p];
        r.reps1 = detail::slice_rows(reps, static_cast<int>(p), static_cast<int>(p) + 1);
        out.push_back(std::move(r));
      }
    } else {
      ProbeRecord<T> r;
      r.example_id = static_cast<long long>(e);
      r.layer = layer;
      r.site = site;
      r.span1 = ex.span1;
      r.reps1 = detail::slice_rows(reps, ex.span1[0], ex.span1[1]);
      if (ex.has_span2) {
        r.span2 = ex.span2;
        r.has_span2 = true;
        r.reps2 = detail::slice_rows(reps, ex.span2[0], ex.span2[1]);
      }
      r.label = ex.label;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---- representation dumps (checkpoint tensor-table format) ----

template <class T>
void save_representation_dump(const std::string& path,
                              const std::vector<ProbeRecord<T>>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write representation dump: " + path);
  std::vector<std::pair<std::string, TensorT<T>>> items;
  items.reserve(records.size());
  char name[32];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    TensorT<T> joined;
    if (r.has_span2) {
      const int d = r.reps1.dim(1);
      joined = TensorT<T>::zeros({r.reps1.dim(0) + r.reps2.dim(0), d});
      std::copy_n(r.reps1.data().data(), r.reps1.numel(), joined.data().data());
      std::copy_n(r.reps2.data().data(), r.reps2.numel(),
                  joined.data().data() + r.reps1.numel());
    } else {
      joined = r.reps1;
    }
    std::snprintf(name, sizeof name, "rec%08zu", i);
    items.emplace_back(name, std::move(joined));
  }
  detail::write_tensor_table<T>(os, items);
  if (!os) throw DataError("failed while writing representation dump: " + path);
}

template <class T>
std::vector<TensorT<T>> load_representation_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open representation dump: " + path);
  std::vector<TensorT<T>> out;
  try {
    auto items = detail::read_tensor_table<T>(is);
    out.reserve(items.size());
    for (auto& [name, t] : items) out.push_back(std::move(t));
  } catch (const CheckpointError& e) {
    throw DataError(std::string("representation dump is corrupt: ") + e.what());
  }
  return out;
}

/// Rebuilds records from probe examples plus a representation dump
/// written by probe extraction over the same data, in the same order.
template <class T>
std::vector<ProbeRecord<T>> records_from_dump(const std::vector<EncodedProbeExample>& examples,
                                              const std::vector<TensorT<T>>& dump, int layer,
                                              RepSite site) {
  std::vector<ProbeRecord<T>> out;
  std::size_t idx = 0;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    if (ex.token_task) {
      for (std::size_t p = 0; p < ex.target_ids.size(); ++p) {
        if (idx >= dump.size()) throw DataError("representation dump has too few records");
        ProbeRecord<T> r;
        r.example_id = static_cast<long long>(e);
        r.layer = layer;
        r.site = site;
        r.span1 = {static_cast<int>(p), static_cast<int>(p) + 1};
        r.label = ex.labels[p];
        r.reps1 = dump[idx++];
        out.push_back(std::move(r));
      }
    } else {
      if (idx >= dump.size()) throw DataError("representation dump has too few records");
      ProbeRecord<T> r;
      r.example_id = static_cast<long long>(e);
      r.layer = layer;
      r.site = site;
      r.span1 = ex.span1;
      r.label = ex.label;
      const auto& joined = dump[idx++];
      const int n1 = ex.span1[1] - ex.span1[0];
      if (ex.has_span2) {
        const int n2 = ex.span2[1] - ex.span2[0];
        if (joined.dim(0) != n1 + n2)
          throw DataError("representation dump row count does not match spans");
        r.span2 = ex.span2;
        r.has_span2 = true;
        r.reps1 = detail::slice_rows(joined, 0, n1);
        r.reps2 = detail::slice_rows(joined, n1, n1 + n2);
      } else {
        if (joined.dim(0) != n1)
          throw DataError("representation dump row count does not match span1");
        r.reps1 = joined;
      }
      out.push_back(std::move(r));
    }
  }
  if (idx != dump.size()) throw DataError("representation dump has extra records");
  return out;
}

// ---- probe heads ----

/// Span head: width-3 convolution over the span's own vectors (zero
/// padded at the span edges), mean pool per span, concatenation of the
/// pooled spans, then a 2-layer MLP. The `linear` variant instead feeds
/// the mean-pooled raw vectors through a single linear layer.
template <class T>
class ProbeHeadT {
 public:
  ProbeHeadT(int d_model, int spans, int n_labels, bool linear, int d_probe, Rng& rng)
      : d_model_(d_model), spans_(spans), n_labels_(n_labels), linear_(linear),
        d_probe_(d_probe) {
    auto init = [&](const std::string& name, std::vector<int> shape, bool zero) {
      auto t = TensorT<T>::zeros(shape, true);
      if (!zero)
        for (auto& v : t.data()) v = static_cast<T>(rng.trunc_normal(0.05));
      return params_.add(name, t);
    };
    if (linear_) {
      init("linear.w", {spans_ * d_model_, n_labels_}, false);
      init("linear.b", {n_labels_}, true);
    } else {
      init("conv.w", {3 * d_model_, d_probe_}, false);
      init("conv.b", {d_probe_}, true);
      init("mlp.w1", {spans_ * d_probe_, d_probe_}, false);
      init("mlp.b1", {d_probe_}, true);
      init("mlp.w2", {d_probe_, n_labels_}, false);
      init("mlp.b2", {n_labels_}, true);
    }
  }

  ParameterStore<T>& parameters() { return params_; }
  int n_labels() const { return n_labels_; }
  bool linear() const { return linear_; }

  TensorT<T> logits(const ProbeRecord<T>& rec) const {
    if ((rec.has_span2 ? 2 : 1) != spans_)
      throw std::invalid_argument("probe head span count does not match record");
    std::vector<TensorT<T>> pooled;
    pooled.push_back(linear_ ? mean_rows(rec.reps1) : conv_pool(rec.reps1));
    if (rec.has_span2) pooled.push_back(linear_ ? mean_rows(rec.reps2) : conv_pool(rec.reps2));
    auto x = pooled.size() == 1 ? pooled[0] : concat_lastdim(pooled);
    if (linear_)
      return add_bias(matmul(x, params_.get("linear.w")), params_.get("linear.b"));
    auto h = relu(add_bias(matmul(x, params_.get("mlp.w1")), params_.get("mlp.b1")));
    return add_bias(matmul(h, params_.get("mlp.w2")), params_.get("mlp.b2"));
  }

 private:
  TensorT<T> mean_rows(const TensorT<T>& reps) const {
    const int n = reps.dim(0), d = reps.dim(1);
    auto avg = TensorT<T>::zeros({1, n});
    for (int i = 0; i < n; ++i) avg.data()[i] = T(1) / n;
    return matmul(avg, reps);
  }

  // rows of [rep(j-1), rep(j), rep(j+1)] with zeros outside the span
  TensorT<T> conv_pool(const TensorT<T>& reps) const {
    const int n = reps.dim(0), d = reps.dim(1);
    auto windows = TensorT<T>::zeros({n, 3 * d});
    for (int j = 0; j < n; ++j)
      for (int tap = -1; tap <= 1; ++tap) {
        const int src = j + tap;
        if (src < 0 || src >= n) continue;
        std::copy_n(reps.data().data() + static_cast<std::size_t>(src) * d, d,
                    windows.data().data() + static_cast<std::size_t>(j) * 3 * d +
                        static_cast<std::size_t>(tap + 1) * d);
      }
    auto conv = add_bias(matmul(windows, params_.get("conv.w")), params_.get("conv.b"));
    auto avg = TensorT<T>::zeros({1, n});
    for (int i = 0; i < n; ++i) avg.data()[i] = T(1) / n;
    return matmul(avg, conv);
  }

  ParameterStore<T> params_;
  int d_model_, spans_, n_labels_;
  bool linear_;
  int d_probe_;
};

// ---- probe training ----

struct ProbeTrainOptions {
  bool linear_head = false;
  int d_probe = 256;
  int epochs = 10;
  int batch_size = 16;
  int warmup = 100;
  double lr_scale = 0.1;
  double dev_fraction = 0.2;
  std::uint64_t seed = 1;
  int patience = 3;  // epochs without dev improvement before early stop
};

struct ProbeResult {
  double dev_f1 = 0.0;
  int n_labels = 0;
  long long train_records = 0;
  long long dev_records = 0;
  std::vector<std::string> label_inventory;
};

namespace detail {

/// Micro-averaged F1 over single-label predictions: aggregate TP/FP/FN
/// across classes (equals accuracy in this setting, computed honestly).
inline double micro_f1(const std::vector<int>& gold, const std::vector<int>& pred,
                       int n_labels) {
  std::vector<long long> tp(n_labels, 0), fp(n_labels, 0), fn(n_labels, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++tp[gold[i]];
    } else {
      ++fp[pred[i]];
      ++fn[gold[i]];
    }
  }
  long long tps = 0, fps = 0, fns = 0;
  for (int c = 0; c < n_labels; ++c) {
    tps += tp[c];
    fps += fp[c];
    fns += fn[c];
  }
  const double denom = 2.0 * tps + fps + fns;
  return denom > 0 ? 2.0 * tps / denom : 0.0;
}

}  // namespace detail

/// Trains a probe head on frozen representations. Records are split
/// deterministically (every k-th record held out for dev), trained with
/// Adafactor under the square-root schedule, early stopped on dev F1.
template <class T>
std::pair<ProbeResult, std::shared_ptr<ProbeHeadT<T>>> train_probe(
    const std::vector<ProbeRecord<T>>& records, const ProbeTrainOptions& opt = {}) {
  if (records.empty()) throw DataError("train_probe: no records");
  std::set<std::string> label_set;
  for (const auto& r : records) label_set.insert(r.label);
  if (label_set.size() < 2)
    throw DataError("train_probe: degenerate dataset with a single label class");
  std::vector<std::string> inventory(label_set.begin(), label_set.end());
  std::map<std::string, int> label_id;
  for (std::size_t i = 0; i < inventory.size(); ++i) label_id[inventory[i]] = static_cast<int>(i);

  const int every = std::max(2, static_cast<int>(std::lround(1.0 / opt.dev_fraction)));
  std::vector<const ProbeRecord<T>*> train, dev;
  for (std::size_t i = 0; i < records.size(); ++i)
    (i % every == static_cast<std::size_t>(every - 1) ? dev : train).push_back(&records[i]);
  if (train.empty() || dev.empty())
    throw DataError("train_probe: not enough records for a train/dev split");

  Rng rng(opt.seed);
  const int spans = records.front().has_span2 ? 2 : 1;
  const int d_model = records.front().reps1.dim(1);
  auto head = std::make_shared<ProbeHeadT<T>>(d_model, spans, static_cast<int>(inventory.size()),
                                              opt.linear_head, opt.d_probe, rng);
  AdafactorT<T> optimizer(head->parameters());

  auto evaluate = [&](const std::vector<const ProbeRecord<T>*>& split) {
    NoGradGuard ng;
    std::vector<int> gold, pred;
    gold.reserve(split.size());
    pred.reserve(split.size());
    for (const auto* r : split) {
      auto logits = head->logits(*r);
      int best = 0;
      for (int j = 1; j < head->n_labels(); ++j)
        if (logits.data()[j] > logits.data()[best]) best = j;
      pred.push_back(best);
      gold.push_back(label_id.at(r->label));
    }
    return detail::micro_f1(gold, pred, head->n_labels());
  };

  double best_dev = evaluate(dev);
  long long step = 0;
  int stale = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    // deterministic shuffle via the counter rng
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (std::size_t lo = 0; lo < order.size(); lo += opt.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + opt.batch_size);
      TensorT<T> acc;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto* r = train[order[i]];
        auto ce = cross_entropy_mean(head->logits(*r), {label_id.at(r->label)});
        acc = acc.defined() ? add(acc, ce) : ce;
      }
      auto loss = scale(acc, static_cast<T>(1.0 / (hi - lo)));
      backward(loss);
      ++step;
      optimizer.step(lr_schedule(step, opt.warmup, opt.lr_scale));
    }
    const double dev_f1 = evaluate(dev);
    if (dev_f1 > best_dev + 1e-9) {
      best_dev = dev_f1;
      stale = 0;
    } else if (++stale >= opt.patience) {
      break;
    }
  }
  ProbeResult res;
  res.dev_f1 = best_dev;
  res.n_labels = head->n_labels();
  res.train_records = static_cast<long long>(train.size());
  res.dev_records = static_cast<long long>(dev.size());
  res.label_inventory = std::move(inventory);
  return {res, head};
}

// ---- role discreteness ----

struct DiscretenessReport {
  double threshold = 0.98;
  long long total = 0;           // (token, head) pairs inspected
  long long over_threshold = 0;
  double fraction = 0.0;
  std::vector<long long> histogram = std::vector<long long>(20, 0);  // bins over [0, 1]
  long long distinct_codes = 0;  // distinct argmax head-tuples
  double code_space = 0.0;       // (N_r)^H
  long long positions = 0;       // tokens inspected
};

inline nlohmann::json to_json(const DiscretenessReport& r) {
  return {{"threshold", r.threshold},
          {"total", r.total},
          {"over_threshold", r.over_threshold},
          {"fraction", r.fraction},
          {"histogram", r.histogram},
          {"distinct_codes", r.distinct_codes},
          {"code_space", r.code_space},
          {"positions", r.positions}};
}

/// Max role-attention score census at one (layer, binding site) over a
/// corpus of teacher-forced examples. tpt-d only.
template <class T>
DiscretenessReport role_discreteness(const ModelT<T>& model,
                                     const std::vector<EncodedExample>& corpus, int layer,
                                     BindingSite site, double threshold = 0.98) {
  const auto& cfg = model.config();
  if (cfg.variant != Variant::kTptD)
    throw std::invalid_argument("role_discreteness requires the tpt-d variant");
  if (layer < 1 || layer > cfg.layers)
    throw std::invalid_argument("layer must be in 1.." + std::to_string(cfg.layers));
  NoGradGuard ng;
  DiscretenessReport report;
  report.threshold = threshold;
  report.code_space = std::pow(static_cast<double>(cfg.n_roles), cfg.heads);
  std::set<std::vector<int>> codes;
  for (const auto& ex : corpus) {
    StackRecorder<T> rec;
    auto h = model.encode(ex.source, false, nullptr, &rec);
    if (site != BindingSite::kEncoderSelf) {
      std::vector<int> dec_in;
      dec_in.push_back(kBosId);
      if (!ex.target.empty())
        dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end() - 1);
      model.decode(h, dec_in, false, nullptr, &rec);
    }
    const auto& attn = rec.site(site)[layer - 1].role_attention;  // [H, k, N_r]
    const int k = attn.dim(1), nr = attn.dim(2);
    for (int i = 0; i < k; ++i) {
      std::vector<int> code(cfg.heads);
      for (int hh = 0; hh < cfg.heads; ++hh) {
        const T* row = attn.data().data() +
                       (static_cast<std::size_t>(hh) * k + i) * nr;
        int arg = 0;
        T mx = row[0];
        for (int n = 1; n < nr; ++n)
          if (row[n] > mx) {
            mx = row[n];
            arg = n;
          }
        code[hh] = arg;
        ++report.total;
        if (static_cast<double>(mx) > threshold) ++report.over_threshold;
        int bin = static_cast<int>(static_cast<double>(mx) * report.histogram.size());
        bin = std::min<int>(bin, static_cast<int>(report.histogram.size()) - 1);
        ++report.histogram[bin];
      }
      codes.insert(std::move(code));
      ++report.positions;
    }
  }
  report.distinct_codes = static_cast<long long>(codes.size());
  report.fraction = report.total > 0
                        ? static_cast<double>(report.over_threshold) / report.total
                        : 0.0;
  return report;
}

}  // namespace tpt
