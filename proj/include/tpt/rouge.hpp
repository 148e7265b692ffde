#pragma once

// Self-contained ROUGE-1/2/L F1 scorer over the shared tokenization.
// ROUGE-n uses clipped n-gram overlap counts; ROUGE-L uses the longest
// common subsequence of the flat token sequences (summary-level, not
// sentence-split). Empty sides yield (0,0,0) with a warning flag rather
// than an error.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/text.hpp"

namespace tpt {

struct RougeTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // one side was empty
};

namespace detail {

inline double f1_of(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline std::map<std::vector<std::string>, int> ngram_counts(
    const std::vector<std::string>& tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace detail

/// Clipped n-gram overlap: precision against candidate n-gram count,
/// recall against reference n-gram count.
inline RougeTriple rouge_n(const std::vector<std::string>& candidate,
                           const std::vector<std::string>& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  RougeTriple out;
  if (candidate.empty() || reference.empty()) {
    out.degenerate = true;
    return out;
  }
  const auto cand = detail::ngram_counts(candidate, n);
  const auto ref = detail::ngram_counts(reference, n);
  long long cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  if (cand_total == 0 || ref_total == 0) {
    out.degenerate = true;
    return out;
  }
  out.precision = static_cast<double>(overlap) / cand_total;
  out.recall = static_cast<double>(overlap) / ref_total;
  out.f1 = detail::f1_of(out.precision, out.recall);
  return out;
}

/// Longest common subsequence length by dynamic programming.
inline int lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

inline RougeTriple rouge_l(const std::vector<std::string>& candidate,
                           const std::vector<std::string>& reference) {
  RougeTriple out;
  if (candidate.empty() || reference.empty()) {
    out.degenerate = true;
    return out;
  }
  const int l = lcs_length(candidate, reference);
  out.precision = static_cast<double>(l) / candidate.size();
  out.recall = static_cast<double>(l) / reference.size();
  out.f1 = detail::f1_of(out.precision, out.recall);
  return out;
}

struct ExampleScores {
  RougeTriple r1, r2, rl;
};

struct ScoreReport {
  std::vector<ExampleScores> per_example;
  ExampleScores mean;
  int degenerate_count = 0;
};

/// Scores candidate/reference string pairs with the shared tokenizer and
/// averages per-example scores.
inline ScoreReport score_corpus(const std::vector<std::string>& candidates,
                                const std::vector<std::string>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("score_corpus: candidate/reference count mismatch");
  if (candidates.empty()) throw std::invalid_argument("score_corpus: no examples");
  ScoreReport report;
  report.per_example.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto cand = tokenize(candidates[i]);
    const auto ref = tokenize(references[i]);
    ExampleScores s{rouge_n(cand, ref, 1), rouge_n(cand, ref, 2), rouge_l(cand, ref)};
    if (s.r1.degenerate || s.r2.degenerate || s.rl.degenerate) ++report.degenerate_count;
    report.per_example.push_back(s);
  }
  auto add = [](RougeTriple& acc, const RougeTriple& s) {
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f1 += s.f1;
  };
  for (const auto& s : report.per_example) {
    add(report.mean.r1, s.r1);
    add(report.mean.r2, s.r2);
    add(report.mean.rl, s.rl);
  }
  const double n = static_cast<double>(report.per_example.size());
  for (RougeTriple* t : {&report.mean.r1, &report.mean.r2, &report.mean.rl}) {
    t->precision /= n;
    t->recall /= n;
    t->f1 /= n;
  }
  return report;
}

inline nlohmann::json to_json(const RougeTriple& t) {
  return {{"precision", t.precision}, {"recall", t.recall}, {"f1", t.f1}};
}

inline nlohmann::json to_json(const ScoreReport& r, bool include_examples = false) {
  nlohmann::json j{{"rouge1", to_json(r.mean.r1)},
                   {"rouge2", to_json(r.mean.r2)},
                   {"rougeL", to_json(r.mean.rl)},
                   {"examples", static_cast<long long>(r.per_example.size())},
                   {"degenerate", r.degenerate_count}};
  if (include_examples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : r.per_example)
      arr.push_back({{"rouge1", to_json(s.r1)}, {"rouge2", to_json(s.r2)}, {"rougeL", to_json(s.rl)}});
    j["per_example"] = arr;
  }
  return j;
}

/// Aligned plain-text table of the corpus means.
inline std::string format_table(const ScoreReport& r) {
  char buf[256];
  std::string out = "metric    precision    recall        f1\n";
  const struct {
    const char* name;
    const RougeTriple* t;
  } rows[] = {{"ROUGE-1", &r.mean.r1}, {"ROUGE-2", &r.mean.r2}, {"ROUGE-L", &r.mean.rl}};
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10.4f %9.4f %9.4f\n", row.name, row.t->precision,
                  row.t->recall, row.t->f1);
    out += buf;
  }
  return out;
}

}  // namespace tpt
