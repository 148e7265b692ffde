#include "tpt/rouge.hpp"

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "tpt/tensor.hpp"

using tpt::Rng;
using tpt::rouge_l;
using tpt::rouge_n;
using tpt::RougeTriple;

namespace {

using Tokens = std::vector<std::string>;

// Brute-force clipped n-gram overlap: for every candidate n-gram, consume
// one unmatched reference n-gram if available.
RougeTriple rouge_n_oracle(const Tokens& cand, const Tokens& ref, int n) {
  RougeTriple out;
  if (cand.empty() || ref.empty()) {
    out.degenerate = true;
    return out;
  }
  const int nc = static_cast<int>(cand.size()) - n + 1;
  const int nr = static_cast<int>(ref.size()) - n + 1;
  if (nc <= 0 || nr <= 0) {
    out.degenerate = true;
    return out;
  }
  std::vector<bool> used(nr, false);
  int overlap = 0;
  for (int i = 0; i < nc; ++i) {
    for (int j = 0; j < nr; ++j) {
      if (used[j]) continue;
      bool eq = true;
      for (int k = 0; k < n && eq; ++k) eq = cand[i + k] == ref[j + k];
      if (eq) {
        used[j] = true;
        ++overlap;
        break;
      }
    }
  }
  out.precision = static_cast<double>(overlap) / nc;
  out.recall = static_cast<double>(overlap) / nr;
  out.f1 = out.precision + out.recall > 0
               ? 2 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

// Exhaustive LCS: enumerate every subsequence of the candidate (lengths
// <= 8 keep this tiny) and test it against the reference.
int lcs_oracle(const Tokens& cand, const Tokens& ref) {
  const int n = static_cast<int>(cand.size());
  int best = 0;
  for (int mask = 0; mask < (1 << n); ++mask) {
    Tokens sub;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) sub.push_back(cand[i]);
    std::size_t pos = 0;
    bool ok = true;
    for (const auto& t : sub) {
      while (pos < ref.size() && ref[pos] != t) ++pos;
      if (pos == ref.size()) {
        ok = false;
        break;
      }
      ++pos;
    }
    if (ok) best = std::max(best, static_cast<int>(sub.size()));
  }
  return best;
}

Tokens random_tokens(Rng& rng, int max_len, int alphabet) {
  Tokens out;
  const int len = static_cast<int>(rng.uniform_int(max_len + 1));
  for (int i = 0; i < len; ++i)
    out.push_back(std::string(1, static_cast<char>('a' + rng.uniform_int(alphabet))));
  return out;
}

}  // namespace

TEST(RougeN, IdenticalTextsScoreOne) {
  const Tokens t{"the", "cat", "sat", "down"};
  for (int n = 1; n <= 4; ++n) {
    auto s = rouge_n(t, t, n);
    EXPECT_DOUBLE_EQ(s.f1, 1.0) << n;
    EXPECT_DOUBLE_EQ(s.precision, 1.0);
    EXPECT_DOUBLE_EQ(s.recall, 1.0);
  }
}

TEST(RougeN, WorkedExampleCatSatRan) {
  const Tokens cand{"the", "cat", "sat"}, ref{"the", "cat", "ran"};
  auto r1 = rouge_n(cand, ref, 1);
  EXPECT_NEAR(r1.f1, 2.0 / 3.0, 1e-15);
  auto r2 = rouge_n(cand, ref, 2);
  EXPECT_NEAR(r2.f1, 1.0 / 2.0, 1e-15);
}

TEST(RougeN, DisjointVocabulariesScoreZero) {
  const Tokens cand{"alpha", "beta"}, ref{"gamma", "delta"};
  for (int n = 1; n <= 2; ++n) {
    auto s = rouge_n(cand, ref, n);
    EXPECT_DOUBLE_EQ(s.f1, 0.0);
    EXPECT_FALSE(s.degenerate);
  }
}

TEST(RougeN, EmptySidesFlagNotThrow) {
  const Tokens some{"a"};
  auto s = rouge_n({}, some, 1);
  EXPECT_TRUE(s.degenerate);
  EXPECT_DOUBLE_EQ(s.f1, 0.0);
  s = rouge_n(some, {}, 1);
  EXPECT_TRUE(s.degenerate);
  // candidate shorter than n behaves like an empty candidate
  s = rouge_n(some, some, 2);
  EXPECT_TRUE(s.degenerate);
}

TEST(RougeN, ClippingCountsRepeats) {
  // "a a a" vs "a a": overlap clipped to 2 unigrams
  const Tokens cand{"a", "a", "a"}, ref{"a", "a"};
  auto s = rouge_n(cand, ref, 1);
  EXPECT_NEAR(s.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.recall, 1.0, 1e-15);
}

TEST(RougeL, WorkedExamples) {
  auto s = rouge_l({"a", "b", "c", "d"}, {"a", "x", "c", "y"});
  EXPECT_NEAR(s.precision, 0.5, 1e-15);
  EXPECT_NEAR(s.recall, 0.5, 1e-15);
  EXPECT_NEAR(s.f1, 0.5, 1e-15);

  const Tokens t{"q", "w", "e"};
  EXPECT_DOUBLE_EQ(rouge_l(t, t).f1, 1.0);

  auto rev = rouge_l({"a", "b", "c"}, {"c", "b", "a"});
  EXPECT_NEAR(rev.f1, 1.0 / 3.0, 1e-15);
}

TEST(RougeL, MatchesExhaustiveEnumeration) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto cand = random_tokens(rng, 8, 4);
    const auto ref = random_tokens(rng, 8, 4);
    if (cand.empty() || ref.empty()) {
      EXPECT_TRUE(rouge_l(cand, ref).degenerate);
      continue;
    }
    EXPECT_EQ(tpt::lcs_length(cand, ref), lcs_oracle(cand, ref)) << "trial " << trial;
  }
}

TEST(RougeN, MatchesBruteForceOracle) {
  Rng rng(202);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto cand = random_tokens(rng, 8, 3);
    const auto ref = random_tokens(rng, 8, 3);
    for (int n = 1; n <= 2; ++n) {
      const auto fast = rouge_n(cand, ref, n);
      const auto slow = rouge_n_oracle(cand, ref, n);
      EXPECT_EQ(fast.degenerate, slow.degenerate) << trial;
      EXPECT_NEAR(fast.precision, slow.precision, 1e-12) << trial;
      EXPECT_NEAR(fast.recall, slow.recall, 1e-12) << trial;
      EXPECT_NEAR(fast.f1, slow.f1, 1e-12) << trial;
    }
  }
}

TEST(Rouge, SwapSymmetry) {
  Rng rng(303);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_tokens(rng, 7, 3);
    const auto b = random_tokens(rng, 7, 3);
    if (a.empty() || b.empty()) continue;
    for (int n = 1; n <= 2; ++n) {
      const auto ab = rouge_n(a, b, n);
      const auto ba = rouge_n(b, a, n);
      EXPECT_NEAR(ab.precision, ba.recall, 1e-12);
      EXPECT_NEAR(ab.recall, ba.precision, 1e-12);
      EXPECT_NEAR(ab.f1, ba.f1, 1e-12);
    }
    const auto lab = rouge_l(a, b), lba = rouge_l(b, a);
    EXPECT_NEAR(lab.f1, lba.f1, 1e-12);
  }
}

TEST(Rouge, CorpusReportAveragesAndFormats) {
  std::vector<std::string> cands{"The cat sat", "a b c"};
  std::vector<std::string> refs{"the cat ran", "a b c"};
  auto report = tpt::score_corpus(cands, refs);
  EXPECT_NEAR(report.mean.r1.f1, (2.0 / 3.0 + 1.0) / 2, 1e-12);
  EXPECT_EQ(report.per_example.size(), 2u);
  auto j = tpt::to_json(report);
  EXPECT_TRUE(j.contains("rouge1"));
  EXPECT_NEAR(j["rouge1"]["f1"].get<double>(), report.mean.r1.f1, 1e-12);
  const auto table = tpt::format_table(report);
  EXPECT_NE(table.find("ROUGE-L"), std::string::npos);
}

TEST(Rouge, TokenizerLowercasesAndSplitsPunctuation) {
  const auto toks = tpt::tokenize("The cat, sat!  ");
  EXPECT_EQ(toks, (Tokens{"the", "cat", ",", "sat", "!"}));
  // scoring is tokenization-invariant to case
  auto s = tpt::score_corpus({"THE CAT"}, {"the cat"});
  EXPECT_DOUBLE_EQ(s.mean.r1.f1, 1.0);
}
