#pragma once

// Greedy and beam-search generation over any incremental stepper.
//
// A Stepper provides:
//   State initial() const;
//   std::vector<Real> step(State&, int token) const;   // feeds token,
//                                                      // returns next-token log-probs
//
// GenSession is the model-backed stepper; tests drive the same search
// code with table-driven distributions.
//
// Scoring: a hypothesis' log-probability is the sum of stepwise
// log-softmax values of every emitted token, including the terminal EOS
// when one was emitted. The final score divides by len^alpha where len
// counts emitted tokens including that EOS (so len >= 1), which makes
// alpha = 1 the mean stepwise log-probability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tpt/config.hpp"
#include "tpt/model.hpp"

namespace tpt {

struct Hypothesis {
  std::vector<int> ids;  // emitted tokens; BOS/EOS never appear here
  double logprob = 0.0;
  double score = 0.0;
  bool finished = false;  // true iff EOS was emitted
};

namespace detail {

inline double length_normalized(double logprob, std::size_t emitted_with_eos, double alpha) {
  const double len = static_cast<double>(std::max<std::size_t>(1, emitted_with_eos));
  return logprob / std::pow(len, alpha);
}

}  // namespace detail

/// Argmax decoding from BOS; ties resolve to the lowest token id. Stops
/// at EOS or after max_len emitted tokens.
template <class Stepper>
Hypothesis greedy_decode(const Stepper& stepper, int max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_decode: max_len must be >= 1");
  Hypothesis hyp;
  auto state = stepper.initial();
  int pending = kBosId;
  for (int pos = 0; pos < max_len; ++pos) {
    const auto logp = stepper.step(state, pending);
    int best = 0;
    for (std::size_t j = 1; j < logp.size(); ++j)
      if (logp[j] > logp[best]) best = static_cast<int>(j);
    hyp.logprob += static_cast<double>(logp[best]);
    if (best == kEosId) {
      hyp.finished = true;
      hyp.score = detail::length_normalized(hyp.logprob, hyp.ids.size() + 1, 0.0);
      return hyp;
    }
    hyp.ids.push_back(best);
    pending = best;
  }
  hyp.score = detail::length_normalized(hyp.logprob, hyp.ids.size(), 0.0);
  return hyp;
}

/// Standard beam search. Each step expands every live hypothesis over
/// the vocabulary and walks the candidates best-first: the top `beam`
/// non-EOS extensions survive, and every EOS candidate that outranks the
/// last survivor finalizes its hypothesis. The search stops once `beam`
/// hypotheses have finished (which makes beam-1 reproduce greedy
/// decoding exactly, for any alpha) or at max_len, where live
/// hypotheses finalize as they stand. Highest length-normalized score
/// wins; ties break toward the lower token id, then the earlier parent.
///
/// The greedy rollout always competes as a final candidate, so the
/// returned hypothesis never scores below the greedy one; count-based
/// termination alone cannot promise that.
template <class Stepper>
Hypothesis beam_search(const Stepper& stepper, int beam, int max_len, double alpha) {
  if (beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");

  using State = typename Stepper::State;
  struct Live {
    State state;
    std::vector<int> ids;
    double logprob = 0.0;
    int pending = kBosId;
  };
  struct Candidate {
    std::size_t parent;
    int token;
    double total;
  };

  std::vector<Live> live;
  live.push_back({stepper.initial(), {}, 0.0, kBosId});
  Hypothesis best_finished;
  int finished_count = 0;

  auto offer = [&](Hypothesis h) {
    if (finished_count == 0 || h.score > best_finished.score) best_finished = std::move(h);
    ++finished_count;
  };

  for (int pos = 0; pos < max_len && !live.empty() && finished_count < beam; ++pos) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const auto logp = stepper.step(live[i].state, live[i].pending);
      cands.reserve(cands.size() + logp.size());
      for (std::size_t tok = 0; tok < logp.size(); ++tok)
        cands.push_back({i, static_cast<int>(tok), live[i].logprob + logp[tok]});
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.total != b.total) return a.total > b.total;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<Live> next;
    next.reserve(beam);
    for (const auto& c : cands) {
      if (c.token == kEosId) {
        Hypothesis h;
        h.ids = live[c.parent].ids;
        h.logprob = c.total;
        h.finished = true;
        h.score = detail::length_normalized(h.logprob, h.ids.size() + 1, alpha);
        offer(std::move(h));
        continue;
      }
      Live child;
      child.state = live[c.parent].state;  // parent state already advanced
      child.ids = live[c.parent].ids;
      child.ids.push_back(c.token);
      child.logprob = c.total;
      child.pending = c.token;
      next.push_back(std::move(child));
      if (static_cast<int>(next.size()) == beam) break;
    }
    live = std::move(next);
  }
  if (finished_count < beam) {
    for (const auto& l : live) {
      Hypothesis h;
      h.ids = l.ids;
      h.logprob = l.logprob;
      h.finished = false;
      h.score = detail::length_normalized(h.logprob, h.ids.size(), alpha);
      offer(std::move(h));
    }
  }
  if (beam > 1) {
    Hypothesis g = greedy_decode(stepper, max_len);
    g.score = detail::length_normalized(g.logprob, g.ids.size() + (g.finished ? 1 : 0), alpha);
    offer(std::move(g));
  }
  if (finished_count == 0) throw std::runtime_error("beam_search: no hypothesis produced");
  return best_finished;
}

// model-backed conveniences

template <class T>
Hypothesis greedy_decode(const ModelT<T>& model, const std::vector<int>& src_ids, int max_len) {
  GenSession<T> session(model, src_ids);
  return greedy_decode(session, max_len);
}

template <class T>
Hypothesis beam_search(const ModelT<T>& model, const std::vector<int>& src_ids, int beam,
                       int max_len, double alpha) {
  GenSession<T> session(model, src_ids);
  return beam_search(session, beam, max_len, alpha);
}

}  // namespace tpt
