#pragma once

// Synthetic corpora and labeled probe data used by tests and the
// acceptance suite: copy/reverse sequence tasks over a payload alphabet,
// and deterministic labeling rules for probing.

#include <string>
#include <vector>

#include "tpt/probing.hpp"
#include "tpt/tensor.hpp"
#include "tpt/trainer.hpp"

namespace tpt::synth {

/// Random payload sequences (ids 4 .. 4+payload_vocab-1), EOS-terminated,
/// with the summary equal to the document.
inline std::vector<EncodedExample> copy_examples(Rng& rng, int count, int payload_vocab,
                                                 int min_len, int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const int len = min_len + static_cast<int>(rng.uniform_int(max_len - min_len + 1));
    std::vector<int> seq;
    seq.reserve(len + 1);
    for (int j = 0; j < len; ++j)
      seq.push_back(kReservedIds + static_cast<int>(rng.uniform_int(payload_vocab)));
    seq.push_back(kEosId);
    out.push_back({seq, seq});
  }
  return out;
}

/// Copy corpus with the summary reversed.
inline std::vector<EncodedExample> reverse_examples(Rng& rng, int count, int payload_vocab,
                                                    int min_len, int max_len) {
  auto out = copy_examples(rng, count, payload_vocab, min_len, max_len);
  for (auto& ex : out) {
    std::reverse(ex.target.begin(), ex.target.end() - 1);  // keep EOS terminal
  }
  return out;
}

/// Probe data whose token label is the parity of the token position.
inline std::vector<EncodedProbeExample> parity_probe_data(
    const std::vector<EncodedExample>& corpus) {
  std::vector<EncodedProbeExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    EncodedProbeExample pe;
    pe.source_ids = ex.source;
    pe.target_ids = std::vector<int>(ex.target.begin(), ex.target.end() - 1);  // strip EOS
    pe.token_task = true;
    for (std::size_t p = 0; p < pe.target_ids.size(); ++p)
      pe.labels.push_back(p % 2 == 0 ? "even" : "odd");
    if (!pe.target_ids.empty()) out.push_back(std::move(pe));
  }
  return out;
}

/// Probe data whose token label is a deterministic function of the token
/// emitted at that position (its id parity). Shifting these labels by one
/// position must strictly degrade an aligned probe.
inline std::vector<EncodedProbeExample> token_function_probe_data(
    const std::vector<EncodedExample>& corpus) {
  std::vector<EncodedProbeExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus) {
    EncodedProbeExample pe;
    pe.source_ids = ex.source;
    pe.target_ids = std::vector<int>(ex.target.begin(), ex.target.end() - 1);
    pe.token_task = true;
    for (int id : pe.target_ids) pe.labels.push_back(id % 2 == 0 ? "even-id" : "odd-id");
    if (!pe.target_ids.empty()) out.push_back(std::move(pe));
  }
  return out;
}

/// Shifts token labels one position earlier (label p takes label p+1) and
/// drops the final position of every example.
inline std::vector<EncodedProbeExample> shift_labels(
    const std::vector<EncodedProbeExample>& data) {
  std::vector<EncodedProbeExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    if (!ex.token_task || ex.target_ids.size() < 2) continue;
    EncodedProbeExample shifted = ex;
    shifted.target_ids.pop_back();
    shifted.labels.erase(shifted.labels.begin());
    shifted.labels.resize(shifted.target_ids.size());
    out.push_back(std::move(shifted));
  }
  return out;
}

}  // namespace tpt::synth
