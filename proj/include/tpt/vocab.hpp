#pragma once

// Word-level vocabulary with four reserved ids (PAD=0, EOS=1, UNK=2,
// BOS=3) and a frequency-ranked remainder, ties broken lexicographically.
// Persisted as one token per line where the line number is id - 4.

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpt/config.hpp"
#include "tpt/errors.hpp"
#include "tpt/text.hpp"

namespace tpt {

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds from token frequency counts: the top (size - 4) tokens by
  /// count, lexicographic order breaking ties.
  static Vocabulary build(const std::map<std::string, long long>& counts, int size) {
    if (size <= kReservedIds) throw ConfigError("vocabulary size must exceed the 4 reserved ids");
    if (counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
    std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    const std::size_t keep = std::min<std::size_t>(ranked.size(), size - kReservedIds);
    v.tokens_.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      v.index_[ranked[i].first] = static_cast<int>(kReservedIds + i);
      v.tokens_.push_back(ranked[i].first);
    }
    return v;
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (v.index_.count(line)) throw DataError("duplicate vocabulary token: " + line);
      v.index_[line] = static_cast<int>(kReservedIds + v.tokens_.size());
      v.tokens_.push_back(line);
    }
    if (v.tokens_.empty()) throw DataError("vocabulary file is empty: " + path);
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) os << t << '\n';
  }

  int size() const { return static_cast<int>(tokens_.size()) + kReservedIds; }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& token_of(int id) const {
    static const std::string pad = "<pad>", eos = "<eos>", unk = "<unk>", bos = "<bos>";
    if (id == kPadId) return pad;
    if (id == kEosId) return eos;
    if (id == kUnkId) return unk;
    if (id == kBosId) return bos;
    const int idx = id - kReservedIds;
    if (idx < 0 || idx >= static_cast<int>(tokens_.size()))
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(size()));
    return tokens_[idx];
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Normalizes, maps OOV tokens to UNK, truncates to max_len - 1 tokens
/// and appends EOS.
inline std::vector<int> encode_text(const std::string& text, const Vocabulary& vocab,
                                    int max_len) {
  if (max_len < 2) throw ConfigError("encode_text: max_len must be >= 2");
  auto tokens = tokenize(text);
  std::vector<int> ids;
  ids.reserve(std::min<std::size_t>(tokens.size(), max_len - 1) + 1);
  for (const auto& t : tokens) {
    if (static_cast<int>(ids.size()) == max_len - 1) break;
    ids.push_back(vocab.id_of(t));
  }
  ids.push_back(kEosId);
  return ids;
}

/// Inverts known ids, renders UNK literally, stops at EOS, skips PAD/BOS.
inline std::string decode_ids(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (int id : ids) {
    if (id == kEosId) break;
    if (id == kPadId || id == kBosId) continue;
    tokens.push_back(vocab.token_of(id));
  }
  return join_tokens(tokens);
}

}  // namespace tpt
