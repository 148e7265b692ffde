#pragma once

// JSONL corpus ingestion: one {"document": "...", "summary": "..."}
// object per line, UTF-8. Lines that fail to parse or normalize to empty
// text are data errors that name the offending line.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpt/errors.hpp"
#include "tpt/text.hpp"
#include "tpt/trainer.hpp"
#include "tpt/vocab.hpp"

namespace tpt {

struct CorpusExample {
  std::string document;
  std::string summary;
};

inline std::vector<CorpusExample> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open corpus: " + path);
  std::vector<CorpusExample> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!j.contains("document") || !j.contains("summary") || !j["document"].is_string() ||
        !j["summary"].is_string())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected string fields 'document' and 'summary'");
    CorpusExample ex{j["document"].get<std::string>(), j["summary"].get<std::string>()};
    if (tokenize(ex.document).empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": field 'document' is empty");
    if (tokenize(ex.summary).empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": field 'summary' is empty");
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("corpus has no examples: " + path);
  return out;
}

inline std::map<std::string, long long> count_tokens(const std::vector<CorpusExample>& corpus) {
  std::map<std::string, long long> counts;
  for (const auto& ex : corpus) {
    for (const auto& t : tokenize(ex.document)) ++counts[t];
    for (const auto& t : tokenize(ex.summary)) ++counts[t];
  }
  return counts;
}

inline std::vector<EncodedExample> encode_corpus(const std::vector<CorpusExample>& corpus,
                                                 const Vocabulary& vocab, int max_source_len,
                                                 int max_target_len) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus)
    out.push_back({encode_text(ex.document, vocab, max_source_len),
                   encode_text(ex.summary, vocab, max_target_len)});
  return out;
}

}  // namespace tpt
