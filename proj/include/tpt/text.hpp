#pragma once

// Shared text normalization: lowercase, punctuation split off as its own
// tokens, whitespace tokenization. Both the corpus encoder and the ROUGE
// scorer run on exactly this tokenization, which keeps scores internally
// comparable.

#include <cctype>
#include <string>
#include <vector>

namespace tpt {

inline bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c >= 0x80;  // keep UTF-8 continuation bytes together
}

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));  // punctuation stands alone
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace tpt
