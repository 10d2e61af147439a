#include "rtq/vocabulary.hpp"

#include <algorithm>
#include <sstream>

#include "rtq/error.hpp"

namespace rtq {

const std::vector<std::string>& Vocabulary::special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[CLS]", "[Encode]", "[Decode]", "[EOS]"};
  return specials;
}

Vocabulary::Vocabulary() : tokens_(special_tokens()) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<std::string> tokens = special_tokens();
  for (auto& w : words) {
    if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) tokens.push_back(std::move(w));
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw TokenizationError("vocabulary must begin with the special tokens");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    const auto& t = v.tokens_[i];
    if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos) {
      throw TokenizationError("invalid token '" + t + "'");
    }
    if (!v.index_.emplace(t, static_cast<int>(i)).second) throw TokenizationError("duplicate token '" + t + "'");
  }
  return v;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw TokenizationError("unknown token '" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw TokenizationError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::istringstream in{std::string(text)};
  std::vector<int> ids;
  std::string piece;
  while (in >> piece) ids.push_back(id(piece));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (is_special(i)) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

}  // namespace rtq
