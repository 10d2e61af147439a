#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rtq {

/// Whitespace tokenizer over a closed word list. The five special tokens
/// always occupy ids 0..4.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kEncode = 2;
  static constexpr int kDecode = 3;
  static constexpr int kEos = 4;
  static constexpr int kSpecialCount = 5;

  static const std::vector<std::string>& special_tokens();

  Vocabulary();
  /// Specials followed by `words` (sorted, deduplicated).
  static Vocabulary from_words(std::vector<std::string> words);
  /// Full ordered token list as stored in checkpoints; must start with the specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(std::string_view token) const;
  /// Throws TokenizationError for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }

  /// Splits on whitespace; every piece must be in the vocabulary.
  std::vector<int> encode(std::string_view text) const;
  /// Joins non-special tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace rtq
