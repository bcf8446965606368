#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmsm {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kCls = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kNumReserved = 5;

inline constexpr std::size_t kDefaultMaxLen = 128;

/// Lowercases, splits on whitespace and detaches the punctuation marks
/// `.`, `:`, `;` and `,` as their own tokens. Other characters (hyphens,
/// apostrophes, digits, non-ASCII bytes) stay inside words.
std::vector<std::string> tokenize(std::string_view text);

/// Word-level vocabulary with five fixed control tokens at IDs 0..4.
class Vocabulary {
 public:
  /// Reserved tokens only.
  Vocabulary();

  /// Tokens with frequency >= min_freq over the tokenized corpus, ordered by
  /// descending frequency then ascending byte order.
  static Vocabulary build(const std::vector<std::string>& corpus, std::size_t min_freq = 1);

  /// Reads the one-token-per-line format written by save().
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary from_string(std::string_view text);

  void save(const std::filesystem::path& path) const;
  std::string to_string() const;

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t content_size() const { return size() - kNumReserved; }

  TokenId id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  explicit Vocabulary(std::vector<std::string> id_to_token);
  void index();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

bool is_reserved(TokenId id);

/// Maps tokens to IDs. With add_control the result is [CLS] ... [SEP]; content
/// is truncated so the total never exceeds max_len and [SEP] is kept.
std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                            bool add_control, std::size_t max_len = kDefaultMaxLen);

/// Drops control tokens and joins the rest with single spaces.
std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab);

/// Tokens of `ids` with control tokens removed.
std::vector<std::string> decode_tokens(const std::vector<TokenId>& ids, const Vocabulary& vocab);

std::string join(const std::vector<std::string>& tokens);

}  // namespace mmsm
