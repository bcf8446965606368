#include "mmsm/textproc.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "mmsm/errors.hpp"

namespace mmsm {
namespace {

const std::vector<std::string> kReservedTokens = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_detached(unsigned char c) { return c == '.' || c == ':' || c == ';' || c == ','; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_detached(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(kReservedTokens) {}

Vocabulary::Vocabulary(std::vector<std::string> id_to_token) : id_to_token_(std::move(id_to_token)) { index(); }

void Vocabulary::index() {
  token_to_id_.clear();
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<TokenId>(i));
    if (!inserted) throw FormatError("vocabulary: duplicate token '" + id_to_token_[i] + "'");
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t min_freq) {
  if (min_freq < 1) throw ConfigError("build_vocab: min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& tok : tokenize(line)) ++counts[std::move(tok)];

  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, n] : counts) {
    if (n < min_freq) continue;
    if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end()) continue;
    entries.emplace_back(tok, n);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> ids = kReservedTokens;
  for (auto& e : entries) ids.push_back(std::move(e.first));
  return Vocabulary(std::move(ids));
}

Vocabulary Vocabulary::from_string(std::string_view text) {
  std::vector<std::string> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ids.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (ids.size() < kReservedTokens.size() ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(), ids.begin()))
    throw FormatError("vocabulary: first five lines must be the reserved tokens");
  return Vocabulary(std::move(ids));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("vocabulary: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::string Vocabulary::to_string() const {
  std::string out;
  for (const auto& t : id_to_token_) {
    out += t;
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("vocabulary: cannot write " + path.string());
  out << to_string();
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool is_reserved(TokenId id) { return id >= 0 && id < kNumReserved; }

std::vector<TokenId> encode(const std::vector<std::string>& tokens, const Vocabulary& vocab, bool add_control,
                            std::size_t max_len) {
  const std::size_t room = add_control ? (max_len >= 2 ? max_len - 2 : 0) : max_len;
  const std::size_t n = std::min(tokens.size(), room);
  std::vector<TokenId> ids;
  ids.reserve(n + 2);
  if (add_control && max_len >= 2) ids.push_back(kCls);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id(tokens[i]));
  if (add_control) ids.push_back(kSep);
  return ids;
}

std::vector<std::string> decode_tokens(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kPad || id == kCls || id == kSep || id == kMask) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  return join(decode_tokens(ids, vocab));
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace mmsm
