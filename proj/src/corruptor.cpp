#include "mmsm/corruptor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsm/errors.hpp"

namespace mmsm {

const char* to_string(CorruptionOp op) {
  switch (op) {
    case CorruptionOp::kRemove:
      return "REMOVE";
    case CorruptionOp::kReplace:
      return "REPLACE";
    case CorruptionOp::kInsert:
      return "INSERT";
  }
  return "?";
}

CorruptionOp corruption_op_from_string(std::string_view s) {
  if (s == "REMOVE") return CorruptionOp::kRemove;
  if (s == "REPLACE") return CorruptionOp::kReplace;
  if (s == "INSERT") return CorruptionOp::kInsert;
  throw FormatError("unknown corruption op '" + std::string(s) + "'");
}

void CorruptionConfig::validate() const {
  if (!(processed_fraction >= 0.0 && processed_fraction <= 1.0))
    throw ConfigError("corruption: processed_fraction must lie in [0, 1]");
  if (!(prob_low >= 0.0 && prob_low <= prob_high && prob_high <= 1.0))
    throw ConfigError("corruption: need 0 <= prob_low <= prob_high <= 1");
  if (op_weights_override) {
    const auto& w = *op_weights_override;
    if (w[0] < 0 || w[1] < 0 || w[2] < 0) throw ConfigError("corruption: op weights must be nonnegative");
    if (w[0] + w[1] + w[2] <= 0) throw ConfigError("corruption: op weights must not all be zero");
  }
}

OpProbabilities sample_op_probs(const CorruptionConfig& config, Rng& rng) {
  if (config.op_weights_override) {
    const auto& w = *config.op_weights_override;
    return {w[0], w[1], w[2]};
  }
  OpProbabilities p;
  p.remove = rng.uniform(config.prob_low, config.prob_high);
  p.replace = rng.uniform(config.prob_low, config.prob_high);
  p.insert = rng.uniform(config.prob_low, config.prob_high);
  return p;
}

std::size_t processed_count(double fraction, std::size_t length) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(length) + 0.5));
}

namespace {

CorruptionOp draw_op(const OpProbabilities& p, Rng& rng) {
  const double total = p.remove + p.replace + p.insert;
  if (total <= 0.0) return CorruptionOp::kRemove;
  const double u = rng.uniform() * total;
  if (u < p.remove) return CorruptionOp::kRemove;
  if (u < p.remove + p.replace) return CorruptionOp::kReplace;
  return CorruptionOp::kInsert;
}

const std::string& draw_word(const Vocabulary& vocab, Rng& rng, const std::string* exclude) {
  const std::size_t pool = vocab.content_size();
  if (exclude && vocab.contains(*exclude) && !is_reserved(vocab.id(*exclude))) {
    if (pool < 2) throw ConfigError("corruption: no replacement word different from '" + *exclude + "'");
    // Draw from the pool with the excluded entry skipped.
    const auto skip = static_cast<std::size_t>(vocab.id(*exclude) - kNumReserved);
    std::size_t k = rng.uniform_index(pool - 1);
    if (k >= skip) ++k;
    return vocab.token(static_cast<TokenId>(k + kNumReserved));
  }
  return vocab.token(static_cast<TokenId>(rng.uniform_index(pool) + kNumReserved));
}

}  // namespace

CorruptionResult corrupt(const std::vector<std::string>& tokens, const CorruptionConfig& config,
                         const Vocabulary& vocab, Rng& rng) {
  config.validate();
  CorruptionResult result;
  result.trace.probabilities = sample_op_probs(config, rng);
  const auto& p = result.trace.probabilities;
  if (vocab.content_size() == 0 && (p.replace > 0.0 || p.insert > 0.0))
    throw ConfigError("corruption: vocabulary has no words for replacement/insertion");

  result.tokens = tokens;
  const std::size_t n = tokens.size();
  const std::size_t k = processed_count(config.processed_fraction, n);
  if (n == 0 || k == 0) return result;

  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(order[i], order[j]);
  }
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  std::vector<CorruptionOp> ops(k);
  for (auto& op : ops) op = draw_op(p, rng);

  // Working sequence carries source indices so positions survive shifts.
  std::vector<std::size_t> source(n);
  std::iota(source.begin(), source.end(), std::size_t{0});
  auto& work = result.tokens;
  auto locate = [&](std::size_t src) {
    return static_cast<std::size_t>(std::find(source.begin(), source.end(), src) - source.begin());
  };

  for (std::size_t i = 0; i < k; ++i) {
    if (ops[i] != CorruptionOp::kRemove) continue;
    const std::size_t pos = locate(chosen[i]);
    result.trace.edits.push_back({pos, chosen[i], CorruptionOp::kRemove, work[pos], std::nullopt});
    work.erase(work.begin() + static_cast<std::ptrdiff_t>(pos));
    source.erase(source.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (ops[i] != CorruptionOp::kReplace) continue;
    const std::size_t pos = locate(chosen[i]);
    std::string word = draw_word(vocab, rng, &work[pos]);
    result.trace.edits.push_back({pos, chosen[i], CorruptionOp::kReplace, work[pos], word});
    work[pos] = std::move(word);
  }
  constexpr std::size_t kInserted = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < k; ++i) {
    if (ops[i] != CorruptionOp::kInsert) continue;
    const std::size_t pos = locate(chosen[i]) + 1;
    std::string word = draw_word(vocab, rng, nullptr);
    result.trace.edits.push_back({pos, chosen[i], CorruptionOp::kInsert, std::nullopt, word});
    work.insert(work.begin() + static_cast<std::ptrdiff_t>(pos), std::move(word));
    source.insert(source.begin() + static_cast<std::ptrdiff_t>(pos), kInserted);
  }
  return result;
}

std::vector<std::string> replay(const CorruptionTrace& trace, std::vector<std::string> clean) {
  for (const auto& e : trace.edits) {
    switch (e.op) {
      case CorruptionOp::kRemove:
        if (e.position >= clean.size()) throw FormatError("trace replay: REMOVE position out of range");
        clean.erase(clean.begin() + static_cast<std::ptrdiff_t>(e.position));
        break;
      case CorruptionOp::kReplace:
        if (e.position >= clean.size() || !e.replacement)
          throw FormatError("trace replay: bad REPLACE edit");
        clean[e.position] = *e.replacement;
        break;
      case CorruptionOp::kInsert:
        if (e.position > clean.size() || !e.replacement) throw FormatError("trace replay: bad INSERT edit");
        clean.insert(clean.begin() + static_cast<std::ptrdiff_t>(e.position), *e.replacement);
        break;
    }
  }
  return clean;
}

double CorruptionStats::share(CorruptionOp op) const {
  if (processed == 0) return 0.0;
  return static_cast<double>(op_counts[static_cast<std::size_t>(op)]) / static_cast<double>(processed);
}

CorruptionStats corruption_stats(const std::vector<std::vector<std::string>>& corpus, const CorruptionConfig& config,
                                 const Vocabulary& vocab, std::size_t trials) {
  if (trials < 1) throw ConfigError("corruption_stats: trials must be >= 1");
  CorruptionStats stats;
  double fraction_sum = 0.0;
  std::uint64_t index = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (const auto& sentence : corpus) {
      Rng rng(sentence_seed(config.rng_seed, index++));
      const auto result = corrupt(sentence, config, vocab, rng);
      const std::size_t processed = result.trace.edits.size();
      ++stats.sentences;
      stats.tokens += sentence.size();
      stats.processed += processed;
      for (const auto& e : result.trace.edits) ++stats.op_counts[static_cast<std::size_t>(e.op)];
      if (processed != processed_count(config.processed_fraction, sentence.size())) stats.processed_count_exact = false;
      if (!sentence.empty()) fraction_sum += static_cast<double>(processed) / static_cast<double>(sentence.size());
    }
  }
  stats.mean_processed_fraction = stats.sentences ? fraction_sum / static_cast<double>(stats.sentences) : 0.0;
  return stats;
}

}  // namespace mmsm
