#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmsm/random.hpp"
#include "mmsm/textproc.hpp"

namespace mmsm {

enum class CorruptionOp { kRemove, kReplace, kInsert };

const char* to_string(CorruptionOp op);
CorruptionOp corruption_op_from_string(std::string_view s);

struct CorruptionConfig {
  double processed_fraction = 0.5;
  double prob_low = 0.5;
  double prob_high = 0.9;
  std::optional<std::array<double, 3>> op_weights_override;  // (remove, replace, insert)
  std::uint64_t rng_seed = 0;

  /// Throws ConfigError on an out-of-range field.
  void validate() const;
};

struct OpProbabilities {
  double remove = 0.0;
  double replace = 0.0;
  double insert = 0.0;
};

/// One applied edit. `position` indexes the working sequence at the moment the
/// edit is applied (after all earlier edits in the trace); `source_index` is
/// the index of the processed word in the clean sentence.
struct CorruptionEdit {
  std::size_t position = 0;
  std::size_t source_index = 0;
  CorruptionOp op = CorruptionOp::kRemove;
  std::optional<std::string> original;
  std::optional<std::string> replacement;
};

struct CorruptionTrace {
  OpProbabilities probabilities;
  std::vector<CorruptionEdit> edits;
};

struct CorruptionResult {
  std::vector<std::string> tokens;
  CorruptionTrace trace;
};

/// Three independent uniform draws from [prob_low, prob_high], or the override.
OpProbabilities sample_op_probs(const CorruptionConfig& config, Rng& rng);

/// Number of processed words: round-half-up of fraction * length.
std::size_t processed_count(double fraction, std::size_t length);

/// Applies removal, replacement and insertion to a random subset of words.
/// Replacement and insertion words are drawn uniformly from the non-reserved
/// entries of `vocab`.
CorruptionResult corrupt(const std::vector<std::string>& tokens, const CorruptionConfig& config,
                         const Vocabulary& vocab, Rng& rng);

/// Re-applies a trace to the clean sentence.
std::vector<std::string> replay(const CorruptionTrace& trace, std::vector<std::string> clean);

/// Per-sentence seed used for corpus-level corruption.
inline std::uint64_t sentence_seed(std::uint64_t corpus_seed, std::uint64_t index) { return corpus_seed ^ index; }

struct CorruptionStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t processed = 0;
  std::array<std::size_t, 3> op_counts{};    // remove, replace, insert
  double mean_processed_fraction = 0.0;      // mean of per-sentence processed/len
  bool processed_count_exact = true;         // every sentence hit processed_count()

  double share(CorruptionOp op) const;
};

/// Corrupts every sentence `trials` times (per-sentence seed derived from the
/// config seed and a running index) and tallies what happened.
CorruptionStats corruption_stats(const std::vector<std::vector<std::string>>& corpus, const CorruptionConfig& config,
                                 const Vocabulary& vocab, std::size_t trials);

}  // namespace mmsm
