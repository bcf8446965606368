#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mmsm {

using Tokens = std::vector<std::string>;

enum class EditOp : std::uint8_t { kMatch, kSubstitute, kDelete, kInsert };

struct AlignmentResult {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::vector<EditOp> ops;  // in reference/hypothesis order
};

/// Unit-cost Levenshtein alignment by full dynamic programming. On ties the
/// backtrace prefers substitution (or match), then deletion, then insertion.
template <class Seq>
AlignmentResult levenshtein_align(const Seq& ref, const Seq& hyp) {
  const std::size_t n = std::size(ref);
  const std::size_t m = std::size(hyp);
  const std::size_t w = m + 1;
  std::vector<std::size_t> d((n + 1) * w);
  for (std::size_t i = 0; i <= n; ++i) d[i * w] = i;
  for (std::size_t j = 0; j <= m; ++j) d[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[(i - 1) * w + j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i * w + j] = std::min({diag, d[(i - 1) * w + j] + 1, d[i * w + j - 1] + 1});
    }
  }

  AlignmentResult r;
  r.distance = d[n * w + m];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = d[i * w + j];
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[(i - 1) * w + j - 1] + (same ? 0 : 1) == here) {
        r.ops.push_back(same ? EditOp::kMatch : EditOp::kSubstitute);
        if (!same) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[(i - 1) * w + j] + 1 == here) {
      r.ops.push_back(EditOp::kDelete);
      ++r.deletions;
      --i;
      continue;
    }
    r.ops.push_back(EditOp::kInsert);
    ++r.insertions;
    --j;
  }
  std::reverse(r.ops.begin(), r.ops.end());
  return r;
}

/// Unicode code points of a UTF-8 string (invalid bytes pass through as-is).
std::u32string utf8_codepoints(std::string_view s);

/// Word error rate: edit distance / reference length. Throws on empty reference.
double wer(const Tokens& ref, const Tokens& hyp);

/// Character error rate over code points; spaces count as characters.
double cer(std::string_view ref, std::string_view hyp);

/// BLEU-n with clipped counts (max over references), no smoothing. The brevity
/// penalty uses the reference length closest to the hypothesis length.
double bleu(const std::vector<Tokens>& refs, const Tokens& hyp, int n);
inline double bleu(const Tokens& ref, const Tokens& hyp, int n) { return bleu(std::vector<Tokens>{ref}, hyp, n); }

/// Harmonic mean of exact-match unigram precision and recall. This is not
/// official METEOR: there is no stemming, synonymy or fragmentation penalty.
/// Both sequences empty scores 1.
double meteor_hm(const Tokens& ref, const Tokens& hyp);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

enum class RougeMode { kRecall, kFMeasure };

/// LCS(ref, hyp) / |ref| (or the F1 variant). Throws on empty reference.
double rouge_l(const Tokens& ref, const Tokens& hyp, RougeMode mode = RougeMode::kRecall);

/// Per-pair CIDEr: for n = 1..4 the cosine between TF-IDF vectors of the
/// hypothesis and its reference, with IDF = log(N / max(df, 1)) over the
/// reference corpus; final score is 10 x the mean over n.
std::vector<double> cider(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps);

enum class Metric { kWer, kCer, kBleu2, kBleu3, kBleu4, kMeteor, kRougeL, kCider };
inline constexpr std::array<Metric, 8> kAllMetrics = {Metric::kWer,   Metric::kCer,    Metric::kBleu2,  Metric::kBleu3,
                                                      Metric::kBleu4, Metric::kMeteor, Metric::kRougeL, Metric::kCider};
const char* metric_name(Metric m);
std::optional<Metric> metric_from_name(std::string_view name);

struct PairScores {
  std::string id;
  std::array<double, 8> score{};  // indexed by Metric
  std::size_t word_errors = 0;
  std::size_t ref_words = 0;
  std::size_t char_errors = 0;
  std::size_t ref_chars = 0;

  double operator[](Metric m) const { return score[static_cast<std::size_t>(m)]; }
};

struct SkippedPair {
  std::string id;
  std::string reason;
};

struct Distribution {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

Distribution summarize(std::vector<double> values);

struct MetricReport {
  std::vector<PairScores> pairs;
  std::vector<SkippedPair> skipped;
  std::array<double, 8> mean{};        // per-metric corpus value; WER/CER micro-averaged
  double wer_macro = 0.0;              // mean of per-pair ratios
  double cer_macro = 0.0;
  std::array<Distribution, 8> distribution{};

  double operator[](Metric m) const { return mean[static_cast<std::size_t>(m)]; }
};

/// Scores aligned (reference, hypothesis) text pairs. Texts are tokenized with
/// tokenize(); CER runs over the space-joined tokens. Pairs that cannot be
/// scored (empty reference) are listed in `skipped`.
MetricReport evaluate_corpus(const std::vector<std::string>& refs, const std::vector<std::string>& hyps,
                             const std::vector<std::string>& ids = {});

}  // namespace mmsm
