#include "mmsm/metrics.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "mmsm/textproc.hpp"

namespace mmsm {
namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts count_ngrams(const Tokens& t, std::size_t n) {
  NgramCounts counts;
  if (t.size() < n) return counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++counts[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                                   t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

std::u32string utf8_codepoints(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1F;
    }
    if (len > 1 && i + len <= s.size()) {
      bool ok = true;
      for (std::size_t k = 1; k < len; ++k) {
        const auto cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0) != 0x80) ok = false;
        cp = (cp << 6) | (cc & 0x3F);
      }
      if (ok) {
        out.push_back(cp);
        i += len;
        continue;
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

double wer(const Tokens& ref, const Tokens& hyp) {
  if (ref.empty()) throw std::invalid_argument("wer: empty reference");
  return static_cast<double>(levenshtein_align(ref, hyp).distance) / static_cast<double>(ref.size());
}

double cer(std::string_view ref, std::string_view hyp) {
  const auto r = utf8_codepoints(ref);
  if (r.empty()) throw std::invalid_argument("cer: empty reference");
  return static_cast<double>(levenshtein_align(r, utf8_codepoints(hyp)).distance) / static_cast<double>(r.size());
}

double bleu(const std::vector<Tokens>& refs, const Tokens& hyp, int n) {
  if (n < 1) throw std::invalid_argument("bleu: n must be >= 1");
  if (hyp.empty() || refs.empty()) return 0.0;

  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    const auto hyp_counts = count_ngrams(hyp, static_cast<std::size_t>(order));
    std::vector<NgramCounts> ref_counts;
    for (const auto& ref : refs) ref_counts.push_back(count_ngrams(ref, static_cast<std::size_t>(order)));
    std::size_t total = 0;
    std::size_t clipped = 0;
    for (const auto& [gram, count] : hyp_counts) {
      std::size_t max_ref = 0;
      for (const auto& rc : ref_counts) {
        auto it = rc.find(gram);
        if (it != rc.end()) max_ref = std::max(max_ref, it->second);
      }
      total += count;
      clipped += std::min(count, max_ref);
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }

  const std::size_t c = hyp.size();
  std::size_t r = refs.front().size();
  for (const auto& ref : refs) {
    const auto dr = static_cast<long>(ref.size()) - static_cast<long>(c);
    const auto dbest = static_cast<long>(r) - static_cast<long>(c);
    if (std::labs(dr) < std::labs(dbest) || (std::labs(dr) == std::labs(dbest) && ref.size() < r)) r = ref.size();
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum / n);
}

double meteor_hm(const Tokens& ref, const Tokens& hyp) {
  if (ref.empty() && hyp.empty()) return 1.0;
  if (ref.empty() || hyp.empty()) return 0.0;
  std::unordered_map<std::string, std::size_t> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  std::size_t matches = 0;
  for (const auto& t : hyp) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++matches;
    }
  }
  if (matches == 0) return 0.0;
  const double p = static_cast<double>(matches) / static_cast<double>(hyp.size());
  const double r = static_cast<double>(matches) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& ref, const Tokens& hyp, RougeMode mode) {
  if (ref.empty()) throw std::invalid_argument("rouge_l: empty reference");
  const auto lcs = static_cast<double>(lcs_length(ref, hyp));
  const double recall = lcs / static_cast<double>(ref.size());
  if (mode == RougeMode::kRecall) return recall;
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(hyp.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<double> cider(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("cider: reference and hypothesis counts differ");
  if (refs.empty()) throw std::invalid_argument("cider: empty corpus");
  constexpr std::size_t kMaxN = 4;
  const auto docs = static_cast<double>(refs.size());

  std::vector<double> scores(refs.size(), 0.0);
  for (std::size_t n = 1; n <= kMaxN; ++n) {
    std::vector<NgramCounts> ref_grams(refs.size());
    std::map<Tokens, std::size_t> df;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      ref_grams[i] = count_ngrams(refs[i], n);
      for (const auto& kv : ref_grams[i]) ++df[kv.first];
    }
    auto idf = [&](const Tokens& g) {
      auto it = df.find(g);
      const double d = it == df.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(it->second, 1));
      return std::log(docs / d);
    };
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto hyp_grams = count_ngrams(hyps[i], n);
      const auto& rg = ref_grams[i];
      double dot = 0.0, norm_h = 0.0, norm_r = 0.0;
      for (const auto& [g, c] : hyp_grams) {
        const double wh = static_cast<double>(c) * idf(g);
        norm_h += wh * wh;
        auto it = rg.find(g);
        if (it != rg.end()) dot += wh * static_cast<double>(it->second) * idf(g);
      }
      for (const auto& [g, c] : rg) {
        const double wr = static_cast<double>(c) * idf(g);
        norm_r += wr * wr;
      }
      if (norm_h > 0.0 && norm_r > 0.0) scores[i] += dot / (std::sqrt(norm_h) * std::sqrt(norm_r));
    }
  }
  for (auto& s : scores) s = 10.0 * s / static_cast<double>(kMaxN);
  return scores;
}

const char* metric_name(Metric m) {
  switch (m) {
    case Metric::kWer:
      return "WER";
    case Metric::kCer:
      return "CER";
    case Metric::kBleu2:
      return "BLEU2";
    case Metric::kBleu3:
      return "BLEU3";
    case Metric::kBleu4:
      return "BLEU4";
    case Metric::kMeteor:
      return "METEOR";
    case Metric::kRougeL:
      return "ROUGE_L";
    case Metric::kCider:
      return "CIDEr";
  }
  return "?";
}

std::optional<Metric> metric_from_name(std::string_view name) {
  for (Metric m : kAllMetrics)
    if (name == metric_name(m)) return m;
  return std::nullopt;
}

Distribution summarize(std::vector<double> values) {
  Distribution d;
  if (values.empty()) return d;
  std::sort(values.begin(), values.end());
  // Linear interpolation between order statistics.
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  d.min = values.front();
  d.max = values.back();
  d.q1 = quantile(0.25);
  d.median = quantile(0.5);
  d.q3 = quantile(0.75);
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return d;
}

MetricReport evaluate_corpus(const std::vector<std::string>& refs, const std::vector<std::string>& hyps,
                             const std::vector<std::string>& ids) {
  if (refs.size() != hyps.size()) throw std::invalid_argument("evaluate_corpus: reference and hypothesis counts differ");
  if (!ids.empty() && ids.size() != refs.size()) throw std::invalid_argument("evaluate_corpus: id count mismatch");

  MetricReport report;
  std::vector<Tokens> ref_tokens, hyp_tokens;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::string id = ids.empty() ? std::to_string(i) : ids[i];
    Tokens r = tokenize(refs[i]);
    Tokens h = tokenize(hyps[i]);
    if (r.empty()) {
      report.skipped.push_back({id, "empty reference"});
      continue;
    }
    PairScores p;
    p.id = id;
    const std::string rs = join(r), hs = join(h);
    const auto rc = utf8_codepoints(rs);
    p.word_errors = levenshtein_align(r, h).distance;
    p.ref_words = r.size();
    p.char_errors = levenshtein_align(rc, utf8_codepoints(hs)).distance;
    p.ref_chars = rc.size();
    p.score[static_cast<std::size_t>(Metric::kWer)] = static_cast<double>(p.word_errors) / static_cast<double>(p.ref_words);
    p.score[static_cast<std::size_t>(Metric::kCer)] = static_cast<double>(p.char_errors) / static_cast<double>(p.ref_chars);
    p.score[static_cast<std::size_t>(Metric::kBleu2)] = bleu(r, h, 2);
    p.score[static_cast<std::size_t>(Metric::kBleu3)] = bleu(r, h, 3);
    p.score[static_cast<std::size_t>(Metric::kBleu4)] = bleu(r, h, 4);
    p.score[static_cast<std::size_t>(Metric::kMeteor)] = meteor_hm(r, h);
    p.score[static_cast<std::size_t>(Metric::kRougeL)] = rouge_l(r, h);
    report.pairs.push_back(std::move(p));
    ref_tokens.push_back(std::move(r));
    hyp_tokens.push_back(std::move(h));
  }
  if (report.pairs.empty()) return report;

  const auto ciders = cider(ref_tokens, hyp_tokens);
  for (std::size_t i = 0; i < ciders.size(); ++i) report.pairs[i].score[static_cast<std::size_t>(Metric::kCider)] = ciders[i];

  std::size_t we = 0, rw = 0, ce = 0, rch = 0;
  for (const auto& p : report.pairs) {
    we += p.word_errors;
    rw += p.ref_words;
    ce += p.char_errors;
    rch += p.ref_chars;
  }
  for (Metric m : kAllMetrics) {
    std::vector<double> v;
    v.reserve(report.pairs.size());
    for (const auto& p : report.pairs) v.push_back(p[m]);
    report.distribution[static_cast<std::size_t>(m)] = summarize(v);
    report.mean[static_cast<std::size_t>(m)] = report.distribution[static_cast<std::size_t>(m)].mean;
  }
  report.wer_macro = report[Metric::kWer];
  report.cer_macro = report[Metric::kCer];
  report.mean[static_cast<std::size_t>(Metric::kWer)] = static_cast<double>(we) / static_cast<double>(rw);
  report.mean[static_cast<std::size_t>(Metric::kCer)] = static_cast<double>(ce) / static_cast<double>(rch);
  return report;
}

}  // namespace mmsm
