#include "mmsm/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmsm/errors.hpp"
#include "mmsm/random.hpp"

namespace mmsm {

namespace {

constexpr std::uint64_t kTemplateStream = 0x54;
constexpr std::uint64_t kImageStream = 0x49;

std::string record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rec%05zu", i);
  return buf;
}

std::string fill_template(const std::string& tpl, const std::string& keyword) {
  std::string out = tpl;
  const auto pos = out.find("{kw}");
  out.replace(pos, 4, keyword);
  return out;
}

}  // namespace

std::vector<FindingClass> finding_classes(std::size_t n) {
  static const std::vector<FindingClass> all = {
      {0, Pattern::kDisc, "lobar", "lower"},
      {1, Pattern::kBar, "lower", "lobar"},
      {2, Pattern::kCross, "consolidation", "collapse"},
      {3, Pattern::kChecker, "collapse", "consolidation"},
  };
  if (n == 0 || n > all.size())
    throw ConfigError("synth: n_classes must lie in [1, " + std::to_string(all.size()) + "]");
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> t = {
      "there is {kw} opacity in the right lung .",
      "mild {kw} change is seen at the base .",
      "findings are consistent with {kw} disease .",
      "the heart size is normal . {kw} pattern is stable .",
      "no pneumothorax . persistent {kw} abnormality .",
      "{kw} finding unchanged from prior study .",
  };
  return t;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_of(std::size_t index) {
  const std::uint64_t bucket = mix_seed(index) % 10;
  return bucket < 8 ? Split::kTrain : bucket == 8 ? Split::kVal : Split::kTest;
}

void SynthConfig::validate() const {
  if (n_classes == 0 || n_classes > kMaxClasses)
    throw ConfigError("synth: n_classes must lie in [1, " + std::to_string(kMaxClasses) + "]");
  if (n_records < n_classes) throw ConfigError("synth: n_records must be >= n_classes");
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw ConfigError("synth: noise_level must lie in [0, 1]");
  if (image_size < 8 || image_size % 2 != 0) throw ConfigError("synth: image_size must be even and >= 8");
  if (templates.empty()) throw ConfigError("synth: template pool is empty");
  for (const auto& t : templates)
    if (t.find("{kw}") == std::string::npos) throw ConfigError("synth: template without {kw} slot: '" + t + "'");
}

GrayImage render_class(const FindingClass& c, std::size_t image_size) {
  GrayImage img(image_size, image_size, 0.0f);
  const double q = image_size / 2.0;
  const double ox = (c.id % 2) * q, oy = (c.id / 2 % 2) * q;  // quadrant origin
  const double cx = ox + q / 2, cy = oy + q / 2;
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double dx = px - cx, dy = py - cy;
      bool on = false;
      switch (c.pattern) {
        case Pattern::kDisc: on = dx * dx + dy * dy <= (0.35 * q) * (0.35 * q); break;
        case Pattern::kBar: on = std::abs(dx) <= 0.4 * q && std::abs(dy) <= 0.15 * q; break;
        case Pattern::kCross:
          on = (std::abs(dx) <= 0.4 * q && std::abs(dy) <= 0.1 * q) || (std::abs(dy) <= 0.4 * q && std::abs(dx) <= 0.1 * q);
          break;
        case Pattern::kChecker:
          if (std::abs(dx) <= 0.4 * q && std::abs(dy) <= 0.4 * q) {
            const auto cell = static_cast<long>(std::floor((dx + 0.4 * q) / (0.2 * q))) +
                              static_cast<long>(std::floor((dy + 0.4 * q) / (0.2 * q)));
            on = cell % 2 == 0;
          }
          break;
      }
      if (on) img.at(x, y) = 1.0f;
    }
  }
  return img;
}

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SynthCorpus out;
  out.classes = finding_classes(config.n_classes);
  std::vector<GrayImage> clean;
  for (const auto& c : out.classes) clean.push_back(render_class(c, config.image_size));

  out.records.reserve(config.n_records);
  for (std::size_t i = 0; i < config.n_records; ++i) {
    const auto& cls = out.classes[i % config.n_classes];
    SynthRecord r;
    r.record.id = record_id(i);
    r.record.image = "images/" + r.record.id + ".pgm";
    r.record.label = cls.id;
    Rng tpl_rng(derive_seed(config.seed, kTemplateStream, i));
    r.record.report = fill_template(config.templates[tpl_rng.uniform_index(config.templates.size())], cls.keyword);
    r.image = clean[static_cast<std::size_t>(cls.id)];
    if (config.noise_level > 0.0) {
      Rng img_rng(derive_seed(config.seed, kImageStream, i));
      for (auto& p : r.image.pixels)
        p = static_cast<float>(std::clamp(p + img_rng.uniform(-config.noise_level, config.noise_level), 0.0, 1.0));
    }
    r.image = quantize_8bit(r.image);  // what a reader of the PGM file sees
    r.split = split_of(i);
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<CorpusRecord> SynthCorpus::corpus(std::optional<Split> split) const {
  std::vector<CorpusRecord> out;
  for (const auto& r : records)
    if (!split || r.split == *split) out.push_back(r.record);
  return out;
}

void write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  write_file(dir / "corpus.jsonl", corpus_to_jsonl(corpus.corpus()));
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
    write_file(dir / (std::string(to_string(s)) + ".jsonl"), corpus_to_jsonl(corpus.corpus(s)));
  for (const auto& r : corpus.records) write_pgm(dir / r.record.image, r.image);
}

AmbiguityResult ambiguity_probe(const std::vector<CorpusRecord>& records, const CorruptionConfig& corruption,
                                const Vocabulary& vocab, std::uint64_t seed) {
  const auto classes = finding_classes(kMaxClasses);
  AmbiguityResult out;
  out.unrecoverable.reserve(records.size());
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.label < 0 || static_cast<std::size_t>(rec.label) >= classes.size())
      throw FormatError("ambiguity_probe: record " + rec.id + " has unknown class " + std::to_string(rec.label));
    const std::string& keyword = classes[static_cast<std::size_t>(rec.label)].keyword;
    const auto tokens = tokenize(rec.report);
    Rng rng(sentence_seed(seed, i));
    const auto result = corrupt(tokens, corruption, vocab, rng);
    std::vector<bool> lost(tokens.size(), false);
    for (const auto& e : result.trace.edits)
      if (e.op == CorruptionOp::kRemove || e.op == CorruptionOp::kReplace) lost[e.source_index] = true;
    bool any = false, all_lost = true;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t] != keyword) continue;
      any = true;
      all_lost = all_lost && lost[t];
    }
    const bool flag = any && all_lost;
    out.unrecoverable.push_back(flag);
    flagged += flag;
  }
  out.fraction = records.empty() ? 0.0 : static_cast<double>(flagged) / static_cast<double>(records.size());
  return out;
}

}  // namespace mmsm
