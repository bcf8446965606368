#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmsm/corruptor.hpp"
#include "mmsm/image.hpp"
#include "mmsm/jsonl.hpp"
#include "mmsm/textproc.hpp"

namespace mmsm {

enum class Pattern { kDisc, kBar, kCross, kChecker };

/// A finding class: a bright pattern drawn in its own image quadrant and the
/// one report keyword that names it. Classes come in confusable pairs
/// (0/1, 2/3) whose keywords differ by a few letters.
struct FindingClass {
  int id = 0;
  Pattern pattern = Pattern::kDisc;
  std::string keyword;
  std::string partner_keyword;
};

inline constexpr std::size_t kMaxClasses = 4;

/// The first n classes (n <= kMaxClasses).
std::vector<FindingClass> finding_classes(std::size_t n = kMaxClasses);

/// Built-in report templates; "{kw}" marks the keyword slot.
const std::vector<std::string>& default_templates();

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);

/// 80/10/10 assignment from a hash of the record index.
Split split_of(std::size_t index);

struct SynthConfig {
  std::size_t n_records = 2000;
  std::size_t n_classes = 4;
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::vector<std::string> templates = default_templates();

  void validate() const;
};

struct SynthRecord {
  CorpusRecord record;
  GrayImage image;
  Split split = Split::kTrain;
};

struct SynthCorpus {
  std::vector<FindingClass> classes;
  std::vector<SynthRecord> records;

  std::vector<CorpusRecord> corpus(std::optional<Split> split = std::nullopt) const;
};

/// Class of record i is i mod n_classes; the report is a template (chosen per
/// record) with the class keyword slotted in; the image is the class pattern
/// plus uniform noise in [-noise_level, noise_level], clamped to [0, 1].
SynthCorpus generate(const SynthConfig& config);

/// Noise-free rendering of a class pattern.
GrayImage render_class(const FindingClass& c, std::size_t image_size);

/// Writes corpus.jsonl, train.jsonl, val.jsonl, test.jsonl and images/<id>.pgm.
void write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

struct AmbiguityResult {
  double fraction = 0.0;
  std::vector<bool> unrecoverable;  // per record
};

/// Corrupts record i with seed sentence_seed(seed, i) and flags it when every
/// occurrence of its class keyword was removed or replaced.
AmbiguityResult ambiguity_probe(const std::vector<CorpusRecord>& records, const CorruptionConfig& corruption,
                                const Vocabulary& vocab, std::uint64_t seed);

}  // namespace mmsm
