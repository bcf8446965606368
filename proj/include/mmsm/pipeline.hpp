#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mmsm/jsonl.hpp"
#include "mmsm/metrics.hpp"
#include "mmsm/model.hpp"
#include "mmsm/synthcorpus.hpp"
#include "mmsm/trainer.hpp"

namespace mmsm {

/// Identifies how an output was produced. No timestamps, so reruns with the
/// same inputs stay byte-identical.
struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
  std::string config;  // canonical JSON of the effective settings

  std::string config_hash() const;   // 16 hex digits of FNV-1a over `config`
  std::string to_json() const;       // {"tool", "version", "command", "seed", "config_hash"}
  std::string jsonl_header() const;  // {"provenance": {...}}\n
};

std::string version_string();

/// MMSM_THREADS if set to a positive integer, else 1.
std::size_t default_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; callers write results by index, so output order
/// does not depend on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Image of a corpus record: images_dir/<file name> when images_dir is given,
/// else relative to the corpus directory.
std::filesystem::path resolve_image(const std::filesystem::path& corpus_dir,
                                    const std::optional<std::filesystem::path>& images_dir, const std::string& image);

std::vector<TrainingPair> load_training_pairs(const std::filesystem::path& corpus_path,
                                              const std::optional<std::filesystem::path>& images_dir,
                                              bool load_images = true);

/// Pairs references and hypotheses by id, in reference order. References
/// without a hypothesis and hypotheses without a reference become skipped
/// entries.
MetricReport evaluate_texts(const std::vector<TextRecord>& refs, const std::vector<TextRecord>& hyps);

std::string report_to_json(const MetricReport& report, const Provenance* provenance, bool include_pairs = true);

/// Greedy correction of each input text. For the multimodal model the image
/// is images_dir/<id>.pgm.
std::vector<TextRecord> correct_texts(const MmsmModel& model, const Vocabulary& vocab,
                                      const std::vector<TextRecord>& inputs,
                                      const std::optional<std::filesystem::path>& images_dir, std::size_t threads);

// ---------------------------------------------------------------------------
// WER/CER grids: rows Input / Text-Only / Proposed, one column per system.

inline const std::vector<std::string> kGridRows = {"Input", "Text-Only", "Proposed"};

struct GridCell {
  double wer = 0.0;
  double cer = 0.0;
};

struct Grid {
  std::vector<std::string> systems;
  std::vector<std::string> rows = kGridRows;
  std::vector<std::vector<GridCell>> cells;  // [row][system]

  std::string to_json(const Provenance* provenance = nullptr) const;
  static Grid from_json(std::string_view text);
  std::string to_markdown() const;
  std::string to_csv() const;
};

std::string format_cell(const GridCell& c);  // "0.195/0.079"

// ---------------------------------------------------------------------------
// Desk-scale comparison on the synthetic corpus: both variants trained with
// the same seeds and initial shared weights, then scored on the test split.

struct HeadlineConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t eval_seed = 99;  // corruption of the test split

  std::string to_json() const;
};

/// Reduced model (d_model 64, two layers per stack) sized for a single CPU core.
HeadlineConfig default_headline_config();

struct HeadlineResult {
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  double ambiguity_fraction = 0.0;
  std::vector<bool> flagged;  // per test record
  MetricReport input, text_only, proposed;
  MetricReport input_flagged, text_only_flagged, proposed_flagged;
  TrainLog proposed_log, text_only_log;
  Checkpoint proposed_checkpoint, text_only_checkpoint;
  std::vector<TextRecord> test_refs, test_inputs, text_only_hyps, proposed_hyps;
};

using MessageFn = std::function<void(const std::string&)>;

HeadlineResult run_headline(const HeadlineConfig& config, const MessageFn& message = {});

}  // namespace mmsm
