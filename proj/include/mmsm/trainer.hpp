#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmsm/checkpoint.hpp"
#include "mmsm/corruptor.hpp"
#include "mmsm/image.hpp"
#include "mmsm/model.hpp"
#include "mmsm/tensor.hpp"
#include "mmsm/textproc.hpp"

namespace mmsm {

struct TrainConfig {
  double lr_warmup_init = 1e-5;
  double lr_max = 1e-4;
  double lr_final = 0.0;
  // Warm-up length: warmup_epochs when set, else warmup_fraction of all steps.
  std::optional<double> warmup_epochs;
  double warmup_fraction = 0.1;
  std::size_t total_epochs = 20;
  std::size_t batch_size = 32;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  CorruptionConfig corruption;
  // Validation records decoded per epoch (0 = all).
  std::size_t val_limit = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
};

/// Number of warm-up steps for a run of total_epochs * steps_per_epoch steps.
std::size_t warmup_steps(std::size_t steps_per_epoch, const TrainConfig& config);

/// Linear warm-up from lr_warmup_init to lr_max over warmup_steps(), then
/// cosine decay reaching lr_final at the last step of the run.
double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& config);

/// AdamW with decoupled weight decay: theta <- theta (1 - lr wd), then the
/// bias-corrected Adam update.
template <class S>
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  explicit AdamW(const TrainConfig& c) : AdamW(c.beta1, c.beta2, c.eps, c.weight_decay) {}

  /// Applies one update from the gradients held by `params`. Returns false and
  /// leaves everything untouched when any gradient is non-finite.
  bool step(std::vector<Tensor<S>>& params, double lr);

  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

/// Global L2 norm of the gradients; scales them down to max_norm when larger.
/// Returns the norm before clipping.
template <class S>
double clip_grad_norm(std::vector<Tensor<S>>& params, double max_norm);

/// One (image, clean report) training record.
struct TrainingPair {
  std::string id;
  GrayImage image;
  std::vector<std::string> report;  // clean content tokens
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  bool diverged = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_wer = 0.0;
  double val_cer = 0.0;
  bool best = false;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::size_t divergence_events = 0;

  /// One JSON object per line: steps first, then epoch summaries.
  std::string to_jsonl() const;
};

struct TrainResult {
  Checkpoint best;  // model + "vocab" + "train_config" records
  std::size_t best_epoch = 0;
  double best_val_wer = 0.0;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

/// Teacher-forced training of `model` to map corrupted reports back to the
/// clean ones. Corruption is redrawn every epoch from seeds derived from
/// config.seed. `log` is filled as training goes, so it survives a
/// DivergenceError (two consecutive non-finite losses).
TrainResult train_correction(MmsmModel& model, const std::vector<TrainingPair>& train,
                             const std::vector<TrainingPair>& val, const Vocabulary& vocab,
                             const TrainConfig& config, TrainLog& log, const ProgressFn& progress = {});

/// Corrupted source ids for a record, as the trainer feeds them to the model.
std::vector<TokenId> corrupted_source(const TrainingPair& pair, const Vocabulary& vocab,
                                      const CorruptionConfig& corruption, std::uint64_t seed, std::size_t max_len);

/// Greedy-decodes every record's corrupted report; returns the hypotheses as text.
std::vector<std::string> correct_all(const MmsmModel& model, const std::vector<const GrayImage*>& images,
                                     const std::vector<std::vector<TokenId>>& sources, const Vocabulary& vocab,
                                     std::size_t max_len);

/// Model checkpoint plus the vocabulary (and optionally the training config).
Checkpoint bundle_checkpoint(const MmsmModel& model, const Vocabulary& vocab, const TrainConfig* config = nullptr);
Vocabulary checkpoint_vocabulary(const Checkpoint& ck);

}  // namespace mmsm
