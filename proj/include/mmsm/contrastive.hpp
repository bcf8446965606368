#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmsm/model.hpp"
#include "mmsm/trainer.hpp"

namespace mmsm {

/// Optional image-text alignment before correction training.
struct ContrastiveConfig {
  bool enabled = false;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double temperature = 0.07;
  double lr = 1e-4;
  double weight_decay = 0.05;
  double text_dropout = 0.1;     // IMC text view: token dropout rate
  double min_crop_scale = 0.7;   // IMC image view: crop side as a fraction of the image
  std::uint64_t seed = 0;

  void validate() const;
};

/// Symmetric InfoNCE between the rows of a and b ([B, d] each): row i of a
/// should match row i of b. Rows are L2-normalized first.
TensorF info_nce(const TensorF& a, const TensorF& b, double temperature);

/// Random square crop (side >= min_scale * size) resized back with bilinear
/// interpolation.
GrayImage random_crop_resize(const GrayImage& image, double min_scale, Rng& rng);

/// Drops each content token with probability p; [CLS]/[SEP] always stay, and
/// at least one content token is kept when there was one.
std::vector<TokenId> token_dropout(const std::vector<TokenId>& ids, double p, Rng& rng);

struct ContrastiveLog {
  std::vector<double> losses;  // one per step: CMC + image IMC + text IMC
};

/// Updates the image/text encoders and projections with cross-modal plus
/// intra-modal contrastive losses. A no-op when disabled. Throws ConfigError
/// for batch sizes below 2 (no negatives) and logic_error for text-only models.
ContrastiveLog contrastive_warmstart(MmsmModel& model, const std::vector<TrainingPair>& pairs,
                                     const Vocabulary& vocab, const ContrastiveConfig& config);

}  // namespace mmsm
