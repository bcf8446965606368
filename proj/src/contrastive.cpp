#include "mmsm/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsm/errors.hpp"

namespace mmsm {

void ContrastiveConfig::validate() const {
  if (batch_size < 2) throw ConfigError("contrastive: batch_size must be >= 2 (in-batch negatives)");
  if (!(temperature > 0.0)) throw ConfigError("contrastive: temperature must be > 0");
  if (!(lr > 0.0)) throw ConfigError("contrastive: lr must be > 0");
  if (!(text_dropout >= 0.0 && text_dropout < 1.0)) throw ConfigError("contrastive: text_dropout must lie in [0, 1)");
  if (!(min_crop_scale > 0.0 && min_crop_scale <= 1.0)) throw ConfigError("contrastive: min_crop_scale must lie in (0, 1]");
}

TensorF info_nce(const TensorF& a, const TensorF& b, double temperature) {
  if (!(a.shape() == b.shape()) || a.rank() != 2) throw ShapeError("info_nce: expected two [B, d] tensors");
  if (a.rows() < 2) throw ConfigError("info_nce: needs at least 2 pairs");
  const TensorF logits = scale(matmul_nt(normalize_rows(a), normalize_rows(b)), static_cast<float>(1.0 / temperature));
  std::vector<std::int32_t> diag(a.rows());
  std::iota(diag.begin(), diag.end(), 0);
  const TensorF a_to_b = cross_entropy(logits, diag);
  const TensorF b_to_a = cross_entropy(transpose(logits), diag);
  return scale(add(a_to_b, b_to_a), 0.5f);
}

GrayImage random_crop_resize(const GrayImage& image, double min_scale, Rng& rng) {
  const std::size_t size = std::min(image.width, image.height);
  const double side = size * rng.uniform(min_scale, 1.0);
  const double x0 = rng.uniform(0.0, static_cast<double>(image.width) - side);
  const double y0 = rng.uniform(0.0, static_cast<double>(image.height) - side);
  GrayImage out(image.width, image.height);
  auto sample = [&](double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(image.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(image.height - 1));
    const auto xi = static_cast<std::size_t>(x), yi = static_cast<std::size_t>(y);
    const std::size_t xj = std::min(xi + 1, image.width - 1), yj = std::min(yi + 1, image.height - 1);
    const double fx = x - xi, fy = y - yi;
    return (1 - fx) * (1 - fy) * image.at(xi, yi) + fx * (1 - fy) * image.at(xj, yi) + (1 - fx) * fy * image.at(xi, yj) +
           fx * fy * image.at(xj, yj);
  };
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      out.at(x, y) = static_cast<float>(sample(x0 + (x + 0.5) * side / out.width - 0.5,
                                               y0 + (y + 0.5) * side / out.height - 0.5));
  return out;
}

std::vector<TokenId> token_dropout(const std::vector<TokenId>& ids, double p, Rng& rng) {
  std::vector<TokenId> out;
  TokenId first_content = -1;
  for (TokenId id : ids) {
    if (id == kCls || id == kSep || id == kPad) {
      out.push_back(id);
      continue;
    }
    if (first_content < 0) first_content = id;
    if (rng.uniform() >= p) out.push_back(id);
  }
  const bool any_content =
      std::any_of(out.begin(), out.end(), [](TokenId id) { return id != kCls && id != kSep && id != kPad; });
  if (!any_content && first_content >= 0) out.insert(out.begin() + (out.empty() || out[0] != kCls ? 0 : 1), first_content);
  return out;
}

ContrastiveLog contrastive_warmstart(MmsmModel& model, const std::vector<TrainingPair>& pairs,
                                     const Vocabulary& vocab, const ContrastiveConfig& config) {
  ContrastiveLog log;
  if (!config.enabled) return log;
  config.validate();
  if (!model.multimodal()) throw std::logic_error("contrastive warm-start needs the multimodal model");
  if (pairs.size() < 2) throw ConfigError("contrastive: needs at least 2 pairs");

  std::vector<TensorF> params;
  for (const auto& [name, t] : model.parameters())
    if (name.rfind("image.", 0) == 0 || name.rfind("text.", 0) == 0 || name.rfind("contrastive.", 0) == 0)
      params.push_back(t);
  AdamW<float> opt(0.9, 0.999, 1e-8, config.weight_decay);
  const std::size_t max_len = model.config().max_len;

  Rng rng(config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t begin = 0; begin + 1 < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      if (end - begin < 2) break;  // a lone trailing pair has no negatives
      for (auto& p : params) p.zero_grad();
      std::vector<TensorF> img, txt, img_a, img_b, txt_a, txt_b;
      for (std::size_t b = begin; b < end; ++b) {
        const auto& pair = pairs[order[b]];
        const auto ids = encode(pair.report, vocab, true, max_len);
        img.push_back(model.image_embedding(pair.image));
        txt.push_back(model.text_embedding(ids));
        img_a.push_back(model.image_embedding(random_crop_resize(pair.image, config.min_crop_scale, rng)));
        img_b.push_back(model.image_embedding(random_crop_resize(pair.image, config.min_crop_scale, rng)));
        txt_a.push_back(model.text_embedding(token_dropout(ids, config.text_dropout, rng)));
        txt_b.push_back(model.text_embedding(token_dropout(ids, config.text_dropout, rng)));
      }
      const double t = config.temperature;
      const TensorF loss = add(add(info_nce(concat_rows(img), concat_rows(txt), t),
                                   info_nce(concat_rows(img_a), concat_rows(img_b), t)),
                               info_nce(concat_rows(txt_a), concat_rows(txt_b), t));
      log.losses.push_back(loss.item());
      backward(loss);
      clip_grad_norm(params, 1.0);
      opt.step(params, config.lr);
    }
  }
  return log;
}

}  // namespace mmsm
