#include "mmsm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "mmsm/errors.hpp"
#include "mmsm/metrics.hpp"

namespace mmsm {

namespace {

// Seed streams, so shuffling, corruption and dropout never share draws.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4452;
constexpr std::uint64_t kValStream = 0x56414c;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr_warmup_init >= 0.0) || !(lr_max > 0.0) || !(lr_final >= 0.0))
    throw ConfigError("train: learning rates must be finite, lr_max > 0");
  if (total_epochs == 0) throw ConfigError("train: total_epochs must be >= 1");
  if (warmup_epochs && !(*warmup_epochs >= 0.0 && *warmup_epochs <= static_cast<double>(total_epochs)))
    throw ConfigError("train: warmup_epochs must lie in [0, total_epochs]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("train: warmup_fraction must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
  corruption.validate();
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lr_warmup_init"] = lr_warmup_init;
  j["lr_max"] = lr_max;
  j["lr_final"] = lr_final;
  if (warmup_epochs) j["warmup_epochs"] = *warmup_epochs;
  j["warmup_fraction"] = warmup_fraction;
  j["total_epochs"] = total_epochs;
  j["batch_size"] = batch_size;
  j["weight_decay"] = weight_decay;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["grad_clip"] = grad_clip;
  j["seed"] = seed;
  j["val_limit"] = val_limit;
  nlohmann::ordered_json c;
  c["processed_fraction"] = corruption.processed_fraction;
  c["prob_low"] = corruption.prob_low;
  c["prob_high"] = corruption.prob_high;
  if (corruption.op_weights_override) c["op_weights"] = *corruption.op_weights_override;
  j["corruption"] = c;
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("train config: expected a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr_warmup_init") c.lr_warmup_init = value.get<double>();
      else if (key == "lr_max") c.lr_max = value.get<double>();
      else if (key == "lr_final") c.lr_final = value.get<double>();
      else if (key == "warmup_epochs") c.warmup_epochs = value.get<double>();
      else if (key == "warmup_fraction") c.warmup_fraction = value.get<double>();
      else if (key == "total_epochs") c.total_epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "val_limit") c.val_limit = value.get<std::size_t>();
      else if (key == "corruption") {
        for (const auto& [ck, cv] : value.items()) {
          if (ck == "processed_fraction") c.corruption.processed_fraction = cv.get<double>();
          else if (ck == "prob_low") c.corruption.prob_low = cv.get<double>();
          else if (ck == "prob_high") c.corruption.prob_high = cv.get<double>();
          else if (ck == "op_weights") c.corruption.op_weights_override = cv.get<std::array<double, 3>>();
          else throw FormatError("train config: unknown corruption key '" + ck + "'");
        }
      } else {
        throw FormatError("train config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t warmup_steps(std::size_t steps_per_epoch, const TrainConfig& config) {
  const double total = static_cast<double>(config.total_epochs * steps_per_epoch);
  const double w = config.warmup_epochs ? *config.warmup_epochs * static_cast<double>(steps_per_epoch)
                                        : config.warmup_fraction * total;
  return static_cast<std::size_t>(std::llround(w));
}

double lr_schedule(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& config) {
  if (steps_per_epoch == 0) throw std::invalid_argument("lr_schedule: steps_per_epoch must be >= 1");
  const std::size_t total = config.total_epochs * steps_per_epoch;
  const std::size_t warm = warmup_steps(steps_per_epoch, config);
  if (step == warm) return config.lr_max;
  if (step < warm)
    return config.lr_warmup_init +
           (config.lr_max - config.lr_warmup_init) * static_cast<double>(step) / static_cast<double>(warm);
  // Cosine over steps warm .. total-1, so the last step lands on lr_final.
  const double span = static_cast<double>(total) - 1.0 - static_cast<double>(warm);
  const double progress = span <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(step - warm) / span);
  return config.lr_final + (config.lr_max - config.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

template <class S>
bool AdamW<S>::step(std::vector<Tensor<S>>& params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (S g : p.mutable_grad())
      if (!std::isfinite(g)) return false;
  }
  if (m_.empty()) {
    for (auto& p : params) {
      m_.emplace_back(p.numel(), S(0));
      v_.emplace_back(p.numel(), S(0));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("adamw: parameter list changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const S decay = static_cast<S>(1.0 - lr * weight_decay_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    if (theta.size() != m_[i].size()) throw std::invalid_argument("adamw: parameter shape changed between steps");
    const bool has = params[i].has_grad();
    const std::span<S> grad = has ? params[i].mutable_grad() : std::span<S>{};
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = has ? static_cast<double>(grad[j]) : 0.0;
      theta[j] *= decay;
      const double mj = beta1_ * m[j] + (1.0 - beta1_) * g;
      const double vj = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      theta[j] = static_cast<S>(theta[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
    }
  }
  return true;
}

template <class S>
double clip_grad_norm(std::vector<Tensor<S>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (S g : p.mutable_grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad())
        for (S& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::vector<Tensor<float>>&, double);
template double clip_grad_norm(std::vector<Tensor<double>>&, double);

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["epoch"] = s.epoch;
    j["loss"] = s.loss;
    j["lr"] = s.lr;
    j["grad_norm"] = s.grad_norm;
    if (s.diverged) j["diverged"] = true;
    out += j.dump() + "\n";
  }
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch_summary"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_wer"] = e.val_wer;
    j["val_cer"] = e.val_cer;
    j["best"] = e.best;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<TokenId> corrupted_source(const TrainingPair& pair, const Vocabulary& vocab,
                                      const CorruptionConfig& corruption, std::uint64_t seed, std::size_t max_len) {
  Rng rng(seed);
  return encode(corrupt(pair.report, corruption, vocab, rng).tokens, vocab, true, max_len);
}

std::vector<std::string> correct_all(const MmsmModel& model, const std::vector<const GrayImage*>& images,
                                     const std::vector<std::vector<TokenId>>& sources, const Vocabulary& vocab,
                                     std::size_t max_len) {
  if (images.size() != sources.size()) throw std::invalid_argument("correct_all: image/source count mismatch");
  std::vector<std::string> out;
  out.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    out.push_back(decode(model.correct(model.multimodal() ? images[i] : nullptr, sources[i], max_len), vocab));
  return out;
}

Checkpoint bundle_checkpoint(const MmsmModel& model, const Vocabulary& vocab, const TrainConfig* config) {
  Checkpoint ck = model.to_checkpoint();
  ck.blobs.emplace_back("vocab", vocab.to_string());
  if (config) ck.blobs.emplace_back("train_config", config->to_json());
  return ck;
}

Vocabulary checkpoint_vocabulary(const Checkpoint& ck) {
  const std::string* v = ck.find_blob("vocab");
  if (!v) throw FormatError("checkpoint: missing vocab record");
  return Vocabulary::from_string(*v);
}

TrainResult train_correction(MmsmModel& model, const std::vector<TrainingPair>& train,
                             const std::vector<TrainingPair>& val, const Vocabulary& vocab,
                             const TrainConfig& config, TrainLog& log, const ProgressFn& progress) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");
  if (model.config().vocab_size != vocab.size())
    throw ConfigError("train: model vocab_size " + std::to_string(model.config().vocab_size) +
                      " does not match vocabulary of " + std::to_string(vocab.size()));
  const std::size_t max_len = model.config().max_len;
  const bool use_images = model.multimodal();

  std::vector<std::vector<TokenId>> targets;
  targets.reserve(train.size());
  for (const auto& p : train) targets.push_back(encode(p.report, vocab, true, max_len));

  const std::size_t n_val = config.val_limit ? std::min(config.val_limit, val.size()) : val.size();
  std::vector<const GrayImage*> val_images;
  std::vector<std::vector<TokenId>> val_sources;
  std::vector<std::string> val_refs;
  for (std::size_t i = 0; i < n_val; ++i) {
    val_images.push_back(&val[i].image);
    val_sources.push_back(
        corrupted_source(val[i], vocab, config.corruption, derive_seed(config.seed, kValStream, i), max_len));
    val_refs.push_back(join(val[i].report));
  }

  std::vector<TensorF> params;
  for (const auto& [name, t] : model.parameters()) params.push_back(t);
  AdamW<float> opt(config);

  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  std::size_t step = 0;
  std::size_t bad_losses = 0;
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < config.total_epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, kShuffleStream, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t b = begin; b < end; ++b) batch_tokens += targets[order[b]].size() - 1;

      for (auto& p : params) p.zero_grad();
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr_schedule(step, steps_per_epoch, config);
      bool finite_loss = true;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto source = corrupted_source(train[idx], vocab, config.corruption,
                                             derive_seed(config.seed, epoch + 1, idx), max_len);
        Rng drop(derive_seed(config.seed ^ kDropoutStream, step, idx));
        const ForwardContext ctx{true, &drop};
        const TensorF loss = model.loss(use_images ? &train[idx].image : nullptr, source, targets[idx], ctx);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          finite_loss = false;
          rec.loss = value;
          break;
        }
        const double weight = static_cast<double>(targets[idx].size() - 1) / static_cast<double>(batch_tokens);
        backward(scale(loss, static_cast<float>(weight)));
        rec.loss += value * weight;
      }

      bool applied = false;
      if (finite_loss) {
        bad_losses = 0;
        rec.grad_norm = clip_grad_norm(params, config.grad_clip);
        applied = opt.step(params, rec.lr);
      } else {
        ++bad_losses;
      }
      if (!applied) {
        rec.diverged = true;
        ++log.divergence_events;
      } else {
        epoch_loss += rec.loss * static_cast<double>(batch_tokens);
        epoch_tokens += batch_tokens;
      }
      log.steps.push_back(rec);
      if (bad_losses >= 2)
        throw DivergenceError("training diverged: non-finite loss at steps " + std::to_string(step - 1) + " and " +
                              std::to_string(step));
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
    if (!val_sources.empty()) {
      const auto hyps = correct_all(model, val_images, val_sources, vocab, max_len);
      const auto report = evaluate_corpus(val_refs, hyps);
      er.val_wer = report[Metric::kWer];
      er.val_cer = report[Metric::kCer];
    }
    // Without validation data the last epoch is kept.
    if (val_sources.empty() || er.val_wer < best) {
      best = er.val_wer;
      er.best = true;
      result.best = bundle_checkpoint(model, vocab, &config);
      result.best_epoch = epoch;
      result.best_val_wer = er.val_wer;
    }
    log.epochs.push_back(er);
    if (progress) progress(er);
  }
  return result;
}

}  // namespace mmsm
