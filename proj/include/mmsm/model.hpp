#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmsm/checkpoint.hpp"
#include "mmsm/image.hpp"
#include "mmsm/random.hpp"
#include "mmsm/tensor.hpp"
#include "mmsm/textproc.hpp"

namespace mmsm {

enum class ModelVariant { kMultimodal, kTextOnly };

const char* to_string(ModelVariant v);
ModelVariant model_variant_from_string(std::string_view s);

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t n_image_layers = 3;
  std::size_t n_text_layers = 3;
  std::size_t n_fusion_layers = 3;
  std::size_t n_decoder_layers = 3;
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::size_t vocab_size = 0;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t ffn_mult = 4;
  double dropout = 0.1;
  ModelVariant variant = ModelVariant::kMultimodal;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form number of learnable scalars for a config.
std::size_t parameter_count(const ModelConfig& config);

/// Per-call switches: dropout runs only when training is set and an RNG is given.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Additive attention mask, rows = queries, cols = keys; 0 keeps, kMasked drops.
struct AttentionMask {
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<float> bias;
};

inline constexpr float kMasked = -1e9f;

AttentionMask key_padding_mask(std::span<const TokenId> key_ids, std::size_t queries);
AttentionMask causal_mask(std::size_t n);

struct Linear {
  TensorF weight;  // [in, out]
  TensorF bias;    // [out]
};

struct LayerNormParams {
  TensorF gain;
  TensorF bias;
};

struct AttentionParams {
  Linear query, key, value, output;
};

struct FeedForwardParams {
  Linear up, down;
};

struct EncoderBlock {
  LayerNormParams ln_attn;
  AttentionParams attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

/// Self-attention, then (multimodal only) cross-attention with text queries and
/// image keys/values, then feed-forward.
struct FusionBlock {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  std::optional<LayerNormParams> ln_cross;
  std::optional<AttentionParams> cross_attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

struct DecoderBlock {
  LayerNormParams ln_self;
  AttentionParams self_attn;
  LayerNormParams ln_cross;
  AttentionParams cross_attn;
  LayerNormParams ln_ffn;
  FeedForwardParams ffn;
};

/// Encoder output handed to the decoder.
struct Memory {
  TensorF features;             // [n, d_model]
  std::vector<TokenId> source;  // encoder input ids, for the key padding mask
};

/// Correction network: ViT-style image encoder, text encoder, fusion encoder
/// with text-to-image cross-attention, and an autoregressive decoder. The
/// text-only variant is the same graph without the image encoder and without
/// the cross-attention sublayers of the fusion blocks.
class MmsmModel {
 public:
  explicit MmsmModel(const ModelConfig& config);
  MmsmModel(const MmsmModel&) = delete;
  MmsmModel& operator=(const MmsmModel&) = delete;
  MmsmModel(MmsmModel&&) = default;
  MmsmModel& operator=(MmsmModel&&) = default;

  const ModelConfig& config() const { return config_; }
  bool multimodal() const { return config_.variant == ModelVariant::kMultimodal; }

  const std::vector<std::pair<std::string, TensorF>>& parameters() const { return params_; }
  std::size_t allocated_parameter_count() const;
  TensorF* find_parameter(std::string_view name);

  /// Copies values of every same-named, same-shaped parameter from `other`.
  /// Returns how many tensors were copied.
  std::size_t copy_shared_parameters(const MmsmModel& other);

  /// Patch embeddings + class token + positions, before any attention: [P+1, d].
  TensorF embed_patches(const GrayImage& image, const ForwardContext& ctx = {}) const;
  /// Image features [P+1, d]. Throws ShapeError on wrong image dimensions.
  TensorF encode_image(const GrayImage& image, const ForwardContext& ctx = {}) const;
  /// Text features [n, d]; PAD positions are masked out as attention keys.
  TensorF encode_text(std::span<const TokenId> ids, const ForwardContext& ctx = {}) const;
  /// Fusion encoder over text features; `image_features` is ignored (and may
  /// be undefined) for the text-only variant. Output has the shape of `text`.
  TensorF fuse(const TensorF& text, const TensorF& image_features, std::span<const TokenId> text_ids,
               const ForwardContext& ctx = {}) const;

  /// encode_text -> fuse -> final norm. `image` may be null for text-only.
  Memory encode(const GrayImage* image, std::span<const TokenId> source_ids, const ForwardContext& ctx = {}) const;

  /// Decoder logits for every prefix position: [n, vocab].
  TensorF decode_logits(std::span<const TokenId> prefix, const Memory& memory, const ForwardContext& ctx = {}) const;
  /// Logits for the token following `prefix` (which must start with CLS).
  std::vector<float> decode_step(std::span<const TokenId> prefix, const Memory& memory) const;

  /// Greedy decoding from CLS until SEP or max_len tokens (ties -> lowest id).
  std::vector<TokenId> correct(const GrayImage* image, std::span<const TokenId> corrupted, std::size_t max_len) const;

  /// Teacher-forced next-token cross-entropy of `target` (CLS ... SEP).
  TensorF loss(const GrayImage* image, std::span<const TokenId> source, std::span<const TokenId> target,
               const ForwardContext& ctx = {}) const;

  /// Pooled (class token / CLS) projections used by contrastive alignment.
  TensorF image_embedding(const GrayImage& image, const ForwardContext& ctx = {}) const;
  TensorF text_embedding(std::span<const TokenId> ids, const ForwardContext& ctx = {}) const;

  Checkpoint to_checkpoint() const;
  static MmsmModel from_checkpoint(const Checkpoint& ck);

 private:
  TensorF& add_param(std::string name, TensorF t);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  LayerNormParams make_norm(const std::string& name);
  AttentionParams make_attention(const std::string& name, Rng& rng);
  FeedForwardParams make_ffn(const std::string& name, Rng& rng);

  TensorF attention(const AttentionParams& p, const TensorF& queries, const TensorF& keys_values,
                    const AttentionMask* mask) const;
  TensorF feed_forward(const FeedForwardParams& p, const TensorF& x) const;
  TensorF residual(const TensorF& x, const TensorF& update, const ForwardContext& ctx) const;
  TensorF encoder_block(const EncoderBlock& b, const TensorF& x, const AttentionMask* mask,
                        const ForwardContext& ctx) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, TensorF>> params_;

  // Image encoder (multimodal only)
  Linear patch_proj_;
  TensorF image_cls_;
  TensorF image_pos_;
  std::vector<EncoderBlock> image_blocks_;
  LayerNormParams image_norm_;
  // Text + fusion encoder
  TensorF text_embed_;
  TensorF text_pos_;
  std::vector<EncoderBlock> text_blocks_;
  std::vector<FusionBlock> fusion_blocks_;
  LayerNormParams memory_norm_;
  // Decoder
  TensorF dec_embed_;
  TensorF dec_pos_;
  std::vector<DecoderBlock> decoder_blocks_;
  LayerNormParams dec_norm_;
  Linear lm_head_;
  // Contrastive projections (multimodal only)
  Linear image_proj_;
  Linear text_proj_;
};

/// Flattened non-overlapping patches in row-major patch order: [P, patch^2].
TensorF patchify(const GrayImage& image, std::size_t patch_size);

}  // namespace mmsm
