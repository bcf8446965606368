#include "mmsm/model.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "mmsm/errors.hpp"

namespace mmsm {

const char* to_string(ModelVariant v) { return v == ModelVariant::kMultimodal ? "mmsm" : "text-only"; }

ModelVariant model_variant_from_string(std::string_view s) {
  if (s == "mmsm") return ModelVariant::kMultimodal;
  if (s == "text-only") return ModelVariant::kTextOnly;
  throw ConfigError("unknown model variant '" + std::string(s) + "' (expected mmsm or text-only)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("model: d_model must be a positive multiple of n_heads");
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0)
    throw ConfigError("model: image_size must be a positive multiple of patch_size");
  if (vocab_size <= static_cast<std::size_t>(kNumReserved))
    throw ConfigError("model: vocab_size must exceed the reserved tokens");
  if (max_len < 2) throw ConfigError("model: max_len must be >= 2");
  if (ffn_mult == 0) throw ConfigError("model: ffn_mult must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_image_layers"] = n_image_layers;
  j["n_text_layers"] = n_text_layers;
  j["n_fusion_layers"] = n_fusion_layers;
  j["n_decoder_layers"] = n_decoder_layers;
  j["image_size"] = image_size;
  j["patch_size"] = patch_size;
  j["vocab_size"] = vocab_size;
  j["max_len"] = max_len;
  j["ffn_mult"] = ffn_mult;
  j["dropout"] = dropout;
  j["variant"] = to_string(variant);
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("model config: expected a JSON object");
  static const std::set<std::string> known = {"d_model",   "n_heads",    "n_image_layers", "n_text_layers",
                                              "n_fusion_layers", "n_decoder_layers", "image_size", "patch_size",
                                              "vocab_size", "max_len",   "ffn_mult",       "dropout",
                                              "variant",    "init_seed"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw FormatError("model config: unknown key '" + key + "'");
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  try {
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("n_image_layers", c.n_image_layers);
    get("n_text_layers", c.n_text_layers);
    get("n_fusion_layers", c.n_fusion_layers);
    get("n_decoder_layers", c.n_decoder_layers);
    get("image_size", c.image_size);
    get("patch_size", c.patch_size);
    get("vocab_size", c.vocab_size);
    get("max_len", c.max_len);
    get("ffn_mult", c.ffn_mult);
    get("dropout", c.dropout);
    get("init_seed", c.init_seed);
    if (j.contains("variant")) c.variant = model_variant_from_string(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  return c;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_mult * c.d_model, v = c.vocab_size, l = c.max_len;
  const std::size_t norm = 2 * d;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t block = 2 * norm + attn + ffn;
  std::size_t n = 0;
  if (c.variant == ModelVariant::kMultimodal) {
    const std::size_t patch = c.patch_size * c.patch_size;
    n += patch * d + d + d + (c.num_patches() + 1) * d + c.n_image_layers * block + norm;
  }
  n += v * d + l * d + c.n_text_layers * block;
  n += c.n_fusion_layers * (block + (c.variant == ModelVariant::kMultimodal ? norm + attn : 0));
  n += norm;
  n += v * d + l * d + c.n_decoder_layers * (block + norm + attn) + norm + d * v + v;
  if (c.variant == ModelVariant::kMultimodal) n += 2 * (d * d + d);
  return n;
}

AttentionMask key_padding_mask(std::span<const TokenId> key_ids, std::size_t queries) {
  AttentionMask m{queries, key_ids.size(), std::vector<float>(queries * key_ids.size(), 0.0f)};
  for (std::size_t q = 0; q < queries; ++q)
    for (std::size_t k = 0; k < key_ids.size(); ++k)
      if (key_ids[k] == kPad) m.bias[q * key_ids.size() + k] = kMasked;
  return m;
}

AttentionMask causal_mask(std::size_t n) {
  AttentionMask m{n, n, std::vector<float>(n * n, 0.0f)};
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = q + 1; k < n; ++k) m.bias[q * n + k] = kMasked;
  return m;
}

TensorF patchify(const GrayImage& image, std::size_t patch_size) {
  const std::size_t per_side = image.width / patch_size;
  const std::size_t count = per_side * per_side;
  const std::size_t area = patch_size * patch_size;
  std::vector<float> v(count * area);
  for (std::size_t py = 0; py < per_side; ++py)
    for (std::size_t px = 0; px < per_side; ++px)
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          v[(py * per_side + px) * area + y * patch_size + x] = image.at(px * patch_size + x, py * patch_size + y);
  return TensorF(Shape{count, area}, std::move(v));
}

// ---------------------------------------------------------------------------
// Construction

TensorF& MmsmModel::add_param(std::string name, TensorF t) {
  params_.emplace_back(std::move(name), std::move(t));
  return params_.back().second;
}

Linear MmsmModel::make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  Linear l;
  l.weight = add_param(name + ".weight", TensorF::truncated_normal(Shape{in, out}, 0.02f, rng));
  l.bias = add_param(name + ".bias", TensorF::zeros(Shape{out}, true));
  return l;
}

LayerNormParams MmsmModel::make_norm(const std::string& name) {
  LayerNormParams n;
  n.gain = add_param(name + ".gain", TensorF::full(Shape{config_.d_model}, 1.0f, true));
  n.bias = add_param(name + ".bias", TensorF::zeros(Shape{config_.d_model}, true));
  return n;
}

AttentionParams MmsmModel::make_attention(const std::string& name, Rng& rng) {
  const std::size_t d = config_.d_model;
  AttentionParams a;
  a.query = make_linear(name + ".query", d, d, rng);
  a.key = make_linear(name + ".key", d, d, rng);
  a.value = make_linear(name + ".value", d, d, rng);
  a.output = make_linear(name + ".output", d, d, rng);
  return a;
}

FeedForwardParams MmsmModel::make_ffn(const std::string& name, Rng& rng) {
  const std::size_t d = config_.d_model, f = config_.ffn_mult * d;
  return {make_linear(name + ".up", d, f, rng), make_linear(name + ".down", f, d, rng)};
}

MmsmModel::MmsmModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.init_seed);
  const std::size_t d = config_.d_model;
  auto block_name = [](const char* stack, std::size_t i) { return std::string(stack) + "." + std::to_string(i); };
  auto make_encoder_block = [&](const std::string& name) {
    EncoderBlock b;
    b.ln_attn = make_norm(name + ".ln_attn");
    b.attn = make_attention(name + ".attn", rng);
    b.ln_ffn = make_norm(name + ".ln_ffn");
    b.ffn = make_ffn(name + ".ffn", rng);
    return b;
  };

  if (multimodal()) {
    const std::size_t area = config_.patch_size * config_.patch_size;
    patch_proj_ = make_linear("image.patch_proj", area, d, rng);
    image_cls_ = add_param("image.cls", TensorF::truncated_normal(Shape{1, d}, 0.02f, rng));
    image_pos_ = add_param("image.pos", TensorF::truncated_normal(Shape{config_.num_patches() + 1, d}, 0.02f, rng));
    for (std::size_t i = 0; i < config_.n_image_layers; ++i)
      image_blocks_.push_back(make_encoder_block(block_name("image.blocks", i)));
    image_norm_ = make_norm("image.norm");
  }

  text_embed_ = add_param("text.embed", TensorF::truncated_normal(Shape{config_.vocab_size, d}, 0.02f, rng));
  text_pos_ = add_param("text.pos", TensorF::truncated_normal(Shape{config_.max_len, d}, 0.02f, rng));
  for (std::size_t i = 0; i < config_.n_text_layers; ++i)
    text_blocks_.push_back(make_encoder_block(block_name("text.blocks", i)));
  for (std::size_t i = 0; i < config_.n_fusion_layers; ++i) {
    const auto name = block_name("fusion.blocks", i);
    FusionBlock b;
    b.ln_self = make_norm(name + ".ln_self");
    b.self_attn = make_attention(name + ".self_attn", rng);
    if (multimodal()) {
      b.ln_cross = make_norm(name + ".ln_cross");
      b.cross_attn = make_attention(name + ".cross_attn", rng);
    }
    b.ln_ffn = make_norm(name + ".ln_ffn");
    b.ffn = make_ffn(name + ".ffn", rng);
    fusion_blocks_.push_back(std::move(b));
  }
  memory_norm_ = make_norm("fusion.norm");

  dec_embed_ = add_param("decoder.embed", TensorF::truncated_normal(Shape{config_.vocab_size, d}, 0.02f, rng));
  dec_pos_ = add_param("decoder.pos", TensorF::truncated_normal(Shape{config_.max_len, d}, 0.02f, rng));
  for (std::size_t i = 0; i < config_.n_decoder_layers; ++i) {
    const auto name = block_name("decoder.blocks", i);
    DecoderBlock b;
    b.ln_self = make_norm(name + ".ln_self");
    b.self_attn = make_attention(name + ".self_attn", rng);
    b.ln_cross = make_norm(name + ".ln_cross");
    b.cross_attn = make_attention(name + ".cross_attn", rng);
    b.ln_ffn = make_norm(name + ".ln_ffn");
    b.ffn = make_ffn(name + ".ffn", rng);
    decoder_blocks_.push_back(std::move(b));
  }
  dec_norm_ = make_norm("decoder.norm");
  lm_head_ = make_linear("decoder.lm_head", d, config_.vocab_size, rng);

  if (multimodal()) {
    image_proj_ = make_linear("contrastive.image_proj", d, d, rng);
    text_proj_ = make_linear("contrastive.text_proj", d, d, rng);
  }
}

std::size_t MmsmModel::allocated_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

TensorF* MmsmModel::find_parameter(std::string_view name) {
  for (auto& [n, t] : params_)
    if (n == name) return &t;
  return nullptr;
}

std::size_t MmsmModel::copy_shared_parameters(const MmsmModel& other) {
  std::size_t copied = 0;
  for (const auto& [name, src] : other.params_) {
    TensorF* dst = find_parameter(name);
    if (!dst || !(dst->shape() == src.shape())) continue;
    std::copy(src.data().begin(), src.data().end(), dst->mutable_data().begin());
    ++copied;
  }
  return copied;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

TensorF linear(const Linear& l, const TensorF& x) { return add(matmul(x, l.weight), l.bias); }

TensorF norm(const LayerNormParams& n, const TensorF& x) { return layer_norm(x, n.gain, n.bias, 1e-5f); }

}  // namespace

TensorF MmsmModel::attention(const AttentionParams& p, const TensorF& queries, const TensorF& keys_values,
                             const AttentionMask* mask) const {
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = config_.d_model / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));
  const TensorF q = linear(p.query, queries);
  const TensorF k = linear(p.key, keys_values);
  const TensorF v = linear(p.value, keys_values);
  TensorF bias;
  if (mask) {
    if (mask->queries != queries.rows() || mask->keys != keys_values.rows())
      throw ShapeError("attention: mask " + Shape{mask->queries, mask->keys}.str() + " vs scores " +
                       Shape{queries.rows(), keys_values.rows()}.str());
    bias = TensorF(Shape{mask->queries, mask->keys}, mask->bias);
  }
  std::vector<TensorF> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    TensorF scores = scale(matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)), inv_sqrt);
    if (mask) scores = add(scores, bias);
    outs.push_back(matmul(softmax(scores, -1), slice_cols(v, h * dh, dh)));
  }
  return linear(p.output, heads == 1 ? outs.front() : concat_cols(outs));
}

TensorF MmsmModel::feed_forward(const FeedForwardParams& p, const TensorF& x) const {
  return linear(p.down, gelu(linear(p.up, x)));
}

TensorF MmsmModel::residual(const TensorF& x, const TensorF& update, const ForwardContext& ctx) const {
  if (ctx.training && ctx.rng && config_.dropout > 0.0) return add(x, dropout(update, config_.dropout, *ctx.rng));
  return add(x, update);
}

TensorF MmsmModel::encoder_block(const EncoderBlock& b, const TensorF& x, const AttentionMask* mask,
                                 const ForwardContext& ctx) const {
  const TensorF h = norm(b.ln_attn, x);
  TensorF y = residual(x, attention(b.attn, h, h, mask), ctx);
  return residual(y, feed_forward(b.ffn, norm(b.ln_ffn, y)), ctx);
}

// ---------------------------------------------------------------------------
// Encoders

TensorF MmsmModel::embed_patches(const GrayImage& image, const ForwardContext& ctx) const {
  if (!multimodal()) throw std::logic_error("embed_patches: text-only model has no image encoder");
  if (image.width != config_.image_size || image.height != config_.image_size ||
      image.pixels.size() != image.width * image.height)
    throw ShapeError("encode_image: expected " + Shape{config_.image_size, config_.image_size}.str() + " image, got " +
                     Shape{image.height, image.width}.str());
  TensorF patches = linear(patch_proj_, patchify(image, config_.patch_size));
  TensorF x = add(concat_rows<float>({image_cls_, patches}), image_pos_);
  if (ctx.training && ctx.rng && config_.dropout > 0.0) x = dropout(x, config_.dropout, *ctx.rng);
  return x;
}

TensorF MmsmModel::encode_image(const GrayImage& image, const ForwardContext& ctx) const {
  TensorF x = embed_patches(image, ctx);
  for (const auto& b : image_blocks_) x = encoder_block(b, x, nullptr, ctx);
  return norm(image_norm_, x);
}

TensorF MmsmModel::encode_text(std::span<const TokenId> ids, const ForwardContext& ctx) const {
  if (ids.empty()) throw ShapeError("encode_text: empty sequence");
  if (ids.size() > config_.max_len)
    throw ShapeError("encode_text: length " + std::to_string(ids.size()) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  for (TokenId id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::out_of_range("encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
  TensorF x = add(embedding_lookup(text_embed_, ids), slice_rows(text_pos_, 0, ids.size()));
  if (ctx.training && ctx.rng && config_.dropout > 0.0) x = dropout(x, config_.dropout, *ctx.rng);
  const AttentionMask mask = key_padding_mask(ids, ids.size());
  for (const auto& b : text_blocks_) x = encoder_block(b, x, &mask, ctx);
  return x;
}

TensorF MmsmModel::fuse(const TensorF& text, const TensorF& image_features, std::span<const TokenId> text_ids,
                        const ForwardContext& ctx) const {
  if (text.cols() != config_.d_model) throw ShapeError("fuse: text features " + text.shape().str() + " vs d_model " +
                                                        std::to_string(config_.d_model));
  if (multimodal()) {
    if (!image_features.defined()) throw std::invalid_argument("fuse: multimodal model needs image features");
    if (image_features.cols() != text.cols())
      throw ShapeError("fuse: d_model mismatch " + text.shape().str() + " vs " + image_features.shape().str());
  }
  if (text_ids.size() != text.rows()) throw ShapeError("fuse: id count does not match text features");
  const AttentionMask self_mask = key_padding_mask(text_ids, text.rows());
  TensorF x = text;
  for (const auto& b : fusion_blocks_) {
    const TensorF h = norm(b.ln_self, x);
    x = residual(x, attention(b.self_attn, h, h, &self_mask), ctx);
    if (b.cross_attn) x = residual(x, attention(*b.cross_attn, norm(*b.ln_cross, x), image_features, nullptr), ctx);
    x = residual(x, feed_forward(b.ffn, norm(b.ln_ffn, x)), ctx);
  }
  return x;
}

Memory MmsmModel::encode(const GrayImage* image, std::span<const TokenId> source_ids, const ForwardContext& ctx) const {
  TensorF image_features;
  if (multimodal()) {
    if (!image) throw std::invalid_argument("encode: multimodal model needs an image");
    image_features = encode_image(*image, ctx);
  }
  const TensorF text = encode_text(source_ids, ctx);
  return {norm(memory_norm_, fuse(text, image_features, source_ids, ctx)),
          std::vector<TokenId>(source_ids.begin(), source_ids.end())};
}

// ---------------------------------------------------------------------------
// Decoder

TensorF MmsmModel::decode_logits(std::span<const TokenId> prefix, const Memory& memory,
                                 const ForwardContext& ctx) const {
  if (prefix.empty() || prefix.front() != kCls) throw std::invalid_argument("decode: prefix must start with [CLS]");
  if (prefix.size() > config_.max_len)
    throw ShapeError("decode: prefix length " + std::to_string(prefix.size()) + " exceeds max_len");
  for (TokenId id : prefix)
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw std::out_of_range("decode: token id " + std::to_string(id) + " outside vocabulary");
  TensorF x = add(embedding_lookup(dec_embed_, prefix), slice_rows(dec_pos_, 0, prefix.size()));
  if (ctx.training && ctx.rng && config_.dropout > 0.0) x = dropout(x, config_.dropout, *ctx.rng);
  const AttentionMask self_mask = causal_mask(prefix.size());
  const AttentionMask cross_mask = key_padding_mask(memory.source, prefix.size());
  for (const auto& b : decoder_blocks_) {
    const TensorF h = norm(b.ln_self, x);
    x = residual(x, attention(b.self_attn, h, h, &self_mask), ctx);
    x = residual(x, attention(b.cross_attn, norm(b.ln_cross, x), memory.features, &cross_mask), ctx);
    x = residual(x, feed_forward(b.ffn, norm(b.ln_ffn, x)), ctx);
  }
  return linear(lm_head_, norm(dec_norm_, x));
}

std::vector<float> MmsmModel::decode_step(std::span<const TokenId> prefix, const Memory& memory) const {
  NoGradGuard no_grad;
  const TensorF logits = decode_logits(prefix, memory);
  const std::size_t v = logits.cols();
  const auto data = logits.data();
  return std::vector<float>(data.end() - static_cast<std::ptrdiff_t>(v), data.end());
}

std::vector<TokenId> MmsmModel::correct(const GrayImage* image, std::span<const TokenId> corrupted,
                                        std::size_t max_len) const {
  NoGradGuard no_grad;
  const std::size_t limit = std::min(max_len, config_.max_len);
  std::vector<TokenId> out{kCls};
  if (limit <= 1) return out;
  const Memory memory = encode(image, corrupted);
  while (out.size() < limit) {
    const auto logits = decode_step(out, memory);
    TokenId best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(i);
    out.push_back(best);
    if (best == kSep) break;
  }
  return out;
}

TensorF MmsmModel::loss(const GrayImage* image, std::span<const TokenId> source, std::span<const TokenId> target,
                        const ForwardContext& ctx) const {
  if (target.size() < 2) throw std::invalid_argument("loss: target needs at least [CLS] and [SEP]");
  const Memory memory = encode(image, source, ctx);
  const auto inputs = target.first(target.size() - 1);
  const auto labels = target.subspan(1);
  return cross_entropy(decode_logits(inputs, memory, ctx), labels, kPad);
}

TensorF MmsmModel::image_embedding(const GrayImage& image, const ForwardContext& ctx) const {
  if (!multimodal()) throw std::logic_error("image_embedding: text-only model");
  return linear(image_proj_, slice_rows(encode_image(image, ctx), 0, 1));
}

TensorF MmsmModel::text_embedding(std::span<const TokenId> ids, const ForwardContext& ctx) const {
  if (!multimodal()) throw std::logic_error("text_embedding: text-only model");
  return linear(text_proj_, slice_rows(encode_text(ids, ctx), 0, 1));
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint MmsmModel::to_checkpoint() const {
  Checkpoint ck;
  ck.blobs.emplace_back("config", config_.to_json());
  for (const auto& [name, t] : params_) ck.tensors.emplace_back(name, t.detach());
  return ck;
}

MmsmModel MmsmModel::from_checkpoint(const Checkpoint& ck) {
  const std::string* cfg = ck.find_blob("config");
  if (!cfg) throw FormatError("checkpoint: missing model config record");
  MmsmModel model(ModelConfig::from_json(*cfg));
  for (auto& [name, t] : model.params_) {
    const TensorF* src = ck.find_tensor(name);
    if (!src) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (!(src->shape() == t.shape()))
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + src->shape().str() + ", expected " +
                        t.shape().str());
    std::copy(src->data().begin(), src->data().end(), t.mutable_data().begin());
  }
  return model;
}

}  // namespace mmsm
