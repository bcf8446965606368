#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "mmsm/contrastive.hpp"
#include "mmsm/errors.hpp"
#include "mmsm/synthcorpus.hpp"
#include "mmsm/trainer.hpp"

using namespace mmsm;

namespace {

ModelConfig tiny_model(std::size_t vocab, ModelVariant variant = ModelVariant::kMultimodal) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_image_layers = 1;
  c.n_text_layers = 1;
  c.n_fusion_layers = 1;
  c.n_decoder_layers = 1;
  c.image_size = 32;
  c.patch_size = 8;
  c.vocab_size = vocab;
  c.max_len = 24;
  c.ffn_mult = 2;
  c.dropout = 0.0;
  c.variant = variant;
  c.init_seed = 1;
  return c;
}

TrainingPair pair_of(const SynthRecord& r) { return {r.record.id, r.image, tokenize(r.record.report)}; }

std::vector<TensorD> scalar_params(double v) { return {TensorD(Shape{1}, {v}, true)}; }

}  // namespace

TEST_CASE("lr schedule endpoints and continuity") {
  TrainConfig c;  // 20 epochs, warmup 10% of steps
  const std::size_t spe = 50;
  const std::size_t total = c.total_epochs * spe;
  const std::size_t w = warmup_steps(spe, c);
  CHECK(w == 100);
  CHECK(lr_schedule(0, spe, c) == 1e-5);
  CHECK(lr_schedule(w, spe, c) == 1e-4);
  CHECK(lr_schedule(total - 1, spe, c) == 0.0);
  // left limit by linear extrapolation, right side by the cosine's first step
  const double left = lr_schedule(w - 1, spe, c) + (lr_schedule(w - 1, spe, c) - lr_schedule(w - 2, spe, c));
  CHECK(std::abs(left - 1e-4) < 1e-12);
  const double right_step = (1e-4 - 0.0) * (1 - std::cos(3.141592653589793 / static_cast<double>(total - 1 - w))) / 2;
  CHECK(std::abs(lr_schedule(w + 1, spe, c) - (1e-4 - right_step)) < 1e-15);
  // monotone in each phase
  for (std::size_t s = 1; s <= w; ++s) CHECK(lr_schedule(s, spe, c) > lr_schedule(s - 1, spe, c));
  for (std::size_t s = w + 1; s < total; ++s) CHECK(lr_schedule(s, spe, c) <= lr_schedule(s - 1, spe, c));

  TrainConfig e = c;
  e.warmup_epochs = 5.0;
  CHECK(warmup_steps(spe, e) == 250);
  CHECK(lr_schedule(250, spe, e) == 1e-4);
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.warmup_epochs = 30.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.seed = 77;
  c.warmup_epochs = 2.0;
  c.corruption.processed_fraction = 0.3;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json("{\"lr_maxx\": 1}"), FormatError);
  CHECK_THROWS_AS(TrainConfig::from_json("[1]"), FormatError);
}

TEST_CASE("adamw: zero gradient cases") {
  auto p = scalar_params(2.0);
  p[0].mutable_grad()[0] = 0.0;
  AdamW<double> no_decay(0.9, 0.999, 1e-8, 0.0);
  CHECK(no_decay.step(p, 0.1));
  CHECK(p[0].data()[0] == 2.0);

  AdamW<double> decay(0.9, 0.999, 1e-8, 0.05);
  CHECK(decay.step(p, 0.1));
  CHECK(p[0].data()[0] == 2.0 * (1.0 - 0.1 * 0.05));
}

TEST_CASE("adamw: two hand-computed steps") {
  // theta0 = 1, grads 0.5 then -0.25, lr 0.1, betas (0.9, 0.999), eps 1e-8, wd 0.01.
  // Values evaluated by hand from the update equations.
  auto p = scalar_params(1.0);
  AdamW<double> opt(0.9, 0.999, 1e-8, 0.01);
  p[0].mutable_grad()[0] = 0.5;
  opt.step(p, 0.1);
  // theta1 = 1 * (1 - 0.001) - 0.1 * 0.5 / (0.5 + 1e-8) = 0.899 + 2e-9 (to first order)
  CHECK(p[0].data()[0] == doctest::Approx(0.899000002).epsilon(1e-12));
  p[0].mutable_grad()[0] = -0.25;
  opt.step(p, 0.1);
  // m2 = 0.02, v2 = 0.00031225; m^ = 0.02/0.19, v^ = 0.00031225/0.001999
  const double mhat = 0.02 / 0.19, vhat = 0.00031225 / (1.0 - 0.999 * 0.999);
  const double expected = 0.899000002 * (1 - 0.001) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p[0].data()[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("adamw with wd=0 equals plain adam, elementwise") {
  Rng rng(3);
  std::vector<TensorD> a, b;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> v(7);
    for (auto& x : v) x = rng.normal();
    a.emplace_back(Shape{7}, v, true);
    b.emplace_back(Shape{7}, v, true);
  }
  AdamW<double> opt(0.9, 0.999, 1e-8, 0.0);
  std::vector<std::vector<double>> m(3, std::vector<double>(7)), v(3, std::vector<double>(7));
  for (int t = 1; t <= 5; ++t) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 7; ++j) a[i].mutable_grad()[j] = b[i].mutable_grad()[j] = rng.normal();
    opt.step(a, 0.01);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 7; ++j) {
        const double g = b[i].mutable_grad()[j];
        m[i][j] = 0.9 * m[i][j] + (1 - 0.9) * g;
        v[i][j] = 0.999 * v[i][j] + (1 - 0.999) * g * g;
        const double mh = m[i][j] / (1 - std::pow(0.9, t)), vh = v[i][j] / (1 - std::pow(0.999, t));
        b[i].mutable_data()[j] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 7; ++j) CHECK(a[i].data()[j] == b[i].data()[j]);
  }
}

TEST_CASE("adamw skips non-finite gradients") {
  auto p = scalar_params(1.0);
  p[0].mutable_grad()[0] = std::nan("");
  AdamW<double> opt(0.9, 0.999, 1e-8, 0.05);
  CHECK_FALSE(opt.step(p, 0.1));
  CHECK(p[0].data()[0] == 1.0);
  CHECK(opt.steps() == 0);
}

TEST_CASE("gradient clipping") {
  std::vector<TensorD> p = {TensorD(Shape{2}, {0, 0}, true)};
  p[0].mutable_grad()[0] = 3;
  p[0].mutable_grad()[1] = 4;
  CHECK(clip_grad_norm(p, 1.0) == 5.0);
  CHECK(p[0].grad()[0] == doctest::Approx(0.6));
  CHECK(p[0].grad()[1] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("overfit a single triple") {
  SynthConfig sc;
  sc.n_records = 1;
  sc.n_classes = 1;
  sc.image_size = 32;
  const auto corpus = generate(sc);
  const std::vector<TrainingPair> train = {pair_of(corpus.records[0])};
  const auto vocab = Vocabulary::build({corpus.records[0].record.report});
  MmsmModel model(tiny_model(vocab.size()));

  TrainConfig tc;
  tc.total_epochs = 200;
  tc.batch_size = 1;
  tc.lr_max = 3e-3;
  tc.seed = 5;
  TrainLog log;
  const auto start = std::chrono::steady_clock::now();
  train_correction(model, train, {}, vocab, tc, log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("overfit: final loss " << log.steps.back().loss << " in " << secs << " s");
  CHECK(log.steps.size() == 200);
  CHECK(log.steps.back().loss < 0.05);

  // loss decreases over the first 50 steps, allowing a few bumps
  int bumps = 0;
  for (std::size_t s = 1; s < 50; ++s) bumps += log.steps[s].loss > log.steps[s - 1].loss;
  CHECK(bumps <= 5);

  const auto source = corrupted_source(train[0], vocab, tc.corruption, 1234, 24);
  const auto out = model.correct(&train[0].image, source, 24);
  CHECK(decode(out, vocab) == corpus.records[0].record.report);
}

TEST_CASE("seed-fixed runs are bit-identical") {
  SynthConfig sc;
  sc.n_records = 12;
  sc.image_size = 32;
  const auto corpus = generate(sc);
  std::vector<TrainingPair> train, val;
  std::vector<std::string> reports;
  for (const auto& r : corpus.records) {
    (r.split == Split::kTrain ? train : val).push_back(pair_of(r));
    reports.push_back(r.record.report);
  }
  const auto vocab = Vocabulary::build(reports);
  TrainConfig tc;
  tc.total_epochs = 2;
  tc.batch_size = 4;
  tc.seed = 9;
  auto run = [&] {
    auto mc = tiny_model(vocab.size());
    mc.dropout = 0.1;
    MmsmModel m(mc);
    TrainLog log;
    const auto res = train_correction(m, train, val, vocab, tc, log);
    return std::make_pair(log.to_jsonl(), res.best.serialize());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(checkpoint_vocabulary(Checkpoint::parse(a.second)) == vocab);
}

TEST_CASE("training rejects inconsistent inputs") {
  const auto vocab = Vocabulary::build({"a b c"});
  MmsmModel m(tiny_model(vocab.size() + 1));
  TrainLog log;
  std::vector<TrainingPair> train = {{"x", GrayImage(32, 32), {"a", "b"}}};
  CHECK_THROWS_AS(train_correction(m, train, {}, vocab, TrainConfig{}, log), ConfigError);
  MmsmModel ok(tiny_model(vocab.size()));
  CHECK_THROWS(train_correction(ok, {}, {}, vocab, TrainConfig{}, log));
}

TEST_CASE("divergence aborts with the log kept") {
  const auto vocab = Vocabulary::build({"a b c"});
  MmsmModel m(tiny_model(vocab.size()));
  // Poison a weight so every loss is NaN.
  m.find_parameter("decoder.lm_head.weight")->mutable_data()[0] = std::nanf("");
  std::vector<TrainingPair> train = {{"x", GrayImage(32, 32), {"a", "b"}}, {"y", GrayImage(32, 32), {"c"}}};
  TrainConfig tc;
  tc.batch_size = 1;
  TrainLog log;
  CHECK_THROWS_AS(train_correction(m, train, {}, vocab, tc, log), DivergenceError);
  CHECK(log.steps.size() == 2);
  CHECK(log.divergence_events == 2);
  CHECK(log.steps[0].diverged);
}

TEST_CASE("info_nce") {
  // Two identical pairs: both columns tie, so each row is uniform over two.
  TensorF e(Shape{2, 3}, {1, 0, 0, 1, 0, 0});
  CHECK(info_nce(e, e, 0.07).item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  TensorF a(Shape{2, 2}, {1, 0, 0, 1});
  CHECK(info_nce(a, a, 0.07).item() < 1e-5);
  CHECK_THROWS_AS(info_nce(TensorF(Shape{1, 2}, {1, 0}), TensorF(Shape{1, 2}, {1, 0}), 0.07), ConfigError);
}

TEST_CASE("augmentations") {
  Rng rng(1);
  const auto img = render_class(finding_classes()[0], 32);
  const auto crop = random_crop_resize(img, 1.0, rng);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(crop.pixels[i] == doctest::Approx(img.pixels[i]));
  const auto c2 = random_crop_resize(img, 0.5, rng);
  CHECK(c2.width == 32);
  for (float p : c2.pixels) {
    CHECK(p >= 0.0f);
    CHECK(p <= 1.0f);
  }

  const std::vector<TokenId> ids = {kCls, 7, 8, 9, kSep};
  CHECK(token_dropout(ids, 0.0, rng) == ids);
  for (int t = 0; t < 50; ++t) {
    const auto d = token_dropout(ids, 0.9, rng);
    CHECK(d.front() == kCls);
    CHECK(d.back() == kSep);
    CHECK(d.size() >= 3);
  }
}

TEST_CASE("contrastive warm-start") {
  SynthConfig sc;
  sc.n_records = 48;
  sc.n_classes = 2;
  sc.image_size = 32;
  const auto corpus = generate(sc);
  std::vector<TrainingPair> pairs;
  std::vector<std::string> reports;
  for (const auto& r : corpus.records) {
    pairs.push_back(pair_of(r));
    reports.push_back(r.record.report);
  }
  const auto vocab = Vocabulary::build(reports);

  ContrastiveConfig cc;
  cc.batch_size = 1;
  cc.enabled = true;
  MmsmModel m(tiny_model(vocab.size()));
  CHECK_THROWS_AS(contrastive_warmstart(m, pairs, vocab, cc), ConfigError);

  // Disabled: parameters untouched.
  cc = ContrastiveConfig{};
  const auto before = m.to_checkpoint().serialize();
  CHECK(contrastive_warmstart(m, pairs, vocab, cc).losses.empty());
  CHECK(m.to_checkpoint().serialize() == before);

  cc.enabled = true;
  cc.epochs = 6;
  cc.batch_size = 8;
  cc.lr = 1e-3;
  const auto log = contrastive_warmstart(m, pairs, vocab, cc);
  CHECK(log.losses.size() == 36);

  // Held-out pairs from a fresh seed: matched image/text pairs are more
  // similar than mismatched ones (different classes).
  sc.seed = 99;
  sc.n_records = 8;
  const auto held = generate(sc);
  std::vector<TensorF> img, txt;
  for (const auto& r : held.records) {
    img.push_back(normalize_rows(m.image_embedding(r.image)));
    txt.push_back(normalize_rows(m.text_embedding(encode(tokenize(r.record.report), vocab, true, 24))));
  }
  double matched = 0, mismatched = 0;
  int nm = 0, nmm = 0;
  for (std::size_t i = 0; i < img.size(); ++i)
    for (std::size_t j = 0; j < txt.size(); ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < img[i].numel(); ++k) dot += img[i].data()[k] * txt[j].data()[k];
      if (held.records[i].record.label == held.records[j].record.label) matched += dot, ++nm;
      else mismatched += dot, ++nmm;
    }
  MESSAGE("matched " << matched / nm << " mismatched " << mismatched / nmm);
  CHECK(matched / nm > mismatched / nmm);

  MmsmModel text_only(tiny_model(vocab.size(), ModelVariant::kTextOnly));
  CHECK_THROWS(contrastive_warmstart(text_only, pairs, vocab, cc));
}
