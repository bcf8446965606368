#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mmsm/corruptor.hpp"
#include "mmsm/errors.hpp"

using namespace mmsm;

namespace {

const std::vector<std::string> kPool = {"no",     "acute", "process", "mild", "effusion", "left",  "right",
                                        "lower",  "lobe",  "heart",   "size", "normal",   "lungs", "clear",
                                        "stable", "small", "pleural", "is",   "the",      "there"};

std::vector<std::string> random_sentence(Rng& rng, std::size_t max_len = 25) {
  std::vector<std::string> s(rng.uniform_index(max_len + 1));
  for (auto& w : s) w = kPool[rng.uniform_index(kPool.size())];
  return s;
}

Vocabulary pool_vocab() {
  std::string all;
  for (const auto& w : kPool) all += w + " ";
  return Vocabulary::build({all}, 1);
}

}  // namespace

TEST_CASE("sample_op_probs") {
  Rng rng(1);
  CorruptionConfig c;
  c.prob_low = c.prob_high = 0.7;
  auto p = sample_op_probs(c, rng);
  CHECK(p.remove == 0.7);
  CHECK(p.replace == 0.7);
  CHECK(p.insert == 0.7);

  CorruptionConfig d;
  for (int i = 0; i < 1000; ++i) {
    auto q = sample_op_probs(d, rng);
    for (double x : {q.remove, q.replace, q.insert}) {
      CHECK(x >= 0.5);
      CHECK(x <= 0.9);
    }
  }

  CorruptionConfig o;
  o.op_weights_override = std::array<double, 3>{1, 0, 0};
  auto r = sample_op_probs(o, rng);
  CHECK(r.remove == 1.0);
  CHECK(r.replace == 0.0);
  CHECK(r.insert == 0.0);
}

TEST_CASE("config validation") {
  CorruptionConfig c;
  c.prob_low = 0.9;
  c.prob_high = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CorruptionConfig w;
  w.op_weights_override = std::array<double, 3>{0, 0, 0};
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w.op_weights_override = std::array<double, 3>{-1, 1, 1};
  CHECK_THROWS_AS(w.validate(), ConfigError);
  CorruptionConfig f;
  f.processed_fraction = 1.5;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("processed count rounds half up") {
  CHECK(processed_count(0.5, 7) == 4);
  CHECK(processed_count(0.5, 6) == 3);
  CHECK(processed_count(0.5, 1) == 1);
  CHECK(processed_count(0.5, 0) == 0);
  CHECK(processed_count(0.0, 9) == 0);
}

TEST_CASE("degenerate corruption settings") {
  const auto vocab = pool_vocab();
  const std::vector<std::string> s = {"no", "acute", "process", "."};
  Rng rng(3);

  CorruptionConfig none;
  none.processed_fraction = 0.0;
  auto r = corrupt(s, none, vocab, rng);
  CHECK(r.tokens == s);
  CHECK(r.trace.edits.empty());

  CorruptionConfig all_removed;
  all_removed.processed_fraction = 1.0;
  all_removed.op_weights_override = std::array<double, 3>{1, 0, 0};
  CHECK(corrupt(s, all_removed, vocab, rng).tokens.empty());

  auto e = corrupt({}, CorruptionConfig{}, vocab, rng);
  CHECK(e.tokens.empty());
  CHECK(e.trace.edits.empty());

  CHECK_THROWS_AS(corrupt(s, CorruptionConfig{}, Vocabulary{}, rng), ConfigError);
  CHECK_NOTHROW(corrupt(s, all_removed, Vocabulary{}, rng));
}

TEST_CASE("replacement never reproduces the original word") {
  const auto vocab = pool_vocab();
  CorruptionConfig c;
  c.processed_fraction = 1.0;
  c.op_weights_override = std::array<double, 3>{0, 1, 0};
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_sentence(rng);
    const auto r = corrupt(s, c, vocab, rng);
    REQUIRE(r.tokens.size() == s.size());
    for (std::size_t k = 0; k < s.size(); ++k) CHECK(r.tokens[k] != s[k]);
  }
}

TEST_CASE("insertion lands immediately after the processed word") {
  const auto vocab = pool_vocab();
  CorruptionConfig c;
  c.processed_fraction = 1.0;
  c.op_weights_override = std::array<double, 3>{0, 0, 1};
  Rng rng(5);
  const std::vector<std::string> s = {"no", "acute", "process"};
  const auto r = corrupt(s, c, vocab, rng);
  REQUIRE(r.tokens.size() == 6);
  CHECK(r.tokens[0] == "no");
  CHECK(r.tokens[2] == "acute");
  CHECK(r.tokens[4] == "process");
}

TEST_CASE("properties: replay, length accounting, processed count, determinism") {
  const auto vocab = pool_vocab();
  Rng meta(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_sentence(meta);
    CorruptionConfig c;
    c.rng_seed = meta.next_u64();
    Rng a(c.rng_seed), b(c.rng_seed);
    const auto r1 = corrupt(s, c, vocab, a);
    const auto r2 = corrupt(s, c, vocab, b);
    CHECK(r1.tokens == r2.tokens);
    CHECK(replay(r1.trace, s) == r1.tokens);
    std::size_t removed = 0, inserted = 0;
    for (const auto& e : r1.trace.edits) {
      removed += e.op == CorruptionOp::kRemove;
      inserted += e.op == CorruptionOp::kInsert;
    }
    CHECK(r1.tokens.size() == s.size() - removed + inserted);
    CHECK(r1.trace.edits.size() == processed_count(0.5, s.size()));
  }
}

TEST_CASE("trace edits are ordered removal, replacement, insertion") {
  const auto vocab = pool_vocab();
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const auto r = corrupt(random_sentence(rng), CorruptionConfig{}, vocab, rng);
    for (std::size_t k = 1; k < r.trace.edits.size(); ++k)
      CHECK(static_cast<int>(r.trace.edits[k - 1].op) <= static_cast<int>(r.trace.edits[k].op));
  }
}

TEST_CASE("golden: 20-token sentence, default config, seed 42") {
  const std::vector<std::string> s = {"the", "heart", "size", "is",     "normal", ".",   "there", "is",    "no",   "pleural",
                                      "effusion", "or", "pneumothorax", ".", "mild", "lower", "lobe", "collapse", "is", "stable"};
  const auto vocab = Vocabulary::build({join(s)}, 1);
  CorruptionConfig c;
  c.rng_seed = 42;
  Rng rng(c.rng_seed);
  const auto r = corrupt(s, c, vocab, rng);
  CHECK(replay(r.trace, s) == r.tokens);
  CHECK(r.trace.edits.size() == 10);

  std::ostringstream got;
  got << join(r.tokens) << "\n";
  for (const auto& e : r.trace.edits)
    got << to_string(e.op) << " " << e.position << " " << e.source_index << " " << e.original.value_or("-") << " "
        << e.replacement.value_or("-") << "\n";

  const std::string golden_path = std::string(MMSM_TEST_DATA_DIR) + "/corrupt_seed42.golden";
  if (std::getenv("MMSM_UPDATE_GOLDEN")) std::ofstream(golden_path) << got.str();
  std::ifstream golden(golden_path);
  REQUIRE(golden.good());
  std::stringstream want;
  want << golden.rdbuf();
  CHECK(got.str() == want.str());
}

TEST_CASE("corruption_stats") {
  const auto vocab = pool_vocab();
  Rng rng(8);
  std::vector<std::vector<std::string>> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_sentence(rng));

  CorruptionConfig rm;
  rm.op_weights_override = std::array<double, 3>{1, 0, 0};
  const auto st = corruption_stats(corpus, rm, vocab, 2);
  CHECK(st.share(CorruptionOp::kRemove) == 1.0);
  CHECK(st.processed_count_exact);
  CHECK(st.sentences == 400);

  std::vector<std::vector<std::string>> sevens(50, std::vector<std::string>(7, "no"));
  const auto s7 = corruption_stats(sevens, CorruptionConfig{}, vocab, 1);
  CHECK(s7.processed == 50 * 4);

  CHECK_THROWS_AS(corruption_stats(corpus, rm, vocab, 0), ConfigError);
}
