#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "mmsm/cli.hpp"
#include "mmsm/errors.hpp"
#include "mmsm/jsonl.hpp"
#include "mmsm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmsm;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmsm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string s(const fs::path& p) { return p.string(); }

const fs::path kData = MMSM_TEST_DATA_DIR;

// A small corpus plus two one-epoch checkpoints, built once.
struct Fixture {
  fs::path dir = scratch("fixture");
  fs::path syn = dir / "syn";
  fs::path mm = dir / "mm", txt = dir / "txt";

  Fixture() {
    REQUIRE(cli({"synth", "--n", "40", "--image-size", "32", "--out", s(syn), "--seed", "5"}).code == 0);
    write_file(dir / "model.json", R"({"d_model":16,"n_heads":2,"image_size":32,"patch_size":8,"max_len":32})");
    write_file(dir / "train.json", R"({"total_epochs":1,"batch_size":8})");
    for (const auto& [variant, out] : {std::pair{"mmsm", mm}, std::pair{"text-only", txt}}) {
      const auto r = cli({"train", "--corpus", s(syn / "train.jsonl"), "--model", s(dir / "model.json"), "--config",
                          s(dir / "train.json"), "--variant", variant, "--out", s(out), "--seed", "5"});
      REQUIRE_MESSAGE(r.code == 0, r.err);
    }
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("usage errors exit with 2 and print help") {
  auto r = cli({});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = cli({"eval", "--refs", "x"});
  CHECK(r.code == kExitUsage);
  r = cli({"report", "--in", "x", "--format", "pdf"});
  CHECK(r.code == kExitUsage);
  r = cli({"--help"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("bench") != std::string::npos);
}

TEST_CASE("missing inputs name the expected path") {
  const auto r = cli({"correct", "--ckpt", "/nonexistent/model.ckpt", "--in", "x.jsonl", "--out", "y.jsonl"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("/nonexistent/model.ckpt") != std::string::npos);
}

TEST_CASE("malformed input exits with 3") {
  const auto d = scratch("malformed");
  write_file(d / "bad.jsonl", "{\"id\": 1\n");
  const auto r = cli({"eval", "--refs", s(d / "bad.jsonl"), "--hyps", s(d / "bad.jsonl"), "--out", s(d / "r.json")});
  CHECK(r.code == kExitFormat);
}

TEST_CASE("eval of identical files gives zero error rates") {
  const auto d = scratch("eval");
  write_file(d / "refs.jsonl", texts_to_jsonl({{"a", "the heart is normal ."}, {"b", "no effusion ."}}));
  const auto r = cli({"eval", "--refs", s(d / "refs.jsonl"), "--hyps", s(d / "refs.jsonl"), "--out", s(d / "r.json")});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(read_file(d / "r.json"));
  CHECK(j["metrics"]["WER"].get<double>() == 0.0);
  CHECK(j["metrics"]["CER"].get<double>() == 0.0);
  CHECK(j["n_pairs"] == 2);
  CHECK(j.contains("provenance"));
}

TEST_CASE("eval skips ids without a hypothesis") {
  const auto refs = std::vector<TextRecord>{{"a", "one two"}, {"b", "three"}};
  const auto hyps = std::vector<TextRecord>{{"a", "one"}, {"c", "x"}};
  const auto r = evaluate_texts(refs, hyps);
  CHECK(r.pairs.size() == 1);
  CHECK(r.skipped.size() == 2);
  CHECK(r[Metric::kWer] == doctest::Approx(0.5));
  CHECK_THROWS_AS(evaluate_texts({{"a", "x"}, {"a", "y"}}, hyps), FormatError);
}

TEST_CASE("report renders the published grid") {
  const auto d = scratch("report");
  const auto r = cli({"report", "--in", s(kData / "stt_grid_fixture.json")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("| (WER/CER) | Google | DeepSpeech |") == 0);
  CHECK(r.out.find("| Input | 0.195/0.079 |") != std::string::npos);
  CHECK(r.out.find("| Proposed | 0.103/0.052 |") != std::string::npos);
  REQUIRE(cli({"report", "--in", s(kData / "stt_grid_fixture.json"), "--format", "csv", "--out", s(d / "g.csv")}).code == 0);
  const auto csv = read_file(d / "g.csv");
  CHECK(csv.find("Text-Only,0.123/0.072,") != std::string::npos);
}

TEST_CASE("parallel_for is deterministic and propagates errors") {
  std::vector<std::size_t> a(1000), b(1000);
  parallel_for(a.size(), 1, [&](std::size_t i) { a[i] = i * i; });
  parallel_for(b.size(), 4, [&](std::size_t i) { b[i] = i * i; });
  CHECK(a == b);
  std::atomic<int> calls{0};
  CHECK_THROWS_AS(parallel_for(100, 3,
                               [&](std::size_t i) {
                                 ++calls;
                                 if (i == 7) throw FormatError("boom");
                               }),
                  FormatError);
}

TEST_CASE("corrupt is reproducible and thread-count independent") {
  const auto d = scratch("corrupt");
  std::vector<TextRecord> in;
  for (int i = 0; i < 50; ++i) in.push_back({"r" + std::to_string(i), "the heart size is normal and there is no effusion ."});
  write_file(d / "in.jsonl", texts_to_jsonl(in));
  for (const auto& [name, threads] : {std::pair{"a", "1"}, std::pair{"b", "3"}})
    REQUIRE(cli({"corrupt", "--in", s(d / "in.jsonl"), "--out", s(d / (std::string(name) + ".jsonl")), "--trace",
                 s(d / (std::string(name) + ".trace")), "--seed", "11", "--threads", threads})
                .code == 0);
  CHECK(read_file(d / "a.jsonl") == read_file(d / "b.jsonl"));
  CHECK(read_file(d / "a.trace") == read_file(d / "b.trace"));
  const auto out = read_texts(d / "a.jsonl");
  REQUIRE(out.size() == 50);
  int changed = 0;
  for (const auto& r : out) changed += r.text != in[0].text;
  CHECK(changed > 25);
  REQUIRE(cli({"corrupt", "--in", s(d / "in.jsonl"), "--out", s(d / "c.jsonl"), "--seed", "12"}).code == 0);
  CHECK(read_file(d / "a.jsonl") != read_file(d / "c.jsonl"));
}

TEST_CASE("corrupt rejects bad probabilities") {
  const auto d = scratch("corrupt_bad");
  write_file(d / "in.jsonl", texts_to_jsonl({{"a", "x y"}}));
  CHECK(cli({"corrupt", "--in", s(d / "in.jsonl"), "--out", s(d / "o.jsonl"), "--plow", "0.9", "--phigh", "0.5"}).code ==
        kExitUsage);
}

TEST_CASE("train, correct and bench") {
  auto& f = fixture();
  CHECK(fs::exists(f.mm / "model.ckpt"));
  CHECK(fs::exists(f.mm / "train_log.jsonl"));
  const auto log = read_file(f.mm / "train_log.jsonl");
  CHECK(log.rfind("{\"provenance\"", 0) == 0);

  const auto d = scratch("bench");
  const auto refs = f.syn / "test.jsonl";
  REQUIRE(cli({"corrupt", "--in", s(refs), "--out", s(d / "noisy.jsonl"), "--seed", "2"}).code == 0);

  SUBCASE("multimodal correction needs images") {
    const auto r = cli({"correct", "--ckpt", s(f.mm / "model.ckpt"), "--in", s(d / "noisy.jsonl"), "--out", s(d / "o.jsonl")});
    CHECK(r.code == kExitUsage);
  }
  SUBCASE("correct writes one line per input") {
    REQUIRE(cli({"correct", "--ckpt", s(f.mm / "model.ckpt"), "--in", s(d / "noisy.jsonl"), "--images", s(f.syn / "images"),
                 "--out", s(d / "o.jsonl")})
                .code == 0);
    CHECK(read_texts(d / "o.jsonl").size() == read_texts(d / "noisy.jsonl").size());
  }
  SUBCASE("single-system bench gives a three-row grid") {
    const auto r = cli({"bench", "--refs", s(refs), "--hyps", "asr=" + s(d / "noisy.jsonl"), "--images", s(f.syn / "images"),
                        "--proposed", s(f.mm / "model.ckpt"), "--text-only", s(f.txt / "model.ckpt"), "--out", s(d / "b")});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto g = Grid::from_json(read_file(d / "b" / "grid.json"));
    CHECK(g.systems == std::vector<std::string>{"asr"});
    CHECK(g.rows == kGridRows);
    CHECK(g.cells.size() == 3);
    CHECK(r.out.find("| Text-Only |") != std::string::npos);
  }
  SUBCASE("bench with perfect hypotheses has zero input error") {
    REQUIRE(cli({"bench", "--refs", s(refs), "--hyps", "oracle=" + s(refs), "--images", s(f.syn / "images"), "--proposed",
                 s(f.mm / "model.ckpt"), "--text-only", s(f.txt / "model.ckpt"), "--out", s(d / "p")})
                .code == 0);
    const auto g = Grid::from_json(read_file(d / "p" / "grid.json"));
    CHECK(g.cells[0][0].wer == 0.0);
    CHECK(g.cells[0][0].cer == 0.0);
  }
  SUBCASE("bench names a missing checkpoint") {
    const auto r = cli({"bench", "--refs", s(refs), "--hyps", "asr=" + s(d / "noisy.jsonl"), "--proposed",
                        s(d / "missing.ckpt"), "--text-only", s(f.txt / "model.ckpt"), "--out", s(d / "m")});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("missing.ckpt") != std::string::npos);
  }
}

TEST_CASE("training is reproducible byte for byte") {
  auto& f = fixture();
  const auto d = scratch("retrain");
  REQUIRE(cli({"train", "--corpus", s(f.syn / "train.jsonl"), "--model", s(f.dir / "model.json"), "--config",
               s(f.dir / "train.json"), "--out", s(d), "--seed", "5"})
              .code == 0);
  CHECK(read_file(d / "model.ckpt") == read_file(f.mm / "model.ckpt"));
  CHECK(read_file(d / "train_log.jsonl") == read_file(f.mm / "train_log.jsonl"));
}

TEST_CASE("synth output is reproducible") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(cli({"synth", "--n", "20", "--image-size", "16", "--out", s(a), "--seed", "9"}).code == 0);
  REQUIRE(cli({"synth", "--n", "20", "--image-size", "16", "--out", s(b), "--seed", "9"}).code == 0);
  CHECK(read_file(a / "corpus.jsonl") == read_file(b / "corpus.jsonl"));
  CHECK(read_file(a / "provenance.json") == read_file(b / "provenance.json"));
  CHECK(read_file(a / "images" / "rec00003.pgm") == read_file(b / "images" / "rec00003.pgm"));
  CHECK(cli({"synth", "--n", "20", "--classes", "9", "--out", s(a)}).code == kExitUsage);
}

TEST_CASE("correct reconstructs the clean report after overfitting one pair") {
  const auto d = scratch("overfit");
  REQUIRE(cli({"synth", "--n", "1", "--classes", "1", "--image-size", "32", "--out", s(d / "syn")}).code == 0);
  write_file(d / "model.json", R"({"d_model":32,"n_heads":2,"n_image_layers":1,"n_text_layers":1,"n_fusion_layers":1,
    "n_decoder_layers":1,"image_size":32,"patch_size":8,"max_len":24,"ffn_mult":2,"dropout":0.0,"init_seed":1})");
  write_file(d / "train.json", R"({"total_epochs":200,"batch_size":1,"lr_max":0.003,"seed":5})");
  const auto t = cli({"train", "--corpus", s(d / "syn" / "corpus.jsonl"), "--model", s(d / "model.json"), "--config",
                      s(d / "train.json"), "--out", s(d / "m")});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  REQUIRE(cli({"corrupt", "--in", s(d / "syn" / "corpus.jsonl"), "--out", s(d / "stt.jsonl"), "--seed", "1"}).code == 0);
  const auto clean = read_texts(d / "syn" / "corpus.jsonl");
  CHECK(read_texts(d / "stt.jsonl")[0].text != clean[0].text);
  REQUIRE(cli({"correct", "--ckpt", s(d / "m" / "model.ckpt"), "--in", s(d / "stt.jsonl"), "--images",
               s(d / "syn" / "images"), "--out", s(d / "fixed.jsonl")})
              .code == 0);
  const auto fixed = read_texts(d / "fixed.jsonl");
  REQUIRE(fixed.size() == 1);
  CHECK(fixed[0].id == clean[0].id);
  CHECK(fixed[0].text == clean[0].text);
}

TEST_CASE("divergent training exits with 4 and keeps the log") {
  auto& f = fixture();
  const auto d = scratch("diverge");
  write_file(d / "train.json", R"({"total_epochs":1,"batch_size":8,"lr_max":1e30,"lr_warmup_init":1e30,"lr_final":1e30})");
  const auto r = cli({"train", "--corpus", s(f.syn / "train.jsonl"), "--model", s(f.dir / "model.json"), "--config",
                      s(d / "train.json"), "--out", s(d / "m"), "--variant", "text-only"});
  CHECK(r.code == kExitDivergence);
  CHECK(fs::exists(d / "m" / "train_log.jsonl"));
  CHECK(!fs::exists(d / "m" / "model.ckpt"));
}
