#include "mmsm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmsm/audio.hpp"
#include "mmsm/contrastive.hpp"
#include "mmsm/corruptor.hpp"
#include "mmsm/errors.hpp"
#include "mmsm/jsonl.hpp"
#include "mmsm/pipeline.hpp"
#include "mmsm/synthcorpus.hpp"
#include "mmsm/trainer.hpp"

namespace mmsm {

namespace {

namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool verbose = false;
};

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: expected " + p.string());
}

void require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw UsageError(std::string(what) + " not found: expected directory " + p.string());
}

std::string snr_label(double snr) {
  if (std::isinf(snr)) return "clean";
  char buf[32];
  if (snr == std::round(snr)) std::snprintf(buf, sizeof buf, "snr%.0f", snr);
  else std::snprintf(buf, sizeof buf, "snr%g", snr);
  return buf;
}

double parse_snr(const std::string& s) {
  if (s == "clean" || s == "inf") return kCleanSnr;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--snr: expected a number in dB or 'clean', got '" + s + "'");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 2000;
  std::size_t classes = 4;
  double noise = 0.05;
  std::size_t image_size = 64;
  fs::path out;
};

void run_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  SynthConfig c;
  c.n_records = a.n;
  c.n_classes = a.classes;
  c.noise_level = a.noise;
  c.image_size = a.image_size;
  c.seed = g.seed;
  const auto corpus = generate(c);
  write_synth_corpus(corpus, a.out);
  OJson cfg = {{"n", a.n}, {"classes", a.classes}, {"noise", a.noise}, {"image_size", a.image_size}};
  const Provenance prov{"synth", g.seed, cfg.dump()};
  write_file(a.out / "provenance.json", prov.to_json() + "\n");
  out << "wrote " << corpus.records.size() << " records to " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------

struct CorruptArgs {
  fs::path in, out;
  std::optional<fs::path> trace, vocab;
  double fraction = 0.5, plow = 0.5, phigh = 0.9;
};

std::string trace_json(const std::string& id, const CorruptionTrace& t) {
  OJson j;
  j["id"] = id;
  j["probabilities"] = {{"remove", t.probabilities.remove}, {"replace", t.probabilities.replace}, {"insert", t.probabilities.insert}};
  OJson edits = OJson::array();
  for (const auto& e : t.edits) {
    OJson ej;
    ej["op"] = to_string(e.op);
    ej["position"] = e.position;
    ej["source_index"] = e.source_index;
    ej["original"] = e.original ? OJson(*e.original) : OJson(nullptr);
    ej["replacement"] = e.replacement ? OJson(*e.replacement) : OJson(nullptr);
    edits.push_back(ej);
  }
  j["edits"] = edits;
  return j.dump();
}

void run_corrupt(const CorruptArgs& a, const Globals& g, std::ostream& out) {
  require_file(a.in, "input");
  CorruptionConfig c;
  c.processed_fraction = a.fraction;
  c.prob_low = a.plow;
  c.prob_high = a.phigh;
  c.rng_seed = g.seed;
  c.validate();
  const auto records = read_texts(a.in);
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::string> texts;
  for (const auto& r : records) {
    tokens.push_back(tokenize(r.text));
    texts.push_back(r.text);
  }
  const Vocabulary vocab = a.vocab ? Vocabulary::load(*a.vocab) : Vocabulary::build(texts);
  std::vector<CorruptionResult> results(records.size());
  parallel_for(records.size(), g.threads, [&](std::size_t i) {
    Rng rng(sentence_seed(g.seed, i));
    results[i] = corrupt(tokens[i], c, vocab, rng);
  });

  OJson cfg = {{"fraction", a.fraction}, {"plow", a.plow}, {"phigh", a.phigh},
               {"vocab", a.vocab ? "file" : "built"}, {"vocab_hash", Provenance{"", 0, vocab.to_string()}.config_hash()}};
  const Provenance prov{"corrupt", g.seed, cfg.dump()};
  std::string body = prov.jsonl_header();
  std::string trace = prov.jsonl_header();
  for (std::size_t i = 0; i < records.size(); ++i) {
    body += texts_to_jsonl({{records[i].id, join(results[i].tokens)}});
    trace += trace_json(records[i].id, results[i].trace) + "\n";
  }
  write_file(a.out, body);
  if (a.trace) write_file(*a.trace, trace);
  out << "corrupted " << records.size() << " records\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path corpus, out;
  std::optional<fs::path> images, config, model, val;
  std::string variant = "mmsm";
  std::size_t warmstart_epochs = 0;
};

ModelConfig load_model_config(const std::optional<fs::path>& path) {
  if (!path) return ModelConfig{};
  require_file(*path, "model config");
  return ModelConfig::from_json(read_file(*path));
}

void run_train(const TrainArgs& a, const Globals& g, bool seed_given, std::ostream& out, std::ostream& err) {
  require_file(a.corpus, "corpus");
  if (a.images) require_dir(*a.images, "image directory");
  TrainConfig tc;
  if (a.config) {
    require_file(*a.config, "train config");
    tc = TrainConfig::from_json(read_file(*a.config));
  }
  if (seed_given || !a.config) tc.seed = g.seed;
  tc.corruption.rng_seed = tc.seed;
  ModelConfig mc = load_model_config(a.model);
  mc.variant = model_variant_from_string(a.variant);
  if (!a.model) mc.init_seed = tc.seed;

  const bool need_images = mc.variant == ModelVariant::kMultimodal;
  const auto train = load_training_pairs(a.corpus, a.images, need_images);
  std::vector<TrainingPair> val;
  if (a.val) {
    require_file(*a.val, "validation corpus");
    val = load_training_pairs(*a.val, a.images, need_images);
  }
  std::vector<std::string> reports;
  for (const auto& p : train) reports.push_back(join(p.report));
  const Vocabulary vocab = Vocabulary::build(reports);
  mc.vocab_size = vocab.size();
  mc.validate();
  MmsmModel model(mc);

  if (a.warmstart_epochs > 0 && model.multimodal()) {
    ContrastiveConfig cc;
    cc.enabled = true;
    cc.epochs = a.warmstart_epochs;
    cc.seed = derive_seed(tc.seed, 0x434d43);
    contrastive_warmstart(model, train, vocab, cc);
  }

  OJson cfg;
  cfg["train"] = OJson::parse(tc.to_json());
  cfg["model"] = OJson::parse(mc.to_json());
  cfg["warmstart_epochs"] = a.warmstart_epochs;
  const Provenance prov{"train", tc.seed, cfg.dump()};

  fs::create_directories(a.out);
  TrainLog log;
  auto write_log = [&] { write_file(a.out / "train_log.jsonl", prov.jsonl_header() + log.to_jsonl()); };
  TrainResult result;
  try {
    result = train_correction(model, train, val, vocab, tc, log, [&](const EpochRecord& e) {
      if (g.verbose)
        err << "epoch " << e.epoch << " loss " << e.train_loss << " val_wer " << e.val_wer << (e.best ? " *" : "") << "\n";
    });
  } catch (const DivergenceError&) {
    write_log();
    throw;
  }
  write_log();
  result.best.blobs.emplace_back("provenance", prov.to_json());
  result.best.save(a.out / "model.ckpt");
  write_file(a.out / "vocab.txt", vocab.to_string());
  out << "trained " << a.variant << " model: best epoch " << result.best_epoch << ", checkpoint "
      << (a.out / "model.ckpt").string() << "\n";
}

// ---------------------------------------------------------------------------

struct LoadedModel {
  Checkpoint checkpoint;
  MmsmModel model;
  Vocabulary vocab;
};

LoadedModel load_model(const fs::path& path) {
  require_file(path, "checkpoint");
  Checkpoint ck = Checkpoint::load(path);
  MmsmModel model = MmsmModel::from_checkpoint(ck);
  Vocabulary vocab = checkpoint_vocabulary(ck);
  if (vocab.size() != model.config().vocab_size) throw FormatError("checkpoint: vocabulary does not match the model");
  return {std::move(ck), std::move(model), std::move(vocab)};
}

std::string fnv1a_hex_of_file(const fs::path& p) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(read_file(p))));
  return buf;
}

struct CorrectArgs {
  fs::path ckpt, in, out;
  std::optional<fs::path> images;
};

void run_correct(const CorrectArgs& a, const Globals& g, std::ostream& out) {
  const auto loaded = load_model(a.ckpt);
  require_file(a.in, "input");
  if (a.images) require_dir(*a.images, "image directory");
  const auto inputs = read_texts(a.in);
  const auto corrected = correct_texts(loaded.model, loaded.vocab, inputs, a.images, g.threads);
  OJson cfg = {{"ckpt", fnv1a_hex_of_file(a.ckpt)}};
  const Provenance prov{"correct", g.seed, cfg.dump()};
  write_file(a.out, prov.jsonl_header() + texts_to_jsonl(corrected));
  out << "corrected " << corrected.size() << " records\n";
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  fs::path refs, hyps, out;
  bool no_pairs = false;
};

void run_eval(const EvalArgs& a, const Globals& g, std::ostream& out) {
  require_file(a.refs, "references");
  require_file(a.hyps, "hypotheses");
  const auto report = evaluate_texts(read_texts(a.refs), read_texts(a.hyps));
  OJson cfg = {{"refs", fnv1a_hex_of_file(a.refs)}, {"hyps", fnv1a_hex_of_file(a.hyps)}};
  const Provenance prov{"eval", g.seed, cfg.dump()};
  write_file(a.out, report_to_json(report, &prov, !a.no_pairs));
  char buf[96];
  std::snprintf(buf, sizeof buf, "WER %.4f CER %.4f over %zu pairs (%zu skipped)\n", report[Metric::kWer],
                report[Metric::kCer], report.pairs.size(), report.skipped.size());
  out << buf;
}

// ---------------------------------------------------------------------------

struct NoiseArgs {
  fs::path in, out;
  std::vector<std::string> snr;
};

void run_noise(const NoiseArgs& a, const Globals& g, std::ostream& out) {
  require_dir(a.in, "input");
  if (fs::exists(a.out) && fs::equivalent(a.in, a.out)) throw UsageError("--out must differ from --in");
  std::vector<double> snrs;
  for (const auto& s : a.snr) snrs.push_back(parse_snr(s));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.in))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  struct Job {
    std::size_t file;
    double snr;
  };
  std::vector<Job> jobs;
  for (std::size_t f = 0; f < files.size(); ++f)
    for (double s : snrs) jobs.push_back({f, s});
  std::vector<std::string> lines(jobs.size());
  fs::create_directories(a.out);
  parallel_for(jobs.size(), g.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    const fs::path& src = files[job.file];
    const std::string label = snr_label(job.snr);
    const Waveform w = read_wav(src);
    Rng rng(derive_seed(g.seed, fnv1a(src.filename().string()), fnv1a(label)));
    const auto noisy = add_awgn(w, job.snr, rng);
    const std::string name = src.stem().string() + "_" + label + ".wav";
    write_wav(a.out / name, noisy.waveform);
    OJson j_line;
    j_line["file"] = name;
    j_line["source"] = src.filename().string();
    j_line["snr_db"] = std::isinf(job.snr) ? OJson("clean") : OJson(job.snr);
    j_line["measured_snr_db"] = std::isinf(job.snr) ? OJson(nullptr) : OJson(snr_db(w.samples, noisy.noise));
    j_line["clip_fraction"] = noisy.clip_fraction;
    lines[j] = j_line.dump() + "\n";
  });
  OJson cfg = {{"snr", a.snr}};
  const Provenance prov{"noise", g.seed, cfg.dump()};
  std::string log = prov.jsonl_header();
  for (const auto& l : lines) log += l;
  write_file(a.out / "noise_log.jsonl", log);
  out << "wrote " << jobs.size() << " files to " << a.out.string() << "\n";
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  fs::path in;
  std::string format = "md";
  std::optional<fs::path> out;
};

void run_report(const ReportArgs& a, std::ostream& out) {
  require_file(a.in, "grid");
  const Grid grid = Grid::from_json(read_file(a.in));
  const std::string text = a.format == "csv" ? grid.to_csv() : grid.to_markdown();
  if (a.out) write_file(*a.out, text);
  else out << text;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::optional<fs::path> refs, images, proposed, text_only;
  std::vector<std::string> hyps;
  fs::path out;
  bool synthetic = false;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> records;
};

OJson report_summary(const MetricReport& r) {
  OJson j;
  j["n_pairs"] = r.pairs.size();
  for (Metric m : kAllMetrics) j[metric_name(m)] = r[m];
  return j;
}

void run_bench_synthetic(const BenchArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  HeadlineConfig hc = default_headline_config();
  hc.synth.seed = hc.model.init_seed = hc.train.seed = g.seed;
  if (a.epochs) hc.train.total_epochs = *a.epochs;
  if (a.records) hc.synth.n_records = *a.records;
  const Provenance prov{"bench", g.seed, hc.to_json()};
  const auto r = run_headline(hc, [&](const std::string& s) {
    if (g.verbose) err << s << "\n";
  });
  Grid grid;
  grid.systems = {"synthetic", "synthetic (image-disambiguable)"};
  grid.cells = {{{r.input[Metric::kWer], r.input[Metric::kCer]}, {r.input_flagged[Metric::kWer], r.input_flagged[Metric::kCer]}},
                {{r.text_only[Metric::kWer], r.text_only[Metric::kCer]},
                 {r.text_only_flagged[Metric::kWer], r.text_only_flagged[Metric::kCer]}},
                {{r.proposed[Metric::kWer], r.proposed[Metric::kCer]},
                 {r.proposed_flagged[Metric::kWer], r.proposed_flagged[Metric::kCer]}}};
  fs::create_directories(a.out);
  write_file(a.out / "grid.json", grid.to_json(&prov));
  write_file(a.out / "grid.md", grid.to_markdown());
  write_file(a.out / "grid.csv", grid.to_csv());
  OJson s;
  s["provenance"] = OJson::parse(prov.to_json());
  s["n_train"] = r.n_train;
  s["n_val"] = r.n_val;
  s["n_test"] = r.n_test;
  s["ambiguity_fraction"] = r.ambiguity_fraction;
  s["input"] = report_summary(r.input);
  s["text_only"] = report_summary(r.text_only);
  s["proposed"] = report_summary(r.proposed);
  s["input_flagged"] = report_summary(r.input_flagged);
  s["text_only_flagged"] = report_summary(r.text_only_flagged);
  s["proposed_flagged"] = report_summary(r.proposed_flagged);
  write_file(a.out / "summary.json", s.dump(2) + "\n");
  r.proposed_checkpoint.save(a.out / "mmsm.ckpt");
  r.text_only_checkpoint.save(a.out / "text-only.ckpt");
  out << grid.to_markdown();
}

void run_bench(const BenchArgs& a, const Globals& g, std::ostream& out, std::ostream& err) {
  if (a.synthetic) return run_bench_synthetic(a, g, out, err);
  if (!a.refs || a.hyps.empty() || !a.proposed || !a.text_only)
    throw UsageError("bench needs --refs, at least one --hyps LABEL=PATH, --proposed and --text-only (or --synthetic)");
  require_file(*a.refs, "references");
  const auto proposed = load_model(*a.proposed);
  const auto text_only = load_model(*a.text_only);
  if (proposed.model.multimodal() && !a.images) throw UsageError("bench needs --images for the multimodal model");
  if (a.images) require_dir(*a.images, "image directory");
  const auto refs = read_texts(*a.refs);

  Grid grid;
  grid.cells.assign(3, {});
  OJson cfg;
  cfg["refs"] = fnv1a_hex_of_file(*a.refs);
  cfg["proposed"] = fnv1a_hex_of_file(*a.proposed);
  cfg["text_only"] = fnv1a_hex_of_file(*a.text_only);
  OJson systems = OJson::array();
  std::vector<std::pair<std::string, fs::path>> inputs;
  for (const auto& h : a.hyps) {
    const auto eq = h.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--hyps expects LABEL=PATH, got '" + h + "'");
    inputs.emplace_back(h.substr(0, eq), fs::path(h.substr(eq + 1)));
    require_file(inputs.back().second, "hypotheses");
    systems.push_back({{"label", inputs.back().first}, {"hyps", fnv1a_hex_of_file(inputs.back().second)}});
  }
  cfg["systems"] = systems;
  const Provenance prov{"bench", g.seed, cfg.dump()};
  fs::create_directories(a.out);
  for (const auto& [label, path] : inputs) {
    if (g.verbose) err << "bench: " << label << "\n";
    const auto hyps = read_texts(path);
    const auto t = correct_texts(text_only.model, text_only.vocab, hyps, a.images, g.threads);
    const auto p = correct_texts(proposed.model, proposed.vocab, hyps, a.images, g.threads);
    write_file(a.out / (label + ".text-only.jsonl"), prov.jsonl_header() + texts_to_jsonl(t));
    write_file(a.out / (label + ".proposed.jsonl"), prov.jsonl_header() + texts_to_jsonl(p));
    grid.systems.push_back(label);
    int row = 0;
    for (const auto* h : {&hyps, &t, &p}) {
      const auto r = evaluate_texts(refs, *h);
      grid.cells[static_cast<std::size_t>(row)].push_back({r[Metric::kWer], r[Metric::kCer]});
      write_file(a.out / (label + "." + std::string(row == 0 ? "input" : row == 1 ? "text-only" : "proposed") + ".report.json"),
                 report_to_json(r, &prov));
      ++row;
    }
  }
  write_file(a.out / "grid.json", grid.to_json(&prov));
  write_file(a.out / "grid.md", grid.to_markdown());
  write_file(a.out / "grid.csv", grid.to_csv());
  out << grid.to_markdown();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal transcript correction toolkit", "mmsm"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  g.threads = default_threads();
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (default: MMSM_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("--verbose,-v", g.verbose, "Progress messages on stderr");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic image/report corpus");
  synth_cmd->add_option("--n", synth.n, "Number of records")->capture_default_str();
  synth_cmd->add_option("--classes", synth.classes, "Number of finding classes (1-4)")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Uniform pixel noise amplitude")->capture_default_str();
  synth_cmd->add_option("--image-size", synth.image_size, "Image side in pixels")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  CorruptArgs corrupt_a;
  auto* corrupt_cmd = app.add_subcommand("corrupt", "Simulate transcription errors");
  corrupt_cmd->add_option("--in", corrupt_a.in, "Input JSONL ({id,text} or corpus records)")->required();
  corrupt_cmd->add_option("--out", corrupt_a.out, "Output JSONL")->required();
  corrupt_cmd->add_option("--fraction", corrupt_a.fraction, "Fraction of words processed")->capture_default_str();
  corrupt_cmd->add_option("--plow", corrupt_a.plow, "Lower bound of the op probabilities")->capture_default_str();
  corrupt_cmd->add_option("--phigh", corrupt_a.phigh, "Upper bound of the op probabilities")->capture_default_str();
  corrupt_cmd->add_option("--trace", corrupt_a.trace, "Write the per-sentence edit trace here");
  corrupt_cmd->add_option("--vocab", corrupt_a.vocab, "Vocabulary file (default: built from the input)");

  TrainArgs train_a;
  auto* train_cmd = app.add_subcommand("train", "Train a correction model");
  train_cmd->add_option("--corpus", train_a.corpus, "Training corpus JSONL")->required();
  train_cmd->add_option("--images", train_a.images, "Image directory (default: paths relative to the corpus)");
  train_cmd->add_option("--config", train_a.config, "Training config JSON");
  train_cmd->add_option("--model", train_a.model, "Model config JSON");
  train_cmd->add_option("--val", train_a.val, "Validation corpus JSONL");
  train_cmd->add_option("--variant", train_a.variant, "mmsm or text-only")
      ->check(CLI::IsMember({"mmsm", "text-only"}))
      ->capture_default_str();
  train_cmd->add_option("--warmstart-epochs", train_a.warmstart_epochs, "Contrastive warm-start epochs (0 = off)")
      ->capture_default_str();
  train_cmd->add_option("--out", train_a.out, "Output directory")->required();

  CorrectArgs correct_a;
  auto* correct_cmd = app.add_subcommand("correct", "Correct transcripts with a trained model");
  correct_cmd->add_option("--ckpt", correct_a.ckpt, "Model checkpoint")->required();
  correct_cmd->add_option("--in", correct_a.in, "Transcripts JSONL ({id,text})")->required();
  correct_cmd->add_option("--images", correct_a.images, "Directory holding <id>.pgm");
  correct_cmd->add_option("--out", correct_a.out, "Output JSONL")->required();

  EvalArgs eval_a;
  auto* eval_cmd = app.add_subcommand("eval", "Score hypotheses against references");
  eval_cmd->add_option("--refs", eval_a.refs, "Reference JSONL")->required();
  eval_cmd->add_option("--hyps", eval_a.hyps, "Hypothesis JSONL")->required();
  eval_cmd->add_option("--out", eval_a.out, "Report JSON")->required();
  eval_cmd->add_flag("--no-pairs", eval_a.no_pairs, "Omit per-pair scores");

  NoiseArgs noise_a;
  auto* noise_cmd = app.add_subcommand("noise", "Add white Gaussian noise to WAV files");
  noise_cmd->add_option("--in", noise_a.in, "Directory of mono 16-bit WAV files")->required();
  noise_cmd->add_option("--out", noise_a.out, "Output directory")->required();
  noise_cmd->add_option("--snr", noise_a.snr, "Target SNR in dB, or 'clean' (repeatable)")->required();

  ReportArgs report_a;
  auto* report_cmd = app.add_subcommand("report", "Render a WER/CER grid as Markdown or CSV");
  report_cmd->add_option("--in", report_a.in, "Grid JSON")->required();
  report_cmd->add_option("--format", report_a.format, "md or csv")->check(CLI::IsMember({"md", "csv"}))->capture_default_str();
  report_cmd->add_option("--out", report_a.out, "Output file (default: stdout)");

  BenchArgs bench_a;
  auto* bench_cmd = app.add_subcommand("bench", "Input / Text-Only / Proposed comparison");
  bench_cmd->add_option("--refs", bench_a.refs, "Reference JSONL");
  bench_cmd->add_option("--hyps", bench_a.hyps, "LABEL=PATH hypothesis file (repeatable)");
  bench_cmd->add_option("--images", bench_a.images, "Directory holding <id>.pgm");
  bench_cmd->add_option("--proposed", bench_a.proposed, "Multimodal checkpoint");
  bench_cmd->add_option("--text-only", bench_a.text_only, "Text-only checkpoint");
  bench_cmd->add_flag("--synthetic", bench_a.synthetic, "Generate, train and score on the synthetic corpus");
  bench_cmd->add_option("--epochs", bench_a.epochs, "Override training epochs (--synthetic)");
  bench_cmd->add_option("--records", bench_a.records, "Override corpus size (--synthetic)");
  bench_cmd->add_option("--out", bench_a.out, "Output directory")->required();

  std::vector<std::string> argv_store = {"mmsm"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForVersion&) {
      out << version_string() << "\n";
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n" << app.help();
      return kExitUsage;
    }
    if (g.threads == 0) g.threads = 1;

    if (*synth_cmd) run_synth(synth, g, out);
    else if (*corrupt_cmd) run_corrupt(corrupt_a, g, out);
    else if (*train_cmd) run_train(train_a, g, seed_opt->count() > 0, out, err);
    else if (*correct_cmd) run_correct(correct_a, g, out);
    else if (*eval_cmd) run_eval(eval_a, g, out);
    else if (*noise_cmd) run_noise(noise_a, g, out);
    else if (*report_cmd) run_report(report_a, out);
    else if (*bench_cmd) run_bench(bench_a, g, out, err);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace mmsm
