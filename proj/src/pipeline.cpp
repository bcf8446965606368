#include "mmsm/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <unordered_map>

#include <json.hpp>

#include "mmsm/errors.hpp"

#ifndef MMSM_VERSION
#define MMSM_VERSION "0.0.0"
#endif

namespace mmsm {

namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

std::string version_string() { return MMSM_VERSION; }

std::string Provenance::config_hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config)));
  return buf;
}

std::string Provenance::to_json() const {
  OJson j;
  j["tool"] = "mmsm";
  j["version"] = version_string();
  j["command"] = command;
  j["seed"] = seed;
  j["config_hash"] = config_hash();
  return j.dump();
}

std::string Provenance::jsonl_header() const {
  return "{\"" + std::string(kProvenanceKey) + "\":" + to_json() + "}\n";
}

std::size_t default_threads() {
  if (const char* env = std::getenv("MMSM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

fs::path resolve_image(const fs::path& corpus_dir, const std::optional<fs::path>& images_dir, const std::string& image) {
  if (images_dir) return *images_dir / fs::path(image).filename();
  return corpus_dir / image;
}

std::vector<TrainingPair> load_training_pairs(const fs::path& corpus_path, const std::optional<fs::path>& images_dir,
                                              bool load_images) {
  const auto records = read_corpus(corpus_path);
  std::vector<TrainingPair> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainingPair p;
    p.id = r.id;
    p.report = tokenize(r.report);
    if (load_images) p.image = read_pgm(resolve_image(corpus_path.parent_path(), images_dir, r.image));
    out.push_back(std::move(p));
  }
  return out;
}

MetricReport evaluate_texts(const std::vector<TextRecord>& refs, const std::vector<TextRecord>& hyps) {
  std::unordered_map<std::string, const TextRecord*> by_id;
  for (const auto& h : hyps)
    if (!by_id.emplace(h.id, &h).second) throw FormatError("duplicate hypothesis id '" + h.id + "'");
  std::unordered_map<std::string, bool> ref_ids;
  std::vector<std::string> r, h, ids;
  std::vector<SkippedPair> missing;
  for (const auto& ref : refs) {
    if (!ref_ids.emplace(ref.id, true).second) throw FormatError("duplicate reference id '" + ref.id + "'");
    const auto it = by_id.find(ref.id);
    if (it == by_id.end()) {
      missing.push_back({ref.id, "no hypothesis"});
      continue;
    }
    r.push_back(ref.text);
    h.push_back(it->second->text);
    ids.push_back(ref.id);
  }
  for (const auto& hyp : hyps)
    if (!ref_ids.count(hyp.id)) missing.push_back({hyp.id, "no reference"});
  MetricReport report = evaluate_corpus(r, h, ids);
  report.skipped.insert(report.skipped.end(), missing.begin(), missing.end());
  return report;
}

std::string report_to_json(const MetricReport& report, const Provenance* provenance, bool include_pairs) {
  OJson j;
  if (provenance) j["provenance"] = OJson::parse(provenance->to_json());
  j["n_pairs"] = report.pairs.size();
  j["n_skipped"] = report.skipped.size();
  OJson metrics;
  for (Metric m : kAllMetrics) metrics[metric_name(m)] = report[m];
  j["metrics"] = metrics;
  j["wer_macro"] = report.wer_macro;
  j["cer_macro"] = report.cer_macro;
  OJson dist;
  for (Metric m : kAllMetrics) {
    const auto& d = report.distribution[static_cast<std::size_t>(m)];
    dist[metric_name(m)] = {{"min", d.min}, {"q1", d.q1}, {"median", d.median}, {"q3", d.q3}, {"max", d.max}, {"mean", d.mean}};
  }
  j["distribution"] = dist;
  OJson skipped = OJson::array();
  for (const auto& s : report.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  j["skipped"] = skipped;
  if (include_pairs) {
    OJson pairs = OJson::array();
    for (const auto& p : report.pairs) {
      OJson pj;
      pj["id"] = p.id;
      for (Metric m : kAllMetrics) pj[metric_name(m)] = p[m];
      pairs.push_back(pj);
    }
    j["pairs"] = pairs;
  }
  return j.dump(2) + "\n";
}

std::vector<TextRecord> correct_texts(const MmsmModel& model, const Vocabulary& vocab,
                                      const std::vector<TextRecord>& inputs, const std::optional<fs::path>& images_dir,
                                      std::size_t threads) {
  if (model.multimodal() && !images_dir) throw UsageError("the multimodal model needs --images");
  std::vector<TextRecord> out(inputs.size());
  const std::size_t max_len = model.config().max_len;
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const auto source = encode(tokenize(inputs[i].text), vocab, true, max_len);
    std::optional<GrayImage> image;
    if (model.multimodal()) image = read_pgm(*images_dir / (inputs[i].id + ".pgm"));
    out[i] = {inputs[i].id, decode(model.correct(image ? &*image : nullptr, source, max_len), vocab)};
  });
  return out;
}

// ---------------------------------------------------------------------------

std::string format_cell(const GridCell& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f/%.3f", c.wer, c.cer);
  return buf;
}

std::string Grid::to_json(const Provenance* provenance) const {
  OJson j;
  if (provenance) j["provenance"] = OJson::parse(provenance->to_json());
  j["systems"] = systems;
  j["rows"] = rows;
  OJson cells_j = OJson::array();
  for (const auto& row : cells) {
    OJson r = OJson::array();
    for (const auto& c : row) r.push_back({{"wer", c.wer}, {"cer", c.cer}});
    cells_j.push_back(r);
  }
  j["cells"] = cells_j;
  return j.dump(2) + "\n";
}

Grid Grid::from_json(std::string_view text) {
  Grid g;
  try {
    const auto j = nlohmann::json::parse(text);
    g.systems = j.at("systems").get<std::vector<std::string>>();
    g.rows = j.at("rows").get<std::vector<std::string>>();
    for (const auto& row : j.at("cells")) {
      std::vector<GridCell> r;
      for (const auto& c : row) r.push_back({c.at("wer").get<double>(), c.at("cer").get<double>()});
      if (r.size() != g.systems.size()) throw FormatError("grid: row width does not match the system list");
      g.cells.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("grid: ") + e.what());
  }
  if (g.cells.size() != g.rows.size()) throw FormatError("grid: row count does not match the row labels");
  return g;
}

std::string Grid::to_markdown() const {
  std::string out = "| (WER/CER) |";
  for (const auto& s : systems) out += " " + s + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < systems.size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "| " + rows[r] + " |";
    for (const auto& c : cells[r]) out += " " + format_cell(c) + " |";
    out += "\n";
  }
  return out;
}

std::string Grid::to_csv() const {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::string out = "(WER/CER)";
  for (const auto& s : systems) out += "," + quote(s);
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += quote(rows[r]);
    for (const auto& c : cells[r]) out += "," + format_cell(c);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string HeadlineConfig::to_json() const {
  OJson j;
  j["synth"] = {{"n_records", synth.n_records}, {"n_classes", synth.n_classes}, {"noise_level", synth.noise_level},
                {"seed", synth.seed}, {"image_size", synth.image_size}, {"templates", synth.templates}};
  j["model"] = OJson::parse(model.to_json());
  j["train"] = OJson::parse(train.to_json());
  j["eval_seed"] = eval_seed;
  return j.dump();
}

HeadlineConfig default_headline_config() {
  HeadlineConfig c;
  c.synth.n_records = 2000;
  c.synth.n_classes = 4;
  c.synth.noise_level = 0.05;
  c.synth.seed = 7;
  c.model.d_model = 64;
  c.model.n_heads = 4;
  c.model.n_image_layers = 2;
  c.model.n_text_layers = 2;
  c.model.n_fusion_layers = 2;
  c.model.n_decoder_layers = 2;
  c.model.ffn_mult = 2;
  c.model.max_len = 32;
  c.model.dropout = 0.1;
  c.model.init_seed = 7;
  c.train.seed = 7;
  c.train.val_limit = 100;
  return c;
}

HeadlineResult run_headline(const HeadlineConfig& config, const MessageFn& message) {
  auto say = [&](const std::string& s) {
    if (message) message(s);
  };
  const SynthCorpus corpus = generate(config.synth);
  std::vector<TrainingPair> train, val, test;
  std::vector<CorpusRecord> test_records;
  std::vector<std::string> train_reports;
  for (const auto& r : corpus.records) {
    TrainingPair p{r.record.id, r.image, tokenize(r.record.report)};
    switch (r.split) {
      case Split::kTrain:
        train_reports.push_back(r.record.report);
        train.push_back(std::move(p));
        break;
      case Split::kVal: val.push_back(std::move(p)); break;
      case Split::kTest:
        test_records.push_back(r.record);
        test.push_back(std::move(p));
        break;
    }
  }
  const Vocabulary vocab = Vocabulary::build(train_reports);
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.image_size = config.synth.image_size;

  HeadlineResult out;
  out.n_train = train.size();
  out.n_val = val.size();
  out.n_test = test.size();

  // Test inputs: one fixed corruption per record, shared by every row.
  const std::size_t max_len = mc.max_len;
  std::vector<std::vector<TokenId>> sources;
  std::vector<const GrayImage*> images;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Rng rng(sentence_seed(config.eval_seed, i));
    const auto corrupted = corrupt(test[i].report, config.train.corruption, vocab, rng).tokens;
    out.test_refs.push_back({test[i].id, join(test[i].report)});
    out.test_inputs.push_back({test[i].id, join(corrupted)});
    sources.push_back(encode(corrupted, vocab, true, max_len));
    images.push_back(&test[i].image);
  }
  const auto probe = ambiguity_probe(test_records, config.train.corruption, vocab, config.eval_seed);
  out.ambiguity_fraction = probe.fraction;
  out.flagged = probe.unrecoverable;

  mc.variant = ModelVariant::kMultimodal;
  MmsmModel proposed(mc);
  mc.variant = ModelVariant::kTextOnly;
  MmsmModel text_only(mc);
  text_only.copy_shared_parameters(proposed);

  auto train_one = [&](MmsmModel& model, TrainLog& log, Checkpoint& ck, const char* name) {
    say(std::string("training ") + name);
    const auto result = train_correction(model, train, val, vocab, config.train, log, [&](const EpochRecord& e) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "  %s epoch %zu loss %.4f val WER %.4f", name, e.epoch, e.train_loss, e.val_wer);
      say(buf);
    });
    ck = result.best;
    return MmsmModel::from_checkpoint(ck);
  };
  const MmsmModel best_proposed = train_one(proposed, out.proposed_log, out.proposed_checkpoint, "mmsm");
  const MmsmModel best_text = train_one(text_only, out.text_only_log, out.text_only_checkpoint, "text-only");

  const auto proposed_hyps = correct_all(best_proposed, images, sources, vocab, max_len);
  const auto text_hyps = correct_all(best_text, images, sources, vocab, max_len);
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.proposed_hyps.push_back({test[i].id, proposed_hyps[i]});
    out.text_only_hyps.push_back({test[i].id, text_hyps[i]});
  }
  auto subset = [&](const std::vector<TextRecord>& v) {
    std::vector<TextRecord> s;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (out.flagged[i]) s.push_back(v[i]);
    return s;
  };
  out.input = evaluate_texts(out.test_refs, out.test_inputs);
  out.text_only = evaluate_texts(out.test_refs, out.text_only_hyps);
  out.proposed = evaluate_texts(out.test_refs, out.proposed_hyps);
  const auto refs_f = subset(out.test_refs);
  out.input_flagged = evaluate_texts(refs_f, subset(out.test_inputs));
  out.text_only_flagged = evaluate_texts(refs_f, subset(out.text_only_hyps));
  out.proposed_flagged = evaluate_texts(refs_f, subset(out.proposed_hyps));
  return out;
}

}  // namespace mmsm
