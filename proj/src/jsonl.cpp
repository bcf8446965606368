#include "mmsm/jsonl.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmsm/errors.hpp"

namespace mmsm {

namespace {

using Json = nlohmann::json;

// Calls fn(json, line_number) for every non-blank, non-provenance line.
template <class Fn>
void for_each_line(std::string_view text, const char* what, Fn fn) {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object())
      throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": expected a JSON object");
    if (j.contains(kProvenanceKey)) continue;
    try {
      fn(j, line_no);
    } catch (const Json::exception& e) {
      throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string require_string(const Json& j, const char* key, const char* what, std::size_t line_no) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw FormatError(std::string(what) + " line " + std::to_string(line_no) + ": missing string field \"" + key + "\"");
  return j.at(key).get<std::string>();
}

}  // namespace

std::vector<CorpusRecord> parse_corpus(std::string_view text) {
  std::vector<CorpusRecord> out;
  for_each_line(text, "corpus", [&](const Json& j, std::size_t line_no) {
    CorpusRecord r;
    r.id = require_string(j, "id", "corpus", line_no);
    r.image = require_string(j, "image", "corpus", line_no);
    r.report = require_string(j, "report", "corpus", line_no);
    if (!j.contains("class") || !j.at("class").is_number_integer())
      throw FormatError("corpus line " + std::to_string(line_no) + ": missing integer field \"class\"");
    r.label = j.at("class").get<int>();
    out.push_back(std::move(r));
  });
  return out;
}

std::string corpus_to_jsonl(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["image"] = r.image;
    j["report"] = r.report;
    j["class"] = r.label;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path)); }

std::vector<TextRecord> parse_texts(std::string_view text) {
  std::vector<TextRecord> out;
  for_each_line(text, "text file", [&](const Json& j, std::size_t line_no) {
    TextRecord r;
    r.id = require_string(j, "id", "text file", line_no);
    r.text = require_string(j, j.contains("text") ? "text" : "report", "text file", line_no);
    out.push_back(std::move(r));
  });
  return out;
}

std::string texts_to_jsonl(const std::vector<TextRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["text"] = r.text;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<TextRecord> read_texts(const std::filesystem::path& path) { return parse_texts(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mmsm
