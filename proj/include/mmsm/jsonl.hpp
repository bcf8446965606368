#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mmsm {

/// Corpus line: {"id", "image", "report", "class"}. `image` is relative to the
/// directory holding the corpus file.
struct CorpusRecord {
  std::string id;
  std::string image;
  std::string report;
  int label = 0;

  bool operator==(const CorpusRecord&) const = default;
};

/// Hypothesis / transcript line: {"id", "text"}.
struct TextRecord {
  std::string id;
  std::string text;

  bool operator==(const TextRecord&) const = default;
};

/// Key under which tools write a provenance object as the first JSONL line.
/// Readers skip such lines.
inline constexpr std::string_view kProvenanceKey = "provenance";

std::vector<CorpusRecord> parse_corpus(std::string_view text);
std::string corpus_to_jsonl(const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> read_corpus(const std::filesystem::path& path);

/// Accepts {"id", "text"} lines. Corpus lines ({"id", "report"}) are read too,
/// with the report as text, so a corpus can serve as a reference file.
std::vector<TextRecord> parse_texts(std::string_view text);
std::string texts_to_jsonl(const std::vector<TextRecord>& records);
std::vector<TextRecord> read_texts(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file in the same directory, then renames.
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace mmsm
