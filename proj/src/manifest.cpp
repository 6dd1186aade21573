#include "modelctl/manifest.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "modelctl/errors.hpp"

namespace modelctl {
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) noexcept { return split == Split::kTrain ? "train" : "test"; }

fs::path Manifest::audio_path(const ManifestEntry& entry) const {
  const fs::path p(entry.audio_path);
  return p.is_absolute() ? p : directory / p;
}

Waveform Manifest::load_audio(const ManifestEntry& entry) const { return read_wav(audio_path(entry)); }

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  Manifest m;
  m.directory = path.parent_path();
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ManifestError(std::string("invalid JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ManifestError("entry is not a JSON object", line_no);
    const auto field = [&](const char* key) {
      if (!j.contains(key)) throw ManifestError(std::string("missing field '") + key + "'", line_no);
      if (!j.at(key).is_string()) throw ManifestError(std::string("field '") + key + "' must be a string", line_no);
      return j.at(key).get<std::string>();
    };
    ManifestEntry e;
    e.id = field("id");
    e.audio_path = field("audio_path");
    e.source_lang = field("source_lang");
    e.ref_transcript = field("ref_transcript");
    e.ref_translation_en = field("ref_translation_en");
    const std::string s = field("split");
    if (s == "train") {
      e.split = Split::kTrain;
    } else if (s == "test") {
      e.split = Split::kTest;
    } else {
      throw InvalidSplit("invalid split '" + s + "' (expected train or test)", line_no);
    }
    if (e.id.empty()) throw ManifestError("empty id", line_no);
    if (!ids.insert(e.id).second) throw DuplicateId(e.id, line_no);

    std::ifstream probe(m.audio_path(e), std::ios::binary);
    if (!probe) m.warnings.push_back("line " + std::to_string(line_no) + ": unreadable audio " + e.audio_path);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    const json j = {{"id", e.id},
                    {"audio_path", e.audio_path},
                    {"source_lang", e.source_lang},
                    {"ref_transcript", e.ref_transcript},
                    {"ref_translation_en", e.ref_translation_en},
                    {"split", std::string(to_string(e.split))}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("short write to " + path.string());
}

std::vector<ManifestEntry> split(const std::vector<ManifestEntry>& entries, Split which) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == which) out.push_back(e);
  }
  return out;
}

}  // namespace modelctl
