#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "modelctl/audio.hpp"

namespace modelctl {

enum class Split { kTrain, kTest };

std::string_view to_string(Split split) noexcept;

struct ManifestEntry {
  std::string id;
  std::string audio_path;  // relative to the manifest directory unless absolute
  std::string source_lang;
  std::string ref_transcript;
  std::string ref_translation_en;
  Split split = Split::kTrain;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::filesystem::path directory;
  std::vector<ManifestEntry> entries;
  // Entries whose audio file could not be opened; loading still succeeds.
  std::vector<std::string> warnings;

  std::filesystem::path audio_path(const ManifestEntry& entry) const;
  Waveform load_audio(const ManifestEntry& entry) const;
};

// JSON lines, one entry per line; blank lines are skipped. Missing fields,
// bad splits and duplicate ids raise ManifestError subclasses with the line
// number.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

std::vector<ManifestEntry> split(const std::vector<ManifestEntry>& entries, Split which);

}  // namespace modelctl
