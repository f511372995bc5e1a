#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s2tl/audio.hpp"

namespace s2tl {

struct ManifestRow {
  std::string id;
  std::string audio_path;  // relative to the manifest's directory unless absolute
  std::size_t n_frames = 0;
  std::string transcript;
  std::string translation;
  std::size_t line = 0;  // 1-based line in the source file, 0 when built in memory
};

struct Manifest {
  std::filesystem::path source;
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::filesystem::path audio_file(const ManifestRow& row) const;
};

inline constexpr const char* kManifestHeader = "id\taudio_path\tn_frames\ttranscript\ttranslation";

/// Tab-separated with a header line. Errors name the data row and file line
/// as "row k (line L)".
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);
/// Decodes every referenced WAV and checks its frame count against the row.
void validate_manifest(const Manifest& manifest);

/// One utterance with features ready for the model.
struct FeatureUtterance {
  std::string id;
  MelSpectrogram spec;
  std::string transcript;
  std::string translation;
};

std::vector<FeatureUtterance> load_features(const Manifest& manifest);

struct SyntheticOptions {
  std::size_t train_utts = 200;
  std::size_t dev_utts = 32;
  std::size_t test_utts = 32;
  std::string alphabet = "abcdefghij";
  std::uint64_t seed = 7;
  std::size_t min_symbols = 3;
  std::size_t max_symbols = 12;
};

inline constexpr std::size_t kToneSamples = kSampleRate / 10;  // 100 ms per symbol

/// Tone frequency assigned to the symbol at `index` of the alphabet.
double tone_frequency(std::size_t index);

/// Concatenated 100 ms tones, one per symbol of `symbols` (each in
/// `alphabet`), plus low-level noise drawn from `seed`.
Wav synthesize_tones(const std::string& symbols, const std::string& alphabet, std::uint64_t seed);

/// Writes wav/*.wav and train.tsv, dev.tsv, test.tsv under `dir`. Transcripts
/// are the symbols separated by spaces; translations are the reversed
/// transcript.
void make_synthetic_corpus(const std::filesystem::path& dir, const SyntheticOptions& opts);

}  // namespace s2tl
