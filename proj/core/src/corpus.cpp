#include "s2tl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "s2tl/errors.hpp"
#include "s2tl/rng.hpp"

namespace s2tl {

std::filesystem::path Manifest::audio_file(const ManifestRow& row) const {
  std::filesystem::path p(row.audio_path);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab - pos));
    if (tab == std::string::npos) break;
    pos = tab + 1;
  }
  return out;
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.source = path;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line == kManifestHeader) continue;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    const std::string where =
        path.string() + " row " + std::to_string(m.rows.size() + 1) + " (line " + std::to_string(line_no) + ")";
    if (f.size() != 5) {
      throw DataError(where + ": expected 5 tab-separated fields, got " + std::to_string(f.size()));
    }
    ManifestRow row{f[0], f[1], 0, f[3], f[4], line_no};
    try {
      std::size_t used = 0;
      row.n_frames = std::stoul(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
    } catch (const std::exception&) {
      throw DataError(where + ": n_frames '" + f[2] + "' is not an integer");
    }
    if (row.id.empty()) throw DataError(where + ": empty utterance id");
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty()) throw DataError("manifest " + path.string() + " has no rows");
  return m;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    out << r.id << '\t' << r.audio_path << '\t' << r.n_frames << '\t' << r.transcript << '\t'
        << r.translation << '\n';
  }
}

namespace {

std::string row_label(const Manifest& manifest, std::size_t i) {
  const auto& row = manifest.rows[i];
  std::string out = (manifest.source.empty() ? std::string("manifest") : manifest.source.string()) +
                    " row " + std::to_string(i + 1);
  if (row.line > 0) out += " (line " + std::to_string(row.line) + ")";
  return out + " '" + row.id + "'";
}

}  // namespace

void validate_manifest(const Manifest& manifest) {
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    const std::string where = row_label(manifest, i);
    const auto file = manifest.audio_file(row);
    if (!std::filesystem::exists(file)) throw DataError(where + ": missing audio file " + file.string());
    Wav wav;
    try {
      wav = read_wav(file);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (wav.sample_rate != kSampleRate) {
      throw DataError(where + ": sample rate " + std::to_string(wav.sample_rate) + " Hz, expected " +
                      std::to_string(kSampleRate));
    }
    const auto frames = frame_count(wav.samples.size());
    if (frames != row.n_frames) {
      throw DataError(where + ": n_frames " + std::to_string(row.n_frames) + " but audio has " +
                      std::to_string(frames));
    }
  }
}

std::vector<FeatureUtterance> load_features(const Manifest& manifest) {
  std::vector<FeatureUtterance> out;
  out.reserve(manifest.rows.size());
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& row = manifest.rows[i];
    try {
      out.push_back({row.id, log_mel(read_wav(manifest.audio_file(row))), row.transcript,
                     row.translation});
    } catch (const DataError& e) {
      throw DataError(row_label(manifest, i) + ": " + e.what());
    }
  }
  return out;
}

double tone_frequency(std::size_t index) { return 250.0 + 300.0 * static_cast<double>(index); }

Wav synthesize_tones(const std::string& symbols, const std::string& alphabet, std::uint64_t seed) {
  Rng rng(seed);
  Wav wav;
  wav.samples.reserve(symbols.size() * kToneSamples);
  constexpr std::size_t kRamp = kSampleRate / 200;  // 5 ms fades
  for (char c : symbols) {
    const auto idx = alphabet.find(c);
    if (idx == std::string::npos) {
      throw DataError(std::string("symbol '") + c + "' is not in the alphabet");
    }
    const double freq = tone_frequency(idx);
    for (std::size_t i = 0; i < kToneSamples; ++i) {
      double env = 1.0;
      if (i < kRamp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / kRamp);
      if (i >= kToneSamples - kRamp)
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * (kToneSamples - 1 - i) / kRamp);
      const double tone = 0.4 * env * std::sin(2.0 * std::numbers::pi * freq * i / kSampleRate);
      const double noise = 0.002 * (2.0 * rng.uniform() - 1.0);
      const double v = std::clamp((tone + noise) * 32767.0, -32768.0, 32767.0);
      wav.samples.push_back(static_cast<std::int16_t>(std::lround(v)));
    }
  }
  return wav;
}

void make_synthetic_corpus(const std::filesystem::path& dir, const SyntheticOptions& opts) {
  if (opts.alphabet.empty() || opts.alphabet.size() > 26) {
    throw ConfigError("synthetic alphabet must hold 1..26 symbols");
  }
  for (std::size_t i = 0; i < opts.alphabet.size(); ++i) {
    const char c = opts.alphabet[i];
    if (c == ' ' || c == '\t' || static_cast<unsigned char>(c) >= 0x80 ||
        opts.alphabet.find(c, i + 1) != std::string::npos) {
      throw ConfigError("synthetic alphabet must be distinct printable ASCII symbols");
    }
  }
  if (opts.min_symbols == 0 || opts.min_symbols > opts.max_symbols) {
    throw ConfigError("invalid synthetic utterance length range");
  }
  std::filesystem::create_directories(dir / "wav");
  Rng rng(opts.seed);
  std::size_t counter = 0;
  auto make_split = [&](const std::string& name, std::size_t count) {
    std::vector<ManifestRow> rows;
    for (std::size_t u = 0; u < count; ++u, ++counter) {
      const std::size_t len =
          opts.min_symbols + rng.below(opts.max_symbols - opts.min_symbols + 1);
      std::string symbols;
      for (std::size_t i = 0; i < len; ++i) symbols.push_back(opts.alphabet[rng.below(opts.alphabet.size())]);
      const Wav wav = synthesize_tones(symbols, opts.alphabet, rng.next());

      std::ostringstream id;
      id << name << '_' << std::setfill('0') << std::setw(5) << counter;
      const std::string rel = "wav/" + id.str() + ".wav";
      write_wav(dir / rel, wav);

      std::string transcript, translation;
      for (std::size_t i = 0; i < len; ++i) {
        if (i) transcript.push_back(' '), translation.push_back(' ');
        transcript.push_back(symbols[i]);
        translation.push_back(symbols[len - 1 - i]);
      }
      rows.push_back({id.str(), rel, frame_count(wav.samples.size()), transcript, translation});
    }
    write_manifest(dir / (name + ".tsv"), rows);
  };
  make_split("train", opts.train_utts);
  make_split("dev", opts.dev_utts);
  make_split("test", opts.test_utts);
}

}  // namespace s2tl
