#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "s2tl/audio.hpp"
#include "s2tl/corpus.hpp"
#include "s2tl/errors.hpp"

using namespace s2tl;
namespace fs = std::filesystem;

namespace {

std::vector<std::int16_t> tone(double hz, std::size_t samples, double amp = 8000.0) {
  std::vector<std::int16_t> out(samples);
  for (std::size_t i = 0; i < samples; ++i)
    out[i] = static_cast<std::int16_t>(amp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("s2tl_audio_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("frame count formula") {
  CHECK(frame_count(0) == 0);
  CHECK(frame_count(399) == 0);
  CHECK(frame_count(400) == 1);
  CHECK(frame_count(559) == 1);
  CHECK(frame_count(560) == 2);
  CHECK(frame_count(16000) == 98);
  for (std::size_t s = 400; s < 5000; s += 37) CHECK(frame_count(s) == (s - 400) / 160 + 1);
}

TEST_CASE("silence sits on the log floor") {
  const std::vector<std::int16_t> zeros(4000, 0);
  const MelSpectrogram spec = log_mel(zeros, kSampleRate);
  CHECK(spec.n_frames() == frame_count(4000));
  for (float v : spec.frames.data()) CHECK(v == doctest::Approx(std::log(kLogFloor)));
}

TEST_CASE("one second of audio gives 98 frames") {
  const MelSpectrogram spec = log_mel(tone(300.0, 16000), kSampleRate);
  CHECK(spec.n_frames() == 98);
  CHECK(spec.frames.dim(1) == kMelBins);
  CHECK(spec.frame_shift_ms == 10.0);
  CHECK(spec.frame_length_ms == 25.0);
  for (float v : spec.frames.data()) CHECK(std::isfinite(v));
}

TEST_CASE("440 Hz tone peaks in the filter covering 440 Hz") {
  const MelSpectrogram spec = log_mel(tone(440.0, 8000), kSampleRate);
  // independent geometry: filter m is centred at mel (m+1)·mel(8000)/(bins+1)
  const double mel440 = 2595.0 * std::log10(1.0 + 440.0 / 700.0);
  const double step = 2595.0 * std::log10(1.0 + 8000.0 / 700.0) / (kMelBins + 1);
  const long nearest = std::lround(mel440 / step) - 1;
  const auto d = spec.frames.data();
  std::size_t first = 0;
  for (std::size_t f = 0; f < spec.n_frames(); ++f) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < kMelBins; ++m)
      if (d[f * kMelBins + m] > d[f * kMelBins + best]) best = m;
    if (f == 0) first = best;
    CHECK(best == first);
  }
  CHECK(std::abs(static_cast<long>(first) - nearest) <= 1);
}

TEST_CASE("wrong sample rate is a format error") {
  CHECK_THROWS_AS(log_mel(tone(440.0, 8000), 8000), DataError);
  CHECK_THROWS_AS(log_mel(std::vector<std::int16_t>(100), kSampleRate), DataError);
}

TEST_CASE("filterbank geometry") {
  const MelFilterbank fb;
  CHECK(fb.bins() == kMelBins);
  CHECK(fb.spectrum_size() == 257);
  for (std::size_t m = 0; m < fb.bins(); ++m) {
    double row = 0;
    for (std::size_t k = 0; k < fb.spectrum_size(); ++k) {
      CHECK(fb.weight(m, k) >= 0.0f);
      row += fb.weight(m, k);
    }
    CHECK(row > 0.0);
    if (m > 0) CHECK(fb.center_hz(m) > fb.center_hz(m - 1));
  }
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
}

TEST_CASE("features are deterministic") {
  const auto pcm = tone(1000.0, 3000);
  const auto a = log_mel(pcm, kSampleRate).frames, b = log_mel(pcm, kSampleRate).frames;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("WAV round trip and malformed input") {
  Wav w;
  w.samples = tone(200.0, 1234);
  const auto bytes = encode_wav(w);
  CHECK(bytes.size() == 44 + 2 * 1234);
  const Wav back = parse_wav(bytes);
  CHECK(back.sample_rate == kSampleRate);
  CHECK(back.channels == 1);
  CHECK(back.samples == w.samples);

  std::vector<std::uint8_t> junk(bytes.begin(), bytes.begin() + 8);
  CHECK_THROWS_AS(parse_wav(junk), DataError);
  auto truncated = bytes;
  truncated.resize(60);
  CHECK_THROWS_AS(parse_wav(truncated), DataError);
  auto stereo = bytes;
  stereo[22] = 2;
  CHECK_THROWS_AS(parse_wav(stereo), DataError);
  auto eight_bit = bytes;
  eight_bit[34] = 8;
  CHECK_THROWS_AS(parse_wav(eight_bit), DataError);
  CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), DataError);
}

TEST_CASE("CMVN normalizes each dimension") {
  MelSpectrogram a, b;
  a.frames = Tensor::from({2, 2}, std::vector<float>{1, 10, 3, 10});
  b.frames = Tensor::from({2, 2}, std::vector<float>{5, 10, 7, 10});
  const std::vector<MelSpectrogram> specs{a, b};
  const CmvnStats s = CmvnStats::compute(specs);
  CHECK(s.mean[0] == doctest::Approx(4.0));
  CHECK(s.stddev[0] == doctest::Approx(std::sqrt(5.0)));
  const Tensor n = s.apply(a.frames);
  CHECK(n.data()[0] == doctest::Approx(-3.0 / std::sqrt(5.0)));
  CHECK(std::isfinite(n.data()[1]));
  CHECK_THROWS_AS(s.apply(Tensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(CmvnStats::compute(std::vector<MelSpectrogram>{}), DataError);
}

TEST_CASE("synthetic tones") {
  const std::string alphabet = "abcdefghij";
  const Wav ab = synthesize_tones("ab", alphabet, 1);
  CHECK(ab.samples.size() == 2 * kToneSamples);
  CHECK(frame_count(ab.samples.size()) == 18);
  CHECK(ab.samples == synthesize_tones("ab", alphabet, 1).samples);
  for (std::size_t i = 1; i < alphabet.size(); ++i)
    CHECK(tone_frequency(i) > tone_frequency(i - 1));
  CHECK_THROWS_AS(synthesize_tones("az", alphabet, 1), DataError);
}

TEST_CASE("synthetic corpus is byte-identical for a seed") {
  SyntheticOptions opts;
  opts.train_utts = 6;
  opts.dev_utts = 2;
  opts.test_utts = 2;
  const fs::path a = scratch("a"), b = scratch("b");
  make_synthetic_corpus(a, opts);
  make_synthetic_corpus(b, opts);
  for (const char* split : {"train.tsv", "dev.tsv", "test.tsv"}) CHECK(slurp(a / split) == slurp(b / split));
  const Manifest m = read_manifest(a / "train.tsv");
  REQUIRE(m.rows.size() == 6);
  for (const auto& row : m.rows) {
    CHECK(slurp(m.audio_file(row)) == slurp(b / fs::relative(m.audio_file(row), a)));
    std::string reversed(row.transcript.rbegin(), row.transcript.rend());
    CHECK(row.translation == reversed);
    const std::size_t symbols = (row.transcript.size() + 1) / 2;
    CHECK(symbols >= 3);
    CHECK(symbols <= 12);
  }
  CHECK_NOTHROW(validate_manifest(m));
  const auto feats = load_features(m);
  CHECK(feats[0].spec.n_frames() == m.rows[0].n_frames);

  opts.seed = 8;
  const fs::path c = scratch("c");
  make_synthetic_corpus(c, opts);
  CHECK(slurp(a / "train.tsv") != slurp(c / "train.tsv"));
  opts.alphabet = "";
  CHECK_THROWS_AS(make_synthetic_corpus(c, opts), ConfigError);
}

TEST_CASE("manifest errors name the row") {
  const fs::path dir = scratch("manifest");
  auto write = [&](const std::string& body) {
    std::ofstream(dir / "m.tsv") << kManifestHeader << "\n" << body;
    return dir / "m.tsv";
  };
  auto message = [](const fs::path& p) {
    try {
      validate_manifest(read_manifest(p));
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(write("u1\tx.wav\t3\ta\ta\nu2\tx.wav\n")).find("row 2 (line 3)") != std::string::npos);
  CHECK(message(write("u1\tx.wav\tten\ta\ta\n")).find("not an integer") != std::string::npos);
  CHECK(message(write("u1\tmissing.wav\t3\ta\ta\n")).find("missing audio") != std::string::npos);
  CHECK(message(write("")).find("no rows") != std::string::npos);

  Wav w;
  w.samples.assign(3200, 0);
  write_wav(dir / "x.wav", w);
  CHECK(message(write("u1\tx.wav\t18\ta\ta\n")).empty());
  CHECK(message(write("u1\tx.wav\t20\ta\ta\n")).find("n_frames") != std::string::npos);
  w.sample_rate = 8000;
  write_wav(dir / "x.wav", w);
  CHECK_FALSE(message(write("u1\tx.wav\t18\ta\ta\n")).empty());
}
