#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "s2tl/tensor.hpp"

namespace s2tl {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kFrameLength = 400;  // 25 ms
inline constexpr std::size_t kFrameShift = 160;   // 10 ms
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kMelBins = 80;
inline constexpr double kLogFloor = 1e-10;

struct Wav {
  int sample_rate = kSampleRate;
  int channels = 1;
  std::vector<std::int16_t> samples;
};

/// RIFF/WAVE, PCM 16-bit. Throws DataError on anything else.
Wav read_wav(const std::filesystem::path& path);
Wav parse_wav(std::span<const std::uint8_t> bytes);
void write_wav(const std::filesystem::path& path, const Wav& wav);
std::vector<std::uint8_t> encode_wav(const Wav& wav);

/// Log-mel features, frames x mel bins.
struct MelSpectrogram {
  Tensor frames;  // [n_frames, mel_bins]
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;
  int sample_rate_hz = kSampleRate;

  std::size_t n_frames() const { return frames.defined() ? frames.dim(0) : 0; }
};

/// floor((samples - 400) / 160) + 1 for samples >= 400, else 0.
std::size_t frame_count(std::size_t samples);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters on the HTK mel scale over the power spectrum bins of a
/// 512-point DFT.
class MelFilterbank {
 public:
  MelFilterbank(std::size_t bins = kMelBins, double low_hz = 0.0, double high_hz = 8000.0,
                std::size_t fft_size = kFftSize, int sample_rate = kSampleRate);

  std::size_t bins() const { return bins_; }
  std::size_t spectrum_size() const { return fft_size_ / 2 + 1; }
  /// Weight of spectrum bin `k` in filter `m`.
  float weight(std::size_t m, std::size_t k) const { return weights_[m * spectrum_size() + k]; }
  double center_hz(std::size_t m) const { return centers_[m]; }
  /// Filter energies for one power spectrum of length spectrum_size().
  void apply(std::span<const double> power, std::span<double> out) const;

 private:
  std::size_t bins_, fft_size_;
  std::vector<float> weights_;
  std::vector<double> centers_;
};

/// 25 ms Hann window, 10 ms hop, 512-point power spectrum, 80 mel filters
/// between 0 and 8 kHz, natural log with a 1e-10 floor.
MelSpectrogram log_mel(const Wav& wav);
MelSpectrogram log_mel(std::span<const std::int16_t> samples, int sample_rate);

/// Per-dimension mean and standard deviation over a corpus.
struct CmvnStats {
  std::vector<float> mean;
  std::vector<float> stddev;

  static CmvnStats compute(std::span<const MelSpectrogram> specs);
  /// Returns (x - mean) / stddev per feature dimension.
  Tensor apply(const Tensor& frames) const;
  bool empty() const { return mean.empty(); }
};

}  // namespace s2tl
