#include "s2tl/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>

#include "s2tl/errors.hpp"

namespace s2tl {

namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

Wav parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file");
  }
  Wav wav;
  bool have_fmt = false, have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw DataError("truncated WAV chunk");
    const std::uint8_t* body = chunk + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw DataError("WAV fmt chunk too short");
      const auto format = read_u16(body);
      wav.channels = read_u16(body + 2);
      wav.sample_rate = static_cast<int>(read_u32(body + 4));
      const auto bits = read_u16(body + 14);
      if (format != 1 || bits != 16) {
        throw DataError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                        std::to_string(bits) + " bits); expected PCM16");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError("WAV data chunk precedes fmt chunk");
      wav.samples.resize(size / 2);
      for (std::size_t i = 0; i < wav.samples.size(); ++i)
        wav.samples[i] = static_cast<std::int16_t>(read_u16(body + 2 * i));
      have_data = true;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt || !have_data) throw DataError("WAV file lacks fmt or data chunk");
  if (wav.channels != 1) {
    throw DataError("expected mono audio, got " + std::to_string(wav.channels) + " channels");
  }
  return wav;
}

Wav read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_wav(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Wav& wav) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(wav.channels));
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wav.sample_rate * wav.channels * 2));
  put_u16(out, static_cast<std::uint16_t>(wav.channels * 2));
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (auto s : wav.samples) put_u16(out, static_cast<std::uint16_t>(s));
  return out;
}

void write_wav(const std::filesystem::path& path, const Wav& wav) {
  const auto bytes = encode_wav(wav);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::size_t frame_count(std::size_t samples) {
  return samples < kFrameLength ? 0 : (samples - kFrameLength) / kFrameShift + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(std::size_t bins, double low_hz, double high_hz,
                             std::size_t fft_size, int sample_rate)
    : bins_(bins), fft_size_(fft_size) {
  const std::size_t nspec = fft_size / 2 + 1;
  weights_.assign(bins * nspec, 0.0f);
  centers_.resize(bins);
  const double mel_lo = hz_to_mel(low_hz), mel_hi = hz_to_mel(high_hz);
  const double step = (mel_hi - mel_lo) / static_cast<double>(bins + 1);
  for (std::size_t m = 0; m < bins; ++m) {
    const double left = mel_lo + step * m;
    const double center = left + step;
    const double right = center + step;
    centers_[m] = mel_to_hz(center);
    for (std::size_t k = 0; k < nspec; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / fft_size);
      double w = 0.0;
      if (mel > left && mel <= center) w = (mel - left) / (center - left);
      else if (mel > center && mel < right) w = (right - mel) / (right - center);
      weights_[m * nspec + k] = static_cast<float>(w);
    }
  }
}

void MelFilterbank::apply(std::span<const double> power, std::span<double> out) const {
  const std::size_t nspec = spectrum_size();
  for (std::size_t m = 0; m < bins_; ++m) {
    double acc = 0.0;
    const float* w = weights_.data() + m * nspec;
    for (std::size_t k = 0; k < nspec; ++k) acc += w[k] * power[k];
    out[m] = acc;
  }
}

namespace {

struct FftwFree {
  void operator()(void* p) const { fftwf_free(p); }
};
struct PlanFree {
  void operator()(fftwf_plan_s* p) const { fftwf_destroy_plan(p); }
};

}  // namespace

MelSpectrogram log_mel(std::span<const std::int16_t> samples, int sample_rate) {
  if (sample_rate != kSampleRate) {
    throw DataError("expected " + std::to_string(kSampleRate) + " Hz audio, got " +
                    std::to_string(sample_rate) + " Hz (resampling is not supported)");
  }
  const std::size_t n_frames = frame_count(samples.size());
  if (n_frames == 0) {
    throw DataError("audio shorter than one 25 ms frame (" + std::to_string(samples.size()) +
                    " samples)");
  }
  static const MelFilterbank filterbank;
  const std::size_t nspec = kFftSize / 2 + 1;

  std::unique_ptr<float, FftwFree> in(static_cast<float*>(fftwf_malloc(sizeof(float) * kFftSize)));
  std::unique_ptr<fftwf_complex, FftwFree> spec(
      static_cast<fftwf_complex*>(fftwf_malloc(sizeof(fftwf_complex) * nspec)));
  std::unique_ptr<fftwf_plan_s, PlanFree> plan(
      fftwf_plan_dft_r2c_1d(static_cast<int>(kFftSize), in.get(), spec.get(), FFTW_ESTIMATE));

  std::vector<double> window(kFrameLength);
  for (std::size_t i = 0; i < kFrameLength; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFrameLength);

  MelSpectrogram out;
  out.frames = Tensor::zeros({n_frames, kMelBins});
  auto feats = out.frames.mutable_data();
  std::vector<double> power(nspec), energies(kMelBins);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * kFrameShift;
    std::fill(in.get(), in.get() + kFftSize, 0.0f);
    for (std::size_t i = 0; i < kFrameLength; ++i)
      in.get()[i] = static_cast<float>(samples[start + i] / 32768.0 * window[i]);
    fftwf_execute(plan.get());
    for (std::size_t k = 0; k < nspec; ++k) {
      const double re = spec.get()[k][0], im = spec.get()[k][1];
      power[k] = re * re + im * im;
    }
    filterbank.apply(power, energies);
    for (std::size_t m = 0; m < kMelBins; ++m)
      feats[f * kMelBins + m] = static_cast<float>(std::log(std::max(energies[m], kLogFloor)));
  }
  return out;
}

MelSpectrogram log_mel(const Wav& wav) { return log_mel(wav.samples, wav.sample_rate); }

CmvnStats CmvnStats::compute(std::span<const MelSpectrogram> specs) {
  if (specs.empty()) throw DataError("CMVN over an empty corpus");
  const std::size_t dim = specs.front().frames.dim(1);
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  std::size_t count = 0;
  for (const auto& s : specs) {
    const auto d = s.frames.data();
    for (std::size_t f = 0; f < s.n_frames(); ++f)
      for (std::size_t i = 0; i < dim; ++i) {
        sum[i] += d[f * dim + i];
        sq[i] += static_cast<double>(d[f * dim + i]) * d[f * dim + i];
      }
    count += s.n_frames();
  }
  CmvnStats stats;
  stats.mean.resize(dim);
  stats.stddev.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double mu = sum[i] / count;
    const double var = std::max(sq[i] / count - mu * mu, 0.0);
    stats.mean[i] = static_cast<float>(mu);
    stats.stddev[i] = static_cast<float>(std::max(std::sqrt(var), 1e-5));
  }
  return stats;
}

Tensor CmvnStats::apply(const Tensor& frames) const {
  if (empty()) return frames.detach();
  const std::size_t dim = mean.size();
  if (frames.rank() != 2 || frames.dim(1) != dim) {
    throw DimensionError("CMVN expects [n," + std::to_string(dim) + "] frames, got " +
                         shape_str(frames.shape()));
  }
  Tensor out = frames.detach();
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (d[i] - mean[i % dim]) / stddev[i % dim];
  return out;
}

}  // namespace s2tl
