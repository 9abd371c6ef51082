#include "mdctpf/audio_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <numbers>
#include <vector>

#include "mdctpf/errors.hpp"

namespace mdctpf {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}
void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

AudioBuffer wav_read(const std::filesystem::path& path, const WavReadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError(name + ": not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Tolerate a truncated data chunk; anything else is malformed.
      if (std::memcmp(chunk, "data", 4) != 0) throw IoError(name + ": truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw IoError(name + ": malformed fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible && avail >= 40) format = read_u16(chunk + 32);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw IoError(name + ": missing fmt chunk");
  if (data == nullptr) throw IoError(name + ": missing data chunk");
  if (format != kFormatPcm) throw IoError(name + ": unsupported format tag " + std::to_string(format));
  if (bits != 16) throw IoError(name + ": only 16-bit PCM is supported");
  if (channels != 1 && channels != 2) throw IoError(name + ": only mono or stereo is supported");

  const std::size_t frames = data_size / (2u * channels);
  Eigen::VectorXd samples(static_cast<Eigen::Index>(frames));
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(read_u16(data + 2 * (i * channels + c)));
      acc += std::max(raw / 32767.0, -1.0);
    }
    samples[static_cast<Eigen::Index>(i)] = acc / channels;
  }

  AudioBuffer out;
  if (rate == 16000) {
    out.samples = std::move(samples);
  } else if (rate == 48000 && opts.resample) {
    out.samples = resample_48k_to_16k(samples);
  } else {
    throw IoError(name + ": sample rate " + std::to_string(rate) +
                  " Hz is not 16000" + (rate == 48000 ? " (use --resample)" : ""));
  }
  out.sample_rate_hz = 16000;
  if (opts.peak_normalize && out.samples.size() > 0) {
    const double peak = out.samples.cwiseAbs().maxCoeff();
    if (peak > 0.0) out.samples /= peak;
  }
  return out;
}

void wav_write(const std::filesystem::path& path, const AudioBuffer& audio) {
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  put_tag(out, "RIFF");
  put_u32(out, 36 + 2 * n);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, 2 * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = std::clamp(audio.samples[i], -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(x * 32767.0))));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path.string());
}

Eigen::VectorXd resample_48k_to_16k(const Eigen::Ref<const Eigen::VectorXd>& input) {
  constexpr int kTaps = 64;
  constexpr int kHalf = kTaps / 2;
  constexpr double kCutoff = 7600.0 / 48000.0;
  std::array<double, kTaps> taps{};
  double sum = 0.0;
  for (int j = 0; j < kTaps; ++j) {
    const double t = j - kHalf;
    const double sinc = t == 0.0 ? 2.0 * kCutoff
                                 : std::sin(2.0 * std::numbers::pi * kCutoff * t) / (std::numbers::pi * t);
    const double phase = 2.0 * std::numbers::pi * j / kTaps;
    const double blackman = 0.42 - 0.5 * std::cos(phase) + 0.08 * std::cos(2.0 * phase);
    taps[j] = sinc * blackman;
    sum += taps[j];
  }
  for (double& t : taps) t /= sum;

  const Eigen::Index out_len = (input.size() + 2) / 3;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(out_len);
  for (Eigen::Index m = 0; m < out_len; ++m) {
    double acc = 0.0;
    for (int j = 0; j < kTaps; ++j) {
      const Eigen::Index idx = 3 * m + j - kHalf;
      if (idx >= 0 && idx < input.size()) acc += taps[j] * input[idx];
    }
    out[m] = acc;
  }
  return out;
}

}  // namespace mdctpf
