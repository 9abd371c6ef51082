#pragma once

#include <filesystem>

#include <Eigen/Core>

namespace mdctpf {

struct AudioBuffer {
  Eigen::VectorXd samples;  // [-1, 1]
  int sample_rate_hz = 16000;
};

struct WavReadOptions {
  // Accept 48 kHz input and convert it to 16 kHz. Other rates are rejected.
  bool resample = false;
  // Scale so the largest magnitude is 1.
  bool peak_normalize = false;
};

// 16-bit PCM RIFF/WAVE, mono or stereo. Stereo is down-mixed as (L + R) / 2.
// Anything but 16 kHz output raises IoError unless `resample` converts it.
AudioBuffer wav_read(const std::filesystem::path& path, const WavReadOptions& opts = {});

// Mono 16-bit PCM. Samples are clipped to [-1, 1] and rounded to the nearest
// code (x * 32767).
void wav_write(const std::filesystem::path& path, const AudioBuffer& audio);

// 48 kHz -> 16 kHz with a 64-tap Blackman-windowed sinc low-pass (cutoff
// 7.6 kHz, unit DC gain) centred on each kept sample. Output length is
// ceil(len / 3).
Eigen::VectorXd resample_48k_to_16k(const Eigen::Ref<const Eigen::VectorXd>& input);

}  // namespace mdctpf
