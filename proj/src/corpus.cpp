#include "mdctpf/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mdctpf/audio_io.hpp"
#include "mdctpf/errors.hpp"
#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kFormants = 4;

using Formants = std::array<double, kFormants>;

// Rough adult vowel formant targets in Hz.
constexpr std::array<Formants, 6> kVowels = {{
    {730, 1090, 2440, 3400},  // a
    {270, 2290, 3010, 3800},  // i
    {300, 870, 2240, 3300},   // u
    {530, 1840, 2480, 3500},  // e
    {570, 840, 2410, 3300},   // o
    {660, 1720, 2410, 3450},  // ae
}};
constexpr Formants kBandwidths = {80, 100, 140, 200};

// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
  double y1 = 0.0, y2 = 0.0;

  double step(double x, double freq, double bw, double fs) {
    const double r = std::exp(-kPi * bw / fs);
    const double theta = 2.0 * kPi * freq / fs;
    const double a1 = 2.0 * r * std::cos(theta);
    const double a2 = -r * r;
    const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
    const double y = gain * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

enum class SegmentKind { kVowel, kFricative, kPlosive, kPause };

struct Segment {
  SegmentKind kind;
  std::int64_t length;
  Formants formants{};
  double level = 1.0;
  double noise_centre = 4000.0;
};

}  // namespace

Eigen::VectorXd synth_speech(std::uint64_t seed, double seconds) {
  const double fs = kSampleRateHz;
  const auto total = static_cast<Eigen::Index>(std::llround(seconds * fs));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(total);
  if (total == 0) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto ms = [&](double lo, double hi) {
    return static_cast<std::int64_t>((lo + (hi - lo) * uni(rng)) * fs / 1000.0);
  };

  // Per-utterance speaker traits.
  const double f0_base = 85.0 + 160.0 * uni(rng);
  const double formant_scale = 0.9 + 0.25 * uni(rng);
  const double tilt = 0.90 + 0.08 * uni(rng);

  std::vector<Segment> plan;
  std::int64_t planned = ms(30, 120);
  plan.push_back({SegmentKind::kPause, planned});
  while (planned < total) {
    const double r = uni(rng);
    if (r < 0.30) {
      plan.push_back({SegmentKind::kFricative, ms(40, 130), {}, 0.1 + 0.25 * uni(rng),
                      2500.0 + 4500.0 * uni(rng)});
    } else if (r < 0.45) {
      plan.push_back({SegmentKind::kPlosive, ms(8, 25), {}, 0.3 + 0.4 * uni(rng),
                      1500.0 + 3000.0 * uni(rng)});
    }
    const int vowels = 1 + static_cast<int>(uni(rng) * 2.0);
    for (int v = 0; v < vowels; ++v) {
      Formants f = kVowels[static_cast<std::size_t>(uni(rng) * kVowels.size()) % kVowels.size()];
      for (double& x : f) x *= formant_scale;
      plan.push_back({SegmentKind::kVowel, ms(70, 240), f, 0.5 + 0.5 * uni(rng)});
    }
    if (uni(rng) < 0.3) plan.push_back({SegmentKind::kPause, ms(40, 300)});
    planned = 0;
    for (const auto& s : plan) planned += s.length;
  }

  std::array<Resonator, kFormants> tract;
  Resonator fricative_filter;
  Formants current = kVowels[0];
  for (double& x : current) x *= formant_scale;
  double glottal_phase = 0.0;
  double glottal_lp = 0.0;
  double voiced_gain = 0.0;
  double noise_gain = 0.0;
  double intonation = 0.0;

  std::int64_t t = 0;
  for (std::size_t si = 0; si < plan.size() && t < total; ++si) {
    const Segment& seg = plan[si];
    const double target_voiced = seg.kind == SegmentKind::kVowel ? seg.level : 0.0;
    const double target_noise =
        (seg.kind == SegmentKind::kFricative || seg.kind == SegmentKind::kPlosive) ? seg.level : 0.0;
    const double smooth = seg.kind == SegmentKind::kPlosive ? 0.02 : 0.004;
    for (std::int64_t i = 0; i < seg.length && t < total; ++i, ++t) {
      voiced_gain += smooth * (target_voiced - voiced_gain);
      noise_gain += smooth * (target_noise - noise_gain);
      if (seg.kind == SegmentKind::kVowel) {
        for (int k = 0; k < kFormants; ++k) current[k] += 0.002 * (seg.formants[k] - current[k]);
      }
      intonation += 0.0005 * (gauss(rng) * 0.5 - intonation);
      const double f0 = f0_base * (1.0 + 0.15 * std::sin(2.0 * kPi * 0.7 * t / fs) + intonation) *
                        (1.0 + 0.01 * gauss(rng));
      glottal_phase += f0 / fs;
      double pulse = 0.0;
      if (glottal_phase >= 1.0) {
        glottal_phase -= 1.0;
        pulse = 1.0;
      }
      // Spectral tilt of the glottal source.
      glottal_lp = tilt * glottal_lp + (1.0 - tilt) * pulse * 20.0;
      double x = voiced_gain * glottal_lp;
      for (int k = 0; k < kFormants; ++k) {
        x = tract[k].step(x, current[k], kBandwidths[k], fs);
      }
      const double noise = fricative_filter.step(gauss(rng), seg.noise_centre, 1800.0, fs);
      out[t] = x + noise_gain * noise + 1e-4 * gauss(rng);
    }
  }

  const double peak = out.cwiseAbs().maxCoeff();
  if (peak > 0.0) out *= 0.9 / peak;
  return out;
}

std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir,
                                                          int count, double seconds,
                                                          std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "utt_%04d.wav", i);
    const auto path = dir / name;
    wav_write(path, {synth_speech(seed + static_cast<std::uint64_t>(i) * 7919u, seconds), kSampleRateHz});
    files.push_back(path);
  }
  return files;
}

std::vector<std::filesystem::path> list_wav_files(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_regular_file(path)) {
    files.push_back(path);
    return files;
  }
  if (!std::filesystem::is_directory(path)) throw IoError("no such corpus: " + path.string());
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

CorpusSplit split_corpus(const std::vector<std::filesystem::path>& files) {
  constexpr double kTrain = 3612.0, kVal = 198.0, kTest = 150.0;
  const auto n = static_cast<std::int64_t>(files.size());
  CorpusSplit split;
  std::int64_t n_val = std::llround(n * kVal / (kTrain + kVal + kTest));
  std::int64_t n_test = std::llround(n * kTest / (kTrain + kVal + kTest));
  if (n >= 3) {
    n_val = std::max<std::int64_t>(n_val, 1);
    n_test = std::max<std::int64_t>(n_test, 1);
  }
  const std::int64_t n_train = n - n_val - n_test;
  for (std::int64_t i = 0; i < n; ++i) {
    auto& bucket = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
    bucket.push_back(files[static_cast<std::size_t>(i)]);
  }
  return split;
}

}  // namespace mdctpf
