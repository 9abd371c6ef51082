#include "mdctpf/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <limits>

#include <unsupported/Eigen/FFT>

#include "mdctpf/errors.hpp"

namespace mdctpf {

namespace {

Eigen::Index fft_size_for(Eigen::Index n) {
  Eigen::Index size = 1;
  while (size < n) size <<= 1;
  return size;
}

// Per-frame energies and the activity threshold relative to the loudest frame.
std::vector<bool> active_frames(const std::vector<double>& energy, double floor_db) {
  const double peak = energy.empty() ? 0.0 : *std::max_element(energy.begin(), energy.end());
  std::vector<bool> active(energy.size(), false);
  if (!(peak > 0.0)) return active;
  const double threshold = peak * std::pow(10.0, floor_db / 10.0);
  for (std::size_t i = 0; i < energy.size(); ++i) active[i] = energy[i] > 0.0 && energy[i] >= threshold;
  return active;
}

}  // namespace

int estimate_delay(const Eigen::Ref<const Eigen::VectorXd>& reference,
                   const Eigen::Ref<const Eigen::VectorXd>& test, int max_lag) {
  if (reference.size() == 0 || test.size() == 0) return 0;
  const Eigen::Index size = fft_size_for(reference.size() + test.size());
  std::vector<double> a(size, 0.0), b(size, 0.0);
  std::copy(reference.data(), reference.data() + reference.size(), a.begin());
  std::copy(test.data(), test.data() + test.size(), b.begin());

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  // corr(d) = sum_i ref[i] test[i + d] = IFFT(conj(A) B)(d)
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] = std::conj(fa[i]) * fb[i];
  std::vector<double> corr;
  fft.inv(corr, fa, size);

  int best = 0;
  double best_value = std::abs(corr[0]);
  for (int d = 1; d <= max_lag; ++d) {
    for (const int lag : {d, -d}) {
      if (lag >= test.size() || -lag >= reference.size()) continue;
      const double v = std::abs(corr[static_cast<std::size_t>((lag + size) % size)]);
      if (v > best_value * (1.0 + 1e-12)) {
        best_value = v;
        best = lag;
      }
    }
  }
  return best;
}

AlignedPair align_signals(const Eigen::Ref<const Eigen::VectorXd>& reference,
                          const Eigen::Ref<const Eigen::VectorXd>& test, int max_lag) {
  AlignedPair out;
  out.delay = estimate_delay(reference, test, max_lag);
  const Eigen::Index ref_start = out.delay < 0 ? -out.delay : 0;
  const Eigen::Index test_start = out.delay > 0 ? out.delay : 0;
  const Eigen::Index len =
      std::max<Eigen::Index>(0, std::min(reference.size() - ref_start, test.size() - test_start));
  out.reference = reference.segment(ref_start, len);
  out.test = test.segment(test_start, len);
  return out;
}

namespace {

double lsd_aligned(const Eigen::VectorXd& reference, const Eigen::VectorXd& test,
                   const WindowPair& window, const MetricConfig& cfg, int* frames_scored) {
  if (reference.size() < 2 * window.N()) {
    throw NumericError("log spectral distance: no scorable frames (signal too short)");
  }
  const auto ref_frames = frame_stream(reference, window.N(), window.lookahead);
  const auto test_frames = frame_stream(test, window.N(), window.lookahead);
  std::vector<Eigen::VectorXd> ref_mag, test_mag;
  std::vector<double> energy;
  for (std::size_t w = 0; w < ref_frames.size(); ++w) {
    ref_mag.push_back(mclt_forward(ref_frames[w], window).magnitude());
    test_mag.push_back(mclt_forward(test_frames[w], window).magnitude());
    energy.push_back(ref_mag.back().squaredNorm());
  }
  const auto active = active_frames(energy, cfg.vad_floor_db);
  double sum = 0.0;
  int count = 0;
  for (std::size_t w = 0; w < ref_mag.size(); ++w) {
    if (!active[w]) continue;
    const Eigen::ArrayXd r = ref_mag[w].array().max(cfg.log_floor).log10();
    const Eigen::ArrayXd t = test_mag[w].array().max(cfg.log_floor).log10();
    sum += std::sqrt((20.0 * (r - t)).square().mean());
    ++count;
  }
  if (count == 0) throw NumericError("log spectral distance: no scorable frames");
  if (frames_scored) *frames_scored = count;
  return sum / count;
}

double segsnr_aligned(const Eigen::VectorXd& reference, const Eigen::VectorXd& test,
                      int frame_length, const MetricConfig& cfg) {
  if (frame_length <= 0) throw ConfigError("segmental SNR: frame length must be positive");
  const Eigen::Index frames = reference.size() / frame_length;
  std::vector<double> energy(frames), noise(frames);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const auto r = reference.segment(f * frame_length, frame_length);
    const auto t = test.segment(f * frame_length, frame_length);
    energy[f] = r.squaredNorm();
    noise[f] = (r - t).squaredNorm();
  }
  const auto active = active_frames(energy, cfg.vad_floor_db);
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index f = 0; f < frames; ++f) {
    if (!active[f]) continue;
    double snr = noise[f] > 0.0 ? 10.0 * std::log10(energy[f] / noise[f]) : cfg.segsnr_max_db;
    sum += std::clamp(snr, cfg.segsnr_min_db, cfg.segsnr_max_db);
    ++count;
  }
  if (count == 0) throw NumericError("segmental SNR: no scorable frames");
  return sum / count;
}

}  // namespace

double log_spectral_distance(const Eigen::Ref<const Eigen::VectorXd>& reference,
                             const Eigen::Ref<const Eigen::VectorXd>& test,
                             const WindowPair& window, const MetricConfig& cfg) {
  const auto aligned = align_signals(reference, test, cfg.max_lag);
  return lsd_aligned(aligned.reference, aligned.test, window, cfg, nullptr);
}

double segmental_snr(const Eigen::Ref<const Eigen::VectorXd>& reference,
                     const Eigen::Ref<const Eigen::VectorXd>& test, int frame_length,
                     const MetricConfig& cfg) {
  const auto aligned = align_signals(reference, test, cfg.max_lag);
  return segsnr_aligned(aligned.reference, aligned.test, frame_length, cfg);
}

ScoreReport score(const Eigen::Ref<const Eigen::VectorXd>& reference,
                  const Eigen::Ref<const Eigen::VectorXd>& test, const WindowPair& window,
                  const std::string& file_id, const MetricConfig& cfg) {
  const auto aligned = align_signals(reference, test, cfg.max_lag);
  ScoreReport report;
  report.file_id = file_id;
  report.lsd_db = lsd_aligned(aligned.reference, aligned.test, window, cfg, &report.frames_scored);
  report.segsnr_db = segsnr_aligned(aligned.reference, aligned.test, window.N(), cfg);
  return report;
}

std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace mdctpf
