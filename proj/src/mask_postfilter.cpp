#include "mdctpf/mask_postfilter.hpp"

#include <cmath>
#include <sstream>

#include "mdctpf/errors.hpp"

namespace mdctpf {

void validate(const MaskConfig& cfg) {
  if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma)) throw ConfigError("mask: gamma must be > 0");
  if (!(cfg.alpha > 0.0)) throw ConfigError("mask: alpha must be > 0");
}

Mask ideal_mask(const MCLTSpectrum& clean, const MCLTSpectrum& coded, const MaskConfig& cfg) {
  validate(cfg);
  if (clean.real.size() != coded.real.size() || clean.imag.size() != coded.imag.size() ||
      clean.real.size() != clean.imag.size()) {
    throw InputSizeError("ideal_mask: clean and coded spectra differ in length");
  }
  if (clean.frame_index != coded.frame_index) {
    throw InputSizeError("ideal_mask: clean and coded spectra belong to different frames");
  }
  Mask mask;
  mask.alpha = cfg.alpha;
  mask.frame_index = clean.frame_index;
  mask.gains = (clean.magnitude().array() / (coded.magnitude().array() + cfg.gamma))
                   .min(cfg.alpha)
                   .matrix();
  return mask;
}

FrameSpectrum apply_mask_mdct(const FrameSpectrum& coded, const Mask& mask) {
  if (coded.coeffs.size() != mask.gains.size()) {
    throw InputSizeError("apply_mask_mdct: mask and spectrum differ in length");
  }
  if (coded.frame_index != mask.frame_index) {
    throw InputSizeError("apply_mask_mdct: mask and spectrum belong to different frames");
  }
  return {coded.coeffs.cwiseProduct(mask.gains), coded.frame_index};
}

Eigen::VectorXd oracle_enhance(const Eigen::Ref<const Eigen::VectorXd>& clean,
                               const CodedSignal& coded, const WindowPair& window,
                               const MaskConfig& cfg) {
  const auto clean_mclt = analyze_signal_mclt(clean, window);
  const auto coded_mclt = analyze_signal_mclt(coded.signal, window);
  if (clean_mclt.size() != coded.frames.size()) {
    throw InputSizeError("oracle_enhance: coded frame count does not match the clean signal");
  }
  std::vector<FrameSpectrum> enhanced;
  enhanced.reserve(coded.frames.size());
  for (std::size_t w = 0; w < coded.frames.size(); ++w) {
    enhanced.push_back(apply_mask_mdct(coded.frames[w], ideal_mask(clean_mclt[w], coded_mclt[w], cfg)));
  }
  return synthesize_signal(enhanced, window, clean.size());
}

std::vector<SweepRow> oracle_sweep(const Eigen::Ref<const Eigen::VectorXd>& clean,
                                   const std::string& file_id, const CodecConfig& codec,
                                   const std::vector<double>& alphas, const WindowPair& window,
                                   double gamma, const MetricConfig& metric) {
  if (alphas.empty()) throw ConfigError("oracle_sweep: alpha list is empty");
  for (const double a : alphas) {
    if (!(a > 0.0)) throw ConfigError("oracle_sweep: every alpha must be > 0");
  }
  const CodedSignal coded = encode_decode_signal(clean, window, codec);

  std::vector<SweepRow> rows;
  const ScoreReport base = score(clean, coded.signal, window, file_id, metric);
  rows.push_back({kBaselineAlpha, file_id, base.lsd_db, base.segsnr_db});
  for (const double a : alphas) {
    const Eigen::VectorXd enhanced = oracle_enhance(clean, coded, window, MaskConfig{gamma, a});
    const ScoreReport r = score(clean, enhanced, window, file_id, metric);
    rows.push_back({a, file_id, r.lsd_db, r.segsnr_db});
  }
  return rows;
}

std::vector<double> default_alpha_grid() { return {0.5, 1.0, 1.5, 2.0, 4.0, kUnboundedAlpha}; }

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "alpha,file,lsd_db,segsnr_db\n";
  for (const auto& r : rows) {
    out << format_double(r.alpha) << ',' << r.file << ',' << format_double(r.lsd_db) << ','
        << format_double(r.segsnr_db) << '\n';
  }
  return out.str();
}

}  // namespace mdctpf
