#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/codec_surrogate.hpp"
#include "mdctpf/lapped_transform.hpp"
#include "mdctpf/metrics.hpp"

namespace mdctpf {

struct MaskConfig {
  double gamma = 1e-9;
  // Upper bound on gains; +inf leaves the ratio unbounded.
  double alpha = 2.0;
};

void validate(const MaskConfig& cfg);

// Per-bin gains in [0, alpha].
struct Mask {
  Eigen::VectorXd gains;
  double alpha = 2.0;
  std::int64_t frame_index = 0;
};

// gains(k) = min(|clean(k)| / (|coded(k)| + gamma), alpha) on MCLT magnitudes.
Mask ideal_mask(const MCLTSpectrum& clean, const MCLTSpectrum& coded, const MaskConfig& cfg);

// Element-wise gain on the MDCT coefficients; the MDST part is never formed.
FrameSpectrum apply_mask_mdct(const FrameSpectrum& coded, const Mask& mask);

// Oracle post-filter: ideal masks from clean and coded MCLT frames applied to
// the coded MDCT frames, then synthesized to `length` samples.
Eigen::VectorXd oracle_enhance(const Eigen::Ref<const Eigen::VectorXd>& clean,
                               const CodedSignal& coded, const WindowPair& window,
                               const MaskConfig& cfg);

// alpha == 0 marks the unprocessed coded baseline row.
inline constexpr double kBaselineAlpha = 0.0;
inline constexpr double kUnboundedAlpha = std::numeric_limits<double>::infinity();

struct SweepRow {
  double alpha = 0.0;
  std::string file;
  double lsd_db = 0.0;
  double segsnr_db = 0.0;
};

// One baseline row followed by one row per alpha, in the given order.
std::vector<SweepRow> oracle_sweep(const Eigen::Ref<const Eigen::VectorXd>& clean,
                                   const std::string& file_id, const CodecConfig& codec,
                                   const std::vector<double>& alphas, const WindowPair& window,
                                   double gamma = MaskConfig{}.gamma,
                                   const MetricConfig& metric = {});

// The grid emitted by default: {0.5, 1, 1.5, 2, 4, inf}.
std::vector<double> default_alpha_grid();

// CSV with header `alpha,file,lsd_db,segsnr_db`.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace mdctpf
