#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

struct MetricConfig {
  // Magnitude floor before taking logs.
  double log_floor = 1e-7;
  // Frames whose reference energy is this far below the loudest frame are
  // not scored.
  double vad_floor_db = -60.0;
  double segsnr_min_db = -10.0;
  double segsnr_max_db = 35.0;
  // Delay search range for cross-correlation alignment, in samples.
  int max_lag = 320;
};

struct ScoreReport {
  std::string file_id;
  double lsd_db = 0.0;
  double segsnr_db = 0.0;
  int frames_scored = 0;
};

// Lag d maximizing |sum_i ref[i] test[i + d]| over |d| <= max_lag.
int estimate_delay(const Eigen::Ref<const Eigen::VectorXd>& reference,
                   const Eigen::Ref<const Eigen::VectorXd>& test, int max_lag);

struct AlignedPair {
  Eigen::VectorXd reference;
  Eigen::VectorXd test;
  int delay = 0;
};

// Shifts `test` by the estimated delay and trims both to the overlap.
AlignedPair align_signals(const Eigen::Ref<const Eigen::VectorXd>& reference,
                          const Eigen::Ref<const Eigen::VectorXd>& test, int max_lag);

// Mean over active frames of the RMS (over bins) of
// 20 log10|REF(k)| - 20 log10|TEST(k)| on MCLT magnitudes. Throws
// NumericError when no frame passes the activity threshold.
double log_spectral_distance(const Eigen::Ref<const Eigen::VectorXd>& reference,
                             const Eigen::Ref<const Eigen::VectorXd>& test,
                             const WindowPair& window, const MetricConfig& cfg = {});

// Mean over active frames of 10 log10(sum ref^2 / sum (ref - test)^2),
// clamped per frame to [segsnr_min_db, segsnr_max_db].
double segmental_snr(const Eigen::Ref<const Eigen::VectorXd>& reference,
                     const Eigen::Ref<const Eigen::VectorXd>& test, int frame_length = kFrameLength,
                     const MetricConfig& cfg = {});

ScoreReport score(const Eigen::Ref<const Eigen::VectorXd>& reference,
                  const Eigen::Ref<const Eigen::VectorXd>& test, const WindowPair& window,
                  const std::string& file_id, const MetricConfig& cfg = {});

// Shortest round-trip decimal form; used so reports are bit-reproducible.
std::string format_double(double value);

}  // namespace mdctpf
