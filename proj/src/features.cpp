#include "mdctpf/features.hpp"

#include <cmath>

#include "mdctpf/errors.hpp"

namespace mdctpf {

void validate(const NormStats& stats) {
  if (stats.version != kFeatureVersion) {
    throw ConfigError("normalization statistics have feature version " + std::to_string(stats.version) +
                      ", this build expects " + std::to_string(kFeatureVersion));
  }
  if (!std::isfinite(stats.mean) || !std::isfinite(stats.std) || !(stats.std > 0.0)) {
    throw ConfigError("normalization statistics must be finite with std > 0");
  }
  if (stats.bin_mean.size() != stats.bin_std.size()) {
    throw ConfigError("per-bin normalization statistics: mean and std lengths differ");
  }
  if (!stats.bin_mean.allFinite() || !stats.bin_std.allFinite() || (stats.bin_std.array() <= 0.0).any()) {
    throw ConfigError("per-bin normalization statistics must be finite with std > 0");
  }
}

Eigen::ArrayXd NormStats::normalize(const Eigen::Ref<const Eigen::ArrayXd>& log_mag) const {
  if (!per_bin()) return (log_mag - mean) / std;
  if (log_mag.size() != bin_mean.size()) {
    throw InputSizeError("per-bin normalization has " + std::to_string(bin_mean.size()) + " bins, frame has " +
                         std::to_string(log_mag.size()));
  }
  return (log_mag - bin_mean.array()) / bin_std.array();
}

Eigen::ArrayXd NormStats::padding(double log_epsilon, Eigen::Index bins) const {
  return normalize(Eigen::ArrayXd::Constant(bins, std::log(log_epsilon)));
}

Eigen::VectorXd log_magnitude(const FrameSpectrum& frame, double log_epsilon) {
  return (frame.coeffs.array().abs() + log_epsilon).log().matrix();
}

void NormStatsAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& values) {
  if (rows_ == 0) {
    bin_sum_.assign(static_cast<std::size_t>(values.size()), 0.0L);
    bin_sum_sq_.assign(static_cast<std::size_t>(values.size()), 0.0L);
  } else if (static_cast<std::size_t>(values.size()) != bin_sum_.size()) {
    ragged_ = true;
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const long double v = values[i];
    sum_ += v;
    sum_sq_ += v * v;
    if (!ragged_) {
      bin_sum_[static_cast<std::size_t>(i)] += v;
      bin_sum_sq_[static_cast<std::size_t>(i)] += v * v;
    }
  }
  count_ += values.size();
  ++rows_;
}

void NormStatsAccumulator::add_frames(const std::vector<FrameSpectrum>& frames, double log_epsilon) {
  for (const auto& f : frames) add(log_magnitude(f, log_epsilon));
}

NormStats NormStatsAccumulator::finish(bool per_bin) const {
  if (count_ == 0) throw ConfigError("normalization statistics: no data");
  const long double mean = sum_ / count_;
  const long double var = std::max(0.0L, sum_sq_ / count_ - mean * mean);
  NormStats stats;
  stats.mean = static_cast<double>(mean);
  stats.std = std::sqrt(static_cast<double>(var));
  if (!(stats.std > 0.0)) throw ConfigError("normalization statistics: zero spread");
  if (per_bin) {
    if (ragged_) throw ConfigError("per-bin normalization statistics: frames of different lengths");
    const auto bins = static_cast<Eigen::Index>(bin_sum_.size());
    stats.bin_mean.resize(bins);
    stats.bin_std.resize(bins);
    for (Eigen::Index k = 0; k < bins; ++k) {
      const auto i = static_cast<std::size_t>(k);
      const long double m = bin_sum_[i] / rows_;
      const long double v = std::max(0.0L, bin_sum_sq_[i] / rows_ - m * m);
      stats.bin_mean[k] = static_cast<double>(m);
      stats.bin_std[k] = std::max(std::sqrt(static_cast<double>(v)), kBinStdFloor * stats.std);
    }
  }
  return stats;
}

FeatureStream::FeatureStream(const NormStats& stats, double log_epsilon, int bins)
    : stats_(stats), log_epsilon_(log_epsilon), bins_(bins) {
  validate(stats_);
  if (stats_.per_bin() && stats_.bin_mean.size() != bins_) {
    throw InputSizeError("per-bin normalization statistics do not match the bin count");
  }
  if (!(log_epsilon_ > 0.0)) throw ConfigError("log epsilon must be > 0");
}

FeatureTensor FeatureStream::push(const FrameSpectrum& coded) {
  if (coded.coeffs.size() != bins_) throw InputSizeError("feature stream: frame length does not match bins");
  history_.push_back(log_magnitude(coded, log_epsilon_));
  while (static_cast<int>(history_.size()) > kContextFrames) history_.pop_front();

  FeatureTensor out;
  out.frame_index = coded.frame_index;
  const Eigen::ArrayXd pad = stats_.padding(log_epsilon_, bins_);
  const int missing = kContextFrames - static_cast<int>(history_.size());
  for (int r = 0; r < kContextFrames; ++r) {
    if (r < missing) {
      out.values.row(r) = pad.cast<float>().transpose();
    } else {
      const auto& v = history_[static_cast<std::size_t>(r - missing)];
      out.values.row(r) = stats_.normalize(v.array()).cast<float>().transpose();
    }
  }
  return out;
}

std::vector<FeatureTensor> build_features(const std::vector<FrameSpectrum>& coded,
                                          const NormStats& stats, double log_epsilon) {
  FeatureStream stream(stats, log_epsilon, coded.empty() ? kCedBins : static_cast<int>(coded.front().coeffs.size()));
  std::vector<FeatureTensor> out;
  out.reserve(coded.size());
  for (const auto& f : coded) out.push_back(stream.push(f));
  return out;
}

}  // namespace mdctpf
