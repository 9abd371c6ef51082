#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/ced_model.hpp"
#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

// Bumped whenever the meaning of the normalized input features changes; a
// checkpoint trained on another version is refused.
inline constexpr std::uint32_t kFeatureVersion = 1;

inline constexpr double kDefaultLogEpsilon = 1e-7;

// One global mean/std pair over every log|MDCT| value of the training set.
// When bin_mean/bin_std are non-empty they replace the global pair, one
// entry per frequency bin.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  std::uint32_t version = kFeatureVersion;
  Eigen::VectorXd bin_mean;
  Eigen::VectorXd bin_std;

  bool per_bin() const { return bin_mean.size() > 0; }
  Eigen::ArrayXd normalize(const Eigen::Ref<const Eigen::ArrayXd>& log_mag) const;
  // Normalized value of an all-silent row, log(eps) in every bin.
  Eigen::ArrayXd padding(double log_epsilon, Eigen::Index bins) const;
};

// Per-bin std is floored at this fraction of the global std, so a bin that
// never leaves log(eps) in training does not explode at inference.
inline constexpr double kBinStdFloor = 0.1;

void validate(const NormStats& stats);

// log(|X(k)| + eps) per bin.
Eigen::VectorXd log_magnitude(const FrameSpectrum& frame, double log_epsilon);

class NormStatsAccumulator {
 public:
  void add(const Eigen::Ref<const Eigen::VectorXd>& values);
  void add_frames(const std::vector<FrameSpectrum>& frames, double log_epsilon);
  std::int64_t count() const { return count_; }
  // Throws ConfigError when empty or when the spread is zero. Per-bin
  // statistics need every added vector to have the same length.
  NormStats finish(bool per_bin = false) const;

 private:
  std::int64_t count_ = 0;
  std::int64_t rows_ = 0;
  long double sum_ = 0.0L;
  long double sum_sq_ = 0.0L;
  std::vector<long double> bin_sum_, bin_sum_sq_;
  bool ragged_ = false;
};

// Streaming context builder: keeps the last 5 log-magnitude frames. Before
// the stream has 5 frames of history, missing rows hold log(eps).
class FeatureStream {
 public:
  FeatureStream(const NormStats& stats, double log_epsilon, int bins = kCedBins);
  FeatureTensor push(const FrameSpectrum& coded);

 private:
  NormStats stats_;
  double log_epsilon_;
  int bins_;
  std::deque<Eigen::VectorXd> history_;
};

// Feature tensors for every frame of a coded stream.
std::vector<FeatureTensor> build_features(const std::vector<FrameSpectrum>& coded,
                                          const NormStats& stats, double log_epsilon);

}  // namespace mdctpf
