#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/audio_io.hpp"
#include "mdctpf/formats.hpp"
#include "mdctpf/lapped_transform.hpp"
#include "mdctpf/metrics.hpp"
#include "mdctpf/trainer.hpp"

namespace mdctpf {

// Decoder-side post-filter for one stream. Each pushed coded MDCT frame goes
// through context stacking, the network, the MDCT gain and the inverse
// transform; the returned N samples depend on frames <= w only.
class StreamingEnhancer {
 public:
  StreamingEnhancer(const Checkpoint& ckpt, const WindowPair& window);

  Eigen::VectorXd push(const FrameSpectrum& coded);
  const Mask& last_mask() const { return mask_; }
  const FrameSpectrum& last_frame() const { return enhanced_; }

 private:
  const Checkpoint* ckpt_;
  WindowPair window_;
  FeatureStream features_;
  SynthesisState synthesis_;
  Mask mask_;
  FrameSpectrum enhanced_;
};

// Enhanced MDCT frames for a coded frame sequence.
std::vector<FrameSpectrum> enhance_frames(const std::vector<FrameSpectrum>& coded, const Checkpoint& ckpt,
                                          const WindowPair& window);

// Coded time signal in, enhanced time signal of the same length and timing out.
Eigen::VectorXd enhance_signal(const Eigen::Ref<const Eigen::VectorXd>& coded, const Checkpoint& ckpt,
                               const WindowPair& window);

// Reads, codes and frames every file. Utterance ids are the file stems; the
// dataset's NormStats are left at their defaults for the caller to fill.
Dataset load_dataset(const std::vector<std::filesystem::path>& files, const WindowPair& window,
                     const CodecConfig& codec, double log_epsilon, const WavReadOptions& read = {});

struct TripletScore {
  std::string file;
  ScoreReport coded;
  ScoreReport enhanced;
};

struct EvaluationReport {
  std::vector<TripletScore> files;
  double mean_lsd_coded = 0.0;
  double mean_lsd_enhanced = 0.0;
  double mean_segsnr_coded = 0.0;
  double mean_segsnr_enhanced = 0.0;
  std::int64_t flops_per_frame = 0;
  double gflops = 0.0;  // at 100 frames per second
};

TripletScore score_triplet(const Eigen::Ref<const Eigen::VectorXd>& clean,
                           const Eigen::Ref<const Eigen::VectorXd>& coded,
                           const Eigen::Ref<const Eigen::VectorXd>& enhanced, const std::string& file,
                           const WindowPair& window, const MetricConfig& cfg = {});

// Means over `files`; flops taken from the architecture of `weights`.
EvaluationReport summarize(std::vector<TripletScore> files, const CedWeights<float>& weights);

std::string evaluation_json(const EvaluationReport& report);
// `file,lsd_coded,lsd_enhanced,segsnr_coded,segsnr_enhanced`
std::string evaluation_csv(const EvaluationReport& report);

}  // namespace mdctpf
