#include "mdctpf/pipeline.hpp"

#include <sstream>

#include <json.hpp>

#include "mdctpf/errors.hpp"
#include "mdctpf/mask_postfilter.hpp"

namespace mdctpf {

StreamingEnhancer::StreamingEnhancer(const Checkpoint& ckpt, const WindowPair& window)
    : ckpt_(&ckpt),
      window_(window),
      features_(ckpt.stats, ckpt.log_epsilon, ckpt.weights.arch.bins),
      synthesis_(window.N()) {
  if (window.N() != ckpt.weights.arch.bins) {
    throw ConfigError("window length " + std::to_string(window.N()) + " does not match network bins " +
                      std::to_string(ckpt.weights.arch.bins));
  }
}

Eigen::VectorXd StreamingEnhancer::push(const FrameSpectrum& coded) {
  mask_ = ced_forward(features_.push(coded), ckpt_->weights);
  enhanced_ = apply_mask_mdct(coded, mask_);
  return mdct_inverse_stream(enhanced_, window_, synthesis_);
}

std::vector<FrameSpectrum> enhance_frames(const std::vector<FrameSpectrum>& coded, const Checkpoint& ckpt,
                                          const WindowPair& window) {
  StreamingEnhancer enhancer(ckpt, window);
  std::vector<FrameSpectrum> out;
  out.reserve(coded.size());
  for (const auto& f : coded) {
    enhancer.push(f);
    out.push_back(enhancer.last_frame());
  }
  return out;
}

Eigen::VectorXd enhance_signal(const Eigen::Ref<const Eigen::VectorXd>& coded, const Checkpoint& ckpt,
                               const WindowPair& window) {
  const auto frames = analyze_signal(coded, window);
  const int n = window.N();
  StreamingEnhancer enhancer(ckpt, window);
  Eigen::VectorXd stream(static_cast<Eigen::Index>(frames.size()) * n);
  for (std::size_t w = 0; w < frames.size(); ++w) {
    stream.segment(static_cast<Eigen::Index>(w) * n, n) = enhancer.push(frames[w]);
  }
  // Drop the analysis padding and the transform delay so the output lines up
  // with the coded input sample for sample.
  const Eigen::Index offset = signal_output_offset(window);
  return stream.segment(offset, coded.size());
}

Dataset load_dataset(const std::vector<std::filesystem::path>& files, const WindowPair& window,
                     const CodecConfig& codec, double log_epsilon, const WavReadOptions& read) {
  Dataset data;
  data.log_epsilon = log_epsilon;
  data.utterances.reserve(files.size());
  for (const auto& f : files) {
    const AudioBuffer audio = wav_read(f, read);
    data.utterances.push_back(prepare_utterance(f.stem().string(), audio.samples, window, codec, log_epsilon));
  }
  return data;
}

TripletScore score_triplet(const Eigen::Ref<const Eigen::VectorXd>& clean,
                           const Eigen::Ref<const Eigen::VectorXd>& coded,
                           const Eigen::Ref<const Eigen::VectorXd>& enhanced, const std::string& file,
                           const WindowPair& window, const MetricConfig& cfg) {
  return {file, score(clean, coded, window, file, cfg), score(clean, enhanced, window, file, cfg)};
}

EvaluationReport summarize(std::vector<TripletScore> files, const CedWeights<float>& weights) {
  if (files.empty()) throw ConfigError("evaluate: no files scored");
  EvaluationReport r;
  for (const auto& f : files) {
    r.mean_lsd_coded += f.coded.lsd_db;
    r.mean_lsd_enhanced += f.enhanced.lsd_db;
    r.mean_segsnr_coded += f.coded.segsnr_db;
    r.mean_segsnr_enhanced += f.enhanced.segsnr_db;
  }
  const auto n = static_cast<double>(files.size());
  r.mean_lsd_coded /= n;
  r.mean_lsd_enhanced /= n;
  r.mean_segsnr_coded /= n;
  r.mean_segsnr_enhanced /= n;
  r.flops_per_frame = ced_flops(weights);
  r.gflops = static_cast<double>(r.flops_per_frame) * 100.0 / 1e9;
  r.files = std::move(files);
  return r;
}

std::string evaluation_json(const EvaluationReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["flops_per_frame"] = r.flops_per_frame;
  j["gflops_at_100_frames_per_s"] = r.gflops;
  j["mean"] = {{"lsd_coded", r.mean_lsd_coded},
               {"lsd_enhanced", r.mean_lsd_enhanced},
               {"segsnr_coded", r.mean_segsnr_coded},
               {"segsnr_enhanced", r.mean_segsnr_enhanced}};
  ordered_json files = ordered_json::array();
  for (const auto& f : r.files) {
    files.push_back({{"file", f.file},
                     {"frames_scored", f.coded.frames_scored},
                     {"lsd_coded", f.coded.lsd_db},
                     {"lsd_enhanced", f.enhanced.lsd_db},
                     {"segsnr_coded", f.coded.segsnr_db},
                     {"segsnr_enhanced", f.enhanced.segsnr_db}});
  }
  j["files"] = std::move(files);
  return j.dump(2) + "\n";
}

std::string evaluation_csv(const EvaluationReport& r) {
  std::ostringstream out;
  out << "file,lsd_coded,lsd_enhanced,segsnr_coded,segsnr_enhanced\n";
  for (const auto& f : r.files) {
    out << f.file << ',' << format_double(f.coded.lsd_db) << ',' << format_double(f.enhanced.lsd_db) << ','
        << format_double(f.coded.segsnr_db) << ',' << format_double(f.enhanced.segsnr_db) << '\n';
  }
  return out.str();
}

}  // namespace mdctpf
