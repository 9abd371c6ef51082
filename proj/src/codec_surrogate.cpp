#include "mdctpf/codec_surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "mdctpf/errors.hpp"

namespace mdctpf {

void validate(const CodecConfig& cfg, int frame_length) {
  if (cfg.target_bits_per_frame <= 0) throw ConfigError("codec: bits per frame must be positive");
  if (cfg.envelope_bands <= 0 || cfg.envelope_bands > frame_length) {
    throw ConfigError("codec: envelope bands must be in [1, N]");
  }
  if (!(cfg.noise_shape_exponent >= 0.0 && cfg.noise_shape_exponent <= 1.0)) {
    throw ConfigError("codec: noise shape exponent must be in [0, 1]");
  }
  if (cfg.global_gain_iterations <= 0) throw ConfigError("codec: gain iterations must be positive");
  if (!(cfg.rounding_offset > 0.0 && cfg.rounding_offset <= 0.5)) {
    throw ConfigError("codec: rounding offset must be in (0, 0.5]");
  }
}

std::vector<int> band_edges(int frame_length, int bands) {
  std::vector<int> edges(bands + 1);
  for (int b = 0; b <= bands; ++b) {
    edges[b] = static_cast<int>((static_cast<long long>(b) * frame_length) / bands);
  }
  return edges;
}

int bit_proxy(const Eigen::Ref<const Eigen::VectorXi>& quantized) {
  int bits = 0;
  for (Eigen::Index k = 0; k < quantized.size(); ++k) {
    const int q = std::abs(quantized[k]);
    if (q != 0) bits += static_cast<int>(std::ceil(std::log2(1.0 + q))) + 1;
  }
  return bits;
}

namespace {

Eigen::VectorXd shaping_gains(const Eigen::VectorXd& envelope, const std::vector<int>& edges,
                              double exponent, int n) {
  Eigen::VectorXd shape(n);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    const double s = envelope[static_cast<Eigen::Index>(b)] > 0.0
                         ? std::pow(envelope[static_cast<Eigen::Index>(b)], exponent)
                         : 0.0;
    shape.segment(edges[b], edges[b + 1] - edges[b]).setConstant(s);
  }
  return shape;
}

// sign(x) floor(|x| gain + offset); offset 0.5 is round-to-nearest.
Eigen::VectorXi quantize(const Eigen::VectorXd& normalized, double gain, double offset) {
  Eigen::VectorXi q(normalized.size());
  for (Eigen::Index k = 0; k < normalized.size(); ++k) {
    // Clamped so the bisection's coarse upper gains cannot overflow int.
    const double m = std::min(std::floor(std::abs(normalized[k]) * gain + offset), 1073741824.0);
    q[k] = static_cast<int>(std::copysign(m, normalized[k]));
  }
  return q;
}

}  // namespace

QuantizedFrame quantize_frame(const FrameSpectrum& spectrum, const CodecConfig& cfg) {
  const int n = static_cast<int>(spectrum.coeffs.size());
  validate(cfg, n);
  const auto edges = band_edges(n, cfg.envelope_bands);

  QuantizedFrame out;
  out.envelope.resize(cfg.envelope_bands);
  for (int b = 0; b < cfg.envelope_bands; ++b) {
    const auto band = spectrum.coeffs.segment(edges[b], edges[b + 1] - edges[b]);
    out.envelope[b] = std::sqrt(band.squaredNorm() / static_cast<double>(band.size()));
  }
  const Eigen::VectorXd shape = shaping_gains(out.envelope, edges, cfg.noise_shape_exponent, n);
  Eigen::VectorXd normalized = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (shape[k] > 0.0) normalized[k] = spectrum.coeffs[k] / shape[k];
  }

  const double peak = normalized.cwiseAbs().maxCoeff();
  out.indices = Eigen::VectorXi::Zero(n);
  if (!(peak > 0.0)) return out;

  // Bits are non-decreasing in the gain, so bisect log2(gain) between an
  // all-zero gain and a gain whose step is ~2^-30 of the peak (indices stay
  // well inside int range).
  double lo = std::log2(0.25 / peak);
  double hi = lo + 30.0;
  Eigen::VectorXi q_hi = quantize(normalized, std::exp2(hi), cfg.rounding_offset);
  if (bit_proxy(q_hi) <= cfg.target_bits_per_frame) {
    out.global_gain = std::exp2(hi);
    out.indices = std::move(q_hi);
  } else {
    for (int it = 0; it < cfg.global_gain_iterations; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (bit_proxy(quantize(normalized, std::exp2(mid), cfg.rounding_offset)) <= cfg.target_bits_per_frame) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    out.global_gain = std::exp2(lo);
    out.indices = quantize(normalized, out.global_gain, cfg.rounding_offset);
  }
  out.bits = bit_proxy(out.indices);
  return out;
}

FrameSpectrum dequantize_frame(const QuantizedFrame& q, const CodecConfig& cfg,
                               std::int64_t frame_index) {
  const int n = static_cast<int>(q.indices.size());
  FrameSpectrum out{Eigen::VectorXd::Zero(n), frame_index};
  if (!(q.global_gain > 0.0)) return out;
  const auto edges = band_edges(n, cfg.envelope_bands);
  const Eigen::VectorXd shape = shaping_gains(q.envelope, edges, cfg.noise_shape_exponent, n);
  out.coeffs = q.indices.cast<double>().cwiseProduct(shape) / q.global_gain;
  return out;
}

FrameSpectrum encode_decode_frame(const FrameSpectrum& spectrum, const CodecConfig& cfg) {
  return dequantize_frame(quantize_frame(spectrum, cfg), cfg, spectrum.frame_index);
}

CodedSignal encode_decode_signal(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                 const WindowPair& window, const CodecConfig& cfg) {
  validate(cfg, window.N());
  CodedSignal out;
  const auto clean = analyze_signal(signal, window);
  out.frames.reserve(clean.size());
  for (const auto& frame : clean) out.frames.push_back(encode_decode_frame(frame, cfg));
  out.signal = synthesize_signal(out.frames, window, signal.size());
  return out;
}

}  // namespace mdctpf
