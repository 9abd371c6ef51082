#pragma once

#include <vector>

#include <Eigen/Core>

#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

// Stand-in for a low-rate transform codec: band envelope, envelope-shaped
// normalization, uniform scalar quantization under a bit budget. Produces
// coded = clean + noise with the noise following the spectral envelope.
struct CodecConfig {
  // 160 bits per 10 ms frame is 16 kbit/s.
  int target_bits_per_frame = 160;
  int envelope_bands = 16;
  double noise_shape_exponent = 0.75;
  int global_gain_iterations = 40;
  // Quantizer rounding offset: q = sign(x) floor(|x| g + offset). 0.5 rounds
  // to nearest; 0.375 is the deadzone of the LC3 spectral quantizer.
  double rounding_offset = 0.375;
};

void validate(const CodecConfig& cfg, int frame_length = kFrameLength);

// Band b covers bins [edges[b], edges[b+1]). Near-uniform partition of N.
std::vector<int> band_edges(int frame_length, int bands);

// sum over nonzero q of ceil(log2(1 + |q|)) + 1.
int bit_proxy(const Eigen::Ref<const Eigen::VectorXi>& quantized);

struct QuantizedFrame {
  Eigen::VectorXi indices;
  Eigen::VectorXd envelope;  // per band RMS
  double global_gain = 0.0;  // quantizer step is 1 / global_gain
  int bits = 0;
};

QuantizedFrame quantize_frame(const FrameSpectrum& spectrum, const CodecConfig& cfg);
FrameSpectrum dequantize_frame(const QuantizedFrame& q, const CodecConfig& cfg,
                               std::int64_t frame_index);

FrameSpectrum encode_decode_frame(const FrameSpectrum& spectrum, const CodecConfig& cfg);

struct CodedSignal {
  Eigen::VectorXd signal;             // same length as the input, time aligned
  std::vector<FrameSpectrum> frames;  // analyze_signal framing
};

CodedSignal encode_decode_signal(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                 const WindowPair& window, const CodecConfig& cfg);

}  // namespace mdctpf
