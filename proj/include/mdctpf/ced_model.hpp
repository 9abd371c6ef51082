#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/mask_postfilter.hpp"

namespace mdctpf {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr int kContextFrames = 6;  // 5 past frames + current
inline constexpr int kCedBins = 160;

// Convolutional encoder-decoder geometry. Defaults reproduce the 6x160 -> 160
// network: four strided 2x3 convolutions (16/32/64/128 channels), four
// mirrored transposed convolutions with concatenated skips, a 6x1 output
// convolution and a 2*sigmoid output.
struct CedArchitecture {
  std::array<int, 4> encoder_channels = {16, 32, 64, 128};
  int context_frames = kContextFrames;
  int bins = kCedBins;
  int kernel_time = 2;
  int kernel_freq = 3;
  int stride_time = 1;
  int stride_freq = 2;
  double output_scale = 2.0;
  double elu_alpha = 1.0;
  double bn_epsilon = 1e-5;

  bool operator==(const CedArchitecture&) const = default;
};

struct TensorShape {
  int channels = 0;
  int time = 0;
  int freq = 0;

  bool operator==(const TensorShape&) const = default;
  std::string str() const;
};

enum class LayerKind { kReshape, kConv, kDeconv, kBatchNorm, kElu, kConcatSkip, kPad, kSigmoidScaled, kFlatten };

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  int kernel_time = 0;
  int kernel_freq = 0;
  int stride_time = 1;
  int stride_freq = 1;
  int in_channels = 0;
  int out_channels = 0;
  // kConcatSkip: name of the layer whose output is appended after the
  // current tensor. kPad: target frequency size.
  std::string skip_from;
  int pad_to = 0;
};

// Full layer chain, including normalization and activations.
std::vector<LayerSpec> ced_layers(const CedArchitecture& arch);

// Output shape after each layer of `layers` starting from `input`. Throws
// ShapeError naming the first inconsistent layer.
std::vector<TensorShape> infer_shapes(const std::vector<LayerSpec>& layers, TensorShape input);

// Floating point operations of one forward pass for one frame: 2 per
// multiply-add in (transposed) convolutions, plus 2 per element for batch
// norm and 1 per element for activations.
std::int64_t ced_flops(const std::vector<LayerSpec>& layers, TensorShape input);
std::int64_t ced_flops(const CedArchitecture& arch);

template <typename Scalar>
struct ConvParams {
  // out_channels x (in_channels * kernel_time * kernel_freq); row-major, so the
  // storage order is [out][in][time][freq].
  RowMatrix<Scalar> kernel;
  // Empty for layers followed by batch norm; the shift plays that role.
  Vector<Scalar> bias;
  int in_channels = 0;
  int out_channels = 0;
};

template <typename Scalar>
struct BatchNormParams {
  Vector<Scalar> scale;
  Vector<Scalar> shift;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
};

inline constexpr std::uint32_t kWeightsFormatVersion = 2;

template <typename Scalar>
struct CedWeights {
  CedArchitecture arch;
  std::array<ConvParams<Scalar>, 4> encoder;
  std::array<BatchNormParams<Scalar>, 4> encoder_bn;
  std::array<ConvParams<Scalar>, 4> decoder;
  std::array<BatchNormParams<Scalar>, 4> decoder_bn;
  ConvParams<Scalar> output;
  std::uint32_t format_version = kWeightsFormatVersion;

  template <typename Other>
  CedWeights<Other> cast() const;
};

// Named view on one tensor of a CedWeights object.
template <typename Scalar>
struct TensorView {
  std::string name;
  std::vector<int> dims;
  Scalar* data = nullptr;
  Eigen::Index size = 0;
  bool trainable = true;

  Eigen::Map<Vector<Scalar>> vec() const { return {data, size}; }
};

// Fixed enumeration order; identical across calls and scalar types.
template <typename Scalar>
std::vector<TensorView<Scalar>> tensors(CedWeights<Scalar>& weights);

// All tensors zero except batch-norm running variances (one).
template <typename Scalar>
CedWeights<Scalar> zero_weights(const CedArchitecture& arch = {});

// Fan-in scaled uniform kernels, unit batch-norm scale, zero shifts/biases.
template <typename Scalar>
CedWeights<Scalar> init_weights(std::uint64_t seed, const CedArchitecture& arch = {});

// Checks every tensor shape against the architecture and that all entries are
// finite with non-negative running variances. Throws ShapeError/NumericError.
template <typename Scalar>
void validate(const CedWeights<Scalar>& weights);

std::int64_t ced_flops(const CedWeights<float>& weights);

enum class BatchNormMode {
  kInference,  // running statistics
  kTraining,   // batch statistics
};

// Intermediates kept by ced_forward_batch for the backward pass.
template <typename Scalar>
struct ForwardCache {
  int batch = 0;
  BatchNormMode mode = BatchNormMode::kInference;
  struct Conv {
    RowMatrix<Scalar> input;  // layer input (for deconv) or im2col columns (for conv)
    TensorShape in_shape, out_shape;
  };
  struct Norm {
    RowMatrix<Scalar> normalized;
    Vector<Scalar> inv_std;
    Vector<Scalar> batch_mean;
    Vector<Scalar> batch_var;
  };
  std::array<Conv, 4> enc_conv, dec_conv;
  std::array<Norm, 4> enc_norm, dec_norm;
  std::array<RowMatrix<Scalar>, 4> enc_act, dec_act;  // ELU outputs
  Conv out_conv;
  RowMatrix<Scalar> mask;  // batch x bins
};

// Shapes recorded per named stage for one example, in execution order.
struct ShapeTrace {
  std::vector<std::pair<std::string, TensorShape>> stages;
};

// `input` is batch x (context_frames * bins); row b holds example b with the
// oldest frame first. Returns batch x bins gains in (0, output_scale).
template <typename Scalar>
RowMatrix<Scalar> ced_forward_batch(const CedWeights<Scalar>& weights,
                                    const Eigen::Ref<const RowMatrix<Scalar>>& input,
                                    BatchNormMode mode, ForwardCache<Scalar>* cache = nullptr,
                                    ShapeTrace* trace = nullptr);

// Gradient of a scalar loss with respect to every trainable tensor, given
// dLoss/dMask (batch x bins) and the cache of the matching forward pass.
// Running statistics in the result are zero.
template <typename Scalar>
CedWeights<Scalar> ced_backward(const CedWeights<Scalar>& weights, const ForwardCache<Scalar>& cache,
                                const Eigen::Ref<const RowMatrix<Scalar>>& grad_mask);

// running <- momentum * running + (1 - momentum) * batch statistic.
template <typename Scalar>
void update_running_stats(CedWeights<Scalar>& weights, const ForwardCache<Scalar>& cache,
                          double momentum);

// Stacked log-magnitude MDCT context of one frame; rows are frames w-5 .. w.
struct FeatureTensor {
  Eigen::Matrix<float, kContextFrames, kCedBins, Eigen::RowMajor> values;
  std::int64_t frame_index = 0;
};

// Single-frame inference with running statistics; the mask bound is the
// architecture's output scale.
Mask ced_forward(const FeatureTensor& input, const CedWeights<float>& weights);

}  // namespace mdctpf
