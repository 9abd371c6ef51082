#include "mdctpf/ced_model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "mdctpf/errors.hpp"

namespace mdctpf {

std::string TensorShape::str() const {
  std::ostringstream s;
  s << channels << "x" << time << "x" << freq;
  return s.str();
}

namespace {

std::string encoder_name(int l) { return "conv2d_" + std::to_string(l + 1); }
std::string decoder_name(int l) { return "deconv2d_" + std::to_string(l + 1); }
const char* kOutputName = "conv2d_5";

}  // namespace

std::vector<LayerSpec> ced_layers(const CedArchitecture& arch) {
  std::vector<LayerSpec> layers;
  const auto& ch = arch.encoder_channels;
  layers.push_back({LayerKind::kReshape, "reshape"});
  int in = 1;
  for (int l = 0; l < 4; ++l) {
    const std::string name = encoder_name(l);
    layers.push_back({LayerKind::kConv, name, arch.kernel_time, arch.kernel_freq, arch.stride_time,
                      arch.stride_freq, in, ch[l]});
    layers.push_back({LayerKind::kBatchNorm, name + ".bn", 0, 0, 1, 1, ch[l], ch[l]});
    layers.push_back({LayerKind::kElu, name + ".elu", 0, 0, 1, 1, ch[l], ch[l]});
    in = ch[l];
  }
  const std::array<int, 4> dec_out = {ch[2], ch[1], ch[0], 1};
  for (int l = 0; l < 4; ++l) {
    const std::string name = decoder_name(l);
    if (l > 0) {
      LayerSpec skip{LayerKind::kConcatSkip, name + ".skip"};
      skip.skip_from = encoder_name(3 - l) + ".elu";
      layers.push_back(skip);
      in = dec_out[l - 1] + ch[3 - l];
    }
    layers.push_back({LayerKind::kDeconv, name, arch.kernel_time, arch.kernel_freq, arch.stride_time,
                      arch.stride_freq, in, dec_out[l]});
    layers.push_back({LayerKind::kBatchNorm, name + ".bn", 0, 0, 1, 1, dec_out[l], dec_out[l]});
    layers.push_back({LayerKind::kElu, name + ".elu", 0, 0, 1, 1, dec_out[l], dec_out[l]});
    in = dec_out[l];
  }
  LayerSpec pad{LayerKind::kPad, "pad"};
  pad.pad_to = arch.bins;
  layers.push_back(pad);
  layers.push_back({LayerKind::kConv, kOutputName, arch.context_frames, 1, 1, 1, 1, 1});
  layers.push_back({LayerKind::kSigmoidScaled, "sigmoid_scaled"});
  layers.push_back({LayerKind::kFlatten, "flatten"});
  return layers;
}

std::vector<TensorShape> infer_shapes(const std::vector<LayerSpec>& layers, TensorShape input) {
  std::vector<TensorShape> shapes;
  std::vector<std::pair<std::string, TensorShape>> named;
  TensorShape cur = input;
  auto fail = [](const LayerSpec& layer, const std::string& what) {
    throw ShapeError(layer.name, what);
  };
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::kReshape:
        cur = {1, input.time, input.freq};
        break;
      case LayerKind::kConv: {
        if (cur.channels != layer.in_channels) fail(layer, "expected " + std::to_string(layer.in_channels) + " input channels, got " + cur.str());
        const int t = (cur.time - layer.kernel_time) / layer.stride_time + 1;
        const int f = (cur.freq - layer.kernel_freq) / layer.stride_freq + 1;
        if (cur.time < layer.kernel_time || cur.freq < layer.kernel_freq) fail(layer, "input " + cur.str() + " smaller than kernel");
        cur = {layer.out_channels, t, f};
        break;
      }
      case LayerKind::kDeconv:
        if (cur.channels != layer.in_channels) fail(layer, "expected " + std::to_string(layer.in_channels) + " input channels, got " + cur.str());
        cur = {layer.out_channels, (cur.time - 1) * layer.stride_time + layer.kernel_time,
               (cur.freq - 1) * layer.stride_freq + layer.kernel_freq};
        break;
      case LayerKind::kConcatSkip: {
        const TensorShape* skip = nullptr;
        for (const auto& [n, s] : named) {
          if (n == layer.skip_from) skip = &s;
        }
        if (!skip) fail(layer, "unknown skip source " + layer.skip_from);
        if (skip->time != cur.time || skip->freq != cur.freq) {
          fail(layer, "skip " + skip->str() + " does not match " + cur.str());
        }
        cur.channels += skip->channels;
        break;
      }
      case LayerKind::kPad:
        if (cur.freq > layer.pad_to) fail(layer, "cannot pad " + cur.str() + " down to " + std::to_string(layer.pad_to));
        cur.freq = layer.pad_to;
        break;
      case LayerKind::kFlatten:
        cur = {1, 1, cur.channels * cur.time * cur.freq};
        break;
      case LayerKind::kBatchNorm:
      case LayerKind::kElu:
      case LayerKind::kSigmoidScaled:
        break;
    }
    shapes.push_back(cur);
    named.emplace_back(layer.name, cur);
  }
  return shapes;
}

std::int64_t ced_flops(const std::vector<LayerSpec>& layers, TensorShape input) {
  if (layers.empty()) return 0;
  const auto shapes = infer_shapes(layers, input);
  std::int64_t flops = 0;
  TensorShape prev = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const TensorShape& out = shapes[i];
    const std::int64_t out_elems = static_cast<std::int64_t>(out.channels) * out.time * out.freq;
    const std::int64_t taps = static_cast<std::int64_t>(layer.kernel_time) * layer.kernel_freq;
    switch (layer.kind) {
      case LayerKind::kConv:
        flops += 2 * out_elems * layer.in_channels * taps;
        break;
      case LayerKind::kDeconv:
        flops += 2 * static_cast<std::int64_t>(prev.time) * prev.freq * layer.in_channels *
                 layer.out_channels * taps;
        break;
      case LayerKind::kBatchNorm:
        flops += 2 * out_elems;
        break;
      case LayerKind::kElu:
      case LayerKind::kSigmoidScaled:
        flops += out_elems;
        break;
      default:
        break;
    }
    prev = out;
  }
  return flops;
}

std::int64_t ced_flops(const CedArchitecture& arch) {
  return ced_flops(ced_layers(arch), {1, arch.context_frames, arch.bins});
}

std::int64_t ced_flops(const CedWeights<float>& weights) {
  validate(weights);
  return ced_flops(weights.arch);
}

// ---------------------------------------------------------------------------
// Weights

template <typename Scalar>
template <typename Other>
CedWeights<Other> CedWeights<Scalar>::cast() const {
  CedWeights<Other> out;
  out.arch = arch;
  out.format_version = format_version;
  auto cast_conv = [](const ConvParams<Scalar>& c) {
    ConvParams<Other> o;
    o.kernel = c.kernel.template cast<Other>();
    o.bias = c.bias.template cast<Other>();
    o.in_channels = c.in_channels;
    o.out_channels = c.out_channels;
    return o;
  };
  auto cast_bn = [](const BatchNormParams<Scalar>& b) {
    return BatchNormParams<Other>{b.scale.template cast<Other>(), b.shift.template cast<Other>(),
                                  b.running_mean.template cast<Other>(),
                                  b.running_var.template cast<Other>()};
  };
  for (int l = 0; l < 4; ++l) {
    out.encoder[l] = cast_conv(encoder[l]);
    out.decoder[l] = cast_conv(decoder[l]);
    out.encoder_bn[l] = cast_bn(encoder_bn[l]);
    out.decoder_bn[l] = cast_bn(decoder_bn[l]);
  }
  out.output = cast_conv(output);
  return out;
}

template <typename Scalar>
std::vector<TensorView<Scalar>> tensors(CedWeights<Scalar>& w) {
  std::vector<TensorView<Scalar>> views;
  const int kt = w.arch.kernel_time, kf = w.arch.kernel_freq;
  auto add_conv = [&](const std::string& name, ConvParams<Scalar>& c, int t, int f) {
    views.push_back({name + ".kernel", {c.out_channels, c.in_channels, t, f}, c.kernel.data(),
                     c.kernel.size(), true});
    if (c.bias.size() > 0) views.push_back({name + ".bias", {c.out_channels}, c.bias.data(), c.bias.size(), true});
  };
  auto add_bn = [&](const std::string& name, BatchNormParams<Scalar>& b) {
    const int n = static_cast<int>(b.scale.size());
    views.push_back({name + ".bn.scale", {n}, b.scale.data(), b.scale.size(), true});
    views.push_back({name + ".bn.shift", {n}, b.shift.data(), b.shift.size(), true});
    views.push_back({name + ".bn.running_mean", {n}, b.running_mean.data(), b.running_mean.size(), false});
    views.push_back({name + ".bn.running_var", {n}, b.running_var.data(), b.running_var.size(), false});
  };
  for (int l = 0; l < 4; ++l) {
    add_conv(encoder_name(l), w.encoder[l], kt, kf);
    add_bn(encoder_name(l), w.encoder_bn[l]);
  }
  for (int l = 0; l < 4; ++l) {
    add_conv(decoder_name(l), w.decoder[l], kt, kf);
    add_bn(decoder_name(l), w.decoder_bn[l]);
  }
  add_conv(kOutputName, w.output, w.arch.context_frames, 1);
  return views;
}

template <typename Scalar>
CedWeights<Scalar> zero_weights(const CedArchitecture& arch) {
  CedWeights<Scalar> w;
  w.arch = arch;
  const int taps = arch.kernel_time * arch.kernel_freq;
  auto conv = [&](int in, int out, int t, bool bias) {
    ConvParams<Scalar> c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = RowMatrix<Scalar>::Zero(out, in * t);
    if (bias) c.bias = Vector<Scalar>::Zero(out);
    return c;
  };
  auto bn = [](int n) {
    return BatchNormParams<Scalar>{Vector<Scalar>::Zero(n), Vector<Scalar>::Zero(n),
                                   Vector<Scalar>::Zero(n), Vector<Scalar>::Ones(n)};
  };
  const auto& ch = arch.encoder_channels;
  int in = 1;
  for (int l = 0; l < 4; ++l) {
    w.encoder[l] = conv(in, ch[l], taps, false);
    w.encoder_bn[l] = bn(ch[l]);
    in = ch[l];
  }
  const std::array<int, 4> dec_out = {ch[2], ch[1], ch[0], 1};
  for (int l = 0; l < 4; ++l) {
    const int dec_in = l == 0 ? ch[3] : dec_out[l - 1] + ch[3 - l];
    w.decoder[l] = conv(dec_in, dec_out[l], taps, false);
    w.decoder_bn[l] = bn(dec_out[l]);
  }
  w.output = conv(1, 1, arch.context_frames, true);
  return w;
}

template <typename Scalar>
CedWeights<Scalar> init_weights(std::uint64_t seed, const CedArchitecture& arch) {
  CedWeights<Scalar> w = zero_weights<Scalar>(arch);
  std::mt19937_64 rng(seed);
  auto fill = [&](ConvParams<Scalar>& c, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < c.kernel.size(); ++i) c.kernel.data()[i] = static_cast<Scalar>(dist(rng));
  };
  const int taps = arch.kernel_time * arch.kernel_freq;
  for (int l = 0; l < 4; ++l) {
    fill(w.encoder[l], std::sqrt(6.0 / (w.encoder[l].in_channels * taps)));
    w.encoder_bn[l].scale.setOnes();
  }
  for (int l = 0; l < 4; ++l) {
    fill(w.decoder[l], std::sqrt(6.0 / (w.decoder[l].in_channels * taps)));
    w.decoder_bn[l].scale.setOnes();
  }
  fill(w.output, 1.0 / std::sqrt(static_cast<double>(arch.context_frames)));
  return w;
}

template <typename Scalar>
void validate(const CedWeights<Scalar>& weights) {
  CedWeights<Scalar> ref = zero_weights<Scalar>(weights.arch);
  CedWeights<Scalar> copy = weights;
  const auto got = tensors(copy);
  const auto want = tensors(ref);
  if (got.size() != want.size()) throw ShapeError("weights", "tensor count mismatch");
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].size != want[i].size) {
      throw ShapeError(want[i].name, "expected " + std::to_string(want[i].size) + " entries, got " +
                                         std::to_string(got[i].size));
    }
    if (!got[i].vec().allFinite()) throw NumericError(want[i].name + ": non-finite entry");
    if (got[i].name.ends_with("running_var") && (got[i].vec().array() < Scalar(0)).any()) {
      throw NumericError(want[i].name + ": negative variance");
    }
  }
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

// Geometry of a strided 2-D correlation between a "big" tensor (conv input,
// deconv output) and a "small" one (conv output, deconv input).
struct Geometry {
  int channels;  // channels of the big tensor
  int big_t, big_f, small_t, small_f;
  int kt, kf, st, sf;
  int batch;
};

template <typename Scalar>
RowMatrix<Scalar> im2col(const RowMatrix<Scalar>& big, const Geometry& g) {
  const Eigen::Index small_cols = static_cast<Eigen::Index>(g.batch) * g.small_t * g.small_f;
  RowMatrix<Scalar> cols(static_cast<Eigen::Index>(g.channels) * g.kt * g.kf, small_cols);
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* src = big.row(c).data();
    for (int i = 0; i < g.kt; ++i) {
      for (int j = 0; j < g.kf; ++j) {
        Scalar* dst = cols.row((static_cast<Eigen::Index>(c) * g.kt + i) * g.kf + j).data();
        for (int b = 0; b < g.batch; ++b) {
          for (int t = 0; t < g.small_t; ++t) {
            const Scalar* s = src + (static_cast<Eigen::Index>(b) * g.big_t + t * g.st + i) * g.big_f + j;
            Scalar* d = dst + (static_cast<Eigen::Index>(b) * g.small_t + t) * g.small_f;
            for (int f = 0; f < g.small_f; ++f) d[f] = s[f * g.sf];
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
RowMatrix<Scalar> col2im(const RowMatrix<Scalar>& cols, const Geometry& g) {
  RowMatrix<Scalar> big =
      RowMatrix<Scalar>::Zero(g.channels, static_cast<Eigen::Index>(g.batch) * g.big_t * g.big_f);
  for (int c = 0; c < g.channels; ++c) {
    Scalar* dst = big.row(c).data();
    for (int i = 0; i < g.kt; ++i) {
      for (int j = 0; j < g.kf; ++j) {
        const Scalar* src = cols.row((static_cast<Eigen::Index>(c) * g.kt + i) * g.kf + j).data();
        for (int b = 0; b < g.batch; ++b) {
          for (int t = 0; t < g.small_t; ++t) {
            Scalar* d = dst + (static_cast<Eigen::Index>(b) * g.big_t + t * g.st + i) * g.big_f + j;
            const Scalar* s = src + (static_cast<Eigen::Index>(b) * g.small_t + t) * g.small_f;
            for (int f = 0; f < g.small_f; ++f) d[f * g.sf] += s[f];
          }
        }
      }
    }
  }
  return big;
}

// Deconv kernels are stored [out][in][t][f]; the column form needs
// rows (out, t, f) and columns `in`.
template <typename Scalar>
RowMatrix<Scalar> deconv_matrix(const ConvParams<Scalar>& p, int taps) {
  RowMatrix<Scalar> a(static_cast<Eigen::Index>(p.out_channels) * taps, p.in_channels);
  for (int o = 0; o < p.out_channels; ++o)
    for (int i = 0; i < p.in_channels; ++i)
      for (int k = 0; k < taps; ++k) a(o * taps + k, i) = p.kernel(o, i * taps + k);
  return a;
}

template <typename Scalar>
RowMatrix<Scalar> deconv_kernel_from_matrix(const RowMatrix<Scalar>& a, int in, int out, int taps) {
  RowMatrix<Scalar> k(out, static_cast<Eigen::Index>(in) * taps);
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i)
      for (int t = 0; t < taps; ++t) k(o, i * taps + t) = a(o * taps + t, i);
  return k;
}

template <typename Scalar>
void batch_norm_forward(RowMatrix<Scalar>& x, const BatchNormParams<Scalar>& p, BatchNormMode mode,
                        double eps, typename ForwardCache<Scalar>::Norm* cache) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index count = x.cols();
  Vector<Scalar> mean(channels), var(channels), inv_std(channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    if (mode == BatchNormMode::kTraining) {
      mean[c] = x.row(c).mean();
      var[c] = (x.row(c).array() - mean[c]).square().sum() / static_cast<Scalar>(count);
    } else {
      mean[c] = p.running_mean[c];
      var[c] = p.running_var[c];
    }
    inv_std[c] = Scalar(1) / std::sqrt(var[c] + static_cast<Scalar>(eps));
    x.row(c).array() = (x.row(c).array() - mean[c]) * inv_std[c];
  }
  if (cache) {
    cache->normalized = x;
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->batch_var = var;
  }
  for (Eigen::Index c = 0; c < channels; ++c) x.row(c).array() = x.row(c).array() * p.scale[c] + p.shift[c];
}

template <typename Scalar>
void elu_inplace(RowMatrix<Scalar>& x, Scalar alpha) {
  x = x.unaryExpr([alpha](Scalar v) { return v > Scalar(0) ? v : alpha * (std::exp(v) - Scalar(1)); });
}

template <typename Scalar>
RowMatrix<Scalar> elu_backward(const RowMatrix<Scalar>& grad, const RowMatrix<Scalar>& act, Scalar alpha) {
  return grad.binaryExpr(act, [alpha](Scalar g, Scalar y) { return y > Scalar(0) ? g : g * (y + alpha); });
}

// Returns dL/dx; writes dscale/dshift.
template <typename Scalar>
RowMatrix<Scalar> batch_norm_backward(const RowMatrix<Scalar>& grad, const BatchNormParams<Scalar>& p,
                                      const typename ForwardCache<Scalar>::Norm& cache, BatchNormMode mode,
                                      BatchNormParams<Scalar>& out) {
  const Eigen::Index channels = grad.rows();
  const auto count = static_cast<Scalar>(grad.cols());
  out.scale.resize(channels);
  out.shift.resize(channels);
  out.running_mean = Vector<Scalar>::Zero(channels);
  out.running_var = Vector<Scalar>::Zero(channels);
  RowMatrix<Scalar> dx(grad.rows(), grad.cols());
  for (Eigen::Index c = 0; c < channels; ++c) {
    const auto g = grad.row(c).array();
    const auto xhat = cache.normalized.row(c).array();
    const Scalar sum_g = g.sum();
    const Scalar sum_gx = (g * xhat).sum();
    out.shift[c] = sum_g;
    out.scale[c] = sum_gx;
    const Scalar k = p.scale[c] * cache.inv_std[c];
    if (mode == BatchNormMode::kTraining) {
      dx.row(c).array() = (k / count) * (count * g - sum_g - xhat * sum_gx);
    } else {
      dx.row(c).array() = k * g;
    }
  }
  return dx;
}

template <typename Scalar>
RowMatrix<Scalar> vstack(const RowMatrix<Scalar>& top, const RowMatrix<Scalar>& bottom) {
  RowMatrix<Scalar> out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

template <typename Scalar>
RowMatrix<Scalar> ced_forward_batch(const CedWeights<Scalar>& w, const Eigen::Ref<const RowMatrix<Scalar>>& input,
                                    BatchNormMode mode, ForwardCache<Scalar>* cache, ShapeTrace* trace) {
  const CedArchitecture& arch = w.arch;
  const int batch = static_cast<int>(input.rows());
  if (batch == 0) throw ShapeError("reshape", "empty batch");
  if (input.cols() != static_cast<Eigen::Index>(arch.context_frames) * arch.bins) {
    throw ShapeError("reshape", "expected " + std::to_string(arch.context_frames) + "x" +
                                    std::to_string(arch.bins) + " features per example, got " +
                                    std::to_string(input.cols()));
  }
  const int kt = arch.kernel_time, kf = arch.kernel_freq, st = arch.stride_time, sf = arch.stride_freq;
  const int taps = kt * kf;
  const auto alpha = static_cast<Scalar>(arch.elu_alpha);
  auto record = [&](const std::string& name, TensorShape s) {
    if (trace) trace->stages.emplace_back(name, s);
  };
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  c.batch = batch;
  c.mode = mode;

  // 1 x (B * T * F), column (b * T + t) * F + f.
  RowMatrix<Scalar> x(1, input.size());
  for (int b = 0; b < batch; ++b) {
    x.row(0).segment(static_cast<Eigen::Index>(b) * input.cols(), input.cols()) = input.row(b);
  }
  TensorShape shape{1, arch.context_frames, arch.bins};
  record("reshape", shape);

  for (int l = 0; l < 4; ++l) {
    const auto& p = w.encoder[l];
    if (p.in_channels != shape.channels) throw ShapeError(encoder_name(l), "channel mismatch with " + shape.str());
    if (shape.time < kt || shape.freq < kf) throw ShapeError(encoder_name(l), "input " + shape.str() + " smaller than kernel");
    const TensorShape out{p.out_channels, (shape.time - kt) / st + 1, (shape.freq - kf) / sf + 1};
    const Geometry g{shape.channels, shape.time, shape.freq, out.time, out.freq, kt, kf, st, sf, batch};
    auto& cc = c.enc_conv[l];
    cc.input = im2col(x, g);
    cc.in_shape = shape;
    cc.out_shape = out;
    x = p.kernel * cc.input;
    batch_norm_forward(x, w.encoder_bn[l], mode, arch.bn_epsilon, &c.enc_norm[l]);
    elu_inplace(x, alpha);
    c.enc_act[l] = x;
    shape = out;
    record(encoder_name(l), shape);
  }

  for (int l = 0; l < 4; ++l) {
    const auto& p = w.decoder[l];
    if (l > 0) {
      const auto& skip = c.enc_conv[3 - l].out_shape;
      if (skip.time != shape.time || skip.freq != shape.freq) {
        throw ShapeError(decoder_name(l) + ".skip", "skip " + skip.str() + " does not match " + shape.str());
      }
      x = vstack(x, c.enc_act[3 - l]);
      shape.channels += skip.channels;
    }
    if (p.in_channels != shape.channels) throw ShapeError(decoder_name(l), "channel mismatch with " + shape.str());
    const TensorShape out{p.out_channels, (shape.time - 1) * st + kt, (shape.freq - 1) * sf + kf};
    const Geometry g{out.channels, out.time, out.freq, shape.time, shape.freq, kt, kf, st, sf, batch};
    auto& cc = c.dec_conv[l];
    cc.in_shape = shape;
    cc.out_shape = out;
    cc.input = std::move(x);
    x = col2im<Scalar>(deconv_matrix(p, taps) * cc.input, g);
    batch_norm_forward(x, w.decoder_bn[l], mode, arch.bn_epsilon, &c.dec_norm[l]);
    elu_inplace(x, alpha);
    c.dec_act[l] = x;
    shape = out;
    record(decoder_name(l), shape);
  }

  if (shape.channels != 1 || shape.freq > arch.bins) throw ShapeError("pad", "cannot pad " + shape.str());
  // Zero column appended at the highest frequency bin.
  RowMatrix<Scalar> padded = RowMatrix<Scalar>::Zero(1, static_cast<Eigen::Index>(batch) * shape.time * arch.bins);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(batch) * shape.time; ++r) {
    padded.row(0).segment(r * arch.bins, shape.freq) = x.row(0).segment(r * shape.freq, shape.freq);
  }
  const TensorShape padded_shape{1, shape.time, arch.bins};

  const auto& po = w.output;
  const int ot = arch.context_frames;
  if (padded_shape.time != ot) throw ShapeError(kOutputName, "expected " + std::to_string(ot) + " timesteps, got " + padded_shape.str());
  const TensorShape out_shape{1, 1, arch.bins};
  const Geometry g5{1, padded_shape.time, padded_shape.freq, 1, arch.bins, ot, 1, 1, 1, batch};
  c.out_conv.input = im2col(padded, g5);
  c.out_conv.in_shape = padded_shape;
  c.out_conv.out_shape = out_shape;
  RowMatrix<Scalar> z = po.kernel * c.out_conv.input;
  z.array() += po.bias[0];
  record(kOutputName, out_shape);

  const auto scale = static_cast<Scalar>(arch.output_scale);
  RowMatrix<Scalar> mask = z.unaryExpr([scale](Scalar v) { return scale / (Scalar(1) + std::exp(-v)); });
  mask.resize(batch, arch.bins);
  record("flatten", {1, 1, arch.bins});
  c.mask = mask;
  return mask;
}

template <typename Scalar>
CedWeights<Scalar> ced_backward(const CedWeights<Scalar>& w, const ForwardCache<Scalar>& c,
                                const Eigen::Ref<const RowMatrix<Scalar>>& grad_mask) {
  const CedArchitecture& arch = w.arch;
  const int batch = c.batch;
  if (grad_mask.rows() != batch || grad_mask.cols() != arch.bins) {
    throw ShapeError("flatten", "gradient shape does not match the forward batch");
  }
  const int kt = arch.kernel_time, kf = arch.kernel_freq, st = arch.stride_time, sf = arch.stride_freq;
  const int taps = kt * kf;
  const auto alpha = static_cast<Scalar>(arch.elu_alpha);
  const auto scale = static_cast<Scalar>(arch.output_scale);

  CedWeights<Scalar> grad = zero_weights<Scalar>(arch);
  for (auto& bn : grad.encoder_bn) bn.running_var.setZero();
  for (auto& bn : grad.decoder_bn) bn.running_var.setZero();

  // d mask / d z = m (1 - m / scale).
  RowMatrix<Scalar> dz(1, static_cast<Eigen::Index>(batch) * arch.bins);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < arch.bins; ++k) {
      const Scalar m = c.mask(b, k);
      dz(0, static_cast<Eigen::Index>(b) * arch.bins + k) = grad_mask(b, k) * m * (Scalar(1) - m / scale);
    }
  }
  grad.output.kernel = dz * c.out_conv.input.transpose();
  grad.output.bias[0] = dz.sum();
  const auto& pin = c.out_conv.in_shape;
  const Geometry g5{1, pin.time, pin.freq, 1, arch.bins, arch.context_frames, 1, 1, 1, batch};
  RowMatrix<Scalar> dpadded = col2im<Scalar>(w.output.kernel.transpose() * dz, g5);

  const TensorShape dec_out = c.dec_conv[3].out_shape;
  RowMatrix<Scalar> dx(1, static_cast<Eigen::Index>(batch) * dec_out.time * dec_out.freq);
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(batch) * dec_out.time; ++r) {
    dx.row(0).segment(r * dec_out.freq, dec_out.freq) = dpadded.row(0).segment(r * arch.bins, dec_out.freq);
  }

  std::array<RowMatrix<Scalar>, 4> enc_grad;  // accumulated dL/d(enc_act)
  for (int l = 3; l >= 0; --l) {
    RowMatrix<Scalar> d = elu_backward<Scalar>(dx, c.dec_act[l], alpha);
    d = batch_norm_backward<Scalar>(d, w.decoder_bn[l], c.dec_norm[l], c.mode, grad.decoder_bn[l]);
    const auto& cc = c.dec_conv[l];
    const Geometry g{cc.out_shape.channels, cc.out_shape.time, cc.out_shape.freq, cc.in_shape.time,
                     cc.in_shape.freq, kt, kf, st, sf, batch};
    const RowMatrix<Scalar> dcols = im2col(d, g);
    const RowMatrix<Scalar> da = dcols * cc.input.transpose();
    grad.decoder[l].kernel = deconv_kernel_from_matrix<Scalar>(da, w.decoder[l].in_channels, w.decoder[l].out_channels, taps);
    RowMatrix<Scalar> din = deconv_matrix(w.decoder[l], taps).transpose() * dcols;
    if (l > 0) {
      const Eigen::Index own = c.dec_conv[l - 1].out_shape.channels;
      enc_grad[3 - l] = din.bottomRows(din.rows() - own);
      dx = din.topRows(own);
    } else {
      dx = std::move(din);
    }
  }
  // dx is now dL/d(enc_act[3]).
  for (int l = 3; l >= 0; --l) {
    RowMatrix<Scalar> dact = std::move(dx);
    if (l < 3) dact += enc_grad[l];
    RowMatrix<Scalar> d = elu_backward<Scalar>(dact, c.enc_act[l], alpha);
    d = batch_norm_backward<Scalar>(d, w.encoder_bn[l], c.enc_norm[l], c.mode, grad.encoder_bn[l]);
    const auto& cc = c.enc_conv[l];
    grad.encoder[l].kernel = d * cc.input.transpose();
    if (l > 0) {
      const Geometry g{cc.in_shape.channels, cc.in_shape.time, cc.in_shape.freq, cc.out_shape.time,
                       cc.out_shape.freq, kt, kf, st, sf, batch};
      dx = col2im<Scalar>(w.encoder[l].kernel.transpose() * d, g);
    }
  }
  return grad;
}

template <typename Scalar>
void update_running_stats(CedWeights<Scalar>& w, const ForwardCache<Scalar>& c, double momentum) {
  const auto m = static_cast<Scalar>(momentum);
  for (int l = 0; l < 4; ++l) {
    w.encoder_bn[l].running_mean = m * w.encoder_bn[l].running_mean + (Scalar(1) - m) * c.enc_norm[l].batch_mean;
    w.encoder_bn[l].running_var = m * w.encoder_bn[l].running_var + (Scalar(1) - m) * c.enc_norm[l].batch_var;
    w.decoder_bn[l].running_mean = m * w.decoder_bn[l].running_mean + (Scalar(1) - m) * c.dec_norm[l].batch_mean;
    w.decoder_bn[l].running_var = m * w.decoder_bn[l].running_var + (Scalar(1) - m) * c.dec_norm[l].batch_var;
  }
}

Mask ced_forward(const FeatureTensor& input, const CedWeights<float>& weights) {
  RowMatrix<float> row = Eigen::Map<const RowMatrix<float>>(input.values.data(), 1, input.values.size());
  const RowMatrix<float> gains = ced_forward_batch<float>(weights, row, BatchNormMode::kInference);
  Mask mask;
  mask.gains = gains.row(0).transpose().cast<double>();
  mask.alpha = weights.arch.output_scale;
  mask.frame_index = input.frame_index;
  return mask;
}

#define MDCTPF_INSTANTIATE(S)                                                                      \
  template struct CedWeights<S>;                                                                   \
  template std::vector<TensorView<S>> tensors<S>(CedWeights<S>&);                                  \
  template CedWeights<S> zero_weights<S>(const CedArchitecture&);                                  \
  template CedWeights<S> init_weights<S>(std::uint64_t, const CedArchitecture&);                   \
  template void validate<S>(const CedWeights<S>&);                                                 \
  template RowMatrix<S> ced_forward_batch<S>(const CedWeights<S>&, const Eigen::Ref<const RowMatrix<S>>&, \
                                             BatchNormMode, ForwardCache<S>*, ShapeTrace*);        \
  template CedWeights<S> ced_backward<S>(const CedWeights<S>&, const ForwardCache<S>&,             \
                                         const Eigen::Ref<const RowMatrix<S>>&);                    \
  template void update_running_stats<S>(CedWeights<S>&, const ForwardCache<S>&, double);

MDCTPF_INSTANTIATE(float)
MDCTPF_INSTANTIATE(double)

template CedWeights<double> CedWeights<float>::cast<double>() const;
template CedWeights<float> CedWeights<double>::cast<float>() const;
template CedWeights<float> CedWeights<float>::cast<float>() const;
template CedWeights<double> CedWeights<double>::cast<double>() const;

#undef MDCTPF_INSTANTIATE

}  // namespace mdctpf
