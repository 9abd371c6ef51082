#include "mdctpf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mdctpf/errors.hpp"
#include "mdctpf/metrics.hpp"

namespace mdctpf {

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < 1.0) || !(cfg.adam_beta2 > 0.0 && cfg.adam_beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must be in (0, 1)");
  }
  if (!(cfg.adam_epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be > 0");
  if (cfg.early_stop_patience < 1) throw ConfigError("train: patience must be >= 1");
  if (cfg.max_epochs < 1) throw ConfigError("train: max epochs must be >= 1");
  if (!(cfg.log_epsilon > 0.0)) throw ConfigError("train: log epsilon must be > 0");
  if (!(cfg.bn_momentum >= 0.0 && cfg.bn_momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
  if (cfg.batches_per_epoch < 0) throw ConfigError("train: batches per epoch must be >= 0");
}

std::int64_t Dataset::size() const {
  std::int64_t n = 0;
  for (const auto& u : utterances) n += u.log_mdct.rows();
  return n;
}

std::pair<std::size_t, Eigen::Index> Dataset::locate(std::int64_t i) const {
  for (std::size_t u = 0; u < utterances.size(); ++u) {
    const Eigen::Index rows = utterances[u].log_mdct.rows();
    if (i < rows) return {u, i};
    i -= rows;
  }
  throw InputSizeError("dataset index out of range");
}

Utterance prepare_utterance(const std::string& id, const Eigen::Ref<const Eigen::VectorXd>& clean,
                            const WindowPair& window, const CodecConfig& codec, double log_epsilon) {
  const CodedSignal coded = encode_decode_signal(clean, window, codec);
  const auto coded_mclt = analyze_signal_mclt(coded.signal, window);
  const auto clean_mclt = analyze_signal_mclt(clean, window);
  const auto frames = static_cast<Eigen::Index>(coded.frames.size());
  const int bins = window.N();
  Utterance u;
  u.id = id;
  u.log_mdct.resize(frames, bins);
  u.coded_mag.resize(frames, bins);
  u.clean_mag.resize(frames, bins);
  for (Eigen::Index w = 0; w < frames; ++w) {
    u.log_mdct.row(w) = log_magnitude(coded.frames[static_cast<std::size_t>(w)], log_epsilon).cast<float>().transpose();
    u.coded_mag.row(w) = coded_mclt[static_cast<std::size_t>(w)].magnitude().cast<float>().transpose();
    u.clean_mag.row(w) = clean_mclt[static_cast<std::size_t>(w)].magnitude().cast<float>().transpose();
  }
  return u;
}

NormStats compute_norm_stats(const std::vector<Utterance>& utterances, bool per_bin) {
  NormStatsAccumulator acc;
  for (const auto& u : utterances) {
    for (Eigen::Index w = 0; w < u.log_mdct.rows(); ++w) acc.add(u.log_mdct.row(w).transpose().cast<double>());
  }
  return acc.finish(per_bin);
}

namespace {

// Writes the normalized 6x160 context of (utterance, frame) into `dst`.
template <typename Scalar>
void write_context(const Dataset& data, std::size_t u, Eigen::Index w, Scalar* dst) {
  const auto& utt = data.utterances[u];
  const Eigen::Index bins = utt.log_mdct.cols();
  for (int r = 0; r < kContextFrames; ++r) {
    const Eigen::Index src = w - (kContextFrames - 1) + r;
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> row(dst + r * bins, bins);
    if (src < 0) {
      row = data.stats.padding(data.log_epsilon, bins).template cast<Scalar>();
    } else {
      const Eigen::ArrayXd v = utt.log_mdct.row(src).transpose().template cast<double>();
      row = data.stats.normalize(v).template cast<Scalar>();
    }
  }
}

}  // namespace

TrainingExample example_at(const Dataset& data, std::int64_t i) {
  const auto [u, w] = data.locate(i);
  TrainingExample ex;
  ex.input.frame_index = w;
  write_context<float>(data, u, w, ex.input.values.data());
  ex.coded_mag = data.utterances[u].coded_mag.row(w).transpose().cast<double>();
  ex.clean_mag = data.utterances[u].clean_mag.row(w).transpose().cast<double>();
  return ex;
}

template <typename Scalar>
Batch<Scalar> gather_batch(const Dataset& data, const std::vector<std::int64_t>& indices) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  const Eigen::Index bins = kCedBins;
  Batch<Scalar> batch;
  batch.inputs.resize(b, kContextFrames * bins);
  batch.coded_mag.resize(b, bins);
  batch.clean_mag.resize(b, bins);
  // Offsets of each utterance for fast lookup.
  std::vector<std::int64_t> starts(data.utterances.size() + 1, 0);
  for (std::size_t u = 0; u < data.utterances.size(); ++u) starts[u + 1] = starts[u] + data.utterances[u].log_mdct.rows();
  for (Eigen::Index r = 0; r < b; ++r) {
    const std::int64_t i = indices[static_cast<std::size_t>(r)];
    const auto it = std::upper_bound(starts.begin(), starts.end(), i);
    if (i < 0 || it == starts.end()) throw InputSizeError("dataset index out of range");
    const auto u = static_cast<std::size_t>(it - starts.begin() - 1);
    const Eigen::Index w = i - starts[u];
    write_context<Scalar>(data, u, w, batch.inputs.row(r).data());
    batch.coded_mag.row(r) = data.utterances[u].coded_mag.row(w).template cast<Scalar>();
    batch.clean_mag.row(r) = data.utterances[u].clean_mag.row(w).template cast<Scalar>();
  }
  return batch;
}

double loss_mse_log_mclt(const Mask& mask, const TrainingExample& example, double log_epsilon) {
  if (mask.gains.size() != example.coded_mag.size() || mask.gains.size() != example.clean_mag.size()) {
    throw InputSizeError("loss: mask and magnitudes differ in length");
  }
  const Eigen::ArrayXd enhanced = (mask.gains.array() * example.coded_mag.array() + log_epsilon).log();
  const Eigen::ArrayXd target = (example.clean_mag.array() + log_epsilon).log();
  return (enhanced - target).square().mean();
}

template <typename Scalar>
Scalar batch_loss(const RowMatrix<Scalar>& mask, const Batch<Scalar>& batch, double log_epsilon,
                  RowMatrix<Scalar>* grad_mask) {
  const auto eps = static_cast<Scalar>(log_epsilon);
  const auto enhanced = (mask.array() * batch.coded_mag.array() + eps).eval();
  const auto diff = (enhanced.log() - (batch.clean_mag.array() + eps).log()).eval();
  const auto count = static_cast<Scalar>(mask.size());
  if (grad_mask) {
    *grad_mask = (Scalar(2) / count * diff * batch.coded_mag.array() / enhanced).matrix();
  }
  return diff.square().sum() / count;
}

template <typename Scalar>
LossGradient<Scalar> loss_and_gradient(const CedWeights<Scalar>& weights, const Batch<Scalar>& batch,
                                       double log_epsilon, BatchNormMode mode, ForwardCache<Scalar>* cache) {
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& c = cache ? *cache : local;
  const RowMatrix<Scalar> mask = ced_forward_batch<Scalar>(weights, batch.inputs, mode, &c);
  RowMatrix<Scalar> grad_mask;
  LossGradient<Scalar> out;
  out.loss = batch_loss<Scalar>(mask, batch, log_epsilon, &grad_mask);
  out.grad = ced_backward<Scalar>(weights, c, grad_mask);
  for (const auto& t : tensors(out.grad)) {
    if (!t.vec().allFinite()) throw NumericError("non-finite gradient in " + t.name);
  }
  return out;
}

double evaluate_loss(const CedWeights<float>& weights, const Dataset& data) {
  const std::int64_t n = data.size();
  if (n == 0) throw ConfigError("evaluate_loss: empty dataset");
  constexpr std::int64_t kChunk = 256;
  double total = 0.0;
  std::vector<std::int64_t> idx;
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const std::int64_t end = std::min(n, start + kChunk);
    idx.resize(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch<float> batch = gather_batch<float>(data, idx);
    const RowMatrix<float> mask = ced_forward_batch<float>(weights, batch.inputs, BatchNormMode::kInference);
    total += static_cast<double>(batch_loss<float>(mask, batch, data.log_epsilon)) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(n);
}

double identity_mask_loss(const Dataset& data) {
  double total = 0.0;
  std::int64_t n = 0;
  for (const auto& u : data.utterances) {
    const Eigen::ArrayXXd coded = u.coded_mag.cast<double>().array();
    const Eigen::ArrayXXd clean = u.clean_mag.cast<double>().array();
    total += ((coded + data.log_epsilon).log() - (clean + data.log_epsilon).log()).square().rowwise().mean().sum();
    n += u.coded_mag.rows();
  }
  if (n == 0) throw ConfigError("identity_mask_loss: empty dataset");
  return total / static_cast<double>(n);
}

namespace {

struct AdamState {
  CedWeights<float> m;
  CedWeights<float> v;
  std::int64_t step = 0;
};

void adam_update(CedWeights<float>& weights, CedWeights<float>& grad, AdamState& state,
                 const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<float>(cfg.adam_beta1);
  const auto b2 = static_cast<float>(cfg.adam_beta2);
  const auto lr = static_cast<float>(cfg.learning_rate * std::sqrt(bc2) / bc1);
  const auto eps = static_cast<float>(cfg.adam_epsilon * std::sqrt(bc2));
  auto p = tensors(weights);
  auto gt = tensors(grad);
  auto mt = tensors(state.m);
  auto vt = tensors(state.v);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i].trainable) continue;
    auto gv = gt[i].vec();
    auto mv = mt[i].vec();
    auto vv = vt[i].vec();
    mv = b1 * mv + (1.0f - b1) * gv;
    vv = b2 * vv + (1.0f - b2) * gv.cwiseAbs2();
    p[i].vec().array() -= lr * mv.array() / (vv.array().sqrt() + eps);
  }
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  validate(cfg);
  validate(train_set.stats);
  const std::int64_t n = train_set.size();
  if (n == 0) throw ConfigError("train: empty training set");
  if (val_set.size() == 0) throw ConfigError("train: empty validation set");

  std::mt19937_64 rng(cfg.seed);
  TrainResult result;
  CedWeights<float> weights = init_weights<float>(rng());
  AdamState adam{zero_weights<float>(), zero_weights<float>()};
  for (auto* s : {&adam.m, &adam.v}) {
    for (auto& t : tensors(*s)) t.vec().setZero();
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  result.weights = weights;
  ForwardCache<float> cache;
  const std::int64_t full_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t batches = cfg.batches_per_epoch > 0 ? cfg.batches_per_epoch : full_batches;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    std::vector<std::int64_t> idx;
    for (std::int64_t b = 0; b < batches; ++b) {
      if (cursor >= order.size() || (cfg.batches_per_epoch == 0 && b == 0)) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - cursor);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                 order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      cursor += take;
      const Batch<float> batch = gather_batch<float>(train_set, idx);
      auto lg = loss_and_gradient<float>(weights, batch, cfg.log_epsilon, BatchNormMode::kTraining, &cache);
      update_running_stats(weights, cache, cfg.bn_momentum);
      adam_update(weights, lg.grad, adam, cfg);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(take);
      seen += static_cast<std::int64_t>(take);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(seen);
    entry.val_loss = evaluate_loss(weights, val_set);
    entry.learning_rate = cfg.learning_rate;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.val_loss)) {
      throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);

    if (entry.val_loss < best) {
      best = entry.val_loss;
      result.weights = weights;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr,seconds\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.learning_rate) << ',' << format_double(e.seconds) << '\n';
  }
  return out.str();
}

template Batch<float> gather_batch<float>(const Dataset&, const std::vector<std::int64_t>&);
template Batch<double> gather_batch<double>(const Dataset&, const std::vector<std::int64_t>&);
template float batch_loss<float>(const RowMatrix<float>&, const Batch<float>&, double, RowMatrix<float>*);
template double batch_loss<double>(const RowMatrix<double>&, const Batch<double>&, double, RowMatrix<double>*);
template LossGradient<float> loss_and_gradient<float>(const CedWeights<float>&, const Batch<float>&, double,
                                                      BatchNormMode, ForwardCache<float>*);
template LossGradient<double> loss_and_gradient<double>(const CedWeights<double>&, const Batch<double>&, double,
                                                        BatchNormMode, ForwardCache<double>*);

}  // namespace mdctpf
