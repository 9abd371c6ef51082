#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mdctpf/ced_model.hpp"
#include "mdctpf/codec_surrogate.hpp"
#include "mdctpf/features.hpp"
#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int early_stop_patience = 10;
  int max_epochs = 100;
  std::uint64_t seed = 1234;
  double log_epsilon = kDefaultLogEpsilon;
  double bn_momentum = 0.9;
  // Mini-batches drawn per epoch; 0 means one full pass over the shuffled set.
  int batches_per_epoch = 0;
  // Normalize each frequency bin with its own mean/std instead of one global pair.
  bool per_bin_norm = false;
};

void validate(const TrainConfig& cfg);

// One utterance worth of training material, frame-aligned.
struct Utterance {
  std::string id;
  RowMatrix<float> log_mdct;   // frames x 160, log(|coded MDCT| + eps), not normalized
  RowMatrix<float> coded_mag;  // frames x 160, |MCLT| of the coded signal
  RowMatrix<float> clean_mag;  // frames x 160, |MCLT| of the clean signal
};

struct Dataset {
  std::vector<Utterance> utterances;
  NormStats stats;
  double log_epsilon = kDefaultLogEpsilon;

  std::int64_t size() const;
  // (utterance, frame) of example i in utterance-major order.
  std::pair<std::size_t, Eigen::Index> locate(std::int64_t i) const;
};

Utterance prepare_utterance(const std::string& id, const Eigen::Ref<const Eigen::VectorXd>& clean,
                            const WindowPair& window, const CodecConfig& codec, double log_epsilon);

// Normalization statistics over every coded log-magnitude value of `utterances`.
NormStats compute_norm_stats(const std::vector<Utterance>& utterances, bool per_bin = false);

struct TrainingExample {
  FeatureTensor input;
  Eigen::VectorXd coded_mag;
  Eigen::VectorXd clean_mag;
};

TrainingExample example_at(const Dataset& data, std::int64_t i);

template <typename Scalar>
struct Batch {
  RowMatrix<Scalar> inputs;     // B x 960
  RowMatrix<Scalar> coded_mag;  // B x 160
  RowMatrix<Scalar> clean_mag;  // B x 160
};

template <typename Scalar>
Batch<Scalar> gather_batch(const Dataset& data, const std::vector<std::int64_t>& indices);

// (1/160) sum_k [log(mask(k) coded(k) + eps) - log(clean(k) + eps)]^2.
double loss_mse_log_mclt(const Mask& mask, const TrainingExample& example, double log_epsilon);

// Mean of the per-example loss over a batch and its gradient w.r.t. the mask.
template <typename Scalar>
Scalar batch_loss(const RowMatrix<Scalar>& mask, const Batch<Scalar>& batch, double log_epsilon,
                  RowMatrix<Scalar>* grad_mask = nullptr);

template <typename Scalar>
struct LossGradient {
  Scalar loss = 0;
  CedWeights<Scalar> grad;
};

// Forward, loss, backward. Throws NumericError naming the tensor when a
// gradient is not finite.
template <typename Scalar>
LossGradient<Scalar> loss_and_gradient(const CedWeights<Scalar>& weights, const Batch<Scalar>& batch,
                                       double log_epsilon, BatchNormMode mode = BatchNormMode::kTraining,
                                       ForwardCache<Scalar>* cache = nullptr);

// Mean loss over the dataset with running batch-norm statistics.
double evaluate_loss(const CedWeights<float>& weights, const Dataset& data);
// Same loss with every gain fixed at 1.
double identity_mask_loss(const Dataset& data);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  CedWeights<float> weights;  // best validation checkpoint
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Adam on the mean batch loss with batch-norm running statistics tracked
// at `bn_momentum`. Stops after `early_stop_patience` epochs without a new
// best validation loss, or at `max_epochs`.
TrainResult train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// CSV `epoch,train_loss,val_loss,lr,seconds`.
std::string training_log_csv(const std::vector<EpochLog>& log);

}  // namespace mdctpf
