#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "mdctpf/corpus.hpp"
#include "mdctpf/errors.hpp"
#include "mdctpf/features.hpp"
#include "mdctpf/trainer.hpp"
#include "oracles/finite_difference.hpp"
#include "test_support.hpp"

using namespace mdctpf;

namespace {

// Utterances cut from synthetic speech and coded with the default surrogate.
Dataset speech_dataset(int count, double seconds, std::uint64_t seed) {
  Dataset d;
  const WindowPair w = sine_window();
  for (int i = 0; i < count; ++i) {
    const Eigen::VectorXd x = synth_speech(seed + 7919 * static_cast<std::uint64_t>(i), seconds);
    d.utterances.push_back(prepare_utterance("u" + std::to_string(i), x, w, {}, d.log_epsilon));
  }
  d.stats = compute_norm_stats(d.utterances);
  return d;
}

// 64 frames whose target gain is a smooth function of the coded spectrum, so
// a bounded mask can reach it.
Dataset toy_dataset() {
  Dataset d;
  std::mt19937_64 rng(64);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Utterance utt;
  utt.id = "toy";
  utt.log_mdct.resize(64, 160);
  utt.coded_mag.resize(64, 160);
  utt.clean_mag.resize(64, 160);
  for (int t = 0; t < 64; ++t) {
    const float tilt = u(rng), level = u(rng);
    for (int k = 0; k < 160; ++k) {
      const float lm = level + tilt * static_cast<float>(k) / 160.0f + 0.3f * u(rng);
      const float coded = std::exp(lm);
      utt.log_mdct(t, k) = std::log(coded + static_cast<float>(d.log_epsilon));
      utt.coded_mag(t, k) = coded;
      utt.clean_mag(t, k) = coded * (1.0f + 0.5f * std::tanh(lm));
    }
  }
  d.utterances.push_back(utt);
  d.stats = compute_norm_stats(d.utterances);
  return d;
}

Batch<double> first_examples(const Dataset& d, int count) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  return gather_batch<double>(d, idx);
}

}  // namespace

TEST_CASE("loss closed forms") {
  TrainingExample ex;
  ex.coded_mag = Eigen::VectorXd::Constant(160, 2.0);
  ex.clean_mag = Eigen::VectorXd::Constant(160, 2.0);
  Mask ones{Eigen::VectorXd::Ones(160), 2.0, 0};
  CHECK(loss_mse_log_mclt(ones, ex, 1e-7) == 0.0);

  // Doubling what should have been halved.
  ex.clean_mag.setConstant(1.0);
  ex.coded_mag.setConstant(2.0);
  Mask two{Eigen::VectorXd::Constant(160, 2.0), 2.0, 0};
  const double expected = std::pow(2.0 * std::numbers::ln2, 2.0);
  CHECK(loss_mse_log_mclt(two, ex, 1e-12) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(1.9218).epsilon(1e-4));

  // The ideal mask with gamma = eps inverts the ratio.
  ex.coded_mag = testing::random_vector(160, 1).cwiseAbs();
  ex.clean_mag = testing::random_vector(160, 2).cwiseAbs();
  const double eps = 1e-7;
  Mask ideal{(ex.clean_mag.array() / (ex.coded_mag.array() + eps)).matrix(), 1e9, 0};
  CHECK(loss_mse_log_mclt(ideal, ex, eps) < 1e-6);

  Mask short_mask{Eigen::VectorXd::Ones(10), 2.0, 0};
  CHECK_THROWS_AS(loss_mse_log_mclt(short_mask, ex, eps), InputSizeError);
}

TEST_CASE("batch loss agrees with the per-example loss") {
  const Dataset d = speech_dataset(1, 1.0, 3);
  const auto b = first_examples(d, 4);
  const RowMatrix<double> mask = RowMatrix<double>::Constant(4, 160, 0.8);
  double mean = 0.0;
  for (int i = 0; i < 4; ++i) {
    Mask m{Eigen::VectorXd::Constant(160, 0.8), 2.0, 0};
    mean += loss_mse_log_mclt(m, example_at(d, i), d.log_epsilon) / 4.0;
  }
  CHECK(batch_loss<double>(mask, b, d.log_epsilon) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central differences") {
  const Dataset d = speech_dataset(1, 0.5, 5);
  const auto batch = first_examples(d, 2);
  // Examples 0 and 1 start the stream, so most context rows are padding;
  // take two frames from the middle instead.
  const auto mid = gather_batch<double>(d, {20, 21});
  for (const auto* b : {&batch, &mid}) {
    const auto report = oracle::gradient_check(init_weights<double>(17), *b, d.log_epsilon);
    REQUIRE(report.size() == 4 * 3 + 4 * 3 + 2);
    for (const auto& r : report) CHECK_MESSAGE(r.rel_error < 1e-4, r.name << " rel error " << r.rel_error);
  }
}

TEST_CASE("zero-loss batch has a zero gradient") {
  Dataset d = speech_dataset(1, 0.5, 6);
  for (auto& u : d.utterances) u.clean_mag = u.coded_mag;
  const auto b = gather_batch<double>(d, {10, 11, 12});
  const auto lg = loss_and_gradient<double>(zero_weights<double>(), b, d.log_epsilon);
  CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-12));
  auto g = lg.grad;
  double norm = 0.0;
  for (auto& t : tensors(g)) norm += t.vec().squaredNorm();
  CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("scaling the loss scales every gradient") {
  const Dataset d = speech_dataset(1, 0.5, 7);
  const auto b = gather_batch<double>(d, {15, 30});
  const auto w = init_weights<double>(3);
  ForwardCache<double> cache;
  const RowMatrix<double> mask = ced_forward_batch<double>(w, b.inputs, BatchNormMode::kTraining, &cache);
  RowMatrix<double> gm;
  batch_loss<double>(mask, b, d.log_epsilon, &gm);
  auto g1 = ced_backward<double>(w, cache, gm);
  const RowMatrix<double> scaled = 3.5 * gm;
  auto g2 = ced_backward<double>(w, cache, scaled);
  auto t1 = tensors(g1), t2 = tensors(g2);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    const Eigen::VectorXd a = 3.5 * t1[i].vec(), c = t2[i].vec();
    CHECK_MESSAGE((a - c).norm() <= 1e-12 * std::max(1.0, a.norm()), t1[i].name);
  }
}

TEST_CASE("features: padding rows and normalization") {
  const WindowPair w = sine_window();
  std::vector<FrameSpectrum> frames;
  for (int i = 0; i < 8; ++i) frames.push_back({Eigen::VectorXd::Constant(160, (i % 2 ? -1.0 : 1.0) * 0.25), i});
  const double eps = 1e-7;
  const NormStats stats{std::log(0.25 + eps), 1.0};
  const auto feats = build_features(frames, stats, eps);
  REQUIRE(feats.size() == 8);
  const float pad = static_cast<float>(std::log(eps) - stats.mean);
  for (int r = 0; r < 5; ++r) CHECK((feats[0].values.row(r).array() == pad).all());
  CHECK(feats[0].values.row(5).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((feats[3].values.row(0).array() == pad).all());
  CHECK((feats[3].values.row(1).array() == pad).all());
  CHECK(feats[3].values.bottomRows(4).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK(feats[7].values.cwiseAbs().maxCoeff() < 1e-6f);
  CHECK(feats[7].frame_index == 7);
}

TEST_CASE("dataset features match the streaming features") {
  const Dataset d = speech_dataset(2, 0.5, 8);
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = synth_speech(8 + 7919, 0.5);
  const auto coded = encode_decode_signal(x, w, {});
  const auto feats = build_features(coded.frames, d.stats, d.log_epsilon);
  const std::int64_t first = static_cast<std::int64_t>(d.utterances[0].log_mdct.rows());
  for (std::int64_t i : {0, 3, 7, 20}) {
    const auto ex = example_at(d, first + i);
    CHECK((ex.input.values - feats[static_cast<std::size_t>(i)].values).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("per-bin normalization") {
  Dataset d = speech_dataset(2, 0.5, 13);
  const NormStats global = d.stats;
  const NormStats per_bin = compute_norm_stats(d.utterances, true);
  REQUIRE(per_bin.per_bin());
  CHECK(per_bin.bin_mean.size() == 160);
  CHECK(per_bin.mean == global.mean);
  CHECK((per_bin.bin_std.array() >= kBinStdFloor * per_bin.std).all());

  // Every bin of the normalized training set has zero mean; unfloored bins
  // also have unit spread.
  d.stats = per_bin;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(160), sum_sq = Eigen::ArrayXd::Zero(160);
  const std::int64_t n = d.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [u, w] = d.locate(i);
    const Eigen::ArrayXd v = per_bin.normalize(d.utterances[u].log_mdct.row(w).transpose().cast<double>().array());
    sum += v;
    sum_sq += v * v;
  }
  const Eigen::ArrayXd mean = sum / static_cast<double>(n);
  CHECK(mean.abs().maxCoeff() < 1e-6);
  for (Eigen::Index k = 0; k < 160; ++k) {
    if (per_bin.bin_std[k] > kBinStdFloor * per_bin.std) {
      CHECK(sum_sq[k] / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  // Dataset contexts and streamed features use the same statistics.
  const auto feats = build_features(encode_decode_signal(synth_speech(13, 0.5), sine_window(), {}).frames, per_bin,
                                    d.log_epsilon);
  for (std::int64_t i : {0, 2, 9}) {
    const auto ex = example_at(d, i);
    CHECK((ex.input.values - feats[static_cast<std::size_t>(i)].values).cwiseAbs().maxCoeff() < 1e-5f);
  }
  const Eigen::ArrayXd pad = per_bin.padding(d.log_epsilon, 160);
  CHECK((example_at(d, 0).input.values.row(0).transpose().cast<double>().array() - pad).abs().maxCoeff() < 1e-5);

  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.batches_per_epoch = 2;
  CHECK(std::isfinite(train(d, d, cfg).log[0].train_loss));

  NormStats bad = per_bin;
  bad.bin_std.resize(10);
  CHECK_THROWS_AS(validate(bad), ConfigError);
  CHECK_THROWS_AS(FeatureStream(per_bin, d.log_epsilon, 80), InputSizeError);
}

TEST_CASE("norm stats and dataset indexing") {
  const Dataset d = speech_dataset(3, 0.3, 9);
  std::int64_t total = 0;
  for (const auto& u : d.utterances) total += u.log_mdct.rows();
  CHECK(d.size() == total);
  const auto [u, f] = d.locate(d.utterances[0].log_mdct.rows() + 2);
  CHECK(u == 1);
  CHECK(f == 2);
  CHECK(d.stats.std > 0.0);
  CHECK_THROWS_AS(compute_norm_stats({}), ConfigError);
}

TEST_CASE("configuration errors") {
  Dataset empty;
  const Dataset d = speech_dataset(1, 0.3, 10);
  CHECK_THROWS_AS(train(empty, d, {}), ConfigError);
  CHECK_THROWS_AS(train(d, empty, {}), ConfigError);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(d, d, bad), ConfigError);
  bad = {};
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  Dataset stale = d;
  stale.stats.version = kFeatureVersion + 1;
  CHECK_THROWS_AS(train(stale, d, {}), ConfigError);
}

TEST_CASE("overfits a 64-example toy set") {
  const Dataset d = toy_dataset();
  TrainConfig cfg;
  cfg.max_epochs = 200;
  cfg.early_stop_patience = 200;
  cfg.seed = 5;
  double first = 0.0, last = 0.0;
  int epochs = 0;
  train(d, d, cfg, [&](const EpochLog& e) {
    if (e.epoch == 1) first = e.train_loss;
    last = e.train_loss;
    epochs = e.epoch;
  });
  MESSAGE("epoch 1 loss " << first << ", epoch " << epochs << " loss " << last);
  CHECK(last < 0.1 * first);
}

TEST_CASE("fixed seed reproduces training and the best checkpoint is returned") {
  const Dataset tr = speech_dataset(2, 0.5, 11);
  Dataset va = speech_dataset(1, 0.5, 12);
  va.stats = tr.stats;
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.early_stop_patience = 2;
  cfg.seed = 77;
  const auto a = train(tr, va, cfg);
  const auto b = train(tr, va, cfg);
  REQUIRE(a.log.size() == b.log.size());
  CHECK(std::abs(a.log[0].train_loss - b.log[0].train_loss) < 1e-6);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }

  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : a.log) {
    if (e.val_loss < best) best = e.val_loss, best_epoch = e.epoch;
  }
  CHECK(a.best_epoch == best_epoch);
  CHECK(evaluate_loss(a.weights, va) == best);

  cfg.seed = 78;
  const auto c = train(tr, va, cfg);
  CHECK(c.log[0].train_loss != a.log[0].train_loss);

  const std::string csv = training_log_csv(a.log);
  CHECK(csv.rfind("epoch,train_loss,val_loss,lr,seconds\n", 0) == 0);
}
