#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mdctpf/corpus.hpp"
#include "mdctpf/errors.hpp"
#include "mdctpf/metrics.hpp"
#include "test_support.hpp"

using namespace mdctpf;

namespace {

Eigen::VectorXd delayed(const Eigen::VectorXd& x, int d) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  y.tail(x.size() - d) = x.head(x.size() - d);
  return y;
}

}  // namespace

TEST_CASE("identical signals") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = synth_speech(1, 1.0);
  CHECK(log_spectral_distance(x, x, w) == 0.0);
  CHECK(segmental_snr(x, x) == 35.0);
  const auto r = score(x, x, w, "x");
  CHECK(r.file_id == "x");
  CHECK(r.frames_scored >= 1);
}

TEST_CASE("scaling by ten costs exactly 20 dB of LSD") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = testing::random_vector(8000, 2);
  CHECK(log_spectral_distance(x, 10.0 * x, w) == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(log_spectral_distance(10.0 * x, x, w) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("segmental SNR closed forms") {
  const Eigen::VectorXd x = testing::random_vector(8000, 3);
  // 40 dB down, clamped to 35.
  CHECK(segmental_snr(x, x + 1e-2 * x) == 35.0);
  // Error energy four times the signal: 10 log10(1/4).
  CHECK(segmental_snr(x, -x) == doctest::Approx(-10.0 * std::log10(4.0)).epsilon(1e-9));
  // Half amplitude: error is x / 2, 10 log10(4).
  CHECK(segmental_snr(x, 0.5 * x) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
  // Far below the floor clamps to -10.
  CHECK(segmental_snr(x, -20.0 * x) == -10.0);
}

TEST_CASE("delay estimation and compensation") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = synth_speech(5, 1.0);
  for (int d : {0, 1, 17, 160}) CHECK(estimate_delay(x, delayed(x, d), 320) == d);
  CHECK(estimate_delay(delayed(x, 9), x, 320) == -9);

  const auto aligned = align_signals(x, delayed(x, 17), 320);
  CHECK(aligned.delay == 17);
  CHECK(aligned.reference.size() == aligned.test.size());
  CHECK(aligned.reference.size() == x.size() - 17);
  CHECK((aligned.reference - aligned.test).isZero(0.0));
}

TEST_CASE("scores do not move under integer delays") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = synth_speech(6, 2.0);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> gauss(0.0, 0.01);
  Eigen::VectorXd y = x;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += gauss(rng);
  const double lsd0 = log_spectral_distance(x, y, w);
  const double snr0 = segmental_snr(x, y);
  for (int d : {1, 5, 40, 161}) {
    CHECK(std::abs(log_spectral_distance(x, delayed(y, d), w) - lsd0) < 0.01);
    CHECK(std::abs(segmental_snr(x, delayed(y, d)) - snr0) < 0.01);
  }
}

TEST_CASE("segmental SNR worsens monotonically with noise level") {
  const Eigen::VectorXd x = synth_speech(7, 2.0);
  const double rms = std::sqrt(x.squaredNorm() / static_cast<double>(x.size()));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  Eigen::VectorXd noise(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) noise[i] = gauss(rng);
  double previous = 1e9;
  for (double snr_db : {40.0, 30.0, 20.0, 10.0, 0.0, -5.0}) {
    const double sigma = rms * std::pow(10.0, -snr_db / 20.0);
    const double s = segmental_snr(x, x + sigma * noise);
    CHECK(s <= previous);
    previous = s;
  }
  CHECK(previous < 0.0);
}

TEST_CASE("silent reference has nothing to score") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(4000);
  CHECK_THROWS_AS(log_spectral_distance(z, testing::random_vector(4000, 1), w), NumericError);
  CHECK_THROWS_AS(segmental_snr(z, z), NumericError);
}

TEST_CASE("double formatting round trips") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1.0 / 3.0, 6.02214076e23}) CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
}
