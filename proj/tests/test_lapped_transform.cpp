#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/LU>

#include "mdctpf/errors.hpp"
#include "mdctpf/lapped_transform.hpp"
#include "oracles/direct_transform.hpp"
#include "test_support.hpp"

using namespace mdctpf;

namespace {

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// Asymmetric analysis window with the synthesis window solved from the
// reconstruction conditions, one 2x2 system per n.
WindowPair biorthogonal_window(int n, int lookahead) {
  WindowPair w;
  w.frame_length = n;
  w.lookahead = lookahead;
  w.analysis.resize(2 * n);
  for (int i = 0; i < 2 * n; ++i) {
    const double u = (i + 0.5) / (2.0 * n);
    w.analysis[i] = 0.2 + std::sin(std::numbers::pi * std::pow(u, 0.8)) * (1.0 - 0.3 * u);
  }
  w.synthesis.resize(2 * n);
  const auto& a = w.analysis;
  for (int i = 0; i < n; ++i) {
    Eigen::Matrix2d m;
    m << a[i], a[i + n], -a[n - 1 - i], a[2 * n - 1 - i];
    const Eigen::Vector2d s = m.inverse() * (Eigen::Vector2d(1.0, 0.0));
    w.synthesis[i] = s[0];
    w.synthesis[i + n] = s[1];
  }
  return w;
}

Eigen::VectorXd tone(Eigen::Index len, double hz) {
  Eigen::VectorXd x(len);
  for (Eigen::Index i = 0; i < len; ++i) x[i] = 0.5 * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRateHz);
  return x;
}

}  // namespace

TEST_CASE("sine window satisfies the reconstruction conditions") {
  const WindowPair w = sine_window();
  CHECK(w.N() == 160);
  CHECK(w.lookahead == 40);
  CHECK(w.analysis.size() == 320);
  CHECK(perfect_reconstruction_error(w) < 1e-12);
  CHECK_NOTHROW(validate_window(w));
}

TEST_CASE("window validation rejects a broken pair") {
  WindowPair w = sine_window();
  w.analysis[3] *= 1.01;
  CHECK_THROWS_AS(validate_window(w), ConfigError);
  WindowPair short_w = sine_window();
  short_w.synthesis.conservativeResize(100);
  CHECK_THROWS_AS(validate_window(short_w), ConfigError);
}

TEST_CASE("framing arithmetic") {
  CHECK(frame_stream(Eigen::VectorXd::Zero(480), 160, 40).size() == 3);
  CHECK(frame_stream(Eigen::VectorXd::Zero(481), 160, 40).size() == 4);
  CHECK_THROWS_AS(frame_stream(Eigen::VectorXd::Zero(319), 160, 40), InputSizeError);
  // Hop of 10 ms and lookahead of 2.5 ms at 16 kHz.
  CHECK(kFrameLength * 1000 / kSampleRateHz == 10);
  CHECK(kLookahead * 10000 / kSampleRateHz == 25);

  // Frame w covers [wN - N + L, wN + N + L).
  Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(800, 1.0, 800.0);
  const auto frames = frame_stream(ramp, 160, 40);
  CHECK(frames[0][0] == 0.0);
  CHECK(frames[0][120] == 1.0);
  CHECK(frames[1][0] == doctest::Approx(ramp[40]));
  CHECK(frames[2][319] == doctest::Approx(ramp[2 * 160 + 160 + 40 - 1]));
}

TEST_CASE("forward transforms: sizes, zeros and errors") {
  const WindowPair w = sine_window();
  const auto zero = mdct_forward(Eigen::VectorXd::Zero(320), w);
  CHECK(zero.coeffs.size() == 160);
  CHECK(zero.coeffs.isZero(0.0));
  CHECK(mdst_forward(Eigen::VectorXd::Zero(320), w).coeffs.isZero(0.0));
  const auto mclt = mclt_forward(Eigen::VectorXd::Zero(320), w, 5);
  CHECK(mclt.frame_index == 5);
  CHECK(mclt.magnitude().isZero(0.0));
  CHECK_THROWS_AS(mdct_forward(Eigen::VectorXd::Zero(319), w), InputSizeError);
  CHECK_THROWS_AS(mclt_forward(Eigen::VectorXd::Zero(321), w), InputSizeError);
}

TEST_CASE("fast MDCT and MDST match the direct sums") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = testing::random_vector(320, 42);
  CHECK(rel_error(mdct_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis)) < 1e-9);
  CHECK(rel_error(mdst_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis, true)) < 1e-9);

  Eigen::VectorXd impulse = Eigen::VectorXd::Zero(320);
  impulse[0] = 1.0;
  const auto m = mclt_forward(impulse, w);
  CHECK(rel_error(m.real, oracle::direct_mdct(impulse, w.analysis)) < 1e-9);
  CHECK(rel_error(m.imag, oracle::direct_mdct(impulse, w.analysis, true)) < 1e-9);
}

TEST_CASE("fast transforms match the direct sums for an asymmetric window") {
  const WindowPair w = biorthogonal_window(160, 40);
  const Eigen::VectorXd x = testing::random_vector(320, 7);
  CHECK(rel_error(mdct_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis)) < 1e-9);
  CHECK(rel_error(mdst_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis, true)) < 1e-9);
}

TEST_CASE("MCLT parts are the MDCT and MDST bit for bit") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = testing::random_vector(320, 3);
  const auto m = mclt_forward(x, w);
  const auto c = mdct_forward(x, w);
  const auto s = mdst_forward(x, w);
  CHECK((m.real.array() == c.coeffs.array()).all());
  CHECK((m.imag.array() == s.coeffs.array()).all());
  const Eigen::VectorXd mag = (c.coeffs.array().square() + s.coeffs.array().square()).sqrt();
  CHECK((m.magnitude().array() == mag.array()).all());
}

TEST_CASE("MDCT is linear") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = testing::random_vector(320, 11);
  const Eigen::VectorXd y = testing::random_vector(320, 12);
  const Eigen::VectorXd lhs = mdct_forward(2.5 * x - 0.75 * y, w).coeffs;
  const Eigen::VectorXd rhs = 2.5 * mdct_forward(x, w).coeffs - 0.75 * mdct_forward(y, w).coeffs;
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * rhs.cwiseAbs().maxCoeff() * 320);
}

TEST_CASE("inverse stream matches the direct inverse for one frame") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd coeffs = testing::random_vector(160, 21);
  SynthesisState state;
  const Eigen::VectorXd out = mdct_inverse_stream({coeffs, 0}, w, state);
  const Eigen::VectorXd full = oracle::direct_imdct(coeffs, w.synthesis);
  CHECK(rel_error(out, full.head(160)) < 1e-10);
  CHECK(rel_error(state.overlap, full.tail(160)) < 1e-10);
}

TEST_CASE("raw stream reconstructs the input after the documented delay") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd x = testing::random_vector(16000, 5);
  const auto frames = frame_stream(x, w.N(), w.lookahead);
  SynthesisState state;
  Eigen::VectorXd y(static_cast<Eigen::Index>(frames.size()) * w.N());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    y.segment(static_cast<Eigen::Index>(i) * w.N(), w.N()) =
        mdct_inverse_stream(mdct_forward(frames[i], w, static_cast<std::int64_t>(i)), w, state);
  }
  const int d = stream_delay(w);
  CHECK(d == 120);
  // Steady state: skip the first and last transition frames.
  double worst = 0.0;
  for (Eigen::Index i = 2 * w.N(); i < x.size() - 2 * w.N(); ++i) worst = std::max(worst, std::abs(y[i] - x[i - d]));
  CHECK(worst < 1e-10);
}

TEST_CASE("zero spectra synthesize to silence") {
  const WindowPair w = sine_window();
  SynthesisState state;
  for (int i = 0; i < 4; ++i) CHECK(mdct_inverse_stream({Eigen::VectorXd::Zero(160), i}, w, state).isZero(0.0));
}

TEST_CASE("whole-signal round trip: noise and tone") {
  const WindowPair w = sine_window();
  const Eigen::VectorXd noise = testing::random_vector(16000, 8);
  const auto frames = analyze_signal(noise, w);
  CHECK(static_cast<Eigen::Index>(frames.size()) == analyzed_frame_count(noise.size(), w.N()));
  CHECK((synthesize_signal(frames, w, noise.size()) - noise).cwiseAbs().maxCoeff() < 1e-10);

  const Eigen::VectorXd x = tone(16000, 440.0);
  const Eigen::VectorXd y = synthesize_signal(analyze_signal(x, w), w, x.size());
  const double snr = 10.0 * std::log10(x.squaredNorm() / (x - y).squaredNorm());
  CHECK(snr > 200.0);
}

TEST_CASE("asymmetric biorthogonal pair reconstructs perfectly") {
  const WindowPair w = biorthogonal_window(160, 40);
  CHECK(perfect_reconstruction_error(w) < 1e-12);
  CHECK((w.analysis - w.analysis.reverse()).norm() > 0.1);
  const Eigen::VectorXd x = testing::random_vector(8000, 9);
  CHECK((synthesize_signal(analyze_signal(x, w), w, x.size()) - x).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("window file round trip and rejection") {
  testing::TempDir dir("window");
  const WindowPair w = sine_window();
  save_window_file((dir / "sine.txt").string(), w);
  const WindowPair back = load_window_file((dir / "sine.txt").string());
  CHECK(back.N() == 160);
  CHECK(back.lookahead == 40);
  CHECK((back.analysis - w.analysis).cwiseAbs().maxCoeff() < 1e-15);

  {
    std::ofstream f(dir / "bad_header.txt");
    f << "frames=160\n";
  }
  CHECK_THROWS_AS(load_window_file((dir / "bad_header.txt").string()), IoError);
  {
    std::ofstream f(dir / "short.txt");
    f << "N=4 lookahead=1\n1\n2\n";
  }
  CHECK_THROWS_AS(load_window_file((dir / "short.txt").string()), IoError);
  {
    std::ofstream f(dir / "not_pr.txt");
    f << "N=2 lookahead=0\n1\n1\n1\n1\n";
  }
  CHECK_THROWS_AS(load_window_file((dir / "not_pr.txt").string()), ConfigError);
  CHECK_THROWS_AS(load_window_file((dir / "missing.txt").string()), IoError);
}
