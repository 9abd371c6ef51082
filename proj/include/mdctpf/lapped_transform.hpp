#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mdctpf {

inline constexpr int kSampleRateHz = 16000;
// 10 ms hop at 16 kHz.
inline constexpr int kFrameLength = 160;
// 2.5 ms lookahead at 16 kHz. It sits at the trailing edge of the 2N window:
// frame w spans samples [wN - N + L, wN + N + L).
inline constexpr int kLookahead = 40;

// Analysis/synthesis windows of length 2N for a 50%-overlap lapped transform.
struct WindowPair {
  Eigen::VectorXd analysis;
  Eigen::VectorXd synthesis;
  int frame_length = kFrameLength;
  int lookahead = kLookahead;

  int N() const { return frame_length; }
};

// sin(pi (n + 1/2) / 2N) on both sides.
WindowPair sine_window(int frame_length = kFrameLength, int lookahead = kLookahead);

// Largest deviation from the Princen-Bradley conditions
//   a(n) s(n) + a(n+N) s(n+N) = 1
//   s(n+N) a(2N-1-n) - s(n) a(N-1-n) = 0      (aliasing cancellation)
// over n in [0, N).
double perfect_reconstruction_error(const WindowPair& window);

// Throws ConfigError when sizes are wrong, entries are not finite, or the PR
// error exceeds `tolerance`.
void validate_window(const WindowPair& window, double tolerance = 1e-12);

// Window file: header line `N=<int> lookahead=<int>` followed by 2N lines with
// one coefficient each. The same window is used for analysis and synthesis.
WindowPair load_window_file(const std::string& path, double pr_tolerance = 1e-12);
void save_window_file(const std::string& path, const WindowPair& window);

struct FrameSpectrum {
  Eigen::VectorXd coeffs;
  std::int64_t frame_index = 0;
};

struct MCLTSpectrum {
  Eigen::VectorXd real;  // MDCT part
  Eigen::VectorXd imag;  // MDST part
  std::int64_t frame_index = 0;

  Eigen::VectorXd magnitude() const {
    return (real.array().square() + imag.array().square()).sqrt().matrix();
  }
};

// Overlap buffer carrying the windowed aliased tail of the previous frame.
struct SynthesisState {
  Eigen::VectorXd overlap;

  explicit SynthesisState(int frame_length = kFrameLength)
      : overlap(Eigen::VectorXd::Zero(frame_length)) {}
};

// X_C(k) = sum_n a(n) x(n) cos(pi/N (n + 1/2 + N/2)(k + 1/2)), k < N.
// Evaluated through one complex FFT of length 2N.
FrameSpectrum mdct_forward(const Eigen::Ref<const Eigen::VectorXd>& frame,
                           const WindowPair& window, std::int64_t frame_index = 0);
// Same with the sine kernel.
FrameSpectrum mdst_forward(const Eigen::Ref<const Eigen::VectorXd>& frame,
                           const WindowPair& window, std::int64_t frame_index = 0);
// real == mdct_forward(frame).coeffs and imag == mdst_forward(frame).coeffs
// bit for bit; all three share one evaluation path.
MCLTSpectrum mclt_forward(const Eigen::Ref<const Eigen::VectorXd>& frame,
                          const WindowPair& window, std::int64_t frame_index = 0);

// Inverse MDCT with 2/N scaling, synthesis windowing and overlap-add.
// Returns the N samples completed by this frame and advances `state`.
Eigen::VectorXd mdct_inverse_stream(const FrameSpectrum& spectrum, const WindowPair& window,
                                    SynthesisState& state);

// Cuts `signal` into ceil(len / N) frames of 2N samples hopping by N, frame w
// covering [wN - N + L, wN + N + L). Samples outside the signal read as zero.
// Throws InputSizeError when len < 2N.
std::vector<Eigen::VectorXd> frame_stream(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                          int frame_length, int lookahead);

// Delay of the raw inverse stream relative to the framed input: output sample i
// of mdct_inverse_stream equals input sample i - (N - L).
inline int stream_delay(const WindowPair& window) { return window.N() - window.lookahead; }

// Whole-signal helpers. The signal is padded with N zeros on both sides before
// framing so every sample in [0, len) is covered by two frames; synthesis
// removes the padding and the stream delay, so synthesize(analyze(x)) == x.
std::vector<FrameSpectrum> analyze_signal(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                          const WindowPair& window);
std::vector<MCLTSpectrum> analyze_signal_mclt(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                              const WindowPair& window);
Eigen::VectorXd synthesize_signal(const std::vector<FrameSpectrum>& frames,
                                  const WindowPair& window, Eigen::Index length);

// Number of frames analyze_signal produces for a signal of `length` samples.
Eigen::Index analyzed_frame_count(Eigen::Index length, int frame_length);

// Samples of padded-stream output to drop so that output index 0 maps to
// signal sample 0.
inline int signal_output_offset(const WindowPair& window) {
  return stream_delay(window) + window.N();
}

}  // namespace mdctpf
