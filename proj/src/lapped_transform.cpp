#include "mdctpf/lapped_transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <complex>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "mdctpf/errors.hpp"

namespace mdctpf {

namespace {

using Complex = std::complex<double>;

// Twiddles and FFT plan for one transform size. Lives in a thread_local cache
// so the public functions stay free of shared mutable state.
class MdctEngine {
 public:
  explicit MdctEngine(int n) : n_(n), m_(2 * n) {
    const double pi = std::numbers::pi;
    const double n0 = 0.5 + n / 2.0;
    pre_.resize(m_);
    post_.resize(n_);
    inv_pre_.resize(n_);
    inv_post_.resize(m_);
    for (int i = 0; i < m_; ++i) {
      pre_[i] = std::polar(1.0, -pi * i / m_);
      inv_post_[i] = std::polar(1.0, pi * (i + n0) / m_);
    }
    for (int k = 0; k < n_; ++k) {
      post_[k] = std::polar(1.0, -pi * n0 * (k + 0.5) / n_);
      inv_pre_[k] = std::polar(1.0, pi * n0 * k / n_);
    }
    fft_.SetFlag(Eigen::FFT<double>::Unscaled);
    buf_in_.resize(m_);
    buf_out_.resize(m_);
  }

  void forward(const Eigen::Ref<const Eigen::VectorXd>& frame, const Eigen::VectorXd& window,
               Eigen::VectorXd& mdct, Eigen::VectorXd& mdst) {
    for (int i = 0; i < m_; ++i) buf_in_[i] = pre_[i] * (window[i] * frame[i]);
    fft_.fwd(buf_out_, buf_in_);
    mdct.resize(n_);
    mdst.resize(n_);
    for (int k = 0; k < n_; ++k) {
      const Complex y = buf_out_[k] * post_[k];
      mdct[k] = y.real();
      mdst[k] = -y.imag();
    }
  }

  // Unwindowed inverse MDCT of length 2N, scaled by 2/N.
  void inverse(const Eigen::VectorXd& coeffs, Eigen::VectorXd& out) {
    for (int k = 0; k < n_; ++k) buf_in_[k] = inv_pre_[k] * coeffs[k];
    for (int k = n_; k < m_; ++k) buf_in_[k] = 0.0;
    fft_.inv(buf_out_, buf_in_);
    out.resize(m_);
    const double scale = 2.0 / n_;
    for (int i = 0; i < m_; ++i) out[i] = scale * (inv_post_[i] * buf_out_[i]).real();
  }

 private:
  int n_;
  int m_;
  std::vector<Complex> pre_, post_, inv_pre_, inv_post_;
  std::vector<Complex> buf_in_, buf_out_;
  Eigen::FFT<double> fft_;
};

MdctEngine& engine_for(int n) {
  thread_local std::map<int, std::unique_ptr<MdctEngine>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<MdctEngine>(n);
  return *slot;
}

void check_frame(const Eigen::Ref<const Eigen::VectorXd>& frame, const WindowPair& window) {
  const Eigen::Index expected = 2 * static_cast<Eigen::Index>(window.N());
  if (window.analysis.size() != expected || window.synthesis.size() != expected) {
    throw InputSizeError("window length does not match 2N");
  }
  if (frame.size() != expected) {
    std::ostringstream msg;
    msg << "frame has " << frame.size() << " samples, expected " << expected;
    throw InputSizeError(msg.str());
  }
}

}  // namespace

WindowPair sine_window(int frame_length, int lookahead) {
  if (frame_length <= 0 || lookahead < 0 || lookahead >= frame_length) {
    throw ConfigError("sine_window: invalid frame length or lookahead");
  }
  WindowPair w;
  w.frame_length = frame_length;
  w.lookahead = lookahead;
  const int m = 2 * frame_length;
  w.analysis.resize(m);
  for (int n = 0; n < m; ++n) w.analysis[n] = std::sin(std::numbers::pi * (n + 0.5) / m);
  w.synthesis = w.analysis;
  return w;
}

double perfect_reconstruction_error(const WindowPair& window) {
  const int n_half = window.N();
  const auto& a = window.analysis;
  const auto& s = window.synthesis;
  double worst = 0.0;
  for (int n = 0; n < n_half; ++n) {
    const double pr = a[n] * s[n] + a[n + n_half] * s[n + n_half] - 1.0;
    const double alias = s[n + n_half] * a[2 * n_half - 1 - n] - s[n] * a[n_half - 1 - n];
    worst = std::max({worst, std::abs(pr), std::abs(alias)});
  }
  return worst;
}

void validate_window(const WindowPair& window, double tolerance) {
  if (window.N() <= 0 || window.lookahead < 0 || window.lookahead >= window.N()) {
    throw ConfigError("window: invalid N or lookahead");
  }
  const Eigen::Index m = 2 * static_cast<Eigen::Index>(window.N());
  if (window.analysis.size() != m || window.synthesis.size() != m) {
    throw ConfigError("window: analysis and synthesis must have 2N entries");
  }
  if (!window.analysis.allFinite() || !window.synthesis.allFinite()) {
    throw ConfigError("window: non-finite coefficient");
  }
  const double err = perfect_reconstruction_error(window);
  if (!(err <= tolerance)) {
    std::ostringstream msg;
    msg << "window violates perfect reconstruction (error " << err << ")";
    throw ConfigError(msg.str());
  }
}

WindowPair load_window_file(const std::string& path, double pr_tolerance) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open window file " + path);
  std::string header;
  std::getline(in, header);
  WindowPair w;
  if (std::sscanf(header.c_str(), "N=%d lookahead=%d", &w.frame_length, &w.lookahead) != 2) {
    throw IoError("window file " + path + ": malformed header");
  }
  if (w.frame_length <= 0) throw IoError("window file " + path + ": bad N");
  const int m = 2 * w.frame_length;
  w.analysis.resize(m);
  for (int n = 0; n < m; ++n) {
    if (!(in >> w.analysis[n])) throw IoError("window file " + path + ": too few coefficients");
  }
  double extra;
  if (in >> extra) throw IoError("window file " + path + ": too many coefficients");
  w.synthesis = w.analysis;
  validate_window(w, pr_tolerance);
  return w;
}

void save_window_file(const std::string& path, const WindowPair& window) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write window file " + path);
  out << "N=" << window.N() << " lookahead=" << window.lookahead << "\n";
  out << std::setprecision(17);
  for (Eigen::Index n = 0; n < window.analysis.size(); ++n) out << window.analysis[n] << "\n";
}

MCLTSpectrum mclt_forward(const Eigen::Ref<const Eigen::VectorXd>& frame, const WindowPair& window,
                          std::int64_t frame_index) {
  check_frame(frame, window);
  MCLTSpectrum out;
  out.frame_index = frame_index;
  engine_for(window.N()).forward(frame, window.analysis, out.real, out.imag);
  return out;
}

FrameSpectrum mdct_forward(const Eigen::Ref<const Eigen::VectorXd>& frame, const WindowPair& window,
                           std::int64_t frame_index) {
  MCLTSpectrum full = mclt_forward(frame, window, frame_index);
  return {std::move(full.real), frame_index};
}

FrameSpectrum mdst_forward(const Eigen::Ref<const Eigen::VectorXd>& frame, const WindowPair& window,
                           std::int64_t frame_index) {
  MCLTSpectrum full = mclt_forward(frame, window, frame_index);
  return {std::move(full.imag), frame_index};
}

Eigen::VectorXd mdct_inverse_stream(const FrameSpectrum& spectrum, const WindowPair& window,
                                    SynthesisState& state) {
  const int n = window.N();
  if (spectrum.coeffs.size() != n) throw InputSizeError("spectrum length does not match N");
  if (state.overlap.size() != n) throw InputSizeError("synthesis state length does not match N");
  if (window.synthesis.size() != 2 * n) throw InputSizeError("window length does not match 2N");

  Eigen::VectorXd y;
  engine_for(n).inverse(spectrum.coeffs, y);
  y.array() *= window.synthesis.array();
  Eigen::VectorXd out = state.overlap + y.head(n);
  state.overlap = y.tail(n);
  return out;
}

std::vector<Eigen::VectorXd> frame_stream(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                          int frame_length, int lookahead) {
  const Eigen::Index n = frame_length;
  if (signal.size() < 2 * n) {
    std::ostringstream msg;
    msg << "signal of " << signal.size() << " samples is shorter than 2N = " << 2 * n;
    throw InputSizeError(msg.str());
  }
  const Eigen::Index count = (signal.size() + n - 1) / n;
  std::vector<Eigen::VectorXd> frames;
  frames.reserve(count);
  for (Eigen::Index w = 0; w < count; ++w) {
    Eigen::VectorXd frame = Eigen::VectorXd::Zero(2 * n);
    const Eigen::Index start = w * n - n + lookahead;
    const Eigen::Index lo = std::max<Eigen::Index>(0, start);
    const Eigen::Index hi = std::min<Eigen::Index>(signal.size(), start + 2 * n);
    if (hi > lo) frame.segment(lo - start, hi - lo) = signal.segment(lo, hi - lo);
    frames.push_back(std::move(frame));
  }
  return frames;
}

namespace {

Eigen::VectorXd pad_for_analysis(const Eigen::Ref<const Eigen::VectorXd>& signal, int n) {
  if (signal.size() < 2 * static_cast<Eigen::Index>(n)) {
    std::ostringstream msg;
    msg << "signal of " << signal.size() << " samples is shorter than 2N = " << 2 * n;
    throw InputSizeError(msg.str());
  }
  Eigen::VectorXd padded = Eigen::VectorXd::Zero(signal.size() + 2 * n);
  padded.segment(n, signal.size()) = signal;
  return padded;
}

}  // namespace

Eigen::Index analyzed_frame_count(Eigen::Index length, int frame_length) {
  return (length + 2 * frame_length + frame_length - 1) / frame_length;
}

std::vector<FrameSpectrum> analyze_signal(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                          const WindowPair& window) {
  const auto frames = frame_stream(pad_for_analysis(signal, window.N()), window.N(), window.lookahead);
  std::vector<FrameSpectrum> out;
  out.reserve(frames.size());
  for (std::size_t w = 0; w < frames.size(); ++w) {
    out.push_back(mdct_forward(frames[w], window, static_cast<std::int64_t>(w)));
  }
  return out;
}

std::vector<MCLTSpectrum> analyze_signal_mclt(const Eigen::Ref<const Eigen::VectorXd>& signal,
                                              const WindowPair& window) {
  const auto frames = frame_stream(pad_for_analysis(signal, window.N()), window.N(), window.lookahead);
  std::vector<MCLTSpectrum> out;
  out.reserve(frames.size());
  for (std::size_t w = 0; w < frames.size(); ++w) {
    out.push_back(mclt_forward(frames[w], window, static_cast<std::int64_t>(w)));
  }
  return out;
}

Eigen::VectorXd synthesize_signal(const std::vector<FrameSpectrum>& frames, const WindowPair& window,
                                  Eigen::Index length) {
  const int n = window.N();
  const Eigen::Index offset = signal_output_offset(window);
  Eigen::VectorXd stream(static_cast<Eigen::Index>(frames.size()) * n);
  SynthesisState state(n);
  for (std::size_t w = 0; w < frames.size(); ++w) {
    stream.segment(static_cast<Eigen::Index>(w) * n, n) = mdct_inverse_stream(frames[w], window, state);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(length);
  const Eigen::Index avail = std::max<Eigen::Index>(0, std::min(length, stream.size() - offset));
  if (avail > 0) out.head(avail) = stream.segment(offset, avail);
  return out;
}

}  // namespace mdctpf
