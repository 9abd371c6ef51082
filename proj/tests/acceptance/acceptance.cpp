// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [work_dir]
//
// Artifacts (corpus, checkpoints, reports) are written under work_dir,
// default ./acceptance_work. Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "mdctpf/audio_io.hpp"
#include "mdctpf/cli.hpp"
#include "mdctpf/corpus.hpp"
#include "mdctpf/errors.hpp"
#include "mdctpf/formats.hpp"
#include "mdctpf/mask_postfilter.hpp"
#include "mdctpf/pipeline.hpp"
#include "oracles/direct_transform.hpp"
#include "oracles/finite_difference.hpp"
#include "test_support.hpp"

using namespace mdctpf;
namespace fs = std::filesystem;

namespace {

// Desk-scale training corpus: 360 utterances of 5 s, 30 minutes in total.
constexpr int kCorpusFiles = 360;
constexpr double kCorpusSeconds = 5.0;
constexpr std::uint64_t kSeed = 2024;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

void cli_or_throw(const std::vector<std::string>& args, std::string* captured = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (captured) *captured = out.str();
  if (code != kExitOk) {
    std::string joined;
    for (const auto& a : args) joined += " " + a;
    throw Error("mdctpf" + joined + " exited with " + std::to_string(code) + ": " + err.str());
  }
}

double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Outcome transform_oracle() {
  const auto t0 = Clock::now();
  const WindowPair w = sine_window();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Eigen::VectorXd x = testing::random_vector(2 * w.N(), 1000 + i);
    worst = std::max(worst, rel_error(mdct_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis)));
    worst = std::max(worst, rel_error(mdst_forward(x, w).coeffs, oracle::direct_mdct(x, w.analysis, true)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-9 && secs < 5.0, "max rel error " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome perfect_reconstruction() {
  const WindowPair w = sine_window();
  const Eigen::Index len = 10 * kSampleRateHz;
  Eigen::VectorXd tone(len);
  for (Eigen::Index i = 0; i < len; ++i) tone[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 440.0 * i / kSampleRateHz);
  double worst = 0.0;
  for (const Eigen::VectorXd& x : {testing::random_vector(len, 77), tone}) {
    const auto frames = frame_stream(x, w.N(), w.lookahead);
    SynthesisState state;
    Eigen::VectorXd y(static_cast<Eigen::Index>(frames.size()) * w.N());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      y.segment(static_cast<Eigen::Index>(i) * w.N(), w.N()) =
          mdct_inverse_stream(mdct_forward(frames[i], w, static_cast<std::int64_t>(i)), w, state);
    }
    const int d = stream_delay(w);
    for (Eigen::Index i = 2 * w.N(); i < x.size() - 2 * w.N(); ++i) worst = std::max(worst, std::abs(y[i] - x[i - d]));
    worst = std::max(worst, (synthesize_signal(analyze_signal(x, w), w, len) - x).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-10, "max sample error " + fmt("%.2e", worst)};
}

Outcome oracle_dominance() {
  const auto t0 = Clock::now();
  const WindowPair w = sine_window();
  const std::vector<double> alphas = {0.5, 1.0, 2.0, kUnboundedAlpha};
  std::vector<double> mean(alphas.size() + 1, 0.0);
  int violations = 0;
  constexpr int kFiles = 20;
  for (int f = 0; f < kFiles; ++f) {
    const Eigen::VectorXd x = synth_speech(5000 + static_cast<std::uint64_t>(f) * 7919, 4.0);
    const auto rows = oracle_sweep(x, "f" + std::to_string(f), {}, alphas, w);
    for (std::size_t i = 0; i < rows.size(); ++i) mean[i] += rows[i].lsd_db / kFiles;
    if (!(rows[3].lsd_db < rows[0].lsd_db)) ++violations;
  }
  const double secs = seconds_since(t0);
  const bool monotone = mean[2] <= mean[1] && mean[3] <= mean[2];
  const bool saturates = std::abs(mean[3] - mean[4]) < 0.3;
  std::ostringstream d;
  d << "mean LSD coded " << fmt("%.3f", mean[0]) << ", a=0.5 " << fmt("%.3f", mean[1]) << ", a=1 "
    << fmt("%.3f", mean[2]) << ", a=2 " << fmt("%.3f", mean[3]) << ", a=inf " << fmt("%.3f", mean[4])
    << " dB; files not improved at a=2: " << violations << "; " << fmt("%.1f", secs) << " s";
  return {monotone && saturates && violations == 0 && secs < 120.0, d.str()};
}

Outcome network_shapes() {
  const std::vector<TensorShape> want = {{16, 5, 79}, {32, 4, 39}, {64, 3, 19}, {128, 2, 9}, {64, 3, 19},
                                         {32, 4, 39}, {16, 5, 79}, {1, 6, 159}, {1, 1, 160}, {1, 1, 160}};
  ShapeTrace trace;
  const auto w = init_weights<float>(1);
  ced_forward_batch<float>(w, RowMatrix<float>::Zero(1, 960), BatchNormMode::kInference, nullptr, &trace);
  bool ok = trace.stages.size() == want.size() + 1 && trace.stages[0].second == TensorShape{1, 6, 160};
  std::string chain;
  for (std::size_t i = 1; i < trace.stages.size(); ++i) {
    const auto& s = trace.stages[i].second;
    chain += (i > 1 ? " " : "") + (trace.stages[i].first == "flatten" ? std::to_string(s.freq) : s.str());
    if (i - 1 < want.size()) ok = ok && s == want[i - 1];
  }
  return {ok, chain};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const WindowPair w = sine_window();
  Dataset d;
  d.utterances.push_back(prepare_utterance("g", synth_speech(31, 0.5), w, {}, d.log_epsilon));
  d.stats = compute_norm_stats(d.utterances);
  const auto batch = gather_batch<double>(d, {20, 21});
  const auto report = oracle::gradient_check(init_weights<double>(17), batch, d.log_epsilon);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : report) {
    if (r.rel_error >= worst) worst = r.rel_error, worst_name = r.name;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && report.size() == 26 && secs < 120.0,
          std::to_string(report.size()) + " tensors, worst " + worst_name + " " + fmt("%.2e", worst) + ", " +
              fmt("%.1f", secs) + " s"};
}

struct TrainedModel {
  fs::path corpus;
  fs::path checkpoint;
  fs::path report;
  double seconds = 0.0;
};

TrainedModel train_desk_model(const fs::path& work) {
  const auto t0 = Clock::now();
  TrainedModel m;
  m.corpus = work / "corpus";
  m.checkpoint = work / "ced.bin";
  m.report = work / "evaluation.json";
  const std::string seed = std::to_string(kSeed);
  if (!fs::is_directory(m.corpus) || list_wav_files(m.corpus).size() != static_cast<std::size_t>(kCorpusFiles)) {
    fs::remove_all(m.corpus);
    cli_or_throw({"--seed", seed, "make-corpus", m.corpus.string(), "--count", std::to_string(kCorpusFiles),
                  "--seconds", fmt("%g", kCorpusSeconds)});
  }
  write_file(work / "train.toml",
             "[train]\n"
             "batches_per_epoch = 300\n"
             "max_epochs = 12\n"
             "early_stop_patience = 3\n");
  std::string log;
  cli_or_throw({"--config", (work / "train.toml").string(), "--seed", seed, "--out", m.checkpoint.string(), "train",
                m.corpus.string()},
               &log);
  std::cout << log;
  cli_or_throw({"--weights", m.checkpoint.string(), "--out", m.report.string(), "evaluate", m.corpus.string()});
  m.seconds = seconds_since(t0);
  return m;
}

Outcome training_efficacy(const TrainedModel& m) {
  const auto summary = nlohmann::json::parse(read_file(m.checkpoint.string() + ".summary.json"));
  const auto report = nlohmann::json::parse(read_file(m.report));
  const double loss = summary["test_loss"], identity = summary["test_identity_loss"];
  const double coded = report["mean"]["lsd_coded"], enhanced = report["mean"]["lsd_enhanced"];
  std::ostringstream d;
  d << "held-out loss " << fmt("%.4f", loss) << " vs all-ones " << fmt("%.4f", identity) << "; mean LSD enhanced "
    << fmt("%.3f", enhanced) << " vs coded " << fmt("%.3f", coded) << " dB over " << report["files"].size()
    << " held-out files; " << fmt("%.0f", m.seconds) << " s";
  return {loss < identity && enhanced < coded && m.seconds <= 7200.0, d.str()};
}

Outcome zero_added_delay(const TrainedModel& m, const fs::path& work) {
  const auto files = list_wav_files(m.corpus);
  const fs::path coded = work / "delay_coded.wav", enhanced = work / "delay_enhanced.wav";
  cli_or_throw({"code", files.back().string(), "--out", coded.string()});
  cli_or_throw({"--weights", m.checkpoint.string(), "enhance", coded.string(), "--out", enhanced.string()});
  const auto c = wav_read(coded), e = wav_read(enhanced);
  const bool same_length = c.samples.size() == e.samples.size();

  const Checkpoint ckpt = load_checkpoint(m.checkpoint);
  const WindowPair w = sine_window();

  // Frame level: replacing every frame from K on leaves the output blocks
  // before K bit-identical.
  const auto frames = analyze_signal(c.samples, w);
  bool frames_ok = true;
  for (std::size_t k : {std::size_t(3), std::size_t(50), frames.size() / 2, frames.size() - 1}) {
    auto altered = frames;
    for (std::size_t i = k; i < altered.size(); ++i) {
      altered[i].coeffs = testing::random_vector(w.N(), 900 + i, 0.1);
    }
    StreamingEnhancer a(ckpt, w), b(ckpt, w);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const bool same = (a.push(frames[i]).array() == b.push(altered[i]).array()).all();
      if (i < k && !same) frames_ok = false;
      if (i == k && same) frames_ok = false;
    }
  }

  // Sample level: a truncated waveform is re-analyzed, so only output before
  // the first analysis window that reaches past the cut is final.
  const Eigen::VectorXd full = enhance_signal(c.samples, ckpt, w);
  bool prefix_ok = true;
  for (Eigen::Index cut : {Eigen::Index(8000), Eigen::Index(20011), c.samples.size() - 1234}) {
    const Eigen::VectorXd part = enhance_signal(c.samples.head(cut), ckpt, w);
    const Eigen::Index settled = cut - 2 * w.N() + 1;
    prefix_ok = prefix_ok && part.size() == cut && (part.head(settled).array() == full.head(settled).array()).all();
  }
  const int lag = estimate_delay(c.samples, full, 320);
  std::ostringstream d;
  d << "coded " << c.samples.size() << " samples, enhanced " << e.samples.size() << "; frame causality "
    << (frames_ok ? "holds" : "broken") << "; prefix causality " << (prefix_ok ? "holds" : "broken")
    << "; cross-correlation lag " << lag;
  return {same_length && frames_ok && prefix_ok && lag == 0, d.str()};
}

Outcome complexity_anchor(const TrainedModel& m) {
  const auto report = nlohmann::json::parse(read_file(m.report));
  const double gflops = report["gflops_at_100_frames_per_s"];
  const double ratio = gflops / 1.3;
  return {ratio > 0.25 && ratio < 4.0, fmt("%.4f", gflops) + " GFLOPS recorded in " + m.report.filename().string() +
                                           " (" + fmt("%.2f", ratio) + "x of 1.3)"};
}

// Everything a short run writes, with the timing column of the training log
// removed.
std::map<std::string, std::string> run_pipeline_once(const fs::path& dir, const fs::path& corpus) {
  fs::create_directories(dir);
  write_file(dir / "cfg.toml", "[train]\nbatches_per_epoch = 6\nmax_epochs = 2\nbatch_size = 16\n");
  const std::vector<std::string> base = {"--config", (dir / "cfg.toml").string(), "--seed", "99"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = base;
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
  };
  const fs::path ckpt = dir / "ckpt.bin";
  cli_or_throw(with({"--out", ckpt.string(), "train", corpus.string()}));
  cli_or_throw(with({"--weights", ckpt.string(), "--out", (dir / "eval.json").string(), "evaluate", "--all",
                     corpus.string()}));
  cli_or_throw(with({"--out", (dir / "sweep.csv").string(), "oracle-sweep", corpus.string()}));
  cli_or_throw(with({"--out", (dir / "stats.json").string(), "stats", corpus.string()}));

  std::map<std::string, std::string> out;
  for (const char* name : {"ckpt.bin", "ckpt.bin.json", "ckpt.bin.summary.json", "eval.json", "eval.csv",
                           "sweep.csv", "stats.json"}) {
    out[name] = read_file(dir / name);
  }
  std::istringstream log(read_file(dir / "ckpt.bin.log.csv"));
  std::string line, stripped;
  while (std::getline(log, line)) stripped += line.substr(0, line.rfind(',')) + "\n";
  out["ckpt.bin.log.csv (without seconds)"] = stripped;
  return out;
}

Outcome determinism(const fs::path& work) {
  const fs::path corpus = work / "det_corpus";
  fs::remove_all(corpus);
  write_synthetic_corpus(corpus, 6, 1.5, 5);
  const auto a = run_pipeline_once(work / "det_a", corpus);
  const auto b = run_pipeline_once(work / "det_b", corpus);

  auto epoch1 = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    const auto c1 = row.find(','), c2 = row.find(',', c1 + 1);
    return std::stod(row.substr(c1 + 1, c2 - c1 - 1));
  };
  const double la = epoch1(a.at("ckpt.bin.log.csv (without seconds)"));
  const double lb = epoch1(b.at("ckpt.bin.log.csv (without seconds)"));

  std::vector<std::string> differing;
  for (const auto& [name, text] : a) {
    if (b.at(name) != text) differing.push_back(name);
  }
  std::ostringstream d;
  d << "epoch-1 loss " << fmt("%.9f", la) << " vs " << fmt("%.9f", lb) << "; " << a.size() << " reports compared, "
    << differing.size() << " differ";
  for (const auto& n : differing) d << " [" << n << "]";
  return {std::abs(la - lb) < 1e-6 && differing.empty(), d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = fs::absolute(argc > 1 ? argv[1] : "acceptance_work");
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
  };

  report(1, "transform oracle equivalence", transform_oracle);
  report(2, "perfect reconstruction", perfect_reconstruction);
  report(3, "oracle-mask dominance", oracle_dominance);
  report(4, "network shape conformance", network_shapes);
  report(5, "gradient correctness", gradient_correctness);

  std::optional<TrainedModel> model;
  std::string train_error;
  try {
    model = train_desk_model(work);
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  auto needs_model = [&](const std::function<Outcome(const TrainedModel&)>& f) {
    return [&, f]() -> Outcome {
      if (!model) return {false, "desk training failed: " + train_error};
      return f(*model);
    };
  };
  report(6, "toy training efficacy", needs_model(training_efficacy));
  report(7, "zero added delay", needs_model([&](const TrainedModel& m) { return zero_added_delay(m, work); }));
  report(8, "complexity anchor", needs_model(complexity_anchor));
  report(9, "determinism", [&] { return determinism(work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
