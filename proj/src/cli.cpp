#include "mdctpf/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdctpf/audio_io.hpp"
#include "mdctpf/config.hpp"
#include "mdctpf/corpus.hpp"
#include "mdctpf/errors.hpp"
#include "mdctpf/formats.hpp"
#include "mdctpf/mask_postfilter.hpp"
#include "mdctpf/pipeline.hpp"
#include "mdctpf/trainer.hpp"

namespace mdctpf {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> bits_per_frame;
  std::optional<double> alpha;
  std::string weights;
  std::string out;
  bool resample = false;
  bool print_config = false;
};

RunConfig resolve(const GlobalOptions& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.bits_per_frame) cfg.codec.target_bits_per_frame = *g.bits_per_frame;
  if (g.alpha) cfg.mask.alpha = *g.alpha;
  if (!g.weights.empty()) cfg.paths.weights = g.weights;
  cfg.train.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

WindowPair window_for(const RunConfig& cfg) {
  return cfg.paths.window.empty() ? sine_window() : load_window_file(cfg.paths.window);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

// Writes to `path`, or to `out` when the path is empty.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

std::string require(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError(what + " is required");
  return value;
}

Checkpoint load_weights(const RunConfig& cfg) {
  const std::string path = require(cfg.paths.weights, "--weights");
  if (!fs::exists(path)) throw ConfigError("weights not found: " + path);
  return load_checkpoint(path);
}

std::vector<fs::path> corpus_files(const std::string& path) {
  const auto files = list_wav_files(require(path, "corpus path"));
  if (files.empty()) throw ConfigError("no .wav files in " + path);
  return files;
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"alpha", format_double(r.alpha)}, {"file", r.file}, {"lsd_db", r.lsd_db},
                 {"segsnr_db", r.segsnr_db}});
  }
  return j.dump(2) + "\n";
}

bool wants_json(const std::string& path) { return fs::path(path).extension() == ".json"; }

// --out wins; otherwise `name` inside paths.reports; otherwise stdout ("").
std::string report_path(const RunConfig& cfg, const GlobalOptions& g, const std::string& name) {
  if (!g.out.empty()) return g.out;
  if (cfg.paths.reports.empty()) return "";
  fs::create_directories(cfg.paths.reports);
  return (fs::path(cfg.paths.reports) / name).string();
}

int cmd_code(const RunConfig& cfg, const GlobalOptions& g, const std::string& input, std::ostream& out) {
  const std::string dst = require(g.out, "--out");
  const WindowPair window = window_for(cfg);
  const AudioBuffer audio = wav_read(input, {g.resample, false});
  const CodedSignal coded = encode_decode_signal(audio.samples, window, cfg.codec);
  wav_write(dst, {coded.signal, kSampleRateHz});
  save_frame_dump(dst + ".frames", coded.frames);
  out << "frames " << coded.frames.size() << "\n";
  return kExitOk;
}

int cmd_oracle_sweep(const RunConfig& cfg, const GlobalOptions& g, const std::string& corpus,
                     std::ostream& out) {
  const WindowPair window = window_for(cfg);
  const std::vector<double> alphas = g.alpha ? std::vector<double>{*g.alpha} : default_alpha_grid();
  std::vector<SweepRow> rows;
  for (const auto& f : corpus_files(corpus)) {
    const AudioBuffer audio = wav_read(f, {g.resample, false});
    const auto part = oracle_sweep(audio.samples, f.stem().string(), cfg.codec, alphas, window, cfg.mask.gamma);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string dst = report_path(cfg, g, "oracle_sweep.csv");
  emit(dst, wants_json(dst) ? sweep_json(rows) : sweep_csv(rows), out);
  return kExitOk;
}

int cmd_stats(const RunConfig& cfg, const GlobalOptions& g, const std::string& corpus, std::ostream& out) {
  const WindowPair window = window_for(cfg);
  NormStatsAccumulator acc;
  for (const auto& f : corpus_files(corpus)) {
    const AudioBuffer audio = wav_read(f, {g.resample, false});
    acc.add_frames(encode_decode_signal(audio.samples, window, cfg.codec).frames, cfg.train.log_epsilon);
  }
  const NormStats stats = acc.finish(cfg.train.per_bin_norm);
  nlohmann::ordered_json j = {{"mean", stats.mean},
                              {"std", stats.std},
                              {"version", stats.version},
                              {"values", acc.count()},
                              {"log_epsilon", cfg.train.log_epsilon}};
  if (stats.per_bin()) {
    j["bin_mean"] = std::vector<double>(stats.bin_mean.begin(), stats.bin_mean.end());
    j["bin_std"] = std::vector<double>(stats.bin_std.begin(), stats.bin_std.end());
  }
  emit(report_path(cfg, g, "norm_stats.json"), j.dump(2) + "\n", out);
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const GlobalOptions& g, const std::string& corpus, std::ostream& out) {
  const std::string dst = g.out.empty() ? require(cfg.paths.weights, "--out") : g.out;
  const WindowPair window = window_for(cfg);
  const CorpusSplit split = split_corpus(corpus_files(corpus));
  if (split.train.empty() || split.validation.empty()) throw ConfigError("train: corpus too small to split");
  const double eps = cfg.train.log_epsilon;
  const WavReadOptions read{g.resample, false};

  Dataset train_set = load_dataset(split.train, window, cfg.codec, eps, read);
  Dataset val_set = load_dataset(split.validation, window, cfg.codec, eps, read);
  train_set.stats = compute_norm_stats(train_set.utterances, cfg.train.per_bin_norm);
  val_set.stats = train_set.stats;
  out << "train frames " << train_set.size() << ", validation frames " << val_set.size() << "\n";

  const TrainResult result = train(train_set, val_set, cfg.train, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " train " << format_double(e.train_loss) << " val "
        << format_double(e.val_loss) << "\n";
  });

  const Checkpoint ckpt{result.weights, train_set.stats, eps};
  save_checkpoint(dst, ckpt);
  write_text(dst + ".json", checkpoint_json(ckpt));
  write_text(dst + ".log.csv", training_log_csv(result.log));

  nlohmann::ordered_json summary = {
      {"best_epoch", result.best_epoch},
      {"epochs_run", result.log.size()},
      {"val_loss", evaluate_loss(result.weights, val_set)},
      {"val_identity_loss", identity_mask_loss(val_set)},
  };
  if (!split.test.empty()) {
    Dataset test_set = load_dataset(split.test, window, cfg.codec, eps, read);
    test_set.stats = train_set.stats;
    summary["test_loss"] = evaluate_loss(result.weights, test_set);
    summary["test_identity_loss"] = identity_mask_loss(test_set);
  }
  write_text(dst + ".summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kExitOk;
}

int cmd_enhance(const RunConfig& cfg, const GlobalOptions& g, const std::string& input, std::ostream& out) {
  const std::string dst = require(g.out, "--out");
  const Checkpoint ckpt = load_weights(cfg);
  const WindowPair window = window_for(cfg);
  const AudioBuffer coded = wav_read(input, {g.resample, false});
  const Eigen::VectorXd enhanced = enhance_signal(coded.samples, ckpt, window);
  wav_write(dst, {enhanced, kSampleRateHz});
  out << "samples " << enhanced.size() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const GlobalOptions& g, const std::vector<std::string>& inputs,
                 bool all_files, std::ostream& out) {
  const WindowPair window = window_for(cfg);
  const WavReadOptions read{g.resample, false};
  std::vector<TripletScore> scores;
  CedWeights<float> weights = zero_weights<float>();

  if (inputs.size() == 3) {
    // Precomputed clean, coded, enhanced files.
    if (!cfg.paths.weights.empty()) weights = load_weights(cfg).weights;
    const auto clean = wav_read(inputs[0], read);
    const auto coded = wav_read(inputs[1], read);
    const auto enhanced = wav_read(inputs[2], read);
    scores.push_back(score_triplet(clean.samples, coded.samples, enhanced.samples,
                                   fs::path(inputs[0]).stem().string(), window));
  } else if (inputs.size() <= 1) {
    // Clean corpus: code and enhance each held-out file here.
    const Checkpoint ckpt = load_weights(cfg);
    weights = ckpt.weights;
    const auto files = corpus_files(inputs.empty() ? cfg.paths.corpus : inputs[0]);
    const auto selected = all_files || files.size() < 3 ? files : split_corpus(files).test;
    for (const auto& f : selected) {
      const auto clean = wav_read(f, read);
      const auto coded = encode_decode_signal(clean.samples, window, cfg.codec).signal;
      const auto enhanced = enhance_signal(coded, ckpt, window);
      scores.push_back(score_triplet(clean.samples, coded, enhanced, f.stem().string(), window));
    }
  } else {
    throw ConfigError("evaluate takes a corpus or a clean/coded/enhanced triplet");
  }

  const EvaluationReport report = summarize(std::move(scores), weights);
  const std::string dst = report_path(cfg, g, "evaluation.json");
  if (dst.empty()) {
    out << evaluation_json(report);
  } else {
    write_text(dst, evaluation_json(report));
    write_text(fs::path(dst).replace_extension(".csv"), evaluation_csv(report));
  }
  return kExitOk;
}

int cmd_make_corpus(const RunConfig& cfg, const std::string& dir, int count, double seconds, std::ostream& out) {
  if (count < 1 || !(seconds > 0.0)) throw ConfigError("make-corpus: count and seconds must be positive");
  const auto files = write_synthetic_corpus(require(dir, "corpus directory"), count, seconds, cfg.seed);
  out << "wrote " << files.size() << " files\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MDCT-domain mask post-filter for a low-delay transform codec", "mdctpf"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  GlobalOptions g;
  std::uint64_t seed = 0;
  int bits = 0;
  double alpha = 0.0;
  app.add_option("--config", g.config, "Configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  auto* bits_opt = app.add_option("--bits-per-frame", bits, "Codec bit budget per 10 ms frame");
  auto* alpha_opt = app.add_option("--alpha", alpha, "Mask upper bound (inf for none)");
  app.add_option("--weights", g.weights, "Checkpoint file");
  app.add_option("--out", g.out, "Output path");
  app.add_flag("--resample", g.resample, "Accept 48 kHz input and resample to 16 kHz");
  app.add_flag("--print-config", g.print_config, "Print the resolved configuration and exit");

  std::string input;
  auto* code = app.add_subcommand("code", "Run the surrogate codec; writes coded wav and frame dump");
  code->add_option("input", input, "Clean wav")->required();

  std::string corpus;
  auto* sweep = app.add_subcommand("oracle-sweep", "Oracle mask LSD/segSNR over an alpha grid");
  sweep->add_option("corpus", corpus, "Wav file or directory");

  auto* stats = app.add_subcommand("stats", "Feature normalization statistics of a corpus");
  stats->add_option("corpus", corpus, "Wav file or directory");

  auto* trn = app.add_subcommand("train", "Train the network on a clean corpus");
  trn->add_option("corpus", corpus, "Directory of clean wav files");

  auto* enh = app.add_subcommand("enhance", "Post-filter a coded wav");
  enh->add_option("input", input, "Coded wav")->required();

  std::vector<std::string> eval_inputs;
  bool all_files = false;
  auto* eval = app.add_subcommand("evaluate", "Score clean/coded/enhanced material");
  eval->add_option("inputs", eval_inputs, "Corpus directory, or clean coded enhanced wav files");
  eval->add_flag("--all", all_files, "Score every corpus file instead of the test split");

  std::string corpus_dir;
  int count = 20;
  double seconds = 4.0;
  auto* mk = app.add_subcommand("make-corpus", "Write a synthetic speech-like corpus");
  mk->add_option("dir", corpus_dir, "Output directory")->required();
  mk->add_option("--count", count, "Number of files");
  mk->add_option("--seconds", seconds, "Seconds per file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code_ = app.exit(e, out, err);
    return code_ == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) g.seed = seed;
  if (*bits_opt) g.bits_per_frame = bits;
  if (*alpha_opt) g.alpha = alpha;

  try {
    const RunConfig cfg = resolve(g);
    if (corpus.empty()) corpus = cfg.paths.corpus;
    if (g.print_config) {
      out << print_config(cfg);
      return kExitOk;
    }
    if (*code) return cmd_code(cfg, g, input, out);
    if (*sweep) return cmd_oracle_sweep(cfg, g, corpus, out);
    if (*stats) return cmd_stats(cfg, g, corpus, out);
    if (*trn) return cmd_train(cfg, g, corpus, out);
    if (*enh) return cmd_enhance(cfg, g, input, out);
    if (*eval) return cmd_evaluate(cfg, g, eval_inputs, all_files, out);
    if (*mk) return cmd_make_corpus(cfg, corpus_dir, count, seconds, out);
    out << app.help();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const InputSizeError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace mdctpf
