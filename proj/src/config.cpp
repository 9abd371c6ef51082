#include "mdctpf/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mdctpf/errors.hpp"
#include "mdctpf/metrics.hpp"

namespace mdctpf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("not a number: '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  return parse_number<double>(v);
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("expected true or false: '" + v + "'");
}

std::string parse_string(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"codec.target_bits_per_frame",
       [](RunConfig& c, const std::string& v) { c.codec.target_bits_per_frame = parse_number<int>(v); }},
      {"codec.envelope_bands",
       [](RunConfig& c, const std::string& v) { c.codec.envelope_bands = parse_number<int>(v); }},
      {"codec.noise_shape_exponent",
       [](RunConfig& c, const std::string& v) { c.codec.noise_shape_exponent = parse_real(v); }},
      {"codec.global_gain_iterations",
       [](RunConfig& c, const std::string& v) { c.codec.global_gain_iterations = parse_number<int>(v); }},
      {"codec.rounding_offset",
       [](RunConfig& c, const std::string& v) { c.codec.rounding_offset = parse_real(v); }},
      {"mask.gamma", [](RunConfig& c, const std::string& v) { c.mask.gamma = parse_real(v); }},
      {"mask.alpha", [](RunConfig& c, const std::string& v) { c.mask.alpha = parse_real(v); }},
      {"train.learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_real(v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_number<int>(v); }},
      {"train.adam_beta1", [](RunConfig& c, const std::string& v) { c.train.adam_beta1 = parse_real(v); }},
      {"train.adam_beta2", [](RunConfig& c, const std::string& v) { c.train.adam_beta2 = parse_real(v); }},
      {"train.adam_epsilon", [](RunConfig& c, const std::string& v) { c.train.adam_epsilon = parse_real(v); }},
      {"train.early_stop_patience",
       [](RunConfig& c, const std::string& v) { c.train.early_stop_patience = parse_number<int>(v); }},
      {"train.max_epochs", [](RunConfig& c, const std::string& v) { c.train.max_epochs = parse_number<int>(v); }},
      {"train.log_epsilon", [](RunConfig& c, const std::string& v) { c.train.log_epsilon = parse_real(v); }},
      {"train.bn_momentum", [](RunConfig& c, const std::string& v) { c.train.bn_momentum = parse_real(v); }},
      {"train.batches_per_epoch",
       [](RunConfig& c, const std::string& v) { c.train.batches_per_epoch = parse_number<int>(v); }},
      {"train.per_bin_norm", [](RunConfig& c, const std::string& v) { c.train.per_bin_norm = parse_bool(v); }},
      {"paths.corpus", [](RunConfig& c, const std::string& v) { c.paths.corpus = parse_string(v); }},
      {"paths.weights", [](RunConfig& c, const std::string& v) { c.paths.weights = parse_string(v); }},
      {"paths.reports", [](RunConfig& c, const std::string& v) { c.paths.reports = parse_string(v); }},
      {"paths.window", [](RunConfig& c, const std::string& v) { c.paths.window = parse_string(v); }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "codec" && section != "mask" && section != "train" && section != "paths") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = setters().find(full);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + full + "'");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string print_config(const RunConfig& c) {
  auto real = [](double v) { return std::isinf(v) ? std::string(v > 0 ? "inf" : "-inf") : format_double(v); };
  std::ostringstream o;
  o << "seed = " << c.seed << "\n\n";
  o << "[codec]\n"
    << "target_bits_per_frame = " << c.codec.target_bits_per_frame << "\n"
    << "envelope_bands = " << c.codec.envelope_bands << "\n"
    << "noise_shape_exponent = " << real(c.codec.noise_shape_exponent) << "\n"
    << "global_gain_iterations = " << c.codec.global_gain_iterations << "\n"
    << "rounding_offset = " << real(c.codec.rounding_offset) << "\n\n";
  o << "[mask]\n"
    << "gamma = " << real(c.mask.gamma) << "\n"
    << "alpha = " << real(c.mask.alpha) << "\n\n";
  o << "[train]\n"
    << "learning_rate = " << real(c.train.learning_rate) << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "adam_beta1 = " << real(c.train.adam_beta1) << "\n"
    << "adam_beta2 = " << real(c.train.adam_beta2) << "\n"
    << "adam_epsilon = " << real(c.train.adam_epsilon) << "\n"
    << "early_stop_patience = " << c.train.early_stop_patience << "\n"
    << "max_epochs = " << c.train.max_epochs << "\n"
    << "log_epsilon = " << real(c.train.log_epsilon) << "\n"
    << "bn_momentum = " << real(c.train.bn_momentum) << "\n"
    << "batches_per_epoch = " << c.train.batches_per_epoch << "\n"
    << "per_bin_norm = " << (c.train.per_bin_norm ? "true" : "false") << "\n\n";
  o << "[paths]\n"
    << "corpus = " << quote(c.paths.corpus) << "\n"
    << "weights = " << quote(c.paths.weights) << "\n"
    << "reports = " << quote(c.paths.reports) << "\n"
    << "window = " << quote(c.paths.window) << "\n";
  return o.str();
}

void validate(const RunConfig& cfg) {
  validate(cfg.codec);
  validate(cfg.mask);
  validate(cfg.train);
}

}  // namespace mdctpf
