#pragma once

#include <cstdint>
#include <string>

#include "mdctpf/codec_surrogate.hpp"
#include "mdctpf/mask_postfilter.hpp"
#include "mdctpf/trainer.hpp"

namespace mdctpf {

struct PathConfig {
  std::string corpus;
  std::string weights;
  std::string reports;
  // Optional analysis/synthesis window file; empty selects the sine window.
  std::string window;
};

struct RunConfig {
  CodecConfig codec;
  MaskConfig mask;
  TrainConfig train;
  PathConfig paths;
  std::uint64_t seed = 1234;
};

// Sectioned `key = value` text:
//
//   seed = 7
//   [codec]
//   target_bits_per_frame = 160
//   [train]
//   learning_rate = 0.001
//
// `#` starts a comment; strings may be double quoted. Unknown sections or
// keys and unparsable values raise ConfigError with the line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Every field, in the format parse_config reads.
std::string print_config(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace mdctpf
