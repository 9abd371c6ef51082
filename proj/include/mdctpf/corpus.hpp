#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mdctpf {

// Speech-like test material: glottal pulse train through moving formant
// resonators, fricative and plosive noise bursts, pauses. Peak-normalized to
// 0.9 at 16 kHz. Fully determined by `seed`.
Eigen::VectorXd synth_speech(std::uint64_t seed, double seconds);

// Writes `count` files named utt_0000.wav ... into `dir`, `seconds` each.
std::vector<std::filesystem::path> write_synthetic_corpus(const std::filesystem::path& dir,
                                                          int count, double seconds,
                                                          std::uint64_t seed);

// Sorted *.wav paths under `dir` (non-recursive). A single file path is
// returned as a one-element list.
std::vector<std::filesystem::path> list_wav_files(const std::filesystem::path& path);

// Train/validation/test split in the ratio 3612 : 198 : 150, assigned by
// position in the sorted list. Validation and test each get at least one
// file when there are three or more.
struct CorpusSplit {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> validation;
  std::vector<std::filesystem::path> test;
};
CorpusSplit split_corpus(const std::vector<std::filesystem::path>& files);

}  // namespace mdctpf
