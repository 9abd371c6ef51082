#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mdctpf/ced_model.hpp"
#include "mdctpf/features.hpp"
#include "mdctpf/lapped_transform.hpp"

namespace mdctpf {

// Trained network plus the normalization it was trained with.
struct Checkpoint {
  CedWeights<float> weights;
  NormStats stats;
  double log_epsilon = kDefaultLogEpsilon;
};

// Little-endian binary container:
//   "MDPFCED\0", u32 format version, u32 feature version, f64 mean, f64 std,
//   f64 log epsilon, u32 per-bin count B (0 for global statistics),
//   B x f64 bin means, B x f64 bin stds, architecture (4 x i32 channels, i32 context, i32 bins,
//   i32 kt, i32 kf, i32 st, i32 sf, f64 output scale, f64 elu alpha,
//   f64 bn epsilon), u32 tensor count, then per tensor: u32 name length,
//   name bytes, u32 rank, rank x u32 dims, float32 data in row-major order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Refuses files whose format or feature version differs from this build.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// JSON mirror of the same content, written next to the binary file.
std::string checkpoint_json(const Checkpoint& ckpt);

// Coded-frame dump: i32 N, i32 frame count, row-major float32 coefficients.
void save_frame_dump(const std::filesystem::path& path, const std::vector<FrameSpectrum>& frames);
std::vector<FrameSpectrum> load_frame_dump(const std::filesystem::path& path);

}  // namespace mdctpf
