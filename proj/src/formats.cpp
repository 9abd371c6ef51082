#include "mdctpf/formats.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "mdctpf/errors.hpp"

namespace mdctpf {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'D', 'P', 'F', 'C', 'E', 'D', '\0'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    if (n > buf_.size() - pos_) throw IoError("truncated file: " + path_);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  validate(ckpt.weights);
  validate(ckpt.stats);
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(ckpt.weights.format_version);
  w.put<std::uint32_t>(ckpt.stats.version);
  w.put<double>(ckpt.stats.mean);
  w.put<double>(ckpt.stats.std);
  w.put<double>(ckpt.log_epsilon);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.stats.bin_mean.size()));
  for (Eigen::Index k = 0; k < ckpt.stats.bin_mean.size(); ++k) w.put<double>(ckpt.stats.bin_mean[k]);
  for (Eigen::Index k = 0; k < ckpt.stats.bin_std.size(); ++k) w.put<double>(ckpt.stats.bin_std[k]);
  const CedArchitecture& a = ckpt.weights.arch;
  for (int c : a.encoder_channels) w.put<std::int32_t>(c);
  for (int v : {a.context_frames, a.bins, a.kernel_time, a.kernel_freq, a.stride_time, a.stride_freq}) {
    w.put<std::int32_t>(v);
  }
  w.put<double>(a.output_scale);
  w.put<double>(a.elu_alpha);
  w.put<double>(a.bn_epsilon);

  CedWeights<float> copy = ckpt.weights;
  const auto views = tensors(copy);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(views.size()));
  for (const auto& t : views) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.bytes(t.data, static_cast<std::size_t>(t.size) * sizeof(float));
  }
  w.flush(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint: " + r.path());
  const auto format = r.get<std::uint32_t>();
  if (format != kWeightsFormatVersion) {
    throw ConfigError("checkpoint format version " + std::to_string(format) + " unsupported (expected " +
                      std::to_string(kWeightsFormatVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.stats.version = r.get<std::uint32_t>();
  ckpt.stats.mean = r.get<double>();
  ckpt.stats.std = r.get<double>();
  ckpt.log_epsilon = r.get<double>();
  const auto per_bin = r.get<std::uint32_t>();
  if (per_bin > 1u << 16) throw IoError("implausible per-bin statistics count in " + r.path());
  ckpt.stats.bin_mean.resize(per_bin);
  ckpt.stats.bin_std.resize(per_bin);
  for (Eigen::Index k = 0; k < ckpt.stats.bin_mean.size(); ++k) ckpt.stats.bin_mean[k] = r.get<double>();
  for (Eigen::Index k = 0; k < ckpt.stats.bin_std.size(); ++k) ckpt.stats.bin_std[k] = r.get<double>();
  validate(ckpt.stats);

  CedArchitecture a;
  for (int& c : a.encoder_channels) c = r.get<std::int32_t>();
  for (int* v : {&a.context_frames, &a.bins, &a.kernel_time, &a.kernel_freq, &a.stride_time, &a.stride_freq}) {
    *v = r.get<std::int32_t>();
  }
  a.output_scale = r.get<double>();
  a.elu_alpha = r.get<double>();
  a.bn_epsilon = r.get<double>();
  // Builds correctly shaped tensors (and rejects inconsistent geometry).
  infer_shapes(ced_layers(a), {1, a.context_frames, a.bins});
  ckpt.weights = zero_weights<float>(a);

  auto views = tensors(ckpt.weights);
  const auto count = r.get<std::uint32_t>();
  if (count != views.size()) {
    throw ShapeError("checkpoint", "expected " + std::to_string(views.size()) + " tensors, found " +
                                       std::to_string(count));
  }
  for (auto& t : views) {
    std::string name(r.get<std::uint32_t>(), '\0');
    r.bytes(name.data(), name.size());
    if (name != t.name) throw ShapeError(t.name, "checkpoint holds '" + name + "' in its place");
    std::vector<int> dims(r.get<std::uint32_t>());
    for (int& d : dims) d = static_cast<int>(r.get<std::uint32_t>());
    if (dims != t.dims) throw ShapeError(t.name, "dimension mismatch in checkpoint");
    r.bytes(t.data, static_cast<std::size_t>(t.size) * sizeof(float));
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint: " + r.path());
  validate(ckpt.weights);
  return ckpt;
}

std::string checkpoint_json(const Checkpoint& ckpt) {
  using nlohmann::json;
  const CedArchitecture& a = ckpt.weights.arch;
  json j;
  j["format_version"] = ckpt.weights.format_version;
  j["norm_stats"] = {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.std}, {"version", ckpt.stats.version}};
  if (ckpt.stats.per_bin()) {
    j["norm_stats"]["bin_mean"] = std::vector<double>(ckpt.stats.bin_mean.begin(), ckpt.stats.bin_mean.end());
    j["norm_stats"]["bin_std"] = std::vector<double>(ckpt.stats.bin_std.begin(), ckpt.stats.bin_std.end());
  }
  j["log_epsilon"] = ckpt.log_epsilon;
  j["architecture"] = {{"encoder_channels", a.encoder_channels},
                       {"context_frames", a.context_frames},
                       {"bins", a.bins},
                       {"kernel", {a.kernel_time, a.kernel_freq}},
                       {"stride", {a.stride_time, a.stride_freq}},
                       {"output_scale", a.output_scale},
                       {"elu_alpha", a.elu_alpha},
                       {"bn_epsilon", a.bn_epsilon}};
  CedWeights<float> copy = ckpt.weights;
  json list = json::array();
  for (const auto& t : tensors(copy)) {
    list.push_back({{"name", t.name},
                    {"dims", t.dims},
                    {"data", std::vector<float>(t.data, t.data + t.size)}});
  }
  j["tensors"] = std::move(list);
  return j.dump(1);
}

void save_frame_dump(const std::filesystem::path& path, const std::vector<FrameSpectrum>& frames) {
  const int n = frames.empty() ? 0 : static_cast<int>(frames.front().coeffs.size());
  Writer w;
  w.put<std::int32_t>(n);
  w.put<std::int32_t>(static_cast<std::int32_t>(frames.size()));
  for (const auto& f : frames) {
    if (f.coeffs.size() != n) throw InputSizeError("frame dump: frames differ in length");
    const Eigen::VectorXf row = f.coeffs.cast<float>();
    w.bytes(row.data(), static_cast<std::size_t>(n) * sizeof(float));
  }
  w.flush(path);
}

std::vector<FrameSpectrum> load_frame_dump(const std::filesystem::path& path) {
  Reader r(path);
  const auto n = r.get<std::int32_t>();
  const auto count = r.get<std::int32_t>();
  if (n < 0 || count < 0) throw IoError("corrupt frame dump: " + r.path());
  std::vector<FrameSpectrum> frames(static_cast<std::size_t>(count));
  Eigen::VectorXf row(n);
  for (std::int32_t w = 0; w < count; ++w) {
    r.bytes(row.data(), static_cast<std::size_t>(n) * sizeof(float));
    frames[static_cast<std::size_t>(w)] = {row.cast<double>(), w};
  }
  if (!r.done()) throw IoError("trailing bytes in frame dump: " + r.path());
  return frames;
}

}  // namespace mdctpf
