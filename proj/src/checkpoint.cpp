#include "ddt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'T', '1'};

class Writer {
public:
  template <typename T> void put(T value) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(std::begin(raw), std::end(raw));
    bytes_.insert(bytes_.end(), std::begin(raw), std::end(raw));
  }
  void put_doubles(const std::vector<double> &values) {
    for (const double v : values)
      put(v);
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t> &bytes) : bytes_(bytes) {}

  template <typename T> T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
      std::reverse(std::begin(raw), std::end(raw));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::vector<double> get_doubles(std::uint64_t count) {
    if (count > (bytes_.size() - pos_) / sizeof(double))
      throw FormatError("checkpoint truncated in parameter block");
    std::vector<double> values(count);
    for (auto &v : values)
      v = get<double>();
    return values;
  }
  std::string get_string(std::size_t length) {
    need(length);
    std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), length);
    pos_ += length;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::vector<std::uint8_t> &bytes_;
  std::size_t pos_ = 0;
};

} // namespace

std::string to_string(TrainingMode mode) { return mode == TrainingMode::ddt ? "ddt" : "ce"; }

TrainingMode parse_mode(std::string_view text) {
  if (text == "ddt")
    return TrainingMode::ddt;
  if (text == "ce" || text == "ce-baseline")
    return TrainingMode::ce;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected ddt or ce)");
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint &ckpt) {
  const auto &p = ckpt.params;
  Writer w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put(kCheckpointVersion);
  const std::string arch = p.arch.canonical();
  w.put(static_cast<std::uint32_t>(arch.size()));
  w.put_bytes(arch);
  w.put(static_cast<std::uint32_t>(p.num_classes));
  w.put(static_cast<std::uint32_t>(p.embedding_dim));
  w.put(static_cast<std::uint8_t>(p.has_head ? 1 : 0));
  w.put(static_cast<std::uint8_t>(ckpt.mode));
  w.put(static_cast<std::uint64_t>(p.weights.size()));
  w.put_doubles(p.weights);
  w.put(p.opt.step);
  w.put_doubles(p.opt.m);
  w.put_doubles(p.opt.v);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t> &bytes) {
  Reader r(bytes);
  if (r.get_string(4) != std::string_view(kMagic, 4))
    throw FormatError("bad checkpoint magic (expected DDT1)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  auto &p = ckpt.params;
  const auto arch_len = r.get<std::uint32_t>();
  try {
    p.arch = Architecture::parse(r.get_string(arch_len));
  } catch (const ConfigError &e) {
    throw FormatError(std::string("checkpoint architecture: ") + e.what());
  }
  p.num_classes = static_cast<int>(r.get<std::uint32_t>());
  p.embedding_dim = static_cast<int>(r.get<std::uint32_t>());
  const auto head = r.get<std::uint8_t>();
  const auto mode = r.get<std::uint8_t>();
  if (head > 1 || mode > 1)
    throw FormatError("bad head/mode flag in checkpoint");
  p.has_head = head == 1;
  ckpt.mode = static_cast<TrainingMode>(mode);

  const auto count = r.get<std::uint64_t>();
  if (count != parameter_count(p.arch, p.num_classes, p.has_head))
    throw FormatError("checkpoint parameter count " + std::to_string(count) +
                      " does not match its architecture");
  p.weights = r.get_doubles(count);
  p.opt.step = r.get<std::uint64_t>();
  p.opt.m = r.get_doubles(count);
  p.opt.v = r.get_doubles(count);
  if (!r.at_end())
    throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failed for " + path.string());
}

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

} // namespace ddt
