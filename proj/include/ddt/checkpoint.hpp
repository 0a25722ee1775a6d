#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ddt/encoder.hpp"

namespace ddt {

enum class TrainingMode : std::uint8_t { ddt = 0, ce = 1 };

std::string to_string(TrainingMode mode);
/// Accepts "ddt", "ce" and "ce-baseline". Throws ConfigError otherwise.
TrainingMode parse_mode(std::string_view text);

struct Checkpoint {
  EncoderParams params;
  TrainingMode mode = TrainingMode::ddt;

  bool operator==(const Checkpoint &) const = default;
};

/**
 * Binary checkpoint layout, all integers and floats little-endian:
 *
 *   "DDT1"                      4 bytes magic
 *   version                     u32 (kCheckpointVersion)
 *   arch text length, bytes     u32 + UTF-8 canonical architecture
 *   C, K                        u32, u32
 *   head present                u8 (0/1)
 *   mode                        u8 (0 = ddt, 1 = ce)
 *   parameter count             u64
 *   weights                     count x f64
 *   adam step                   u64
 *   first moments               count x f64
 *   second moments              count x f64
 */
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint &ckpt);
/// Throws FormatError on bad magic, version, truncation or inconsistent sizes.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t> &bytes);

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path);
void write_file_bytes(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes);

} // namespace ddt
