#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "protoshot/encoders.hpp"

namespace protoshot {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Binary checkpoint layout (all integers little-endian):
///
///   8 bytes   magic "PSHOTCKP"
///   u32       format version
///   u64       header length in bytes
///   header    UTF-8 JSON: format_version, seed, encoder, config, tensors[]
///             where each tensor entry is {name, shape, trainable}
///   payload   tensor values in header order, float32 little-endian
struct Checkpoint {
  std::uint32_t format_version = kCheckpointFormatVersion;
  std::uint64_t seed = 0;
  Encoder encoder;
  /// Echo of the run configuration that produced the parameters.
  nlohmann::json config = nlohmann::json::object();
};

nlohmann::json encoder_config_to_json(const EncoderConfig& config);
/// Missing keys keep their defaults. Throws ConfigError on bad values.
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws DataError on an unreadable, truncated or inconsistent file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Name of the first encoder field that differs, or empty when equal.
std::string first_mismatched_field(const EncoderConfig& a, const EncoderConfig& b);

}  // namespace protoshot
