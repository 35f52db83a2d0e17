#include "protoshot/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "protoshot/errors.hpp"

namespace protoshot {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'S', 'H', 'O', 'T', 'C', 'K', 'P'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw DataError("checkpoint " + path.string() + ": truncated file");
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"archetype", to_string(c.archetype)},
          {"input_channels", c.input_channels},
          {"input_size", c.input_size},
          {"embed_dim", c.embed_dim},
          {"conv_blocks", c.conv_blocks},
          {"channels_per_block", c.channels_per_block},
          {"frozen_blocks", c.frozen_blocks},
          {"frozen_dim", c.frozen_dim}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("encoder: expected an object");
  EncoderConfig c;
  try {
    if (j.contains("archetype")) c.archetype = parse_archetype(j.at("archetype").get<std::string>());
    c.input_channels = j.value("input_channels", c.input_channels);
    c.input_size = j.value("input_size", c.input_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.conv_blocks = j.value("conv_blocks", c.conv_blocks);
    c.channels_per_block = j.value("channels_per_block", c.channels_per_block);
    c.frozen_blocks = j.value("frozen_blocks", c.frozen_blocks);
    c.frozen_dim = j.value("frozen_dim", c.frozen_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder: ") + e.what());
  }
  return c;
}

std::string first_mismatched_field(const EncoderConfig& a, const EncoderConfig& b) {
  const auto ja = encoder_config_to_json(a);
  const auto jb = encoder_config_to_json(b);
  for (const auto& [key, value] : ja.items()) {
    if (jb.at(key) != value) return key;
  }
  return {};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format_version"] = checkpoint.format_version;
  header["seed"] = checkpoint.seed;
  header["encoder"] = encoder_config_to_json(checkpoint.encoder.config);
  header["config"] = checkpoint.config;
  header["tensors"] = nlohmann::json::array();
  for (const auto& p : checkpoint.encoder.params.entries()) {
    header["tensors"].push_back(
        {{"name", p.name}, {"shape", p.tensor.shape()}, {"trainable", p.trainable}});
  }
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, checkpoint.format_version);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : checkpoint.encoder.params.entries()) {
      for (const float v : p.tensor.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    if (!out) throw DataError("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("checkpoint " + path.string() + ": not a checkpoint file");
  }
  Checkpoint ck;
  ck.format_version = get_le<std::uint32_t>(in, path);
  if (ck.format_version != kCheckpointFormatVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported format version " +
                    std::to_string(ck.format_version));
  }
  const auto header_len = get_le<std::uint64_t>(in, path);
  if (header_len > (1u << 26)) throw DataError("checkpoint " + path.string() + ": corrupt header");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw DataError("checkpoint " + path.string() + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.config = header.value("config", nlohmann::json::object());
    ck.encoder.config = encoder_config_from_json(header.at("encoder"));
    for (const auto& entry : header.at("tensors")) {
      const auto shape = entry.at("shape").get<Shape>();
      std::vector<float> values(shape_size(shape));
      for (float& v : values) v = std::bit_cast<float>(get_le<std::uint32_t>(in, path));
      ck.encoder.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)),
                            entry.at("trainable").get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  // The parameter layout must match what the stored config would create.
  const ParamSet reference = init_params(ck.encoder.config, 0);
  if (reference.size() != ck.encoder.params.size()) {
    throw DataError("checkpoint " + path.string() + ": tensor count does not match encoder config");
  }
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const auto& want = reference.entries()[i];
    const auto& got = ck.encoder.params.entries()[i];
    if (want.name != got.name || want.tensor.shape() != got.tensor.shape()) {
      throw DataError("checkpoint " + path.string() + ": tensor '" + got.name +
                      "' does not match encoder config");
    }
  }
  return ck;
}

}  // namespace protoshot
