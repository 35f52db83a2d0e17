#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace protoshot {

/// 8-bit raster, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  static Image blank(int width, int height, int channels, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

/// Decodes PNG, JPEG or binary/ASCII PNM (P2/P3/P5/P6). Alpha is dropped and
/// 16-bit samples are reduced to 8 bits. Throws DataError.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Throws DataError naming the path when unreadable or undecodable.
Image read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
/// Binary PGM (gray) or PPM (RGB).
std::vector<std::uint8_t> encode_pnm(const Image& image);

/// Format chosen by extension: .png, otherwise PNM.
void write_image(const std::filesystem::path& path, const Image& image);

}  // namespace protoshot
