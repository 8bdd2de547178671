#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace spvit {

/// 8-bit interleaved image (channels 1 = gray, 3 = RGB).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Decodes any 8-bit PNG to RGB (gray is expanded, alpha dropped). Throws DecodeError.
Image read_png(const std::filesystem::path& path);
Image decode_png(const std::vector<std::uint8_t>& bytes);
/// Encodes gray or RGB. Output bytes depend only on the pixels.
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace spvit
