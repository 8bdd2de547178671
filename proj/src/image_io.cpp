#include "spvit/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>

#include "spvit/errors.hpp"

namespace spvit {

namespace {

struct ReadState {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
  if (st->bytes->size() - st->pos < n) png_error(png, "unexpected end of data");
  std::memcpy(out, st->bytes->data() + st->pos, n);
  st->pos += n;
}

void write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_fn(png_structp) {}

[[noreturn]] void error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  *text = msg;
  png_longjmp(png, 1);
}

void warn_fn(png_structp, png_const_charp) {}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DecodeError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw DecodeError("not a PNG image");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, error_fn, warn_fn);
  if (!png) throw DecodeError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  Image img;
  std::vector<png_bytep> rows;
  ReadState st{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("PNG decode failed: " + error);
  }
  png_set_read_fn(png, &st, read_fn);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (img.channels != 3) throw DecodeError("PNG did not decode to RGB");
  return img;
}

Image read_png(const std::filesystem::path& path) {
  try {
    return decode_png(slurp(path));
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DecodeError("PNG encode supports 1 or 3 channels");
  if (image.pixels.size() != image.width * image.height * image.channels || image.width == 0 || image.height == 0) {
    throw DecodeError("image buffer does not match its dimensions");
  }
  std::string error;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, error_fn, warn_fn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encode failed: " + error);
  }
  png_set_write_fn(png, &out, write_fn, flush_fn);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.pixels.data() + y * image.width * image.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write to " + path.string() + " failed");
}

}  // namespace spvit
