#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "deformsplat/data_io.hpp"

namespace deformsplat {

namespace {

struct FileCloser {
  void operator()(std::FILE *f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path &path, const char *mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f)
    throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto *what = static_cast<std::string *>(png_get_error_ptr(png));
  *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

PngData read_png(const fs::path &path) {
  FilePtr file = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path.string() + " is not a PNG file");

  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  PngData out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS) || (color_type & PNG_COLOR_MASK_ALPHA))
    png_set_strip_alpha(png);
  if (bit_depth == 16 && std::endian::native == std::endian::little)
    png_set_swap(png);
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y)
    rows[y] = buffer.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.bit_depth = bit_depth;
  out.samples = Image<std::uint16_t>(width, height, channels);
  auto &d = out.samples.data();
  if (bit_depth == 16)
    std::memcpy(d.data(), buffer.data(), d.size() * 2);
  else
    for (int y = 0; y < height; ++y)
      for (std::size_t i = 0; i < static_cast<std::size_t>(width) * channels; ++i)
        d[y * static_cast<std::size_t>(width) * channels + i] = rows[y][i];
  return out;
}

void write_png(const fs::path &path, const Image<std::uint16_t> &samples, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ContractError("write_png: bit depth must be 8 or 16");
  if (samples.channels() != 1 && samples.channels() != 3)
    throw ContractError("write_png: 1 or 3 channels supported");
  if (samples.empty())
    throw ContractError("write_png: empty image");
  const int width = samples.width(), height = samples.height(), ch = samples.channels();
  const std::size_t row_values = static_cast<std::size_t>(width) * ch;
  std::vector<unsigned char> buffer(row_values * height * (bit_depth / 8));
  for (std::size_t i = 0; i < samples.data().size(); ++i) {
    const std::uint16_t v = samples.data()[i];
    if (bit_depth == 8) {
      if (v > 255)
        throw ContractError("write_png: 8-bit sample out of range");
      buffer[i] = static_cast<unsigned char>(v);
    } else {
      buffer[2 * i] = static_cast<unsigned char>(v >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
  }

  FilePtr file = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y)
    rows[y] = buffer.data() + row_values * (bit_depth / 8) * y;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot write " + path.string() + ": " + error);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, bit_depth,
               ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0)
    throw IoError("cannot write " + path.string());
}

void write_png_color(const fs::path &path, const ImageF &image) {
  Image<std::uint16_t> q(image.width(), image.height(), image.channels());
  for (std::size_t i = 0; i < q.data().size(); ++i)
    q.data()[i] =
        static_cast<std::uint16_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
  write_png(path, q, 8);
}

ImageF read_png_color(const fs::path &path) {
  const PngData png = read_png(path);
  const double max = png.bit_depth == 16 ? 65535.0 : 255.0;
  ImageF out(png.samples.width(), png.samples.height(), png.samples.channels());
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = png.samples.data()[i] / max;
  return out;
}

void write_pfm(const fs::path &path, const ImageF &image) {
  if (image.channels() != 1)
    throw ContractError("write_pfm: single-channel images only");
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  out << "Pf\n" << image.width() << " " << image.height() << "\n-1.0\n";
  std::vector<float> row(image.width());
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x)
      row[x] = static_cast<float>(image(x, y));
    if constexpr (std::endian::native == std::endian::big)
      for (float &v : row)
        v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    out.write(reinterpret_cast<const char *>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out)
    throw IoError("cannot write " + path.string());
}

ImageF read_pfm(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  if (!in || magic != "Pf" || width <= 0 || height <= 0 || scale == 0.0)
    throw IoError(path.string() + " is not a single-channel PFM file");
  const bool little = scale < 0.0;
  ImageF out(width, height);
  std::vector<float> row(width);
  for (int y = height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char *>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in)
      throw IoError(path.string() + " is truncated");
    for (int x = 0; x < width; ++x) {
      float v = row[x];
      if (little != (std::endian::native == std::endian::little))
        v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
      out(x, y) = v;
    }
  }
  return out;
}

} // namespace deformsplat
