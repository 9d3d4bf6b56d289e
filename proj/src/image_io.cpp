#include "epsam/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace epsam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool host_is_little_endian() {
  const uint16_t probe = 1;
  return *reinterpret_cast<const uint8_t*>(&probe) == 1;
}

void write_png_impl(const std::filesystem::path& path, int h, int w,
                    int color_type, int bit_depth,
                    const std::vector<png_bytep>& rows) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write error: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16 && host_is_little_endian()) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

}  // namespace

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_png: unsupported channel count");
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(
        img.data.data() + static_cast<size_t>(y) * img.w * img.channels);
  int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  write_png_impl(path, img.h, img.w, color, 8, rows);
}

void write_png(const std::filesystem::path& path, const ImageU16& img) {
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(reinterpret_cast<const png_byte*>(
        img.data.data() + static_cast<size_t>(y) * img.w));
  write_png_impl(path, img.h, img.w, PNG_COLOR_TYPE_GRAY, 16, rows);
}

ImageU8 read_png_u8(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path.string());

  PngReader r;
  r.png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("png_create_read_struct failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(r.png)))
    throw IoError("libpng read error: " + path.string());

  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(r.png, r.info, &w, &h, &bit_depth, &color_type, nullptr,
               nullptr, nullptr);
  if (bit_depth == 16) throw IoError("read_png_u8: 16-bit file " + path.string());
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(r.png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);
  int channels = png_get_channels(r.png, r.info);
  if (channels != 1 && channels != 3)
    throw IoError("read_png_u8: unsupported channel count in " + path.string());

  ImageU8 out(static_cast<int>(h), static_cast<int>(w), channels);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = out.data.data() + static_cast<size_t>(y) * w * channels;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return out;
}

ImageU16 read_png_u16(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path.string());

  PngReader r;
  r.png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw IoError("png_create_read_struct failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(r.png)))
    throw IoError("libpng read error: " + path.string());

  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);
  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(r.png, r.info, &w, &h, &bit_depth, &color_type, nullptr,
               nullptr, nullptr);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("read_png_u16: expected 16-bit grayscale: " + path.string());
  if (host_is_little_endian()) png_set_swap(r.png);
  png_read_update_info(r.png, r.info);

  ImageU16 out(static_cast<int>(h), static_cast<int>(w));
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = reinterpret_cast<png_bytep>(out.data.data() +
                                          static_cast<size_t>(y) * w);
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return out;
}

void save_patch_png(const std::filesystem::path& path, const Patch& patch) {
  if (patch.channels.size() != 3)
    throw ShapeError("save_patch_png: patch must have 3 channels");
  const int s = patch.size();
  ImageU8 img(s, s, 3);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = patch.channels[c].at(y, x);
        v = std::min(1.0, std::max(0.0, v));
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  write_png(path, img);
}

std::vector<Image> load_patch_channels(const std::filesystem::path& path) {
  ImageU8 img = read_png_u8(path);
  std::vector<Image> channels;
  int nch = img.channels;
  for (int c = 0; c < 3; ++c) {
    Image ch(img.h, img.w);
    int src = std::min(c, nch - 1);  // grayscale broadcasts
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        ch.at(y, x) = img.at(y, x, src) / 255.0;
    channels.push_back(std::move(ch));
  }
  return channels;
}

void save_mask_png(const std::filesystem::path& path, const Mask& mask) {
  ImageU8 img(mask.h, mask.w, 1);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x)
      img.at(y, x, 0) = mask.at(y, x) ? 255 : 0;
  write_png(path, img);
}

Mask load_mask_png(const std::filesystem::path& path) {
  ImageU8 img = read_png_u8(path);
  Mask mask(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      mask.at(y, x) = img.at(y, x, 0) >= 128 ? 1 : 0;
  return mask;
}

void save_map_png16(const std::filesystem::path& path, const Image& map) {
  ImageU16 img(map.h, map.w);
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x) {
      double v = std::min(1.0, std::max(0.0, map.at(y, x)));
      img.at(y, x) = static_cast<uint16_t>(std::lround(v * 65535.0));
    }
  write_png(path, img);
}

Image load_map_png16(const std::filesystem::path& path) {
  ImageU16 img = read_png_u16(path);
  Image map(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) map.at(y, x) = img.at(y, x) / 65535.0;
  return map;
}

}  // namespace epsam
