#include "cmota/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cmota::img {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v >> 16),
                  static_cast<uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_rimg(const std::string& path, const ImageU8& im) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write("RIMG", 4);
  put_u32(os, static_cast<uint32_t>(im.width));
  put_u32(os, static_cast<uint32_t>(im.height));
  put_u32(os, static_cast<uint32_t>(im.channels));
  os.write(reinterpret_cast<const char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

ImageU8 read_rimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RIMG", 4) != 0) throw std::runtime_error("not a RIMG file: " + path);
  ImageU8 im;
  im.width = static_cast<int>(get_u32(is));
  im.height = static_cast<int>(get_u32(is));
  im.channels = static_cast<int>(get_u32(is));
  if (im.width <= 0 || im.height <= 0 || im.channels <= 0 || im.width > 1 << 16 || im.height > 1 << 16)
    throw std::runtime_error("corrupt RIMG header: " + path);
  im.pixels.resize(static_cast<size_t>(im.width) * im.height * im.channels);
  is.read(reinterpret_cast<char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
  if (!is) throw std::runtime_error("truncated RIMG file: " + path);
  return im;
}

void write_png(const std::string& path, const ImageU8& im) {
  if (im.channels != 3 && im.channels != 1) throw std::runtime_error("png export expects 1 or 3 channels");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(im.width);
  pi.height = static_cast<png_uint_32>(im.height);
  pi.format = im.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, im.pixels.data(), 0, nullptr))
    throw std::runtime_error("png write failed: " + path + " (" + pi.message + ")");
}

}  // namespace cmota::img
