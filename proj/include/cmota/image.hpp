#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmota::img {

// Uncompressed raster: magic "RIMG", u32 width/height/channels (little
// endian), then row-major interleaved bytes.
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;

  static ImageU8 make(int w, int h, int c, uint8_t fill = 0) {
    ImageU8 im;
    im.width = w;
    im.height = h;
    im.channels = c;
    im.pixels.assign(static_cast<size_t>(w) * h * c, fill);
    return im;
  }
  size_t numel() const { return pixels.size(); }
  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const ImageU8& o) const {
    return width == o.width && height == o.height && channels == o.channels && pixels == o.pixels;
  }
};

// Real-valued raster used by the quantizer round trip (codebook entries are
// centroids, so reconstruction is not integral in general).
struct ImageF64 {
  int width = 0, height = 0, channels = 0;
  std::vector<double> values;

  static ImageF64 from_u8(const ImageU8& im) {
    ImageF64 out;
    out.width = im.width;
    out.height = im.height;
    out.channels = im.channels;
    out.values.assign(im.pixels.begin(), im.pixels.end());
    return out;
  }
  ImageU8 to_u8() const {
    ImageU8 out = ImageU8::make(width, height, channels);
    for (size_t i = 0; i < values.size(); ++i) {
      double v = values[i];
      v = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
      out.pixels[i] = static_cast<uint8_t>(v + 0.5);
    }
    return out;
  }
  double& at(int y, int x, int c) {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

void write_rimg(const std::string& path, const ImageU8& im);
ImageU8 read_rimg(const std::string& path);

// Optional human-viewable export.
void write_png(const std::string& path, const ImageU8& im);

}  // namespace cmota::img
