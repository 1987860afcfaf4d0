#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sphf {

/// Float image in [0, 1], H x W x C, channel-minor.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

/// Per-pixel class indices.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(int w, int h, std::uint8_t fill = 0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit PNG; values are clamped to [0, 1] and written as round(v * 255).
/// One channel is grey, three RGB, four RGBA.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

/// Paletted PNG holding class indices, with a fixed display palette.
void write_label_png(const std::string& path, const LabelMap& labels);
LabelMap read_label_png(const std::string& path);

/// ITU-R 601 luma on [0, 1] inputs.
Image to_grayscale(const Image& image);

/// Horizontal flip.
Image mirror_horizontal(const Image& image);

/// Box-filter downsample by an integer factor (sizes must divide).
Image downsample(const Image& image, int factor);

}  // namespace sphf
