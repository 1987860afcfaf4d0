#include "sphf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace sphf {

namespace {

constexpr png_color kPalette[] = {
    {255, 255, 255},  // background
    {230, 180, 150},  // skin
    {200, 30, 40},    // face features
    {60, 40, 30},     // hair
    {40, 120, 220}, {80, 200, 80}, {250, 220, 50}, {150, 60, 200},
};

struct File {
  std::FILE* f = nullptr;
  explicit File(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {
    if (!f) throw IoError("cannot open '" + path + "'");
  }
  ~File() { std::fclose(f); }
};

// libpng reports errors by longjmp; the message is kept for the exception.
thread_local std::string png_message;

void on_error(png_structp png, png_const_charp msg) {
  png_message = msg;
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

void write_rows(const std::string& path, int width, int height, int color_type, int bytes_per_pixel,
                const std::vector<std::uint8_t>& bytes, const std::vector<png_color>* palette = nullptr) {
  File file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_write_struct(&p, &i); }
  } guard{png, info};
  if (setjmp(png_jmpbuf(png))) throw IoError("png: " + png_message + " ('" + path + "')");
  png_init_io(png, file.f);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (palette) png_set_PLTE(png, info, palette->data(), static_cast<int>(palette->size()));
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * width * bytes_per_pixel);
  png_write_end(png, nullptr);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int color_type = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;
};

// Expands to 8-bit; keeps palette indices when `keep_palette`.
Decoded read_rows(const std::string& path, bool keep_palette) {
  File file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp& p;
    png_infop& i;
    ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
  } guard{png, info};
  if (setjmp(png_jmpbuf(png))) throw IoError("png: " + png_message + " ('" + path + "')");
  png_init_io(png, file.f);
  png_read_info(png, info);
  Decoded d;
  d.width = static_cast<int>(png_get_image_width(png, info));
  d.height = static_cast<int>(png_get_image_height(png, info));
  d.color_type = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (d.color_type == PNG_COLOR_TYPE_PALETTE) {
    if (!keep_palette) png_set_palette_to_rgb(png);
    else if (depth < 8) png_set_packing(png);
  } else if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  png_read_update_info(png, info);
  d.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  d.bytes.resize(stride * d.height);
  std::vector<png_bytep> rows(d.height);
  for (int y = 0; y < d.height; ++y) rows[y] = d.bytes.data() + stride * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return d;
}

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
  int type;
  switch (image.channels) {
    case 1: type = PNG_COLOR_TYPE_GRAY; break;
    case 3: type = PNG_COLOR_TYPE_RGB; break;
    case 4: type = PNG_COLOR_TYPE_RGBA; break;
    default: throw std::invalid_argument("write_png: unsupported channel count");
  }
  if (image.width < 1 || image.height < 1) throw std::invalid_argument("write_png: empty image");
  std::vector<std::uint8_t> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize);
  write_rows(path, image.width, image.height, type, image.channels, bytes);
}

Image read_png(const std::string& path) {
  const Decoded d = read_rows(path, false);
  Image image(d.width, d.height, d.channels);
  for (std::size_t i = 0; i < image.data.size(); ++i) image.data[i] = d.bytes[i] / 255.0f;
  return image;
}

void write_label_png(const std::string& path, const LabelMap& labels) {
  if (labels.width < 1 || labels.height < 1) throw std::invalid_argument("write_label_png: empty map");
  for (auto v : labels.data)
    if (v >= std::size(kPalette)) throw std::invalid_argument("write_label_png: class index outside palette");
  std::vector<png_color> palette(std::begin(kPalette), std::end(kPalette));
  write_rows(path, labels.width, labels.height, PNG_COLOR_TYPE_PALETTE, 1, labels.data, &palette);
}

LabelMap read_label_png(const std::string& path) {
  const Decoded d = read_rows(path, true);
  if (d.color_type != PNG_COLOR_TYPE_PALETTE && d.color_type != PNG_COLOR_TYPE_GRAY)
    throw IoError("'" + path + "' is not a label map");
  LabelMap labels(d.width, d.height);
  labels.data = d.bytes;
  return labels;
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels < 3) throw std::invalid_argument("to_grayscale: need 1, 3 or 4 channels");
  Image out(image.width, image.height, 1);
  for (std::size_t i = 0; i < image.pixels(); ++i) {
    const float* p = image.data.data() + i * image.channels;
    out.data[i] = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
  }
  return out;
}

Image mirror_horizontal(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = image.at(image.width - 1 - x, y, c);
  return out;
}

Image downsample(const Image& image, int factor) {
  if (factor < 1 || image.width % factor || image.height % factor)
    throw std::invalid_argument("downsample: factor must divide the image size");
  Image out(image.width / factor, image.height / factor, image.channels);
  const float norm = 1.0f / (factor * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        float acc = 0.0f;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) acc += image.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = acc * norm;
      }
  return out;
}

}  // namespace sphf
