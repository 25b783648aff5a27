/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_IMAGE_HPP_
#define PXCNN_IMAGE_HPP_

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pxcnn/error.hpp"
#include "pxcnn/random.hpp"
#include "pxcnn/tensor.hpp"

namespace pxcnn {

/// Decoded single-channel image; intensities on the 0..255 scale.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major, height * width

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

inline double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

namespace detail {

[[noreturn]] inline void fail_image(const std::filesystem::path& path, const std::string& why) {
  fail(ErrorKind::data, "cannot decode image " + path.string() + ": " + why);
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_image(path, "unreadable file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token, skipping whitespace and '#' comments.
inline std::size_t pnm_header_int(const std::vector<unsigned char>& bytes, std::size_t& pos,
                                  const std::filesystem::path& path) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail_image(path, "malformed PGM header");
  std::size_t value = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) fail_image(path, "PGM header value too large");
    ++pos;
  }
  return value;
}

inline GrayImage decode_pgm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  const bool ascii = bytes[1] == '2';
  std::size_t pos = 2;
  GrayImage img;
  img.width = pnm_header_int(bytes, pos, path);
  img.height = pnm_header_int(bytes, pos, path);
  const std::size_t maxval = pnm_header_int(bytes, pos, path);
  if (img.width == 0 || img.height == 0) fail_image(path, "zero image dimension");
  if (maxval == 0 || maxval > 65535) fail_image(path, "PGM maxval out of range");
  const std::size_t count = img.width * img.height;
  img.pixels.resize(count);
  const double scale = 255.0 / static_cast<double>(maxval);
  if (ascii) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = pnm_header_int(bytes, pos, path);
      if (v > maxval) fail_image(path, "PGM sample exceeds maxval");
      img.pixels[i] = static_cast<double>(v) * scale;
    }
    return img;
  }
  ++pos;  // single whitespace byte after maxval
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + count * sample_bytes) fail_image(path, "truncated PGM raster");
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = bytes[pos + i * sample_bytes];
    if (sample_bytes == 2) v = (v << 8) | bytes[pos + i * 2 + 1];
    if (v > maxval) fail_image(path, "PGM sample exceeds maxval");
    img.pixels[i] = maxval == 255 ? static_cast<double>(v) : static_cast<double>(v) * scale;
  }
  return img;
}

inline GrayImage decode_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) fail_image(path, image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string why = image.message;
    png_image_free(&image);
    fail_image(path, why);
  }
  GrayImage img{image.height, image.width, std::vector<double>(std::size_t{image.height} * image.width)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = color ? luminance(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2])
                          : static_cast<double>(buffer[i]);
  }
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void pxcnn_jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Only trivially destructible locals live in this frame, so longjmp out of
// libjpeg is safe. Returns false and fills `message` on failure.
inline bool jpeg_decode_raw(const unsigned char* data, std::size_t size, std::vector<unsigned char>& out,
                            std::size_t& height, std::size_t& width, int& components,
                            std::string& message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = pxcnn_jpeg_error_exit;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    message = err.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.jpeg_color_space == JCS_GRAYSCALE ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = cinfo.output_height;
  width = cinfo.output_width;
  components = cinfo.output_components;
  out.resize(height * width * static_cast<std::size_t>(components));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data() + std::size_t{cinfo.output_scanline} * width * components;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

inline GrayImage decode_jpeg(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::vector<unsigned char> raw;
  std::size_t height = 0, width = 0;
  int components = 0;
  std::string message;
  if (!jpeg_decode_raw(bytes.data(), bytes.size(), raw, height, width, components, message)) {
    fail_image(path, message);
  }
  GrayImage img{height, width, std::vector<double>(height * width)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = components == 1 ? static_cast<double>(raw[i])
                                    : luminance(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]);
  }
  return img;
}

}  // namespace detail

/// Decodes PGM (P2/P5), PNG or JPEG, chosen by the file's magic bytes.
/// Colour input is reduced to luminance 0.299R + 0.587G + 0.114B.
inline GrayImage decode_image(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5')) {
    return detail::decode_pgm(bytes, path);
  }
  static constexpr std::array<unsigned char, 8> kPngMagic = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin())) {
    return detail::decode_png(path);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
    return detail::decode_jpeg(bytes, path);
  }
  detail::fail_image(path, "unrecognised format (expected PGM, PNG or JPEG)");
}

/// Bilinear resize with pixel centres at half-integer positions (so a
/// downscale by two averages each 2x2 block). Edge samples are clamped.
inline GrayImage resize_bilinear(const GrayImage& src, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || src.height == 0 || src.width == 0) {
    fail_argument("resize_bilinear: zero dimension");
  }
  GrayImage out{height, width, std::vector<double>(height * width)};
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy_src =
        std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy_src);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy_src - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx_src =
          std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx_src);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx_src - static_cast<double>(x0);
      const double top = src.at(y0, x0) + (src.at(y0, x1) - src.at(y0, x0)) * tx;
      const double bottom = src.at(y1, x0) + (src.at(y1, x1) - src.at(y1, x0)) * tx;
      out.pixels[y * width + x] = top + (bottom - top) * ty;
    }
  }
  return out;
}

/// Decode, convert to luminance, resize to height x width and scale to
/// [0, 1]. Returns a [1, height, width] tensor.
inline Tensor load_image(const std::filesystem::path& path, std::size_t height = 150,
                         std::size_t width = 150) {
  GrayImage img = decode_image(path);
  if (img.height != height || img.width != width) img = resize_bilinear(img, height, width);
  std::vector<double> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::clamp(img.pixels[i] / 255.0, 0.0, 1.0);
  return Tensor({1, height, width}, std::move(data));
}

/// Writes an 8-bit binary PGM (P5).
inline void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      std::span<const std::uint8_t> pixels) {
  if (pixels.size() != height * width) fail_argument("write_pgm: pixel count does not match size");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) fail(ErrorKind::data, "cannot write " + path.string());
}

/// Writes an 8-bit PNG; `channels` is 1 (gray) or 3 (RGB).
inline void write_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      int channels, std::span<const std::uint8_t> pixels) {
  if (channels != 1 && channels != 3) fail_argument("write_png: channels must be 1 or 3");
  if (pixels.size() != height * width * static_cast<std::size_t>(channels)) {
    fail_argument("write_png: pixel count does not match size");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string why = image.message;
    png_image_free(&image);
    fail(ErrorKind::data, "cannot write " + path.string() + ": " + why);
  }
}

// ---------------------------------------------------------------------------
// Augmentation

/// Random rotation plus anisotropic stretch about the image centre.
struct AugmentPlan {
  double max_rotation_deg = 15.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  int copies = 1;  // augmented resamples per training image per epoch
  std::uint64_t seed = 0;

  static AugmentPlan identity() { return {0.0, 1.0, 1.0, 1, 0}; }
};

inline void validate(const AugmentPlan& plan) {
  if (!(plan.max_rotation_deg >= 0.0 && plan.max_rotation_deg <= 45.0)) {
    fail_argument("augment: rotation bound must lie in [0, 45] degrees");
  }
  if (!(plan.min_scale > 0.0 && plan.min_scale <= plan.max_scale)) {
    fail_argument("augment: scale bounds must satisfy 0 < min <= max");
  }
  if (plan.copies < 0) fail_argument("augment: copies must be non-negative");
}

struct AffineDraw {
  double angle_deg;
  double scale_x;
  double scale_y;
};

inline AffineDraw sample_affine(const AugmentPlan& plan, Rng& rng) {
  AffineDraw d;
  d.angle_deg = uniform(rng, -plan.max_rotation_deg, plan.max_rotation_deg);
  d.scale_x = uniform(rng, plan.min_scale, plan.max_scale);
  d.scale_y = uniform(rng, plan.min_scale, plan.max_scale);
  return d;
}

/// Applies the transform to every channel of a [C,H,W] tensor: each output
/// pixel is the bilinear sample of the inverse-mapped source position;
/// samples outside the frame read as 0.
inline Tensor apply_affine(const Tensor& image, const AffineDraw& draw) {
  if (image.rank() != 3) fail_argument("augment: expected [C,H,W] image, got " + shape_string(image.shape()));
  const std::size_t channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  const double theta = draw.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const auto in = image.values();
  Tensor out = Tensor::zeros(image.shape());
  auto o = out.mutable_values();

  auto pixel = [&](std::size_t ch, long y, long x) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(height) || x >= static_cast<long>(width)) return 0.0;
    return in[(ch * height + static_cast<std::size_t>(y)) * width + static_cast<std::size_t>(x)];
  };

  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      // Inverse of rotate(scale(p - centre)).
      const double rx = c * dx + s * dy;
      const double ry = -s * dx + c * dy;
      const double src_x = cx + rx / draw.scale_x;
      const double src_y = cy + ry / draw.scale_y;
      const double fx = std::floor(src_x), fy = std::floor(src_y);
      const double tx = src_x - fx, ty = src_y - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double p00 = pixel(ch, y0, x0), p01 = pixel(ch, y0, x0 + 1);
        const double p10 = pixel(ch, y0 + 1, x0), p11 = pixel(ch, y0 + 1, x0 + 1);
        const double top = p00 + (p01 - p00) * tx;
        const double bottom = p10 + (p11 - p10) * tx;
        o[(ch * height + y) * width + x] = std::clamp(top + (bottom - top) * ty, 0.0, 1.0);
      }
    }
  }
  return out;
}

inline Tensor augment(const Tensor& image, const AugmentPlan& plan, Rng& rng) {
  validate(plan);
  return apply_affine(image, sample_affine(plan, rng));
}

}  // namespace pxcnn

#endif  // PXCNN_IMAGE_HPP_
