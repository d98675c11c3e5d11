// Copyright 2026 The MMCS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mmcs/error.hpp"
#include "mmcs/ingest.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

namespace mmcs {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  std::longjmp(png_jmpbuf(png), 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

RasterImage read_raster(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  RasterImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    depth = 8;
  }
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (depth == 16) png_set_swap(png);  // host-order 16-bit samples
  png_read_update_info(png, info);

  img.height = static_cast<int>(png_get_image_height(png, info));
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (int r = 0; r < img.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + rowbytes * static_cast<std::size_t>(r);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.height) * img.width * img.channels;
  img.samples.resize(n);
  if (depth == 16) {
    std::memcpy(img.samples.data(), buffer.data(), n * sizeof(std::uint16_t));
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = buffer[i];
  }
  return img;
}

void write_raster(const std::filesystem::path& path, const RasterImage& image) {
  int color = 0;
  switch (image.channels) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 2: color = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw DataError("cannot encode " + std::to_string(image.channels) + " channels");
  }
  if (image.bit_depth != 8 && image.bit_depth != 16) throw DataError("bit depth must be 8 or 16");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write image " + path.string());

  const std::size_t bytes_per_sample = image.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(image.width) * image.channels * bytes_per_sample;
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(image.height));
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (bytes_per_sample == 2) {
      // PNG stores 16-bit samples big-endian.
      buffer[2 * i] = static_cast<unsigned char>(image.samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(image.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(image.samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int r = 0; r < image.height; ++r) rows[static_cast<std::size_t>(r)] = buffer.data() + rowbytes * static_cast<std::size_t>(r);

  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), image.bit_depth,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageTensor raster_to_tensor(const RasterImage& raster) {
  const float scale = raster.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  ImageTensor out(raster.height, raster.width, raster.channels);
  for (int r = 0; r < raster.height; ++r)
    for (int c = 0; c < raster.width; ++c)
      for (int ch = 0; ch < raster.channels; ++ch) out[ch](r, c) = static_cast<float>(raster.at(r, c, ch)) * scale;
  return out;
}

RasterImage tensor_to_raster(const ImageTensor& image, int bit_depth) {
  RasterImage out;
  out.height = image.height();
  out.width = image.width();
  out.channels = image.num_channels();
  out.bit_depth = bit_depth;
  const double full = bit_depth == 16 ? 65535.0 : 255.0;
  out.samples.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
  std::size_t i = 0;
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      for (int ch = 0; ch < out.channels; ++ch)
        out.samples[i++] = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(image[ch](r, c)), 0.0, 1.0) * full));
  return out;
}

}  // namespace mmcs
