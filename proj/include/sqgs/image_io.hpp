#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "image.hpp"

namespace sqgs {

/// 8-bit quantization used by every image writer: round(clamp(v, 0, 1) * 255), halves up.
inline std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

/// Writes a 1- or 3-channel image as an 8-bit PNG.
inline void save_png(const Image &img, const std::filesystem::path &path) {
  require(img.channels == 1 || img.channels == 3, "save_png: only 1 or 3 channels are supported");
  std::vector<std::uint8_t> buf(img.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = quantize(img.data[i]);
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw Error("cannot write PNG " + path.string() + ": " + pi.message);
}

/// Reads a PNG as `channels` (1 or 3) channels scaled by 1/255.
inline Image load_png(const std::filesystem::path &path, int channels) {
  require(channels == 1 || channels == 3, "load_png: only 1 or 3 channels are supported");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw Error("cannot read PNG " + path.string() + ": " + pi.message);
  pi.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw Error("cannot decode PNG " + path.string() + ": " + pi.message);
  }
  Image img(static_cast<int>(pi.width), static_cast<int>(pi.height), channels);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    img.data[i] = buf[i] / 255.0;
  return img;
}

} // namespace sqgs
