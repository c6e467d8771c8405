#ifndef REVFACE_PNG_IO_HPP_
#define REVFACE_PNG_IO_HPP_

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "revface/image.hpp"

namespace revface {

/// Reads an 8-bit RGB PNG; intensities are mapped linearly onto [0,1].
inline Image read_png(const std::filesystem::path& path) {
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&info, path.string().c_str())) {
    const std::string message = info.message;
    png_image_free(&info);
    throw Error("read_png " + path.string() + ": " + message);
  }
  const auto format = info.format;
  if (format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&info);
    throw Error("read_png " + path.string() + ": unsupported bit depth");
  }
  if (!(format & PNG_FORMAT_FLAG_COLOR) || (format & PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&info);
    throw Error("read_png " + path.string() +
                ": unsupported color type (expected RGB)");
  }
  const int height = static_cast<int>(info.height);
  const int width = static_cast<int>(info.width);
  info.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(info));
  if (!png_image_finish_read(&info, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = info.message;
    png_image_free(&info);
    throw Error("read_png " + path.string() + ": " + message);
  }
  Image img(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(buffer[base + c]) / 255.0f;
      }
    }
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buffer(img.pixel_count() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t base =
          (static_cast<std::size_t>(y) * img.width() + x) * 3;
      for (int c = 0; c < 3; ++c) buffer[base + c] = to_byte(img.at(c, y, x));
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  png_image info{};
  info.version = PNG_IMAGE_VERSION;
  info.width = static_cast<png_uint_32>(img.width());
  info.height = static_cast<png_uint_32>(img.height());
  info.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&info, path.string().c_str(), 0, buffer.data(),
                               0, nullptr)) {
    const std::string message = info.message;
    png_image_free(&info);
    throw Error("write_png " + path.string() + ": " + message);
  }
}

}  // namespace revface

#endif  // REVFACE_PNG_IO_HPP_
