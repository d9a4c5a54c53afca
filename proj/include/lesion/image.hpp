#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lesion/error.hpp"

namespace lesion {

/// Decoded RGB image with channel values in [0, 1], stored row-major as
/// (y, x, c).
class ImageTensor {
 public:
  static constexpr int kChannels = 3;

  ImageTensor(int height, int width, float fill = 0.0f) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw Error(ErrorCode::ZeroDimension, "image dimensions must be positive, got " +
                                                std::to_string(height) + "x" + std::to_string(width));
    }
    if (!(fill >= 0.0f && fill <= 1.0f)) {
      throw Error(ErrorCode::PixelOutOfRange, "fill value outside [0,1]");
    }
    pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
  }

  /// Takes ownership of an (y, x, c) pixel buffer; every value must lie in [0, 1].
  static ImageTensor from_pixels(int height, int width, std::vector<float> pixels) {
    ImageTensor img(height, width);
    if (pixels.size() != img.pixels_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "pixel buffer has " + std::to_string(pixels.size()) +
                                                " values, expected " + std::to_string(img.pixels_.size()));
    }
    for (float v : pixels) {
      if (!(v >= 0.0f && v <= 1.0f)) throw Error(ErrorCode::PixelOutOfRange, "pixel value outside [0,1]");
    }
    img.pixels_ = std::move(pixels);
    return img;
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return kChannels; }
  std::size_t size() const noexcept { return pixels_.size(); }

  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  /// Stores v clamped to [0, 1].
  void set(int y, int x, int c, float v) { pixels_[index(y, x, c)] = std::clamp(v, 0.0f, 1.0f); }

  std::span<const float> pixels() const noexcept { return pixels_; }

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_;
  int width_;
  std::vector<float> pixels_;
};

/// Converts an 8-bit BGR OpenCV image (as returned by imread/imdecode) to a
/// tensor, mapping v -> v/255.
inline ImageTensor from_bgr8(const cv::Mat& bgr) {
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    throw Error(ErrorCode::DecodeError, "expected a non-empty 8-bit 3-channel image");
  }
  std::vector<float> px(static_cast<std::size_t>(bgr.rows) * bgr.cols * 3);
  std::size_t k = 0;
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      px[k++] = row[x][2] / 255.0f;
      px[k++] = row[x][1] / 255.0f;
      px[k++] = row[x][0] / 255.0f;
    }
  }
  return ImageTensor::from_pixels(bgr.rows, bgr.cols, std::move(px));
}

inline cv::Mat to_bgr8(const ImageTensor& img) {
  cv::Mat out(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(img.at(y, x, c) * 255.0f));
      }
    }
  }
  return out;
}

/// Decodes a JPEG or PNG file. Grayscale input is replicated across the
/// three channels and any alpha channel is dropped.
inline ImageTensor decode_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::DecodeError, "cannot open " + path.string());
  }
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw Error(ErrorCode::DecodeError, "cannot decode " + path.string());
  return from_bgr8(bgr);
}

inline void write_png(const ImageTensor& img, const std::filesystem::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_bgr8(img));
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace lesion
