#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lesion/dataset.hpp"
#include "lesion/error.hpp"
#include "lesion/image.hpp"
#include "lesion/rng.hpp"

namespace lesion {

/// Side length of the network input.
inline constexpr int kInputSide = 299;

enum class TransformKind { Mirror, Crop, Scale, Brighten };

inline constexpr std::array<TransformKind, 4> kTransformKinds = {TransformKind::Mirror, TransformKind::Crop,
                                                                  TransformKind::Scale, TransformKind::Brighten};

constexpr std::string_view transform_name(TransformKind k) {
  switch (k) {
    case TransformKind::Mirror: return "mirror";
    case TransformKind::Crop: return "crop";
    case TransformKind::Scale: return "scale";
    case TransformKind::Brighten: return "brighten";
  }
  return "";
}

inline std::optional<TransformKind> parse_transform_name(std::string_view s) {
  for (auto k : kTransformKinds) {
    if (transform_name(k) == s) return k;
  }
  return std::nullopt;
}

struct AugmentConfig {
  double crop_fraction = 0.875;
  double scale_min = 1.05;
  double scale_max = 1.25;
  double brightness_factor = 1.2;

  void validate() const {
    if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "crop_fraction must be in (0, 1]");
    }
    if (!(scale_min >= 1.0 && scale_max >= scale_min && std::isfinite(scale_max))) {
      throw Error(ErrorCode::InvalidConfig, "scale range must satisfy 1 <= scale_min <= scale_max");
    }
    if (!(brightness_factor > 0.0 && std::isfinite(brightness_factor))) {
      throw Error(ErrorCode::InvalidConfig, "brightness_factor must be positive");
    }
  }
};

/// Bilinear resampling with corner-aligned sampling: output pixel i maps to
/// source coordinate i * (in - 1) / (out - 1), so resizing to the source
/// dimensions reproduces the input exactly. A one-pixel output samples the
/// source centre.
inline ImageTensor resize_bilinear(const ImageTensor& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw Error(ErrorCode::ZeroDimension,
                "target size " + std::to_string(out_w) + "x" + std::to_string(out_h) + " is empty");
  }
  const int in_w = img.width();
  const int in_h = img.height();
  auto source_coord = [](int i, int in, int out) {
    if (out == 1) return (in - 1) / 2.0;
    return static_cast<double>(i) * (static_cast<double>(in - 1) / static_cast<double>(out - 1));
  };

  ImageTensor out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, in_h, out_h);
    const int y0 = std::min(static_cast<int>(sy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, in_w, out_w);
      const int x0 = std::min(static_cast<int>(sx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double p00 = img.at(y0, x0, c), p01 = img.at(y0, x1, c);
        const double p10 = img.at(y1, x0, c), p11 = img.at(y1, x1, c);
        const double top = p00 + (p01 - p00) * fx;
        const double bottom = p10 + (p11 - p10) * fx;
        out.set(y, x, c, static_cast<float>(top + (bottom - top) * fy));
      }
    }
  }
  return out;
}

/// Centred window of the given size; the offset rounds down.
inline ImageTensor central_crop(const ImageTensor& img, int crop_w, int crop_h) {
  if (crop_w < 1 || crop_h < 1 || crop_w > img.width() || crop_h > img.height()) {
    throw Error(ErrorCode::ZeroDimension, "crop window outside image");
  }
  const int ox = (img.width() - crop_w) / 2;
  const int oy = (img.height() - crop_h) / 2;
  ImageTensor out(crop_h, crop_w);
  for (int y = 0; y < crop_h; ++y) {
    for (int x = 0; x < crop_w; ++x) {
      for (int c = 0; c < 3; ++c) out.set(y, x, c, img.at(oy + y, ox + x, c));
    }
  }
  return out;
}

/// Applies one label-preserving transform. The output always has the input
/// dimensions. Only Scale consumes randomness (its zoom factor).
inline ImageTensor apply_transform(const ImageTensor& img, TransformKind kind, std::uint64_t rng_seed,
                                   const AugmentConfig& cfg = {}) {
  const int w = img.width();
  const int h = img.height();
  auto scaled_dim = [](double f, int n) { return std::max(1, static_cast<int>(std::lround(f * n))); };

  switch (kind) {
    case TransformKind::Mirror: {
      ImageTensor out(h, w);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 3; ++c) out.set(y, x, c, img.at(y, w - 1 - x, c));
        }
      }
      return out;
    }
    case TransformKind::Crop: {
      const auto crop = central_crop(img, scaled_dim(cfg.crop_fraction, w), scaled_dim(cfg.crop_fraction, h));
      return resize_bilinear(crop, w, h);
    }
    case TransformKind::Scale: {
      Rng rng(rng_seed);
      const double factor = uniform(rng, cfg.scale_min, cfg.scale_max);
      const auto big = resize_bilinear(img, std::max(w, scaled_dim(factor, w)), std::max(h, scaled_dim(factor, h)));
      return central_crop(big, w, h);
    }
    case TransformKind::Brighten: {
      ImageTensor out(h, w);
      const float f = static_cast<float>(cfg.brightness_factor);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          for (int c = 0; c < 3; ++c) out.set(y, x, c, img.at(y, x, c) * f);
        }
      }
      return out;
    }
  }
  return img;
}

/// floor(fraction * n). The product is nudged by 1e-9 first so that decimal
/// fractions such as 0.29 * 100 are not lost to binary rounding.
inline std::size_t augmentation_count(std::size_t n, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::FractionOutOfRange, "fraction must be in [0, 1], got " + std::to_string(fraction));
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::min(k, n);
}

/// Draws floor(fraction * n) distinct ids without replacement; the result
/// keeps the input order.
inline std::vector<std::string> select_augmentation_subset(std::span<const std::string> image_ids, double fraction,
                                                           std::uint64_t seed) {
  const std::size_t k = augmentation_count(image_ids.size(), fraction);
  std::vector<std::size_t> order(image_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  std::vector<std::string> out;
  out.reserve(k);
  for (auto i : order) out.push_back(image_ids[i]);
  return out;
}

/// Id given to an augmented pool entry; doubles as its provenance tag.
inline std::string augmented_id(TransformKind kind, std::string_view source_id) {
  return "augmented:" + std::string(transform_name(kind)) + ":" + std::string(source_id);
}

/// Inverse of augmented_id; nullopt for ids of original images.
inline std::optional<std::pair<TransformKind, std::string>> parse_augmented_id(std::string_view id) {
  constexpr std::string_view prefix = "augmented:";
  if (!id.starts_with(prefix)) return std::nullopt;
  id.remove_prefix(prefix.size());
  const auto colon = id.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  const auto kind = parse_transform_name(id.substr(0, colon));
  if (!kind || colon + 1 >= id.size()) return std::nullopt;
  return std::pair{*kind, std::string(id.substr(colon + 1))};
}

struct PoolEntry {
  std::string image_id;  // source id for originals, augmented_id() otherwise
  std::size_t source_index = 0;
  GroundTruthRecord labels;
  std::optional<TransformKind> transform;

  std::string provenance() const { return transform ? image_id : std::string("original"); }
};

/// Resized originals plus four augmented variants of each selected image.
/// Entries are recipes; tensors are produced on demand because a full pool of
/// 299x299x3 floats does not fit in memory at dataset scale.
class TrainingPool {
 public:
  TrainingPool(Dataset source, std::vector<PoolEntry> entries, std::uint64_t seed, AugmentConfig cfg)
      : source_(std::move(source)), entries_(std::move(entries)), seed_(seed), cfg_(cfg) {}

  std::span<const PoolEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const Dataset& source() const noexcept { return source_; }

  /// Decoded and resized source image of `source_index`.
  ImageTensor load_source(std::size_t source_index) const {
    const auto& ex = source_.examples()[source_index];
    try {
      return resize_bilinear(decode_image(ex.image_path), kInputSide, kInputSide);
    } catch (const Error& e) {
      throw Error(e.code(), ex.image_id + ": " + e.what());
    }
  }

  ImageTensor materialize(const PoolEntry& entry) const { return derive(entry, load_source(entry.source_index)); }

  /// Builds `entry` from the already resized source image.
  ImageTensor derive(const PoolEntry& entry, const ImageTensor& resized_source) const {
    if (!entry.transform) return resized_source;
    const auto& src_id = source_.examples()[entry.source_index].image_id;
    return apply_transform(resized_source, *entry.transform, split_seed(seed_, src_id), cfg_);
  }

  /// Indices of the entries derived from each source image, by source index.
  std::vector<std::vector<std::size_t>> groups() const {
    std::vector<std::vector<std::size_t>> g(source_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) g[entries_[i].source_index].push_back(i);
    return g;
  }

  /// Visits every entry with its tensor, decoding each source image once.
  void for_each(const std::function<void(const PoolEntry&, const ImageTensor&)>& fn) const {
    const auto g = groups();
    for (std::size_t s = 0; s < g.size(); ++s) {
      if (g[s].empty()) continue;
      const auto base = load_source(s);
      for (auto i : g[s]) fn(entries_[i], derive(entries_[i], base));
    }
  }

 private:
  Dataset source_;
  std::vector<PoolEntry> entries_;
  std::uint64_t seed_;
  AugmentConfig cfg_;
};

/// Originals first in dataset order, then for each selected image (in
/// dataset order) one entry per TransformKind.
inline TrainingPool build_training_pool(const Dataset& train, double fraction, std::uint64_t seed,
                                        const AugmentConfig& cfg = {}) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorCode::EmptyDataset, "training split is empty");
  std::vector<std::string> ids;
  ids.reserve(train.size());
  for (const auto& ex : train.examples()) ids.push_back(ex.image_id);
  const auto selected = select_augmentation_subset(ids, fraction, seed);

  std::vector<PoolEntry> entries;
  entries.reserve(train.size() + 4 * selected.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& ex = train.examples()[i];
    entries.push_back({ex.image_id, i, ex.record, std::nullopt});
  }
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < train.size() && cursor < selected.size(); ++i) {
    const auto& ex = train.examples()[i];
    if (ex.image_id != selected[cursor]) continue;
    ++cursor;
    for (auto kind : kTransformKinds) entries.push_back({augmented_id(kind, ex.image_id), i, ex.record, kind});
  }
  return TrainingPool(train, std::move(entries), seed, cfg);
}

}  // namespace lesion
