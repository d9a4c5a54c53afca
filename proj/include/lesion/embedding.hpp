#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "lesion/dataset.hpp"
#include "lesion/error.hpp"
#include "lesion/image.hpp"
#include "lesion/preprocess.hpp"

namespace lesion {

inline constexpr std::size_t kFeatureDim = 1000;

/// The 1000-component representation of one image. Always finite.
class FeatureVector {
 public:
  FeatureVector() : values_(kFeatureDim, 0.0f) {}

  explicit FeatureVector(std::vector<float> values) : values_(std::move(values)) {
    if (values_.size() != kFeatureDim) {
      throw Error(ErrorCode::ShapeMismatch, "feature vector has " + std::to_string(values_.size()) +
                                                " components, expected " + std::to_string(kFeatureDim));
    }
    for (float v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "feature vector has a non-finite component");
    }
  }

  std::span<const float> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  float operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<float> values_;
};

/// Maps a 299x299x3 tensor to a FeatureVector. Implementations must be
/// deterministic for a fixed id() and safe to call concurrently.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  /// Stable identifier written into feature caches, e.g. "stub:42".
  virtual std::string id() const = 0;

  FeatureVector embed(const ImageTensor& img) const {
    if (img.height() != kInputSide || img.width() != kInputSide || img.channels() != 3) {
      throw Error(ErrorCode::WrongInputShape, "expected 299x299x3 input, got " + std::to_string(img.height()) +
                                                  "x" + std::to_string(img.width()) + "x" +
                                                  std::to_string(img.channels()));
    }
    return FeatureVector(compute(img));
  }

 protected:
  virtual std::vector<float> compute(const ImageTensor& img) const = 0;
};

inline FeatureVector embed(const EmbeddingBackend& backend, const ImageTensor& img) { return backend.embed(img); }

// ---------------------------------------------------------------------------
// Stub backend: a fixed random projection used as an offline stand-in for the
// pretrained network.

inline constexpr int kStubGrid = 16;
inline constexpr std::size_t kStubPooled = kStubGrid * kStubGrid * 3;  // 768

/// x_{k+1} = 6364136223846793005 * x_k + 1442695040888963407 (mod 2^64).
constexpr std::uint64_t lcg_next(std::uint64_t x) {
  return 6364136223846793005ULL * x + 1442695040888963407ULL;
}

/// Projection entry for LCG state x: (x >> 33) / 2^30 - 1, in [-1, 1). Exact
/// in double.
constexpr double lcg_entry(std::uint64_t x) {
  return static_cast<double>(x >> 33) / 1073741824.0 - 1.0;
}

/// Uniform block averaging onto a grid x grid x 3 array, laid out (by, bx, c).
/// Block i along an axis of length n covers [floor(i*n/grid), floor((i+1)*n/grid)).
inline std::vector<double> average_pool(const ImageTensor& img, int grid = kStubGrid) {
  const int h = img.height();
  const int w = img.width();
  if (h < grid || w < grid) throw Error(ErrorCode::WrongInputShape, "image smaller than pooling grid");
  std::vector<double> pooled(static_cast<std::size_t>(grid) * grid * 3, 0.0);
  for (int by = 0; by < grid; ++by) {
    const int y0 = by * h / grid, y1 = (by + 1) * h / grid;
    for (int bx = 0; bx < grid; ++bx) {
      const int x0 = bx * w / grid, x1 = (bx + 1) * w / grid;
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) sum += img.at(y, x, c);
        }
        pooled[(static_cast<std::size_t>(by) * grid + bx) * 3 + c] = sum / count;
      }
    }
  }
  return pooled;
}

class StubBackend final : public EmbeddingBackend {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit StubBackend(std::uint64_t seed) : seed_(seed), projection_(kFeatureDim, kStubPooled) {
    std::uint64_t x = seed;
    for (Eigen::Index r = 0; r < projection_.rows(); ++r) {
      for (Eigen::Index c = 0; c < projection_.cols(); ++c) {
        x = lcg_next(x);
        projection_(r, c) = lcg_entry(x);
      }
    }
  }

  std::string id() const override { return "stub:" + std::to_string(seed_); }

  const Matrix& projection() const noexcept { return projection_; }

 protected:
  std::vector<float> compute(const ImageTensor& img) const override {
    const auto pooled = average_pool(img);
    const Eigen::Map<const Eigen::VectorXd> p(pooled.data(), static_cast<Eigen::Index>(pooled.size()));
    const Eigen::VectorXd z = projection_ * p;
    std::vector<float> out(kFeatureDim);
    for (std::size_t i = 0; i < kFeatureDim; ++i) out[i] = static_cast<float>(std::tanh(z[static_cast<Eigen::Index>(i)]));
    return out;
  }

 private:
  std::uint64_t seed_;
  Matrix projection_;
};

inline std::unique_ptr<EmbeddingBackend> stub_backend(std::uint64_t seed) {
  return std::make_unique<StubBackend>(seed);
}

// ---------------------------------------------------------------------------
// Feature cache: CSV with a `# backend=<id>` line, a header
// `image_id,f0,...,f999`, then one row per image.

struct CacheEntry {
  std::string image_id;
  FeatureVector features;

  bool operator==(const CacheEntry&) const = default;
};

struct FeatureCache {
  std::string backend_id;
  std::vector<CacheEntry> entries;
};

inline std::string feature_cache_header() {
  std::string h = "image_id";
  for (std::size_t i = 0; i < kFeatureDim; ++i) h += ",f" + std::to_string(i);
  return h;
}

/// Shortest of the general/%.9g family; 9 significant digits round-trip
/// every float exactly.
inline void append_float(std::string& out, float v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  out.append(buf, res.ptr);
}

inline void write_feature_cache(std::ostream& out, std::span<const CacheEntry> entries, std::string_view backend_id) {
  std::set<std::string_view> ids;
  for (const auto& e : entries) {
    validate_image_id(e.image_id);
    if (e.image_id.find(',') != std::string::npos) {
      throw Error(ErrorCode::InvalidImageId, "image id contains a comma: " + e.image_id);
    }
    if (!ids.insert(e.image_id).second) throw Error(ErrorCode::DuplicateImageId, e.image_id);
  }
  if (backend_id.find('\n') != std::string_view::npos) throw Error(ErrorCode::InvalidConfig, "backend id has a newline");
  out << "# backend=" << backend_id << '\n' << feature_cache_header() << '\n';
  std::string row;
  for (const auto& e : entries) {
    row = e.image_id;
    for (float v : e.features.values()) {
      row += ',';
      append_float(row, v);
    }
    row += '\n';
    out << row;
  }
}

inline void write_feature_cache(const std::filesystem::path& path, std::span<const CacheEntry> entries,
                                std::string_view backend_id) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_feature_cache(out, entries, backend_id);
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline FeatureCache parse_feature_cache(std::string_view text) {
  const auto lines = detail::split_lines(text);
  auto fail = [](std::size_t line_no, const std::string& what) {
    return Error(ErrorCode::CacheFormatError, detail::at_line(line_no) + what);
  };
  constexpr std::string_view kBackendPrefix = "# backend=";
  if (lines.empty() || !lines[0].starts_with(kBackendPrefix)) throw fail(1, "missing '# backend=<id>' line");
  FeatureCache cache;
  cache.backend_id = std::string(lines[0].substr(kBackendPrefix.size()));
  if (lines.size() < 2) throw fail(2, "missing header");
  const auto header = detail::split_csv_line(lines[1]);
  if (header.size() != kFeatureDim + 1) {
    throw fail(2, "header has " + std::to_string(header.size() - 1) + " feature columns, expected " +
                      std::to_string(kFeatureDim));
  }
  if (lines[1] != feature_cache_header()) throw fail(2, "header must be image_id,f0,...,f999");

  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto fields = detail::split_csv_line(lines[i]);
    if (fields.size() != kFeatureDim + 1) {
      throw fail(i + 1, "row has " + std::to_string(fields.size()) + " columns, expected " +
                            std::to_string(kFeatureDim + 1));
    }
    if (fields[0].empty()) throw fail(i + 1, "empty image id");
    if (!seen.emplace(fields[0]).second) throw fail(i + 1, "duplicate image id " + std::string(fields[0]));
    std::vector<float> values(kFeatureDim);
    for (std::size_t k = 0; k < kFeatureDim; ++k) {
      const auto tok = fields[k + 1];
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), values[k]);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(values[k])) {
        throw fail(i + 1, "bad value '" + std::string(tok) + "' in column f" + std::to_string(k));
      }
    }
    cache.entries.push_back({std::string(fields[0]), FeatureVector(std::move(values))});
  }
  return cache;
}

inline FeatureCache read_feature_cache(const std::filesystem::path& path) {
  try {
    return parse_feature_cache(read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace lesion
