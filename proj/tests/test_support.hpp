#pragma once

// Helpers shared by the test suites: independent oracles, synthetic data
// and scratch directories. Nothing here calls into the code paths the
// oracles are used to check.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "lesion/embedding.hpp"
#include "lesion/mlp.hpp"

namespace lesion::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("lesion_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

/// Writes a small RGB image whose pixels depend on `salt`.
inline void write_test_image(const std::filesystem::path& p, int width = 8, int height = 6, int salt = 0) {
  cv::Mat m(height, width, CV_8UC3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>((x * 29 + salt * 7) % 256),
                                        static_cast<uchar>((y * 31 + salt * 13) % 256),
                                        static_cast<uchar>((x * y + salt) % 256));
    }
  }
  cv::imwrite(p.string(), m);
}

/// P(s+ > s-) + P(s+ = s-)/2 over all positive/negative pairs.
inline double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

/// Loss of a double-precision network evaluated from scratch with plain
/// loops (no Eigen) in long double, used as the finite-difference objective.
/// The extra precision keeps the oracle's own rounding well below the
/// tolerance it is checked against.
inline long double reference_loss(const MlpParams<double>& p, const std::vector<double>& x, int label, Activation act) {
  using R = long double;
  const auto s = p.shape();
  std::vector<R> h(s.hidden);
  for (std::size_t j = 0; j < s.hidden; ++j) {
    R a = p.b1[static_cast<Eigen::Index>(j)];
    for (std::size_t k = 0; k < s.inputs; ++k) a += R(p.w1(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) * x[k];
    h[j] = act == Activation::relu ? (a > 0 ? a : R(0)) : std::tanh(a);
  }
  std::vector<R> z(s.outputs);
  R zmax = -INFINITY;
  for (std::size_t o = 0; o < s.outputs; ++o) {
    R a = p.b2[static_cast<Eigen::Index>(o)];
    for (std::size_t j = 0; j < s.hidden; ++j) a += R(p.w2(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(j))) * h[j];
    z[o] = a;
    zmax = std::max(zmax, a);
  }
  R denom = 0;
  for (R v : z) denom += std::exp(v - zmax);
  const R p_label = std::exp(z[static_cast<std::size_t>(label)] - zmax) / denom;
  return -std::log(std::max(p_label, R(1e-12)));
}

/// Central differences of `loss` with respect to every parameter, in
/// LayerTensors order (w1, b1, w2, b2), flattened.
inline std::vector<double> finite_difference_gradient(MlpParams<double> p,
                                                      const std::function<long double(const MlpParams<double>&)>& loss,
                                                      double h = 1e-5) {
  std::vector<double*> coords;
  p.for_each([&](std::span<double> t) {
    for (double& v : t) coords.push_back(&v);
  });
  std::vector<double> grad;
  grad.reserve(coords.size());
  for (double* c : coords) {
    const double saved = *c;
    const double hi = saved + h;
    const double lo = saved - h;
    *c = hi;
    const long double up = loss(p);
    *c = lo;
    const long double down = loss(p);
    *c = saved;
    grad.push_back(static_cast<double>((up - down) / (static_cast<long double>(hi) - lo)));
  }
  return grad;
}

template <typename T>
std::vector<double> flatten(const LayerTensors<T>& t) {
  std::vector<double> out;
  t.for_each([&](std::span<const T> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

/// Two Gaussian clusters in 1000-d at +/-0.3 u for a random unit vector u,
/// per-component sigma 0.05; the first half is labelled 1.
struct SyntheticSet {
  std::vector<CacheEntry> entries;
  std::unordered_map<std::string, int> labels;
};

inline SyntheticSet separable_clusters(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> u(kFeatureDim);
  double norm = 0.0;
  for (auto& v : u) {
    v = gauss(rng);
    norm += v * v;
  }
  for (auto& v : u) v /= std::sqrt(norm);

  SyntheticSet set;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n / 2 ? 1 : 0;
    const double sign = label == 1 ? 1.0 : -1.0;
    std::vector<float> f(kFeatureDim);
    for (std::size_t k = 0; k < kFeatureDim; ++k) f[k] = static_cast<float>(sign * 0.3 * u[k] + 0.05 * gauss(rng));
    const std::string id = "syn_" + std::to_string(i);
    set.entries.push_back({id, FeatureVector(std::move(f))});
    set.labels.emplace(id, label);
  }
  return set;
}

}  // namespace lesion::testing
