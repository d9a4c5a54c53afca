#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lesion/dataset.hpp"
#include "lesion/embedding.hpp"
#include "lesion/error.hpp"
#include "lesion/mlp.hpp"
#include "lesion/rng.hpp"

namespace lesion {

struct TrainConfig {
  Task task = Task::malignancy;
  std::size_t iterations = 4000;
  std::size_t batch_size = 32;
  std::size_t log_every = 10;
  AdamHyper hyper;
  std::uint64_t seed = 42;
  Activation activation = Activation::relu;

  void validate() const {
    if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (log_every < 1) throw Error(ErrorCode::InvalidConfig, "log_every must be >= 1");
    hyper.validate();
  }
};

struct LogRow {
  std::size_t iteration = 0;
  double loss = 0.0;            // mean loss of that iteration's batch
  double train_accuracy = 0.0;  // over the full training set, after the update

  bool operator==(const LogRow&) const = default;
};

struct TrainingLog {
  std::vector<LogRow> rows;

  bool operator==(const TrainingLog&) const = default;
};

inline void write_training_log_csv(std::ostream& out, const TrainingLog& log) {
  out << "iteration,loss,train_accuracy\n";
  std::string line;
  for (const auto& r : log.rows) {
    line = std::to_string(r.iteration) + ',';
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, r.loss, std::chars_format::general, 17);
    line.append(buf, res.ptr);
    line += ',';
    res = std::to_chars(buf, buf + sizeof buf, r.train_accuracy, std::chars_format::general, 17);
    line.append(buf, res.ptr);
    line += '\n';
    out << line;
  }
}

inline void write_training_log_csv(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_training_log_csv(out, log);
}

/// Epoch-shuffled sampling: indices are drawn from a permutation of [0, n)
/// and the permutation is redrawn only once it is used up, so every index
/// appears exactly once per epoch. A batch may straddle two epochs.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    if (n == 0) throw Error(ErrorCode::EmptyDataset, "cannot sample from an empty set");
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    reshuffle();
  }

  std::vector<std::size_t> next_batch(std::size_t batch_size) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (cursor_ == order_.size()) reshuffle();
      batch.push_back(order_[cursor_++]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    shuffle(std::span<std::size_t>(order_), rng_);
    cursor_ = 0;
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

namespace detail {

inline ColMatrix<float> gather_columns(std::span<const FeatureVector> features, std::span<const std::size_t> idx) {
  const auto dim = static_cast<Eigen::Index>(features.empty() ? 0 : features[0].size());
  ColMatrix<float> x(dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto v = features[idx[j]].values();
    std::copy(v.begin(), v.end(), x.col(static_cast<Eigen::Index>(j)).data());
  }
  return x;
}

/// Fraction of examples whose positive-class probability exceeds 0.5.
inline double batched_accuracy(const MlpParams<float>& params, std::span<const FeatureVector> features,
                               std::span<const int> labels, Activation act) {
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < features.size(); start += kChunk) {
    const std::size_t end = std::min(features.size(), start + kChunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const auto probs = batch_probs<float>(params, gather_columns(features, idx), act);
    for (std::size_t i = start; i < end; ++i) {
      const int predicted = probs(1, static_cast<Eigen::Index>(i - start)) > 0.5f ? 1 : 0;
      correct += predicted == labels[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

}  // namespace detail

struct TrainResult {
  MlpParams<float> params;
  TrainingLog log;
};

/// Trains one classifier for `labels` (image id -> 0/1) on `features`.
/// Runs exactly config.iterations Adam steps on mini-batches of mean
/// cross-entropy, logging every config.log_every iterations and at the end.
inline TrainResult train_task(std::span<const CacheEntry> features,
                              const std::unordered_map<std::string, int>& labels, const TrainConfig& config) {
  config.validate();
  if (features.empty()) throw Error(ErrorCode::EmptyDataset, "no training features");
  if (config.batch_size > features.size()) {
    throw Error(ErrorCode::InvalidConfig, "batch_size " + std::to_string(config.batch_size) +
                                              " exceeds the " + std::to_string(features.size()) + " training examples");
  }

  std::vector<FeatureVector> x;
  std::vector<int> y;
  x.reserve(features.size());
  y.reserve(features.size());
  std::string missing;
  for (const auto& e : features) {
    const auto it = labels.find(e.image_id);
    if (it == labels.end()) {
      missing += (missing.empty() ? "" : ", ") + e.image_id;
      continue;
    }
    if (it->second != 0 && it->second != 1) throw Error(ErrorCode::LabelOutOfDomain, e.image_id);
    x.push_back(e.features);
    y.push_back(it->second);
  }
  if (!missing.empty()) throw Error(ErrorCode::LabelMissing, "no label for " + missing);

  auto params = init_params<float>(config.seed);
  auto state = AdamState<float>::zeros(params.shape());
  EpochSampler sampler(x.size(), split_seed(config.seed, "batches"));
  TrainingLog log;
  std::vector<int> batch_labels(config.batch_size);

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto idx = sampler.next_batch(config.batch_size);
    for (std::size_t j = 0; j < idx.size(); ++j) batch_labels[j] = y[idx[j]];
    const auto batch = batch_loss_and_gradients<float>(params, detail::gather_columns(x, idx), batch_labels,
                                                      config.activation);
    if (!std::isfinite(batch.loss)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss became non-finite at iteration " + std::to_string(it));
    }
    adam_step_in_place(params, batch.grads, state, config.hyper);
    if (it % config.log_every == 0 || it == config.iterations) {
      log.rows.push_back({it, static_cast<double>(batch.loss), detail::batched_accuracy(params, x, y, config.activation)});
    }
  }
  return {std::move(params), std::move(log)};
}

// ---------------------------------------------------------------------------
// Checkpoints: "MLPW", u32 version 1, u32 n_in, n_hidden, n_out, then
// little-endian float32 w1 (row-major), b1, w2 (row-major), b2.

inline constexpr char kCheckpointMagic[4] = {'M', 'L', 'P', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t checkpoint_size(const MlpShape& s) {
  return 4 + 4 + 12 + 4 * (s.hidden * s.inputs + s.hidden + s.outputs * s.hidden + s.outputs);
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::string encode_checkpoint(const MlpParams<float>& params) {
  const auto s = params.shape();
  std::string out(kCheckpointMagic, 4);
  out.reserve(checkpoint_size(s));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(s.inputs));
  detail::put_u32(out, static_cast<std::uint32_t>(s.hidden));
  detail::put_u32(out, static_cast<std::uint32_t>(s.outputs));
  params.for_each([&](std::span<const float> t) {
    for (float f : t) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  });
  return out;
}

inline MlpParams<float> decode_checkpoint(std::string_view bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "checkpoint shorter than its magic");
  if (std::memcmp(p, kCheckpointMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not an MLPW checkpoint");
  if (bytes.size() < 20) throw Error(ErrorCode::TruncatedFile, "checkpoint header is incomplete");
  const auto version = detail::get_u32(p + 4);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  const MlpShape shape{detail::get_u32(p + 8), detail::get_u32(p + 12), detail::get_u32(p + 16)};
  if (shape.inputs == 0 || shape.hidden == 0 || shape.outputs == 0) {
    throw Error(ErrorCode::DimensionMismatch, "checkpoint declares an empty layer");
  }
  const auto expected = checkpoint_size(shape);
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedFile, "checkpoint has " + std::to_string(bytes.size()) + " bytes, " +
                                              to_string(shape) + " needs " + std::to_string(expected));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::DimensionMismatch, "checkpoint has trailing bytes beyond the declared " + to_string(shape));
  }
  auto params = MlpParams<float>::zeros(shape);
  const unsigned char* cursor = p + 20;
  params.for_each([&](std::span<float> t) {
    for (float& f : t) {
      f = std::bit_cast<float>(detail::get_u32(cursor));
      cursor += 4;
    }
  });
  return params;
}

inline void save_checkpoint(const MlpParams<float>& params, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

/// Loads a checkpoint; with `expected`, also requires those dimensions.
inline MlpParams<float> load_checkpoint(const std::filesystem::path& path,
                                        std::optional<MlpShape> expected = std::nullopt) {
  try {
    auto params = decode_checkpoint(read_text_file(path));
    if (expected && params.shape() != *expected) {
      throw Error(ErrorCode::DimensionMismatch,
                  "network is " + to_string(params.shape()) + ", expected " + to_string(*expected));
    }
    return params;
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace lesion
