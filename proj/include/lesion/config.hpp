#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "lesion/dataset.hpp"
#include "lesion/error.hpp"
#include "lesion/mlp.hpp"
#include "lesion/preprocess.hpp"
#include "lesion/pretrained.hpp"
#include "lesion/train.hpp"

namespace lesion {

/// Every tunable of the pipeline. Read from a flat `key = value` file where
/// `#` starts a comment; unknown keys are rejected.
struct PipelineConfig {
  AugmentConfig augment;
  double augment_fraction = 0.2;
  std::size_t iterations = 4000;
  std::size_t batch_size = 32;
  std::size_t log_every = 10;
  AdamHyper adam;
  std::uint64_t seed = 42;
  Normalization normalization = Normalization::symmetric;
  Activation hidden_activation = Activation::relu;

  void validate() const {
    augment.validate();
    if (!(augment_fraction >= 0.0 && augment_fraction <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "augment_fraction must be in [0, 1]");
    }
    train_config(Task::malignancy).validate();
  }

  TrainConfig train_config(Task task) const {
    return {task, iterations, batch_size, log_every, adam, seed, hidden_activation};
  }

  bool operator==(const PipelineConfig& o) const {
    return emit() == o.emit();
  }

  std::string emit() const;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw Error(ErrorCode::InvalidConfig, std::string(key) + ": cannot parse '" + std::string(value) + "'");
  }
  return out;
}

}  // namespace detail

inline std::string PipelineConfig::emit() const {
  using detail::format_double;
  std::string out;
  auto line = [&](std::string_view k, const std::string& v) { out += std::string(k) + " = " + v + "\n"; };
  line("crop_fraction", format_double(augment.crop_fraction));
  line("scale_min", format_double(augment.scale_min));
  line("scale_max", format_double(augment.scale_max));
  line("brightness_factor", format_double(augment.brightness_factor));
  line("augment_fraction", format_double(augment_fraction));
  line("iterations", std::to_string(iterations));
  line("batch_size", std::to_string(batch_size));
  line("log_every", std::to_string(log_every));
  line("learning_rate", format_double(adam.learning_rate));
  line("beta1", format_double(adam.beta1));
  line("beta2", format_double(adam.beta2));
  line("epsilon", format_double(adam.epsilon));
  line("seed", std::to_string(seed));
  line("normalization", std::string(normalization_name(normalization)));
  line("hidden_activation", std::string(activation_name(hidden_activation)));
  return out;
}

/// Parses config text on top of the defaults and validates the result.
inline PipelineConfig parse_config(std::string_view text) {
  PipelineConfig cfg;
  std::set<std::string, std::less<>> seen;
  const auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = detail::at_line(i + 1);
    if (eq == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, where + "expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (!seen.emplace(key).second) throw Error(ErrorCode::InvalidConfig, where + "duplicate key " + std::string(key));
    try {
      using detail::parse_number;
      if (key == "crop_fraction") cfg.augment.crop_fraction = parse_number<double>(key, value);
      else if (key == "scale_min") cfg.augment.scale_min = parse_number<double>(key, value);
      else if (key == "scale_max") cfg.augment.scale_max = parse_number<double>(key, value);
      else if (key == "brightness_factor") cfg.augment.brightness_factor = parse_number<double>(key, value);
      else if (key == "augment_fraction") cfg.augment_fraction = parse_number<double>(key, value);
      else if (key == "iterations") cfg.iterations = parse_number<std::size_t>(key, value);
      else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(key, value);
      else if (key == "log_every") cfg.log_every = parse_number<std::size_t>(key, value);
      else if (key == "learning_rate") cfg.adam.learning_rate = parse_number<double>(key, value);
      else if (key == "beta1") cfg.adam.beta1 = parse_number<double>(key, value);
      else if (key == "beta2") cfg.adam.beta2 = parse_number<double>(key, value);
      else if (key == "epsilon") cfg.adam.epsilon = parse_number<double>(key, value);
      else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
      else if (key == "normalization") cfg.normalization = parse_normalization(value);
      else if (key == "hidden_activation") cfg.hidden_activation = parse_activation(value);
      else throw Error(ErrorCode::InvalidConfig, "unknown key '" + std::string(key) + "'");
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_text_file(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

/// Seed precedence: command-line flag, then LESION_SEED, then the config
/// value (which defaults to 42).
inline std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LESION_SEED"); env && *env) {
    return detail::parse_number<std::uint64_t>("LESION_SEED", env);
  }
  return config_seed;
}

}  // namespace lesion
