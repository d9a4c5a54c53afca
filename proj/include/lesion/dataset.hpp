#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lesion/error.hpp"

namespace lesion {

/// The two binary classification problems. Label 1 is the positive class:
/// malignant for `malignancy`, non-melanocytic for `cell_origin`.
enum class Task { malignancy = 0, cell_origin = 1 };

inline constexpr std::array<Task, 2> kTasks = {Task::malignancy, Task::cell_origin};

constexpr std::string_view task_name(Task t) {
  return t == Task::malignancy ? "malignancy" : "cell-origin";
}

inline Task parse_task(std::string_view s) {
  if (s == "malignancy") return Task::malignancy;
  if (s == "cell-origin" || s == "cell_origin") return Task::cell_origin;
  throw Error(ErrorCode::InvalidConfig, "unknown task '" + std::string(s) + "'");
}

struct GroundTruthRecord {
  std::string image_id;
  int malignant = 0;
  int nonmelanocytic = 0;

  int label(Task t) const { return t == Task::malignancy ? malignant : nonmelanocytic; }

  bool operator==(const GroundTruthRecord&) const = default;
};

/// Which header the ground-truth CSV carries. `isic2017` accepts the
/// challenge header `image_id,melanoma,seborrheic_keratosis` and maps
/// melanoma -> malignant, seborrheic_keratosis -> nonmelanocytic.
enum class GroundTruthSchema { canonical, isic2017 };

inline constexpr std::string_view kCanonicalHeader = "image_id,malignant,nonmelanocytic";
inline constexpr std::string_view kIsic2017Header = "image_id,melanoma,seborrheic_keratosis";

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

/// Splits on LF, strips one trailing CR per line, drops a UTF-8 BOM and a
/// final empty line.
inline std::vector<std::string_view> split_lines(std::string_view text) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (line.ends_with('\r')) line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  return lines;
}

inline std::string at_line(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace detail

inline void validate_image_id(std::string_view id) {
  if (id.empty()) throw Error(ErrorCode::InvalidImageId, "empty image id");
  if (id.find('/') != std::string_view::npos || id.find('\\') != std::string_view::npos) {
    throw Error(ErrorCode::InvalidImageId, "image id contains a path separator: " + std::string(id));
  }
}

/// Accepts exactly "0", "1", "0.0" and "1.0".
inline std::optional<int> parse_binary_label(std::string_view token) {
  if (token == "0" || token == "0.0") return 0;
  if (token == "1" || token == "1.0") return 1;
  return std::nullopt;
}

inline std::vector<GroundTruthRecord> parse_ground_truth(
    std::string_view csv_text, GroundTruthSchema schema = GroundTruthSchema::canonical) {
  const auto lines = detail::split_lines(csv_text);
  const auto expected = schema == GroundTruthSchema::canonical ? kCanonicalHeader : kIsic2017Header;
  if (lines.empty() || lines.front() != expected) {
    throw Error(ErrorCode::MissingHeader, detail::at_line(1) + "expected header '" + std::string(expected) + "'");
  }

  std::vector<GroundTruthRecord> records;
  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto fields = detail::split_csv_line(lines[i]);
    if (fields.size() != 3) {
      throw Error(ErrorCode::RaggedRow, detail::at_line(line_no) + "expected 3 columns, found " +
                                            std::to_string(fields.size()));
    }
    try {
      validate_image_id(fields[0]);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidImageId, detail::at_line(line_no) + e.what());
    }
    GroundTruthRecord rec{std::string(fields[0]), 0, 0};
    for (int k = 0; k < 2; ++k) {
      const auto label = parse_binary_label(fields[1 + k]);
      if (!label) {
        throw Error(ErrorCode::LabelOutOfDomain, detail::at_line(line_no) + "label '" +
                                                     std::string(fields[1 + k]) + "' is not 0 or 1");
      }
      (k == 0 ? rec.malignant : rec.nonmelanocytic) = *label;
    }
    if (!seen.insert(rec.image_id).second) {
      throw Error(ErrorCode::DuplicateImageId, detail::at_line(line_no) + rec.image_id);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

/// Canonical-schema CSV, LF line endings.
inline std::string serialize_ground_truth(std::span<const GroundTruthRecord> records) {
  std::string out(kCanonicalHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.image_id + ',' + std::to_string(r.malignant) + ',' + std::to_string(r.nonmelanocytic) + '\n';
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<GroundTruthRecord> read_ground_truth(const std::filesystem::path& path,
                                                        GroundTruthSchema schema = GroundTruthSchema::canonical) {
  try {
    return parse_ground_truth(read_text_file(path), schema);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

enum class SplitName { train, validation, test };

constexpr std::string_view split_name(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::validation: return "validation";
    case SplitName::test: return "test";
  }
  return "";
}

inline SplitName parse_split_name(std::string_view s) {
  if (s == "train") return SplitName::train;
  if (s == "validation") return SplitName::validation;
  if (s == "test") return SplitName::test;
  throw Error(ErrorCode::InvalidConfig, "unknown split '" + std::string(s) + "'");
}

struct Example {
  std::string image_id;
  std::filesystem::path image_path;
  GroundTruthRecord record;
};

/// One labelled split. Images are referenced by path and decoded lazily.
class Dataset {
 public:
  Dataset(SplitName split, std::vector<Example> examples) : split_(split), examples_(std::move(examples)) {
    std::set<std::string_view> ids;
    for (const auto& ex : examples_) {
      if (!ids.insert(ex.image_id).second) throw Error(ErrorCode::DuplicateImageId, ex.image_id);
    }
  }

  SplitName split() const noexcept { return split_; }
  std::span<const Example> examples() const noexcept { return examples_; }
  std::size_t size() const noexcept { return examples_.size(); }
  bool empty() const noexcept { return examples_.empty(); }

 private:
  SplitName split_;
  std::vector<Example> examples_;
};

/// Image files in `dir` keyed by stem. Extensions .jpg, .jpeg and .png are
/// recognised case-insensitively; when one stem has several, the earlier in
/// that list wins.
inline std::map<std::string, std::filesystem::path> index_image_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  static constexpr std::array<std::string_view, 3> kExtensions = {".jpg", ".jpeg", ".png"};
  auto rank = [](const fs::path& p) {
    const auto ext = detail::lowercase(p.extension().string());
    return std::find(kExtensions.begin(), kExtensions.end(), ext) - kExtensions.begin();
  };
  std::map<std::string, fs::path> index;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    if (rank(p) == static_cast<std::ptrdiff_t>(kExtensions.size())) continue;
    auto [it, inserted] = index.emplace(p.stem().string(), p);
    if (!inserted && rank(p) < rank(it->second)) it->second = p;
  }
  return index;
}

/// Pairs each record with `<image_id>.{jpg,jpeg,png}` in `image_dir`, in
/// record order. Missing files are an error unless `allow_missing`, in which
/// case those rows are dropped and their ids appended to `dropped`.
inline Dataset load_split(const std::filesystem::path& image_dir, std::span<const GroundTruthRecord> records,
                          SplitName split, bool allow_missing = false,
                          std::vector<std::string>* dropped = nullptr) {
  const auto files = index_image_dir(image_dir);
  std::vector<Example> examples;
  std::vector<std::string> missing;
  for (const auto& r : records) {
    const auto it = files.find(r.image_id);
    if (it == files.end()) {
      missing.push_back(r.image_id);
      continue;
    }
    examples.push_back({r.image_id, it->second, r});
  }
  if (!missing.empty()) {
    if (!allow_missing) {
      std::string list;
      for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
      throw Error(ErrorCode::MissingImageFile,
                  std::to_string(missing.size()) + " image(s) absent from " + image_dir.string() + ": " + list);
    }
    if (dropped) dropped->insert(dropped->end(), missing.begin(), missing.end());
  }
  if (examples.empty()) {
    throw Error(ErrorCode::EmptyDataset, "no images for split '" + std::string(split_name(split)) + "'");
  }
  return Dataset(split, std::move(examples));
}

/// Every image file in `dir`, ordered by id, with placeholder zero labels.
/// Used where only the pixels matter (feature extraction, prediction).
inline Dataset scan_image_dir(const std::filesystem::path& dir, SplitName split = SplitName::train) {
  std::vector<Example> examples;
  for (const auto& [id, path] : index_image_dir(dir)) {
    validate_image_id(id);
    examples.push_back({id, path, GroundTruthRecord{id, 0, 0}});
  }
  if (examples.empty()) throw Error(ErrorCode::EmptyDataset, "no .jpg/.jpeg/.png images in " + dir.string());
  return Dataset(split, std::move(examples));
}

struct DatasetSummary {
  std::size_t count = 0;
  std::array<std::size_t, 2> positives{};           // indexed by Task
  std::array<std::optional<double>, 2> balance{};    // absent when count == 0
};

inline DatasetSummary dataset_summary(const Dataset& d) {
  DatasetSummary s;
  s.count = d.size();
  for (const auto& ex : d.examples()) {
    for (Task t : kTasks) s.positives[static_cast<int>(t)] += static_cast<std::size_t>(ex.record.label(t));
  }
  if (s.count > 0) {
    for (int t = 0; t < 2; ++t) s.balance[t] = static_cast<double>(s.positives[t]) / static_cast<double>(s.count);
  }
  return s;
}

}  // namespace lesion
