#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lesion/dataset.hpp"
#include "lesion/embedding.hpp"
#include "lesion/error.hpp"
#include "lesion/mlp.hpp"

namespace lesion {

/// Per-example class probabilities, evaluated one example at a time so the
/// result does not depend on how examples are grouped.
inline std::vector<std::array<double, 2>> predict_probs(const MlpParams<float>& params,
                                                        std::span<const FeatureVector> features,
                                                        Activation act = Activation::relu) {
  if (params.shape().outputs != 2) throw Error(ErrorCode::ShapeMismatch, "classifier must have 2 outputs");
  std::vector<std::array<double, 2>> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    const auto tr = forward<float>(params, f.values(), act);
    out.push_back({tr.probs[0], tr.probs[1]});
  }
  return out;
}

/// 1 when score > 0.5; an exact tie goes to class 0.
constexpr int predict_label(double positive_score) { return positive_score > 0.5 ? 1 : 0; }

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(scores.size()) + " scores for " +
                                               std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw Error(ErrorCode::Empty, "no examples to score");
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorCode::LabelOutOfDomain, "label must be 0 or 1");
  }
}

}  // namespace detail

inline double accuracy(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += predict_label(scores[i]) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = predict_label(scores[i]) == 1;
    if (labels[i] == 1) {
      (pred ? cm.tp : cm.fn)++;
    } else {
      (pred ? cm.fp : cm.tn)++;
    }
  }
  return cm;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  bool operator==(const RocPoint&) const = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1), both coordinates non-decreasing
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
  // auc as the exact fraction auc_numerator / auc_denominator, where the
  // denominator is 2 * positives * negatives.
  std::uint64_t auc_numerator = 0;
  std::uint64_t auc_denominator = 1;
};

/// ROC curve over the distinct scores in decreasing order, with the
/// trapezoidal area. Tied scores form one diagonal step, which makes the
/// area equal P(s+ > s-) + P(s+ = s-)/2 over positive/negative pairs.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores(scores, labels);
  const auto positives = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
  const auto negatives = static_cast<std::uint64_t>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::DegenerateLabels, "ROC needs both classes; got " + std::to_string(positives) +
                                                 " positive and " + std::to_string(negatives) + " negative");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw Error(ErrorCode::NonFiniteInput, "score is NaN");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult result;
  result.curve.points.push_back({0.0, 0.0});
  // Twice the area in units of (1/negatives) x (1/positives), kept integral.
  std::uint64_t twice_area = 0;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::uint64_t dtp = 0, dfp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? dtp : dfp)++;
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    result.curve.points.push_back(
        {static_cast<double>(fp) / static_cast<double>(negatives), static_cast<double>(tp) / static_cast<double>(positives)});
  }
  result.auc_numerator = twice_area;
  result.auc_denominator = 2 * positives * negatives;
  result.auc = static_cast<double>(twice_area) / static_cast<double>(result.auc_denominator);
  return result;
}

/// Scores of one task over a list of examples.
struct TaskScores {
  std::string task;
  std::vector<std::string> ids;
  std::vector<double> scores;  // probability of label 1
  std::vector<int> labels;
};

struct TaskReport {
  std::string task;
  std::size_t count = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::optional<double> auc;         // absent when `error` is set
  std::optional<RocCurve> roc;
  std::optional<std::string> error;  // e.g. DegenerateLabels
};

struct EvalReport {
  std::array<TaskReport, 2> tasks;
  std::optional<double> mean_auc;  // present only when both AUCs are
};

inline TaskReport evaluate_task(const TaskScores& s) {
  if (s.ids.size() != s.scores.size()) {
    throw Error(ErrorCode::LengthMismatch, s.task + ": " + std::to_string(s.ids.size()) + " ids for " +
                                               std::to_string(s.scores.size()) + " scores");
  }
  TaskReport r;
  r.task = s.task;
  r.count = s.scores.size();
  r.accuracy = accuracy(s.scores, s.labels);
  r.confusion = confusion_matrix(s.scores, s.labels);
  try {
    auto roc = roc_auc(s.scores, s.labels);
    r.auc = roc.auc;
    r.roc = std::move(roc.curve);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateLabels) throw;
    r.error = e.what();
  }
  return r;
}

inline EvalReport evaluation_report(const TaskScores& task1, const TaskScores& task2) {
  if (task1.ids != task2.ids) throw Error(ErrorCode::IdMismatch, "the two tasks were scored on different examples");
  EvalReport report{{evaluate_task(task1), evaluate_task(task2)}, std::nullopt};
  if (report.tasks[0].auc && report.tasks[1].auc) report.mean_auc = (*report.tasks[0].auc + *report.tasks[1].auc) / 2.0;
  return report;
}

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : report.tasks) {
    nlohmann::json j = {{"task", t.task},         {"count", t.count},        {"accuracy", t.accuracy},
                        {"tp", t.confusion.tp},   {"fp", t.confusion.fp},    {"tn", t.confusion.tn},
                        {"fn", t.confusion.fn}};
    j["auc"] = t.auc ? nlohmann::json(*t.auc) : nlohmann::json(nullptr);
    if (t.error) j["error"] = *t.error;
    tasks.push_back(std::move(j));
  }
  return {{"tasks", std::move(tasks)},
          {"mean_auc", report.mean_auc ? nlohmann::json(*report.mean_auc) : nlohmann::json(nullptr)}};
}

inline void write_roc_csv(const std::filesystem::path& path, const RocCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "fpr,tpr\n";
  char buf[64];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.fpr, p.tpr);
    out << buf;
  }
}

}  // namespace lesion
