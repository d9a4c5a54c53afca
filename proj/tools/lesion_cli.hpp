#pragma once

// Subcommand front end: extract, train, eval, predict.
//
// Exit codes: 0 success, 1 runtime or data error, 2 usage error (bad flags or
// an invalid config file). Commands never lock files; running two commands
// that write the same output concurrently is unsupported.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "lesion/config.hpp"
#include "lesion/dataset.hpp"
#include "lesion/embedding.hpp"
#include "lesion/eval.hpp"
#include "lesion/image.hpp"
#include "lesion/mlp.hpp"
#include "lesion/preprocess.hpp"
#include "lesion/pretrained.hpp"
#include "lesion/train.hpp"

namespace lesion::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

inline std::string fmt_double(double v, const char* format = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

inline PipelineConfig config_from(const std::string& path) {
  if (path.empty()) return PipelineConfig{};
  try {
    return load_config(path);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidConfig) throw UsageError(e.what());
    throw;
  }
}

inline GroundTruthSchema schema_from(bool challenge) {
  return challenge ? GroundTruthSchema::isic2017 : GroundTruthSchema::canonical;
}

struct BackendFlags {
  std::string backend;
  std::string model;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--backend", backend, "Embedding backend")->required()->check(CLI::IsMember({"pretrained", "stub"}));
    cmd.add_option("--model", model, "ONNX model file (pretrained backend)");
    cmd.add_option("--seed", seed, "Seed for the stub projection and augmentation");
  }

  void check() const {
    if (backend == "pretrained" && model.empty()) throw UsageError("--backend pretrained requires --model FILE");
  }

  std::unique_ptr<EmbeddingBackend> make(const PipelineConfig& cfg, std::uint64_t resolved_seed) const {
    if (backend == "pretrained") return pretrained_backend(model, cfg.normalization);
    return stub_backend(resolved_seed);
  }
};

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
  std::string images;
  BackendFlags backend;
  std::string out;
  std::string labels;
  bool challenge_labels = false;
  bool allow_missing = false;
  std::string config;
  std::string augmented_out;
  std::string dump_augmented;
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
};

inline int run_extract(const ExtractArgs& a, Io io) {
  a.backend.check();
  const auto cfg = config_from(a.config);
  const auto seed = resolve_seed(a.backend.seed, cfg.seed);

  std::optional<Dataset> data;
  if (!a.labels.empty()) {
    const auto records = read_ground_truth(a.labels, schema_from(a.challenge_labels));
    std::vector<std::string> dropped;
    data.emplace(load_split(a.images, records, SplitName::train, a.allow_missing, &dropped));
    for (const auto& id : dropped) io.err << "warning: no image for " << id << ", row dropped\n";
  } else {
    data.emplace(scan_image_dir(a.images));
  }

  const auto backend = a.backend.make(cfg, seed);
  const double fraction = a.augmented_out.empty() ? 0.0 : cfg.augment_fraction;
  const auto pool = build_training_pool(*data, fraction, seed, cfg.augment);
  if (!a.dump_augmented.empty()) fs::create_directories(a.dump_augmented);

  const auto groups = pool.groups();
  std::vector<std::optional<FeatureVector>> features(pool.size());
  std::vector<std::exception_ptr> failures(groups.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t g = next++; g < groups.size(); g = next++) {
      const auto& source_id = data->examples()[g].image_id;
      try {
        const auto base = pool.load_source(g);
        for (auto i : groups[g]) {
          const auto& entry = pool.entries()[i];
          const auto img = pool.derive(entry, base);
          if (entry.transform && !a.dump_augmented.empty()) {
            write_png(img, fs::path(a.dump_augmented) /
                               (source_id + "__" + std::string(transform_name(*entry.transform)) + ".png"));
          }
          try {
            features[i] = backend->embed(img);
          } catch (const Error& e) {
            throw Error(e.code(), source_id + ": " + e.what());
          }
        }
      } catch (...) {
        failures[g] = std::current_exception();
      }
    }
  };
  const unsigned n_workers = std::clamp<unsigned>(a.workers, 1, static_cast<unsigned>(std::max<std::size_t>(1, groups.size())));
  {
    std::vector<std::jthread> threads;
    for (unsigned t = 1; t < n_workers; ++t) threads.emplace_back(worker);
    worker();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  std::vector<CacheEntry> originals, augmented;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& entry = pool.entries()[i];
    (entry.transform ? augmented : originals).push_back({entry.image_id, *features[i]});
  }
  write_feature_cache(a.out, originals, backend->id());
  if (!a.augmented_out.empty()) write_feature_cache(a.augmented_out, augmented, backend->id());
  io.out << "extracted=" << originals.size() << " augmented=" << augmented.size() << " backend=" << backend->id()
         << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string features;
  std::string labels;
  std::string task;
  std::string config;
  std::string out;
  std::string log;
  std::string augmented_features;
  std::optional<std::uint64_t> seed;
  bool challenge_labels = false;
};

inline std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 20) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) s += (i ? ", " : "") + ids[i];
  if (ids.size() > limit) s += ", ... (" + std::to_string(ids.size()) + " total)";
  return s;
}

inline int run_train(const TrainArgs& a, Io io) {
  auto cfg = config_from(a.config);
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  const Task task = parse_task(a.task);
  const auto records = read_ground_truth(a.labels, schema_from(a.challenge_labels));
  auto cache = read_feature_cache(a.features);

  std::unordered_map<std::string, int> labels;
  for (const auto& r : records) labels.emplace(r.image_id, r.label(task));

  std::map<std::string, const CacheEntry*> by_id;
  std::vector<std::string> unlabeled;
  for (const auto& e : cache.entries) {
    by_id.emplace(e.image_id, &e);
    if (!labels.contains(e.image_id)) unlabeled.push_back(e.image_id);
  }
  std::vector<std::string> absent;
  std::vector<CacheEntry> train;
  for (const auto& r : records) {
    const auto it = by_id.find(r.image_id);
    if (it == by_id.end()) {
      absent.push_back(r.image_id);
    } else {
      train.push_back(*it->second);
    }
  }
  if (!absent.empty()) {
    throw Error(ErrorCode::LabelMissing, "labelled ids absent from " + a.features + ": " + join_ids(absent));
  }
  if (!unlabeled.empty()) {
    throw Error(ErrorCode::LabelMissing, "cached ids without a label in " + a.labels + ": " + join_ids(unlabeled));
  }

  if (!a.augmented_features.empty()) {
    const auto extra = read_feature_cache(a.augmented_features);
    if (extra.backend_id != cache.backend_id) {
      throw Error(ErrorCode::BackendMismatch, a.features + " was extracted by '" + cache.backend_id + "' but " +
                                                  a.augmented_features + " by '" + extra.backend_id + "'");
    }
    std::vector<std::string> orphans;
    for (const auto& e : extra.entries) {
      const auto parsed = parse_augmented_id(e.image_id);
      const auto it = parsed ? labels.find(parsed->second) : labels.end();
      if (it == labels.end()) {
        orphans.push_back(e.image_id);
        continue;
      }
      labels.emplace(e.image_id, it->second);
      train.push_back(e);
    }
    if (!orphans.empty()) {
      throw Error(ErrorCode::LabelMissing, "augmented ids whose source has no label: " + join_ids(orphans));
    }
  }

  const auto result = train_task(train, labels, cfg.train_config(task));
  save_checkpoint(result.params, a.out);
  write_training_log_csv(fs::path(a.log), result.log);
  const auto& last = result.log.rows.back();
  io.out << "task=" << task_name(task) << " examples=" << train.size() << " final_iteration=" << last.iteration
         << " final_loss=" << fmt_double(last.loss) << " final_train_accuracy=" << fmt_double(last.train_accuracy)
         << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string features;
  std::string labels;
  std::string model_task1;
  std::string model_task2;
  std::string report;
  std::string roc_dir;
  std::string config;
  bool challenge_labels = false;
};

inline MlpParams<float> load_classifier(const std::string& path) {
  auto params = load_checkpoint(path);
  const auto s = params.shape();
  if (s.inputs != kFeatureDim || s.outputs != 2) {
    throw Error(ErrorCode::DimensionMismatch, path + ": network is " + to_string(s) + ", expected 1000 inputs and 2 outputs");
  }
  return params;
}

inline int run_eval(const EvalArgs& a, Io io) {
  const auto cfg = config_from(a.config);
  const auto records = read_ground_truth(a.labels, schema_from(a.challenge_labels));
  const auto cache = read_feature_cache(a.features);
  const std::array<MlpParams<float>, 2> models = {load_classifier(a.model_task1), load_classifier(a.model_task2)};

  std::map<std::string, const FeatureVector*> by_id;
  for (const auto& e : cache.entries) by_id.emplace(e.image_id, &e.features);
  std::vector<FeatureVector> features;
  std::vector<std::string> ids, absent;
  for (const auto& r : records) {
    const auto it = by_id.find(r.image_id);
    if (it == by_id.end()) {
      absent.push_back(r.image_id);
      continue;
    }
    ids.push_back(r.image_id);
    features.push_back(*it->second);
  }
  if (!absent.empty()) throw Error(ErrorCode::LabelMissing, "labelled ids absent from " + a.features + ": " + join_ids(absent));

  std::array<TaskScores, 2> scores;
  for (Task t : kTasks) {
    auto& s = scores[static_cast<int>(t)];
    s.task = std::string(task_name(t));
    s.ids = ids;
    for (const auto& p : predict_probs(models[static_cast<int>(t)], features, cfg.hidden_activation)) {
      s.scores.push_back(p[1]);
    }
    for (const auto& r : records) {
      if (by_id.contains(r.image_id)) s.labels.push_back(r.label(t));
    }
  }
  const auto report = evaluation_report(scores[0], scores[1]);

  {
    std::ofstream out(a.report, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + a.report);
    out << to_json(report).dump(2) << "\n";
  }
  if (!a.roc_dir.empty()) {
    fs::create_directories(a.roc_dir);
    for (const auto& t : report.tasks) {
      if (t.roc) write_roc_csv(fs::path(a.roc_dir) / (t.task + "_roc.csv"), *t.roc);
    }
  }

  int code = kExitOk;
  for (const auto& t : report.tasks) {
    io.out << "task=" << t.task << " accuracy=" << fmt_double(t.accuracy)
           << " auc=" << (t.auc ? fmt_double(*t.auc) : std::string("none")) << "\n";
    if (t.error) {
      io.err << "error: " << t.task << ": " << *t.error << "\n";
      code = kExitError;
    }
  }
  if (report.mean_auc) io.out << "mean_auc=" << fmt_double(*report.mean_auc) << "\n";
  return code;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string image;
  BackendFlags backend;
  std::string model_task1;
  std::string model_task2;
  std::string config;
};

inline int run_predict(const PredictArgs& a, Io io) {
  a.backend.check();
  const auto cfg = config_from(a.config);
  const auto seed = resolve_seed(a.backend.seed, cfg.seed);
  const std::array<MlpParams<float>, 2> models = {load_classifier(a.model_task1), load_classifier(a.model_task2)};
  const auto backend = a.backend.make(cfg, seed);
  const auto img = resize_bilinear(decode_image(a.image), kInputSide, kInputSide);
  const std::vector<FeatureVector> feature = {backend->embed(img)};
  for (Task t : kTasks) {
    const double p = predict_probs(models[static_cast<int>(t)], feature, cfg.hidden_activation)[0][1];
    io.out << task_name(t) << " p(positive)=" << fmt_double(p, "%.6g") << " label=" << predict_label(p) << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, Io io) {
  CLI::App app{"Skin-lesion classification pipeline: feature extraction, training, evaluation, prediction"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Resize and embed images into a feature cache");
  extract->add_option("--images", ex.images, "Image directory")->required();
  ex.backend.add_to(*extract);
  extract->add_option("--out", ex.out, "Feature cache for the original images")->required();
  extract->add_option("--labels", ex.labels, "Ground-truth CSV; restricts extraction to its ids");
  extract->add_flag("--challenge-labels", ex.challenge_labels, "Labels use the ISIC 2017 challenge header");
  extract->add_flag("--allow-missing", ex.allow_missing, "Drop label rows whose image is missing");
  extract->add_option("--config", ex.config, "Pipeline config file");
  extract->add_option("--augmented-out", ex.augmented_out, "Also write a cache of augmented images");
  extract->add_option("--dump-augmented", ex.dump_augmented, "Write augmented images as PNG into DIR");
  extract->add_option("--workers", ex.workers, "Embedding worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one task's classifier");
  train->add_option("--features", tr.features, "Feature cache")->required();
  train->add_option("--labels", tr.labels, "Ground-truth CSV")->required();
  train->add_option("--task", tr.task, "Task")->required()->check(CLI::IsMember({"malignancy", "cell-origin"}));
  train->add_option("--config", tr.config, "Pipeline config file");
  train->add_option("--out", tr.out, "Checkpoint to write")->required();
  train->add_option("--log", tr.log, "Training-curve CSV to write")->required();
  train->add_option("--augmented-features", tr.augmented_features, "Feature cache of augmented images");
  train->add_option("--seed", tr.seed, "Overrides the config seed");
  train->add_flag("--challenge-labels", tr.challenge_labels, "Labels use the ISIC 2017 challenge header");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score both classifiers on a labelled split");
  eval->add_option("--features", ev.features, "Feature cache")->required();
  eval->add_option("--labels", ev.labels, "Ground-truth CSV")->required();
  eval->add_option("--model-task1", ev.model_task1, "Malignancy checkpoint")->required();
  eval->add_option("--model-task2", ev.model_task2, "Cell-origin checkpoint")->required();
  eval->add_option("--report", ev.report, "JSON report to write")->required();
  eval->add_option("--roc-dir", ev.roc_dir, "Directory for per-task ROC CSVs");
  eval->add_option("--config", ev.config, "Pipeline config file");
  eval->add_flag("--challenge-labels", ev.challenge_labels, "Labels use the ISIC 2017 challenge header");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--image", pr.image, "Image file")->required();
  pr.backend.add_to(*predict);
  predict->add_option("--model-task1", pr.model_task1, "Malignancy checkpoint")->required();
  predict->add_option("--model-task2", pr.model_task2, "Cell-origin checkpoint")->required();
  predict->add_option("--config", pr.config, "Pipeline config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (extract->parsed()) return run_extract(ex, io);
    if (train->parsed()) return run_train(tr, io);
    if (eval->parsed()) return run_eval(ev, io);
    if (predict->parsed()) return run_predict(pr, io);
  } catch (const UsageError& e) {
    io.err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace lesion::cli
