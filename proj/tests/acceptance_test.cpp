// Acceptance checks, one line per criterion. Exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lesion/dataset.hpp"
#include "lesion/embedding.hpp"
#include "lesion/eval.hpp"
#include "lesion/mlp.hpp"
#include "lesion/preprocess.hpp"
#include "lesion/pretrained.hpp"
#include "lesion/train.hpp"
#include "test_support.hpp"

namespace {

using namespace lesion;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const fs::path kData = LESION_TEST_DATA_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "FAILED " + what;
    }
  }
  void note(const std::string& s) {
    if (pass) detail += (detail.empty() ? "" : "; ") + s;
  }
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

Outcome gradient_correctness() {
  Outcome o;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const MlpShape shape{3, 4, 2};
  constexpr int kInstances = 20;
  double worst = 0.0;
  int failures = 0;
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto act = trial % 2 ? Activation::tanh : Activation::relu;
    auto p = MlpParams<double>::zeros(shape);
    p.for_each([&](std::span<double> t) {
      for (auto& v : t) v = gauss(rng);
    });
    std::vector<double> x(3);
    for (auto& v : x) v = gauss(rng);
    const int label = static_cast<int>(rng() % 2);
    const auto analytic =
        testing::flatten(backward<double>(forward<double>(p, std::span<const double>(x), act), p, label, act));
    const auto numeric = testing::finite_difference_gradient(
        p, [&](const MlpParams<double>& q) { return testing::reference_loss(q, x, label, act); }, 1e-5);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
      if (scale <= 1e-8) continue;
      const double rel = std::abs(analytic[i] - numeric[i]) / scale;
      worst = std::max(worst, rel);
      failures += rel > 1e-6;
    }
  }
  o.require(failures == 0, std::to_string(failures) + " coordinates above 1e-6 relative error");
  o.note(std::to_string(kInstances) + " instances, worst relative error " + fmt("%.2e", worst));
  return o;
}

Outcome auc_oracle() {
  Outcome o;
  std::mt19937_64 rng(2);
  constexpr int kInstances = 500;
  double worst = 0.0;
  bool invariant = true, flip = true, monotone = true;
  for (int trial = 0; trial < kInstances; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    const auto levels = 1 + rng() % 10;
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / static_cast<double>(levels);
      l[i] = static_cast<int>(rng() % 2);
    }
    l[0] = 1;
    l[1] = 0;
    const auto r = roc_auc(s, l);
    worst = std::max(worst, std::abs(r.auc - testing::pairwise_auc(s, l)));

    std::vector<double> cube(n), affine(n);
    for (std::size_t i = 0; i < n; ++i) {
      cube[i] = s[i] * s[i] * s[i];
      affine[i] = 2 * s[i] + 1;
    }
    for (const auto& t : {cube, affine}) {
      const auto rt = roc_auc(t, l);
      invariant = invariant && rt.auc == r.auc && rt.auc_numerator == r.auc_numerator;
    }
    auto flipped = l;
    for (auto& v : flipped) v = 1 - v;
    const auto rf = roc_auc(s, flipped);
    flip = flip && rf.auc_denominator == r.auc_denominator && rf.auc_numerator == r.auc_denominator - r.auc_numerator;

    const auto& pts = r.curve.points;
    monotone = monotone && pts.front() == RocPoint{0, 0} && pts.back() == RocPoint{1, 1};
    for (std::size_t i = 1; i < pts.size(); ++i) monotone = monotone && pts[i].fpr >= pts[i - 1].fpr && pts[i].tpr >= pts[i - 1].tpr;
  }
  o.require(worst <= 1e-12, "pairwise oracle gap " + fmt("%.2e", worst));
  o.require(invariant, "monotone-transform invariance");
  o.require(flip, "label-flip symmetry");
  o.require(monotone, "curve monotonicity");
  o.note(std::to_string(kInstances) + " tied instances, max |auc - pairwise| " + fmt("%.1e", worst) +
         ", x^3 / 2x+1 invariance and label flip exact");
  return o;
}

Outcome synthetic_end_to_end() {
  Outcome o;
  const auto set = testing::separable_clusters(200, 3);
  TrainConfig cfg;
  cfg.iterations = 2000;
  const auto result = train_task(set.entries, set.labels, cfg);
  const auto& last = result.log.rows.back();
  o.require(last.iteration == 2000, "final iteration " + std::to_string(last.iteration));
  o.require(last.train_accuracy == 1.0, "final accuracy " + fmt("%.4f", last.train_accuracy));
  o.require(last.loss < 0.05, "final loss " + fmt("%.4g", last.loss));
  o.note("200 examples, 2000 iterations: accuracy " + fmt("%.3f", last.train_accuracy) + ", loss " +
         fmt("%.3g", last.loss));
  return o;
}

Outcome shape_conformance() {
  Outcome o;
  const auto p = init_params<float>(42);
  o.require(p.shape() == MlpShape{1000, 1000, 2} && p.w1.rows() == 1000 && p.w1.cols() == 1000 && p.b1.size() == 1000 &&
                p.w2.rows() == 2 && p.w2.cols() == 1000 && p.b2.size() == 2,
            "network is " + to_string(p.shape()));

  const auto set = testing::separable_clusters(40, 4);
  TrainConfig cfg;
  cfg.iterations = 4000;
  const auto result = train_task(set.entries, set.labels, cfg);
  o.require(result.log.rows.back().iteration == 4000, "last logged iteration");

  testing::TempDir dir;
  std::string csv = "image_id,malignant,nonmelanocytic\n";
  for (int i = 0; i < 2000; ++i) {
    const std::string id = "ISIC_" + std::to_string(1000000 + i);
    testing::write_test_image(dir / (id + ".png"), 4 + i % 5, 3 + i % 4, i);
    csv += id + "," + std::to_string(i % 2) + "," + std::to_string(i % 3 == 0) + "\n";
  }
  const auto records = parse_ground_truth(csv);
  const auto train = load_split(dir.path(), records, SplitName::train);
  const auto pool = build_training_pool(train, 0.2, 42);
  o.require(pool.size() == 3600, "pool size " + std::to_string(pool.size()));
  std::size_t augmented = 0;
  for (const auto& e : pool.entries()) augmented += e.transform.has_value();
  o.require(augmented == 1600, "augmented entries " + std::to_string(augmented));

  const StubBackend stub(42);
  bool all_1000 = true;
  for (std::size_t i = 0; i < pool.size(); i += 97) {
    all_1000 = all_1000 && stub.embed(pool.materialize(pool.entries()[i])).size() == kFeatureDim;
  }
  const PretrainedBackend onnx(kData / "mean_rgb_nhwc_1000.onnx", Normalization::symmetric);
  all_1000 = all_1000 && onnx.embed(pool.materialize(pool.entries()[3599])).size() == kFeatureDim;
  o.require(all_1000, "embedding length");
  o.note("1000-1000-2 network, final log row 4000, pool 2000 -> 3600, embeddings length 1000");
  return o;
}

Outcome determinism() {
  Outcome o;
  testing::TempDir dir;
  const auto set = testing::separable_clusters(64, 5);
  TrainConfig cfg;
  cfg.iterations = 200;
  for (const auto* run : {"a", "b"}) {
    const auto r = train_task(set.entries, set.labels, cfg);
    save_checkpoint(r.params, dir / (std::string(run) + ".bin"));
    write_training_log_csv(dir / (std::string(run) + ".csv"), r.log);
  }
  o.require(read_text_file(dir / "a.bin") == read_text_file(dir / "b.bin"), "checkpoints differ between runs");
  o.require(read_text_file(dir / "a.csv") == read_text_file(dir / "b.csv"), "logs differ between runs");
  o.require(fs::file_size(dir / "a.bin") == 4012028, "checkpoint size " + std::to_string(fs::file_size(dir / "a.bin")));

  const auto params = train_task(set.entries, set.labels, cfg).params;
  o.require(load_checkpoint(dir / "a.bin") == params, "checkpoint round trip");

  write_feature_cache(dir / "f.csv", set.entries, "stub:42");
  const auto cache = read_feature_cache(dir / "f.csv");
  bool exact = cache.entries.size() == set.entries.size();
  for (std::size_t i = 0; exact && i < cache.entries.size(); ++i) {
    const auto a = cache.entries[i].features.values();
    const auto b = set.entries[i].features.values();
    exact = cache.entries[i].image_id == set.entries[i].image_id && std::equal(a.begin(), a.end(), b.begin());
  }
  o.require(exact, "feature cache round trip");
  o.note("identical checkpoints and logs across runs, exact round trips, checkpoint 4012028 bytes");
  return o;
}

Outcome stub_golden() {
  Outcome o;
  std::ifstream in(kData / "stub_golden.txt");
  std::string line;
  const StubBackend stub(0x5EED5EED);
  int checked = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string kind;
    int row = 0, k = 0;
    double v = 0;
    if (!(ss >> kind) || kind != "entry") continue;
    ss >> row >> k >> v;
    o.require(stub.projection()(row, k) == v, "entry (" + std::to_string(row) + "," + std::to_string(k) + ")");
    ++checked;
  }
  o.require(checked >= 8, "golden file has " + std::to_string(checked) + " entries");
  const auto zero = stub.embed(ImageTensor(kInputSide, kInputSide, 0.0f));
  bool all_zero = true;
  for (float f : zero.values()) all_zero = all_zero && f == 0.0f;
  o.require(all_zero, "zero image embedding");
  o.note(std::to_string(checked) + " projection entries equal the exact LCG values; zero image -> zero vector");
  return o;
}

Outcome numerical_stability() {
  Outcome o;
  Vector<double> zd(2);
  zd << 1000.0, 0.0;
  Vector<float> zf(2);
  zf << 1000.0f, 0.0f;
  const auto pd = softmax<double>(zd);
  const auto pf = softmax<float>(zf);
  o.require(pd.allFinite() && std::abs(pd.sum() - 1.0) <= 1e-6, "double softmax");
  o.require(pf.allFinite() && std::abs(pf.sum() - 1.0f) <= 1e-6f, "float softmax");
  const double ld = cross_entropy_loss<double>(pd, 1);
  const float lf = cross_entropy_loss<float>(pf, 1);
  o.require(std::isfinite(ld) && std::abs(ld - 27.631021115928547) < 1e-9, "double loss " + fmt("%.9g", ld));
  o.require(std::isfinite(lf) && std::abs(lf - 27.631021f) < 1e-4f, "float loss " + fmt("%.9g", lf));
  o.note("softmax([1000,0]) = [" + fmt("%g", pd[0]) + ", " + fmt("%g", pd[1]) + "], clipped loss " + fmt("%.6f", ld));
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
  double budget_seconds;  // 0 = no runtime bound
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness, 5.0},
      {2, "AUC oracle equivalence", auc_oracle, 5.0},
      {3, "synthetic end-to-end training", synthetic_end_to_end, 120.0},
      {4, "architecture and pipeline shape", shape_conformance, 0.0},
      {5, "determinism and persistence", determinism, 0.0},
      {6, "stub backend golden values", stub_golden, 0.0},
      {7, "numerical stability", numerical_stability, 0.0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.require(false, "runtime " + fmt("%.1f", secs) + " s over " + fmt("%.0f", c.budget_seconds) + " s budget");
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%s; %.2f s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
