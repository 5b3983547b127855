#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"
#include "jinfer/objective.hpp"
#include "jinfer/synthetic.hpp"

using namespace jinfer;

namespace {

SyntheticModelParams knobs(double bandwidth, double strength, double decay = 1.0) {
  SyntheticModelParams p;
  p.kernel_bandwidth = bandwidth;
  p.context_strength = strength;
  p.recency_decay = decay;
  return p;
}

// Unnormalized scorer over 3 answers where only the renormalized pair
// {0.2, 0.3} matters: an "open vocabulary" stand-in.
class FixedScoreModel : public ConditionalModel {
 public:
  int num_answers() const override { return 2; }
  bool normalized_over_answers() const override { return false; }
  Eigen::VectorXd log_scores(const Instance&, const SupportContext&) const override {
    Eigen::VectorXd s(2);
    s << std::log(0.2), std::log(0.3);
    return s;
  }
};

// One answer carries all the mass: renormalized log-prob must be exactly 0.
class DegenerateModel : public ConditionalModel {
 public:
  int num_answers() const override { return 2; }
  bool normalized_over_answers() const override { return false; }
  Eigen::VectorXd log_scores(const Instance&, const SupportContext&) const override {
    Eigen::VectorXd s(2);
    s << 0.0, kNegInf;
    return s;
  }
};

Instance feat_instance(const std::string& id, double x) {
  Instance inst;
  inst.id = id;
  inst.features = {x};
  return inst;
}

// Independent enumeration of J_N written as plain nested loops over ordered
// tuples, scoring through the model's generic interface. The oracle for the
// library's rank-based enumeration.
double oracle_joint_objective(const ConditionalModel& model, const TaskDataset& ds,
                              const Labeling& lab, int N) {
  const int M = ds.size();
  std::vector<int> tuple(N);
  std::vector<bool> used(M, false);
  double total = 0.0;
  std::int64_t count = 0;
  auto rec = [&](auto&& self, int pos) -> void {
    if (pos == N) {
      SupportContext ctx;
      double value = 0.0;
      for (int n = 0; n < N; ++n) {
        value += renormalized_log_conditional(model, lab[tuple[n]], ds.instances[tuple[n]], ctx);
        ctx.push_back({ds.instances[tuple[n]], lab[tuple[n]]});
      }
      total += value / N;
      count++;
      return;
    }
    for (int i = 0; i < M; ++i) {
      if (used[i]) continue;
      used[i] = true;
      tuple[pos] = i;
      self(self, pos + 1);
      used[i] = false;
    }
  };
  rec(rec, 0);
  return total / double(count);
}

}  // namespace

TEST_CASE("renormalization maps unnormalized scores 0.2/0.3 to probabilities 0.4/0.6") {
  const FixedScoreModel model;
  const Instance x = feat_instance("x", 0.0);
  CHECK(renormalized_log_conditional(model, 0, x, {}) ==
        doctest::Approx(std::log(0.4)).epsilon(1e-12));
  CHECK(renormalized_log_conditional(model, 1, x, {}) ==
        doctest::Approx(std::log(0.6)).epsilon(1e-12));
}

TEST_CASE("a degenerate winner scores exactly zero log-probability") {
  const DegenerateModel model;
  const Instance x = feat_instance("x", 0.0);
  CHECK(renormalized_log_conditional(model, 0, x, {}) == 0.0);
  CHECK(renormalized_log_conditional(model, 1, x, {}) == kNegInf);
}

TEST_CASE("exact enumeration matches an independent nested-loop oracle") {
  const SyntheticTask task = generate_synthetic_task(5, 5, 2, 2, 0.8, knobs(1.0, 1.5, 0.7));
  const SyntheticModel model = task.make_model();
  const Labeling lab = {0, 1, 1, 0, 1};
  for (int N : {1, 2, 3}) {
    const double want = oracle_joint_objective(model, task.dataset, lab, N);
    const ObjectiveEstimate got = exact_joint_objective(model, task.dataset, lab, N);
    CHECK(got.value == doctest::Approx(want).epsilon(1e-12));
    CHECK(got.std_error == 0.0);
    std::int64_t tuples = 1;
    for (int k = 0; k < N; ++k) tuples *= (5 - k);
    CHECK(got.num_sequences == tuples);
  }
}

TEST_CASE("exact value is invariant to reordering the dataset") {
  const SyntheticTask task = generate_synthetic_task(9, 6, 2, 2, 0.8, knobs(1.0, 1.5));
  const SyntheticModel model = task.make_model();
  const Labeling lab = {0, 1, 0, 0, 1, 1};
  const double base = exact_joint_objective(model, task.dataset, lab, 3).value;

  // Rotate instances together with their labels: the tuple average only sees
  // the (instance, label) multiset, so the objective cannot move.
  TaskDataset rotated = task.dataset;
  Labeling rlab = lab;
  std::rotate(rotated.instances.begin(), rotated.instances.begin() + 2, rotated.instances.end());
  std::rotate(rotated.gold.begin(), rotated.gold.begin() + 2, rotated.gold.end());
  std::rotate(rlab.begin(), rlab.begin() + 2, rlab.end());
  const double moved = exact_joint_objective(model, rotated, rlab, 3).value;
  CHECK(moved == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("cached and generic evaluation paths agree") {
  const SyntheticTask task = generate_synthetic_task(13, 6, 3, 2, 0.8, knobs(0.8, 2.0, 0.9));
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator fast(model, task.dataset, /*use_model_cache=*/true);
  const DatasetEvaluator slow(model, task.dataset, /*use_model_cache=*/false);
  const Labeling lab = {0, 1, 2, 0, 1, 2};
  for (int N : {1, 2, 3}) {
    const double a = exact_joint_objective(fast, lab, N).value;
    const double b = exact_joint_objective(slow, lab, N).value;
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
  }
}

TEST_CASE("serial and parallel execution give bit-identical estimates") {
  const SyntheticTask task = generate_synthetic_task(17, 8, 2, 2, 0.8, knobs(1.0, 1.5));
  const SyntheticModel model = task.make_model();
  const Labeling lab = task.dataset.gold;
  const ObjectiveEstimate es = exact_joint_objective(model, task.dataset, lab, 3, Exec::Serial);
  const ObjectiveEstimate ep = exact_joint_objective(model, task.dataset, lab, 3, Exec::Parallel);
  CHECK(es.value == ep.value);  // bitwise

  const ObjectiveEstimate ms =
      mc_joint_objective(model, task.dataset, lab, 3, 500, /*seed=*/4, Exec::Serial);
  const ObjectiveEstimate mp =
      mc_joint_objective(model, task.dataset, lab, 3, 500, /*seed=*/4, Exec::Parallel);
  CHECK(ms.value == mp.value);
  CHECK(ms.std_error == mp.std_error);
}

TEST_CASE("monte carlo lands within 3 standard errors of the exact value") {
  const SyntheticTask task = generate_synthetic_task(23, 10, 2, 2, 0.8, knobs(1.0, 1.5));
  const SyntheticModel model = task.make_model();
  const Labeling lab = task.dataset.gold;
  const double exact = exact_joint_objective(model, task.dataset, lab, 3).value;
  const ObjectiveEstimate mc = mc_joint_objective(model, task.dataset, lab, 3, 4000, /*seed=*/7);
  REQUIRE(mc.std_error > 0.0);
  CHECK(std::abs(mc.value - exact) < 3 * mc.std_error);

  // Same seed reproduces; different seed resamples.
  const ObjectiveEstimate again = mc_joint_objective(model, task.dataset, lab, 3, 4000, 7);
  CHECK(again.value == mc.value);
  const ObjectiveEstimate other = mc_joint_objective(model, task.dataset, lab, 3, 4000, 8);
  CHECK(other.value != mc.value);
}

TEST_CASE("support size one is the plain mean of zero-shot log-probs") {
  const SyntheticTask task = generate_synthetic_task(31, 12, 3, 2, 1.0, knobs(1.0, 2.0));
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);

  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    Labeling lab(task.dataset.size());
    for (auto& y : lab) y = rng.uniform_int(3);
    double mean = 0.0;
    for (int m = 0; m < task.dataset.size(); ++m) mean += eval.renorm_log_prob(lab[m], m, {});
    mean /= task.dataset.size();
    const double j1 = exact_joint_objective(eval, lab, 1).value;
    CHECK(j1 == doctest::Approx(mean).epsilon(1e-10));
  }
}

TEST_CASE("support size one never evaluates a non-empty context") {
  const SyntheticTask task = generate_synthetic_task(31, 6, 2, 2, 1.0, knobs(1.0, 2.0));
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);
  (void)exact_joint_objective(eval, task.dataset.gold, 1);
  (void)mc_joint_objective(eval, task.dataset.gold, 1, 200, 3);
  CHECK(eval.eval_count() > 0);
  CHECK(eval.context_eval_count() == 0);

  (void)exact_joint_objective(eval, task.dataset.gold, 2);
  CHECK(eval.context_eval_count() > 0);
}

TEST_CASE("ordered_tuple_count counts falling factorials and honors its cap") {
  CHECK(ordered_tuple_count(5, 1, 1000) == 5);
  CHECK(ordered_tuple_count(5, 2, 1000) == 20);
  CHECK(ordered_tuple_count(5, 5, 1000) == 120);
  CHECK(ordered_tuple_count(64, 1, 1000) == 64);
  CHECK_THROWS_AS(ordered_tuple_count(64, 8, kDefaultTupleCap), CapExceededError);
  CHECK_THROWS_AS(ordered_tuple_count(5, 2, 19), CapExceededError);
}

TEST_CASE("unrank_tuple enumerates every ordered tuple exactly once, in order") {
  const int M = 5, N = 3;
  const std::int64_t total = ordered_tuple_count(M, N, 1000);
  std::vector<int> scratch;
  std::vector<int> tuple(N);
  std::vector<std::vector<int>> seen;
  for (std::int64_t r = 0; r < total; ++r) {
    unrank_tuple(r, M, N, scratch, tuple);
    // Distinct in-range entries.
    std::vector<int> sorted = tuple;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(std::unique(sorted.begin(), sorted.end()) == sorted.end());
    REQUIRE(sorted.front() >= 0);
    REQUIRE(sorted.back() < M);
    seen.push_back(tuple);
  }
  // All distinct and lexicographically increasing in rank.
  for (std::size_t i = 1; i < seen.size(); ++i) CHECK(seen[i - 1] < seen[i]);
}

TEST_CASE("objective estimators validate their inputs") {
  const SyntheticTask task = generate_synthetic_task(3, 4, 2, 2, 0.5, knobs(1.0, 1.0));
  const SyntheticModel model = task.make_model();
  Labeling bad_len = {0, 1};
  CHECK_THROWS(exact_joint_objective(model, task.dataset, bad_len, 2));
  Labeling bad_val = {0, 1, 2, 0};  // answer 2 does not exist
  CHECK_THROWS(exact_joint_objective(model, task.dataset, bad_val, 2));
  CHECK_THROWS(exact_joint_objective(model, task.dataset, task.dataset.gold, 0));
  CHECK_THROWS(exact_joint_objective(model, task.dataset, task.dataset.gold, 5));
  // Tuple cap propagates.
  CHECK_THROWS_AS(exact_joint_objective(model, task.dataset, task.dataset.gold, 2,
                                        Exec::Serial, /*tuple_cap=*/5),
                  CapExceededError);
}
