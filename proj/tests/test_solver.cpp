#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "jinfer/errors.hpp"
#include "jinfer/harness.hpp"
#include "jinfer/solver.hpp"
#include "jinfer/synthetic.hpp"

using namespace jinfer;

namespace {

// Two interchangeable instances under a constant kernel with no zero-shot
// signal: agreement is all that matters, so the optima are the two collapsed
// labelings and the lexicographic tie-break must pick all-A.
SyntheticModelParams agreement_only_params() {
  SyntheticModelParams p;
  p.zero_shot_weights = Eigen::MatrixXd::Zero(2, 1);
  p.bias = Eigen::VectorXd::Zero(2);
  p.kernel_bandwidth = std::numeric_limits<double>::infinity();
  p.context_strength = 1.0;
  return p;
}

TaskDataset two_instances() {
  TaskDataset ds;
  ds.answer_set = AnswerSet::of_names({"A", "B"});
  Instance a, b;
  a.id = "a";
  a.features = {0.0};
  b.id = "b";
  b.features = {1.0};
  ds.instances = {a, b};
  return ds;
}

}  // namespace

TEST_CASE("agreement-only pair: collapsed labelings win, lexicographic first breaks the tie") {
  const SyntheticModel model(agreement_only_params());
  const TaskDataset ds = two_instances();
  const SolverResult r = brute_force_argmax(model, ds, /*N=*/2);

  CHECK(r.num_evaluated == 4);
  CHECK(r.best_labeling == Labeling{0, 0});
  CHECK(r.ties == 2);  // {A,A} and {B,B} are exactly symmetric

  // Hand value: first position is a coin flip, second sees one agreeing
  // demonstration of strength 1: J = (log 1/2 + log sigmoid(1)) / 2.
  const double want = 0.5 * (std::log(0.5) - std::log1p(std::exp(-1.0)));
  CHECK(r.best_value == doctest::Approx(want).epsilon(1e-12));
  CHECK(r.best_value == doctest::Approx(-0.5032044340390841).epsilon(1e-12));

  // The mixed labeling pays the disagreement penalty.
  const double mixed = exact_joint_objective(model, ds, {0, 1}, 2).value;
  CHECK(mixed == doctest::Approx(0.5 * (std::log(0.5) - std::log1p(std::exp(1.0))))
                     .epsilon(1e-12));
  CHECK(mixed < r.best_value);
}

TEST_CASE("a wide tie tolerance folds every labeling into the tie count") {
  const SyntheticModel model(agreement_only_params());
  const TaskDataset ds = two_instances();
  const SolverResult r = brute_force_argmax(model, ds, 2, /*tie_tol=*/100.0);
  CHECK(r.ties == 4);
  CHECK(r.best_labeling == Labeling{0, 0});
}

TEST_CASE("solver result is identical under serial and parallel execution") {
  const SyntheticTask task = generate_synthetic_task(41, 8, 2, 2, 0.9, [] {
    SyntheticModelParams k;
    k.kernel_bandwidth = 1.25;
    k.context_strength = 1.5;
    return k;
  }());
  const SyntheticModel model = task.make_model();
  const SolverResult s = brute_force_argmax(model, task.dataset, 2, 1e-9, Exec::Serial);
  const SolverResult p = brute_force_argmax(model, task.dataset, 2, 1e-9, Exec::Parallel);
  CHECK(s.best_labeling == p.best_labeling);
  CHECK(s.best_value == p.best_value);  // bitwise
  CHECK(s.ties == p.ties);
  CHECK(s.num_evaluated == 256);
}

TEST_CASE("on the 8-instance reference task the exact optimum is the gold labeling") {
  const SyntheticTask task = make_fixture("ref-m8");
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);
  const SolverResult r = brute_force_argmax(eval, /*N=*/2);
  REQUIRE(task.dataset.has_gold());
  CHECK(r.best_labeling == task.dataset.gold);
  // Consistency: the reported maximum is the objective of the reported argmax.
  const double recheck = exact_joint_objective(eval, r.best_labeling, 2).value;
  CHECK(r.best_value == doctest::Approx(recheck).epsilon(1e-12));
}

TEST_CASE("labeling and tuple caps throw instead of silently truncating") {
  const SyntheticTask task = generate_synthetic_task(41, 8, 2, 2, 0.9, [] {
    SyntheticModelParams k;
    k.kernel_bandwidth = 1.25;
    k.context_strength = 1.5;
    return k;
  }());
  const SyntheticModel model = task.make_model();
  CHECK_THROWS_AS(brute_force_argmax(model, task.dataset, 2, 1e-9, Exec::Serial,
                                     /*labeling_cap=*/255),
                  CapExceededError);
  CHECK_THROWS_AS(brute_force_argmax(model, task.dataset, 2, 1e-9, Exec::Serial,
                                     kDefaultLabelingCap, /*tuple_cap=*/10),
                  CapExceededError);
}
