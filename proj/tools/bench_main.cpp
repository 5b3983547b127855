// Serial vs OpenMP timing for the hot kernels, with equality checks: the
// parallel paths must give bit-identical results, not just close ones.

#include <chrono>
#include <cstdio>
#include <string>

#include "jinfer/harness.hpp"

namespace {

using namespace jinfer;

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

template <class F>
std::pair<double, decltype(std::declval<F>()(Exec::Serial))> timed(F&& f, Exec exec) {
  const auto t0 = std::chrono::steady_clock::now();
  auto result = f(exec);
  return {ms_since(t0), std::move(result)};
}

template <class F>
void bench(const char* name, F&& f, bool identical) {
  auto [t_serial, r_serial] = timed(f, Exec::Serial);
  auto [t_parallel, r_parallel] = timed(f, Exec::Parallel);
  std::printf("%-28s serial %8.1f ms   parallel %8.1f ms   speedup %.2fx   identical: %s\n",
              name, t_serial, t_parallel, t_serial / t_parallel,
              identical && r_serial == r_parallel ? "yes" : (identical ? "NO" : "n/a"));
  if (identical && !(r_serial == r_parallel)) std::exit(1);
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", max_threads());

  const SyntheticTask big = make_fixture("ref-m64");
  const SyntheticModel big_model = big.make_model();
  const DatasetEvaluator big_eval(big_model, big.dataset);
  const Labeling big_pred = predict_zero_shot(big_eval);

  const SyntheticTask small = make_fixture("ref-m8");
  const SyntheticModel small_model = small.make_model();
  const DatasetEvaluator small_eval(small_model, small.dataset);

  const SyntheticTask mid = make_fixture("ref-m16");
  const SyntheticModel mid_model = mid.make_model();
  const DatasetEvaluator mid_eval(mid_model, mid.dataset);

  bench(
      "exact objective M=64 N=2",
      [&](Exec exec) { return exact_joint_objective(big_eval, big_pred, 2, exec).value; }, true);

  bench(
      "MC objective 50k sequences",
      [&](Exec exec) {
        return mc_joint_objective(big_eval, big_pred, 8, 50000, 123, exec).value;
      },
      true);

  bench(
      "brute force M=8 N=2",
      [&](Exec exec) {
        const SolverResult r = brute_force_argmax(small_eval, 2, 1e-9, exec);
        return std::make_pair(r.best_value, r.best_labeling);
      },
      true);

  bench(
      "train 20 iters M=16 N=4",
      [&](Exec exec) {
        TrainConfig tc;
        tc.N = 4;
        tc.batch = 32;
        tc.iterations = 20;
        tc.seed = 9;
        tc.exec = exec;
        const TrainResult r = train_uft(mid_eval, tc);
        return std::make_pair(r.trace.back().objective, r.argmax_labeling);
      },
      true);

  bench(
      "relabel 3 turns M=16 N=4",
      [&](Exec exec) {
        UiclConfig uc;
        uc.N = 4;
        uc.turns = 3;
        uc.seed = 9;
        uc.exec = exec;
        uc.trace_sequences = 0;
        return run_uicl(mid_model, mid.dataset, uc).final_labeling();
      },
      true);

  bench(
      "gradient variance 2k draws",
      [&](Exec exec) {
        const ZeroShotCache cache(mid_eval);
        const TaskEncoder enc =
            init_task_encoder(mid_eval.model(), mid_eval.dataset(), EncoderKind::Tabular);
        return estimator_gradient_variance(enc, cache, Estimator::LowVariance, 4, 2000, 5, exec);
      },
      true);

  std::printf("\nall parallel results match their serial reference\n");
  return 0;
}
