#include "jinfer/solver.hpp"

#include <cmath>
#include <stdexcept>

#include "jinfer/errors.hpp"

namespace jinfer {

namespace {

// Labeling with the given lexicographic rank: base-K digits, instance 0 most
// significant.
void unrank_labeling(std::int64_t rank, int M, int K, Labeling& out) {
  out.resize(static_cast<std::size_t>(M));
  for (int m = M - 1; m >= 0; --m) {
    out[static_cast<std::size_t>(m)] = static_cast<int>(rank % K);
    rank /= K;
  }
}

}  // namespace

SolverResult brute_force_argmax(const DatasetEvaluator& eval, int N, double tie_tol, Exec exec,
                                std::int64_t labeling_cap, std::int64_t tuple_cap) {
  const int M = eval.num_instances();
  const int K = eval.num_answers();
  if (N < 1 || N > M) throw std::invalid_argument("brute_force_argmax: need 1 <= N <= M");
  if (!(tie_tol >= 0.0)) throw std::invalid_argument("brute_force_argmax: negative tie tolerance");

  std::int64_t total = 1;
  for (int m = 0; m < M; ++m) {
    total *= static_cast<std::int64_t>(K);
    if (total > labeling_cap)
      throw CapExceededError("labeling count K^M exceeds cap of " + std::to_string(labeling_cap));
  }
  ordered_tuple_count(M, N, tuple_cap);  // fail fast before the big loop

  // One exact objective value per labeling; the argmax scan afterwards is
  // serial and in lexicographic order, so "first maximizer" is well defined
  // regardless of how the evaluation loop was scheduled.
  std::vector<double> values(static_cast<std::size_t>(total));
  parallel_for_scratch(
      total, exec, [&] { return Labeling(); },
      [&](Labeling& labeling, std::int64_t rank) {
        unrank_labeling(rank, M, K, labeling);
        values[static_cast<std::size_t>(rank)] =
            exact_joint_objective(eval, labeling, N, Exec::Serial, tuple_cap).value;
      });

  std::int64_t best_rank = 0;
  for (std::int64_t r = 1; r < total; ++r) {
    if (values[static_cast<std::size_t>(r)] > values[static_cast<std::size_t>(best_rank)])
      best_rank = r;
  }
  const double best = values[static_cast<std::size_t>(best_rank)];
  std::int64_t ties = 0;
  for (std::int64_t r = 0; r < total; ++r) {
    if (std::abs(values[static_cast<std::size_t>(r)] - best) <= tie_tol) ++ties;
  }

  SolverResult result;
  unrank_labeling(best_rank, M, K, result.best_labeling);
  result.best_value = best;
  result.num_evaluated = total;
  result.ties = ties;
  return result;
}

SolverResult brute_force_argmax(const ConditionalModel& model, const TaskDataset& dataset, int N,
                                double tie_tol, Exec exec, std::int64_t labeling_cap,
                                std::int64_t tuple_cap) {
  DatasetEvaluator eval(model, dataset);
  return brute_force_argmax(eval, N, tie_tol, exec, labeling_cap, tuple_cap);
}

}  // namespace jinfer
