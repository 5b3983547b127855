#pragma once

#include "jinfer/objective.hpp"

namespace jinfer {

struct SolverResult {
  Labeling best_labeling;
  double best_value = 0.0;
  std::int64_t num_evaluated = 0;
  // Labelings whose exact objective lies within tie_tol of the best
  // (the maximizer itself included, so an exact symmetry pair reports 2).
  std::int64_t ties = 0;
};

inline constexpr std::int64_t kDefaultLabelingCap = 1000000;

// Evaluates exact_joint_objective for every labeling in K^M, in lexicographic
// order (position 0 most significant), and returns the first maximizer.
// Deterministic under any Exec: per-labeling values are stored and reduced in
// one fixed-order pass. Throws CapExceededError when K^M or the tuple count
// exceeds its cap.
SolverResult brute_force_argmax(const DatasetEvaluator& eval, int N, double tie_tol = 1e-9,
                                Exec exec = Exec::Parallel,
                                std::int64_t labeling_cap = kDefaultLabelingCap,
                                std::int64_t tuple_cap = kDefaultTupleCap);

SolverResult brute_force_argmax(const ConditionalModel& model, const TaskDataset& dataset, int N,
                                double tie_tol = 1e-9, Exec exec = Exec::Parallel,
                                std::int64_t labeling_cap = kDefaultLabelingCap,
                                std::int64_t tuple_cap = kDefaultTupleCap);

}  // namespace jinfer
