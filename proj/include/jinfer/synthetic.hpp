#pragma once

#include <Eigen/Dense>

#include "jinfer/model.hpp"

namespace jinfer {

// Closed-form in-context learner used as the test-bed model: a linear
// zero-shot classifier whose logits get a kernel-smoothed vote from the
// context,
//
//   logit_y(x | ctx) = w_y . x + b_y
//                    + context_strength * sum_i decay^(L-1-i) * k(x, x_i) * [y_i == y]
//
// with k(x, x') = exp(-|x - x'|^2 / (2 bandwidth^2)). The conditional is the
// softmax of these logits. recency_decay == 1 makes the model exchangeable in
// its context; bandwidth == +inf degenerates the kernel to the constant 1, a
// pure agreement pressure that rewards collapsed labelings.
struct SyntheticModelParams {
  Eigen::MatrixXd zero_shot_weights;  // K x d
  Eigen::VectorXd bias;               // K
  double kernel_bandwidth = 1.0;      // > 0, or +inf for the constant kernel
  double context_strength = 0.0;      // >= 0
  double recency_decay = 1.0;         // in (0, 1]

  int num_answers() const { return static_cast<int>(zero_shot_weights.rows()); }
  int feature_dim() const { return static_cast<int>(zero_shot_weights.cols()); }

  void validate() const;  // throws std::invalid_argument
};

class SyntheticModel : public ConditionalModel {
 public:
  explicit SyntheticModel(SyntheticModelParams params, int context_budget = 4096);

  int num_answers() const override { return params_.num_answers(); }
  Eigen::VectorXd log_scores(const Instance& x, const SupportContext& ctx) const override;
  int context_budget() const override { return context_budget_; }
  std::unique_ptr<DatasetScorer> make_dataset_scorer(const TaskDataset&) const override;

  const SyntheticModelParams& params() const { return params_; }

 private:
  SyntheticModelParams params_;
  int context_budget_;
};

// Shape of a generated classification task, beyond the model knobs:
// cluster-center scale, within-cluster spread, and an overall sharpness factor
// on the zero-shot logits.
struct SyntheticGenOptions {
  double center_scale = 1.5;
  double instance_spread = 0.6;
  double logit_scale = 1.0;
};

struct SyntheticTask {
  TaskDataset dataset;
  SyntheticModelParams params;

  SyntheticModel make_model() const { return SyntheticModel(params); }
};

// Draws K cluster centers and M instances (gold = cluster, balanced
// round-robin), then builds the zero-shot classifier from noise-perturbed
// centers: zero_shot_noise = 0 recovers the Bayes-optimal linear classifier
// for the clusters, larger values degrade zero-shot accuracy. The kernel /
// context knobs are taken from `knobs` (its weight fields are ignored and
// overwritten). Callers wanting a task with a real in-context signal should
// measure zero-shot and supported accuracy afterwards (see
// measure_task_quality in harness.hpp) rather than trust the knobs blindly.
SyntheticTask generate_synthetic_task(std::uint64_t seed, int M, int K, int d,
                                      double zero_shot_noise, const SyntheticModelParams& knobs,
                                      const SyntheticGenOptions& opts = {});

// "A", "B", ... for K <= 26, then "y26", "y27", ...
std::vector<std::string> default_answer_names(int K);

}  // namespace jinfer
