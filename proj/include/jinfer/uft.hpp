#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "jinfer/objective.hpp"

namespace jinfer {

// Answer-head replacement trained in place of the frozen model: tau(y | x) =
// softmax over Y of (renormalized zero-shot log-probs + adjustment(x)).
// Tabular learns one adjustment row per dataset instance; Linear learns an
// affine map of the instance features. Zero-initialized, so tau starts out
// exactly equal to the zero-shot conditional.
enum class EncoderKind { Tabular, Linear };

struct TaskEncoder {
  EncoderKind kind = EncoderKind::Tabular;
  int num_answers = 0;
  int num_instances = 0;
  int feature_dim = 0;

  Eigen::MatrixXd table;   // M x K (Tabular)
  Eigen::MatrixXd weight;  // K x d (Linear)
  Eigen::VectorXd bias;    // K     (Linear)

  std::int64_t param_count() const;

  // Flat parameter layout (gradients use the same): Tabular = table rows in
  // instance order; Linear = weight rows in answer order, then bias.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);

  double max_abs_param() const;
};

TaskEncoder init_task_encoder(const ConditionalModel& model, const TaskDataset& dataset,
                              EncoderKind kind);

// Caches what tau needs per dataset: renormalized zero-shot log-probs (M x K)
// and feature vectors. Reused across parameter updates; read-only afterwards.
class ZeroShotCache {
 public:
  explicit ZeroShotCache(const DatasetEvaluator& eval);

  const DatasetEvaluator& evaluator() const { return *eval_; }
  int num_instances() const { return static_cast<int>(zs_.rows()); }
  int num_answers() const { return static_cast<int>(zs_.cols()); }
  const Eigen::MatrixXd& zero_shot_log_probs() const { return zs_; }

  // tau(. | instance m) as probabilities.
  void tau_into(const TaskEncoder& enc, int m, Eigen::VectorXd& out) const;

  // Adds a logit-space gradient g (size K) at instance m onto a flat
  // parameter gradient, through the encoder's Jacobian.
  void add_logit_grad(const TaskEncoder& enc, int m, const Eigen::VectorXd& g,
                      Eigen::VectorXd& flat_grad) const;

 private:
  const DatasetEvaluator* eval_;
  Eigen::MatrixXd zs_;  // M x K renormalized zero-shot log-probs
};

Eigen::VectorXd tau(const TaskEncoder& enc, const DatasetEvaluator& eval, int m);

// Linear encoders generalize to instances outside the dataset.
Eigen::VectorXd tau(const TaskEncoder& enc, const ConditionalModel& model, const Instance& x);

// Entropy (natural log) of the mean tau over the given instances: the
// label-prior regularizer R, in [0, log K].
double prior_entropy(const TaskEncoder& enc, const DatasetEvaluator& eval,
                     std::span<const int> instances);

int predict(const TaskEncoder& enc, const DatasetEvaluator& eval, int m);  // argmax, low ties
Labeling predict_all(const TaskEncoder& enc, const DatasetEvaluator& eval);

// Exact value of the objective's expectation part at the current encoder:
// the average over all ordered N-tuples of E_{y ~ tau}[(1/N) sum_n
// log p(y_n | x_n, {(x_i,y_i)}_{i<n})], with the label expectation enumerated
// exactly (K^(n-1) context assignments per position). Noise-free, so paired
// training runs can be compared at their final parameters without the
// minibatch estimate's sampling error. Throws CapExceededError when the
// tuple count passes tuple_cap and std::invalid_argument when the context
// expansion K^(N-1) is too large to enumerate.
double exact_amortized_objective(const TaskEncoder& enc, const ZeroShotCache& cache, int N,
                                 Exec exec = Exec::Parallel,
                                 std::int64_t tuple_cap = kDefaultTupleCap);

enum class Estimator { NaiveReinforce, LowVariance };

// One stochastic gradient draw for the joint objective at one tuple, plus the
// scalars it was built from. Both estimators consume identical randomness
// (one tuple + one categorical draw per position), so paired runs share their
// sample paths.
struct GradientEstimate {
  Eigen::VectorXd grad;          // flat layout, see TaskEncoder::flatten
  double objective_sample = 0.0; // sum_n J_n at the sampled answers
  double marginal_sample = 0.0;  // sum_n of the answer-marginalized J-tilde (LowVariance)
  double baseline_value = 0.0;   // sum_n of the greedy-prefix baseline (LowVariance)
};

// Plain REINFORCE: sum_n J_n(y_1..y_n) * sum_{j<=n} grad log tau(y_j | x_j),
// with answers sampled from tau position by position.
GradientEstimate grad_naive_reinforce(const TaskEncoder& enc, const ZeroShotCache& cache,
                                      std::span<const int> tuple, Rng& rng);

// Variance-reduced estimator. Per position n it (a) marginalizes the final
// answer exactly, J-tilde_n = sum_y J_n(y_<n, y) tau(y | x_n); (b) subtracts
// a baseline B_n, the same marginal evaluated at the greedy prefix
// y*_j = argmax tau(. | x_j); and (c) adds the pathwise derivative of
// J-tilde_n through tau with the J-values held fixed:
//
//   [J-tilde_n - B_n] * sum_{j<n} grad log tau(y_j | x_j)  +  d J-tilde_n / d theta.
//
// The baseline depends only on theta and the tuple, never on the sampled
// answers, so unbiasedness is untouched.
GradientEstimate grad_low_variance(const TaskEncoder& enc, const ZeroShotCache& cache,
                                   std::span<const int> tuple, Rng& rng);

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  int N = 16;
  int batch = 64;
  int iterations = 200;
  double lr = 1e-2;
  double gamma = 10.0;  // weight on the prior-entropy regularizer
  Estimator estimator = Estimator::LowVariance;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  EncoderKind encoder = EncoderKind::Tabular;
  std::uint64_t seed = 0;
  Exec exec = Exec::Parallel;
  double divergence_max_abs = 1e6;  // abort when |theta|_inf passes this
};

struct TrainIterRow {
  int iteration = 0;
  double objective = 0.0;    // batch-mean sum_n J_n + gamma * R, at pre-update theta
  double regularizer = 0.0;  // gamma * R
  double entropy = 0.0;      // R itself (prior entropy over the minibatch)
  double accuracy = std::numeric_limits<double>::quiet_NaN();  // vs gold, NaN without gold
};

struct TrainResult {
  TaskEncoder encoder;
  std::vector<TrainIterRow> trace;
  double final_prior_entropy = 0.0;  // over the full dataset at the final theta
  Labeling argmax_labeling;
};

// Minibatch ascent on E[sum_n J_n] + gamma * R: per iteration, `batch` tuples
// of size N are drawn (each without replacement within itself), the
// configured estimator supplies the objective gradient, and the regularizer
// gradient is exact through the minibatch prior. Per-(iteration, element)
// seed streams + fixed-order reduction keep results Exec-independent.
// Throws DivergenceError on NaN objective or runaway parameters.
TrainResult train_uft(const DatasetEvaluator& eval, const TrainConfig& config);
TrainResult train_uft(const ConditionalModel& model, const TaskDataset& dataset,
                      const TrainConfig& config);

}  // namespace jinfer
