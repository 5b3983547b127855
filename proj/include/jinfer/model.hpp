#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>

#include "jinfer/rng.hpp"
#include "jinfer/types.hpp"

namespace jinfer {

// Fast per-dataset evaluation path: a model may hand out a scorer that works
// on instance indices into one fixed dataset and is free to precompute
// whatever it likes (the synthetic model caches its kernel matrix and
// zero-shot logits). Implementations must be safe for concurrent reads.
class DatasetScorer {
 public:
  virtual ~DatasetScorer() = default;

  // Log scores over the answer set for dataset instance `query` given the
  // context, in the same normalization as the owning model's log_scores.
  virtual void log_scores_into(int query, std::span<const ContextItem> ctx,
                               Eigen::VectorXd& out) const = 0;
};

// An autoregressive conditional model p(y | x, context) over a fixed answer
// set. log_scores returns one log score per answer; for models that are
// proper distributions over the answer set these are normalized log
// probabilities, while token-level models report raw (unnormalized) token
// log probabilities and leave renormalization to the caller.
class ConditionalModel {
 public:
  virtual ~ConditionalModel() = default;

  virtual int num_answers() const = 0;

  virtual Eigen::VectorXd log_scores(const Instance& x, const SupportContext& ctx) const = 0;

  virtual bool normalized_over_answers() const { return true; }

  // Longest context this model accepts; log_scores must reject longer ones.
  virtual int context_budget() const { return 4096; }

  // Optional fast path bound to one dataset (nullptr if the model has none).
  virtual std::unique_ptr<DatasetScorer> make_dataset_scorer(const TaskDataset&) const {
    return nullptr;
  }
};

// Log probability of answer y under the model's own normalization.
// Validates y, context answers, and the context budget.
double log_conditional(const ConditionalModel& model, int y, const Instance& x,
                       const SupportContext& ctx);

// One categorical draw from the model's conditional (renormalized over the
// answer set if the model is unnormalized).
int sample_answer(const ConditionalModel& model, const Instance& x, const SupportContext& ctx,
                  Rng& rng);

}  // namespace jinfer
