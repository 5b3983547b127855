#include "jinfer/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"

namespace jinfer {

DatasetEvaluator::DatasetEvaluator(const ConditionalModel& model, const TaskDataset& dataset,
                                   bool use_model_cache)
    : model_(&model), dataset_(&dataset) {
  dataset.validate();
  if (model.num_answers() != dataset.answer_set.size())
    throw std::invalid_argument("DatasetEvaluator: model and dataset disagree on answer count");
  if (use_model_cache) scorer_ = model.make_dataset_scorer(dataset);
}

void DatasetEvaluator::renorm_log_probs_into(int query, std::span<const ContextItem> ctx,
                                             Eigen::VectorXd& out) const {
  if (query < 0 || query >= dataset_->size())
    throw std::invalid_argument("DatasetEvaluator: query index out of range");
  evals_.fetch_add(1, std::memory_order_relaxed);
  if (!ctx.empty()) context_evals_.fetch_add(1, std::memory_order_relaxed);
  if (scorer_) {
    scorer_->log_scores_into(query, ctx, out);
  } else {
    SupportContext support;
    support.reserve(ctx.size());
    for (const ContextItem& item : ctx) {
      support.push_back({dataset_->instances[static_cast<std::size_t>(item.instance)], item.answer});
    }
    out = model_->log_scores(dataset_->instances[static_cast<std::size_t>(query)], support);
  }
  log_softmax_inplace(out);
}

double DatasetEvaluator::renorm_log_prob(int y, int query, std::span<const ContextItem> ctx) const {
  if (y < 0 || y >= num_answers())
    throw std::invalid_argument("DatasetEvaluator: answer index out of range");
  Eigen::VectorXd buf;
  renorm_log_probs_into(query, ctx, buf);
  return buf[y];
}

double renormalized_log_conditional(const ConditionalModel& model, int y, const Instance& x,
                                    const SupportContext& ctx) {
  if (y < 0 || y >= model.num_answers())
    throw std::invalid_argument("renormalized_log_conditional: answer index out of range");
  Eigen::VectorXd scores = model.log_scores(x, ctx);
  return scores[y] - logsumexp(scores);
}

std::int64_t ordered_tuple_count(int M, int N, std::int64_t cap) {
  if (N < 1 || N > M) throw std::invalid_argument("ordered_tuple_count: need 1 <= N <= M");
  std::int64_t count = 1;
  for (int i = 0; i < N; ++i) {
    count *= static_cast<std::int64_t>(M - i);
    if (count > cap)
      throw CapExceededError("ordered tuple count exceeds cap of " + std::to_string(cap) +
                             " (M=" + std::to_string(M) + ", N=" + std::to_string(N) + ")");
  }
  return count;
}

void unrank_tuple(std::int64_t rank, int M, int N, std::vector<int>& scratch,
                  std::span<int> out_tuple) {
  scratch.resize(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) scratch[static_cast<std::size_t>(i)] = i;
  // Factorial-number-system digits: after choosing position i there are
  // P(M-i-1, N-i-1) tuples per remaining choice.
  std::int64_t remaining = 1;
  for (int i = 1; i < N; ++i) remaining *= static_cast<std::int64_t>(M - i);
  int avail = M;
  for (int i = 0; i < N; ++i) {
    const int digit = static_cast<int>(rank / remaining);
    rank %= remaining;
    out_tuple[static_cast<std::size_t>(i)] = scratch[static_cast<std::size_t>(digit)];
    // Shift the chosen slot out to keep the available list ordered.
    for (int j = digit; j + 1 < avail; ++j)
      scratch[static_cast<std::size_t>(j)] = scratch[static_cast<std::size_t>(j + 1)];
    --avail;
    if (i + 1 < N) remaining /= static_cast<std::int64_t>(M - i - 1);
  }
}

namespace {

void check_labeling(const DatasetEvaluator& eval, const Labeling& labeling) {
  if (static_cast<int>(labeling.size()) != eval.num_instances())
    throw std::invalid_argument("joint objective: labeling size != dataset size");
  for (int y : labeling) {
    if (y < 0 || y >= eval.num_answers())
      throw std::invalid_argument("joint objective: labeling answer index out of range");
  }
}

struct TupleScratch {
  std::vector<int> avail;
  std::vector<int> tuple;
  std::vector<ContextItem> ctx;
  Eigen::VectorXd log_probs;
};

// Mean per-position renormalized log-likelihood of `labeling` along one
// ordered tuple, growing the context left to right.
double tuple_value(const DatasetEvaluator& eval, const Labeling& labeling,
                   std::span<const int> tuple, TupleScratch& s) {
  const int n = static_cast<int>(tuple.size());
  s.ctx.clear();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int q = tuple[static_cast<std::size_t>(i)];
    eval.renorm_log_probs_into(q, std::span<const ContextItem>(s.ctx.data(), s.ctx.size()),
                               s.log_probs);
    total += s.log_probs[labeling[static_cast<std::size_t>(q)]];
    s.ctx.push_back({q, labeling[static_cast<std::size_t>(q)]});
  }
  return total / static_cast<double>(n);
}

}  // namespace

ObjectiveEstimate exact_joint_objective(const DatasetEvaluator& eval, const Labeling& labeling,
                                        int N, Exec exec, std::int64_t tuple_cap) {
  check_labeling(eval, labeling);
  const int M = eval.num_instances();
  const std::int64_t tuples = ordered_tuple_count(M, N, tuple_cap);

  // Per-tuple values land in rank-indexed slots; the final reduction is a
  // single fixed-order pass, so the result is independent of Exec and thread
  // count down to the last bit.
  std::vector<double> values(static_cast<std::size_t>(tuples));
  parallel_for_scratch(
      tuples, exec,
      [&] {
        TupleScratch s;
        s.tuple.resize(static_cast<std::size_t>(N));
        return s;
      },
      [&](TupleScratch& s, std::int64_t rank) {
        unrank_tuple(rank, M, N, s.avail, s.tuple);
        values[static_cast<std::size_t>(rank)] = tuple_value(eval, labeling, s.tuple, s);
      });

  double sum = 0.0;
  for (double v : values) sum += v;

  ObjectiveEstimate est;
  est.value = sum / static_cast<double>(tuples);
  est.std_error = 0.0;
  est.num_sequences = tuples;
  est.N = N;
  return est;
}

ObjectiveEstimate mc_joint_objective(const DatasetEvaluator& eval, const Labeling& labeling, int N,
                                     std::int64_t num_sequences, std::uint64_t seed, Exec exec) {
  check_labeling(eval, labeling);
  const int M = eval.num_instances();
  if (N < 1 || N > M) throw std::invalid_argument("mc_joint_objective: need 1 <= N <= M");
  if (num_sequences < 1) throw std::invalid_argument("mc_joint_objective: need >= 1 sequence");

  std::vector<double> values(static_cast<std::size_t>(num_sequences));
  parallel_for_scratch(
      num_sequences, exec,
      [&] {
        TupleScratch s;
        s.tuple.resize(static_cast<std::size_t>(N));
        return s;
      },
      [&](TupleScratch& s, std::int64_t i) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        rng.sample_without_replacement(M, N, s.tuple);
        values[static_cast<std::size_t>(i)] = tuple_value(eval, labeling, s.tuple, s);
      });

  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(num_sequences);
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);

  ObjectiveEstimate est;
  est.value = mean;
  est.std_error = num_sequences > 1
                      ? std::sqrt(sq / (static_cast<double>(num_sequences - 1) *
                                        static_cast<double>(num_sequences)))
                      : 0.0;
  est.num_sequences = num_sequences;
  est.N = N;
  return est;
}

ObjectiveEstimate exact_joint_objective(const ConditionalModel& model, const TaskDataset& dataset,
                                        const Labeling& labeling, int N, Exec exec,
                                        std::int64_t tuple_cap) {
  DatasetEvaluator eval(model, dataset);
  return exact_joint_objective(eval, labeling, N, exec, tuple_cap);
}

ObjectiveEstimate mc_joint_objective(const ConditionalModel& model, const TaskDataset& dataset,
                                     const Labeling& labeling, int N, std::int64_t num_sequences,
                                     std::uint64_t seed, Exec exec) {
  DatasetEvaluator eval(model, dataset);
  return mc_joint_objective(eval, labeling, N, num_sequences, seed, exec);
}

}  // namespace jinfer
