#include "jinfer/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "jinfer/numeric.hpp"

namespace jinfer {

void SyntheticModelParams::validate() const {
  if (zero_shot_weights.rows() < 2) throw std::invalid_argument("synthetic params: need K >= 2");
  if (zero_shot_weights.cols() < 1) throw std::invalid_argument("synthetic params: need d >= 1");
  if (bias.size() != zero_shot_weights.rows())
    throw std::invalid_argument("synthetic params: bias size != K");
  if (std::isnan(kernel_bandwidth) || kernel_bandwidth <= 0.0)
    throw std::invalid_argument("synthetic params: kernel_bandwidth must be > 0 (or +inf)");
  if (!(context_strength >= 0.0) || !std::isfinite(context_strength))
    throw std::invalid_argument("synthetic params: context_strength must be finite and >= 0");
  if (!(recency_decay > 0.0 && recency_decay <= 1.0))
    throw std::invalid_argument("synthetic params: recency_decay must be in (0, 1]");
}

namespace {

double kernel_value(const SyntheticModelParams& p, const double* a, const double* b, int d) {
  if (std::isinf(p.kernel_bandwidth)) return 1.0;
  double sq = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    sq += diff * diff;
  }
  return std::exp(-sq / (2.0 * p.kernel_bandwidth * p.kernel_bandwidth));
}

}  // namespace

SyntheticModel::SyntheticModel(SyntheticModelParams params, int context_budget)
    : params_(std::move(params)), context_budget_(context_budget) {
  params_.validate();
  if (context_budget_ < 0) throw std::invalid_argument("SyntheticModel: negative context budget");
}

Eigen::VectorXd SyntheticModel::log_scores(const Instance& x, const SupportContext& ctx) const {
  const int d = params_.feature_dim();
  if (static_cast<int>(x.features.size()) != d)
    throw std::invalid_argument("SyntheticModel: feature dimension mismatch for instance '" +
                                x.id + "'");
  if (static_cast<int>(ctx.size()) > context_budget_)
    throw std::invalid_argument("SyntheticModel: context exceeds budget");
  const Eigen::Map<const Eigen::VectorXd> xv(x.features.data(), d);
  Eigen::VectorXd logits = params_.zero_shot_weights * xv + params_.bias;
  if (params_.context_strength > 0.0 && !ctx.empty()) {
    // Most recent context item carries weight 1; earlier ones decay.
    double w = 1.0;
    for (int i = static_cast<int>(ctx.size()) - 1; i >= 0; --i) {
      const auto& ex = ctx[static_cast<std::size_t>(i)];
      if (ex.answer < 0 || ex.answer >= num_answers())
        throw std::invalid_argument("SyntheticModel: context answer out of range");
      if (static_cast<int>(ex.instance.features.size()) != d)
        throw std::invalid_argument("SyntheticModel: context feature dimension mismatch");
      logits[ex.answer] += params_.context_strength * w *
                           kernel_value(params_, x.features.data(), ex.instance.features.data(), d);
      w *= params_.recency_decay;
    }
  }
  log_softmax_inplace(logits);
  return logits;
}

namespace {

// Precomputed zero-shot logits (M x K) and pairwise kernel values (M x M) for
// one dataset; context evaluation becomes a handful of lookups.
class SyntheticScorer : public DatasetScorer {
 public:
  SyntheticScorer(const SyntheticModelParams& p, const TaskDataset& ds) : params_(p) {
    const int m = ds.size();
    const int d = p.feature_dim();
    const int k = p.num_answers();
    zs_.resize(m, k);
    for (int i = 0; i < m; ++i) {
      const auto& inst = ds.instances[static_cast<std::size_t>(i)];
      if (static_cast<int>(inst.features.size()) != d)
        throw std::invalid_argument("SyntheticModel scorer: feature dimension mismatch for '" +
                                    inst.id + "'");
      const Eigen::Map<const Eigen::VectorXd> xv(inst.features.data(), d);
      zs_.row(i) = (p.zero_shot_weights * xv + p.bias).transpose();
    }
    kmat_.resize(m, m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        kmat_(i, j) = kernel_value(p, ds.instances[static_cast<std::size_t>(i)].features.data(),
                                   ds.instances[static_cast<std::size_t>(j)].features.data(), d);
      }
    }
  }

  void log_scores_into(int query, std::span<const ContextItem> ctx,
                       Eigen::VectorXd& out) const override {
    out = zs_.row(query).transpose();
    if (params_.context_strength > 0.0 && !ctx.empty()) {
      double w = 1.0;
      for (int i = static_cast<int>(ctx.size()) - 1; i >= 0; --i) {
        const ContextItem& item = ctx[static_cast<std::size_t>(i)];
        out[item.answer] += params_.context_strength * w * kmat_(query, item.instance);
        w *= params_.recency_decay;
      }
    }
    log_softmax_inplace(out);
  }

 private:
  SyntheticModelParams params_;
  Eigen::MatrixXd zs_;    // M x K zero-shot logits
  Eigen::MatrixXd kmat_;  // M x M kernel values
};

}  // namespace

std::unique_ptr<DatasetScorer> SyntheticModel::make_dataset_scorer(const TaskDataset& ds) const {
  return std::make_unique<SyntheticScorer>(params_, ds);
}

std::vector<std::string> default_answer_names(int K) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    if (k < 26) {
      names.push_back(std::string(1, static_cast<char>('A' + k)));
    } else {
      names.push_back("y" + std::to_string(k));
    }
  }
  return names;
}

SyntheticTask generate_synthetic_task(std::uint64_t seed, int M, int K, int d,
                                      double zero_shot_noise, const SyntheticModelParams& knobs,
                                      const SyntheticGenOptions& opts) {
  if (M < 1 || K < 2 || d < 1)
    throw std::invalid_argument("generate_synthetic_task: need M >= 1, K >= 2, d >= 1");
  if (!(zero_shot_noise >= 0.0))
    throw std::invalid_argument("generate_synthetic_task: zero_shot_noise must be >= 0");
  if (!(opts.instance_spread > 0.0))
    throw std::invalid_argument("generate_synthetic_task: instance_spread must be > 0");

  Rng center_rng(derive_seed(seed, {1}));
  Rng instance_rng(derive_seed(seed, {2}));
  Rng noise_rng(derive_seed(seed, {3}));

  Eigen::MatrixXd centers(K, d);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < d; ++j) centers(k, j) = opts.center_scale * center_rng.normal();
  }

  SyntheticTask task;
  task.dataset.answer_set = AnswerSet::of_names(default_answer_names(K));
  task.dataset.instances.reserve(static_cast<std::size_t>(M));
  task.dataset.gold.reserve(static_cast<std::size_t>(M));
  int id_width = 1;
  for (int m = M - 1; m >= 10; m /= 10) ++id_width;
  for (int m = 0; m < M; ++m) {
    const int g = m % K;
    Instance inst;
    std::string num = std::to_string(m);
    inst.id = "i" + std::string(static_cast<std::size_t>(id_width) - num.size(), '0') + num;
    inst.features.resize(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) inst.features[static_cast<std::size_t>(j)] =
        centers(g, j) + opts.instance_spread * instance_rng.normal();
    task.dataset.instances.push_back(std::move(inst));
    task.dataset.gold.push_back(g);
  }

  // Bayes-like linear classifier built from noise-perturbed centers: with
  // zero noise and spread s, w_k = c_k / s^2 and b_k = -|c_k|^2 / (2 s^2) is
  // exactly the equal-prior Gaussian classifier; logit_scale sharpens or
  // flattens the whole thing.
  const double s2 = opts.instance_spread * opts.instance_spread;
  task.params = knobs;
  task.params.zero_shot_weights.resize(K, d);
  task.params.bias.resize(K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd center = centers.row(k).transpose();
    for (int j = 0; j < d; ++j) center[j] += zero_shot_noise * noise_rng.normal();
    task.params.zero_shot_weights.row(k) = (opts.logit_scale / s2) * center.transpose();
    task.params.bias[k] = -opts.logit_scale * center.squaredNorm() / (2.0 * s2);
  }
  task.params.validate();
  task.dataset.validate();
  return task;
}

}  // namespace jinfer
