#include "jinfer/uft.hpp"

#include <stdexcept>

#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"

namespace jinfer {

std::int64_t TaskEncoder::param_count() const {
  if (kind == EncoderKind::Tabular)
    return static_cast<std::int64_t>(num_instances) * num_answers;
  return static_cast<std::int64_t>(num_answers) * feature_dim + num_answers;
}

Eigen::VectorXd TaskEncoder::flatten() const {
  Eigen::VectorXd flat(param_count());
  if (kind == EncoderKind::Tabular) {
    for (int m = 0; m < num_instances; ++m)
      for (int k = 0; k < num_answers; ++k) flat[m * num_answers + k] = table(m, k);
  } else {
    for (int k = 0; k < num_answers; ++k)
      for (int j = 0; j < feature_dim; ++j) flat[k * feature_dim + j] = weight(k, j);
    flat.tail(num_answers) = bias;
  }
  return flat;
}

void TaskEncoder::unflatten(const Eigen::VectorXd& flat) {
  if (flat.size() != param_count())
    throw std::invalid_argument("TaskEncoder::unflatten: size mismatch");
  if (kind == EncoderKind::Tabular) {
    for (int m = 0; m < num_instances; ++m)
      for (int k = 0; k < num_answers; ++k) table(m, k) = flat[m * num_answers + k];
  } else {
    for (int k = 0; k < num_answers; ++k)
      for (int j = 0; j < feature_dim; ++j) weight(k, j) = flat[k * feature_dim + j];
    bias = flat.tail(num_answers);
  }
}

double TaskEncoder::max_abs_param() const {
  if (kind == EncoderKind::Tabular)
    return table.size() > 0 ? table.cwiseAbs().maxCoeff() : 0.0;
  const double w = weight.size() > 0 ? weight.cwiseAbs().maxCoeff() : 0.0;
  const double b = bias.size() > 0 ? bias.cwiseAbs().maxCoeff() : 0.0;
  return std::max(w, b);
}

TaskEncoder init_task_encoder(const ConditionalModel& model, const TaskDataset& dataset,
                              EncoderKind kind) {
  dataset.validate();
  TaskEncoder enc;
  enc.kind = kind;
  enc.num_answers = model.num_answers();
  enc.num_instances = dataset.size();
  enc.feature_dim = static_cast<int>(dataset.instances.front().features.size());
  if (kind == EncoderKind::Tabular) {
    enc.table = Eigen::MatrixXd::Zero(enc.num_instances, enc.num_answers);
  } else {
    if (enc.feature_dim == 0)
      throw std::invalid_argument("init_task_encoder: Linear encoder needs feature instances");
    for (const auto& inst : dataset.instances) {
      if (static_cast<int>(inst.features.size()) != enc.feature_dim)
        throw std::invalid_argument("init_task_encoder: ragged feature dimensions");
    }
    enc.weight = Eigen::MatrixXd::Zero(enc.num_answers, enc.feature_dim);
    enc.bias = Eigen::VectorXd::Zero(enc.num_answers);
  }
  return enc;
}

ZeroShotCache::ZeroShotCache(const DatasetEvaluator& eval) : eval_(&eval) {
  const int m = eval.num_instances();
  const int k = eval.num_answers();
  zs_.resize(m, k);
  Eigen::VectorXd row;
  for (int i = 0; i < m; ++i) {
    eval.renorm_log_probs_into(i, {}, row);
    zs_.row(i) = row.transpose();
  }
}

namespace {

void encoder_logits_into(const TaskEncoder& enc, const Eigen::MatrixXd& zs,
                         const TaskDataset& ds, int m, Eigen::VectorXd& out) {
  out = zs.row(m).transpose();
  if (enc.kind == EncoderKind::Tabular) {
    out += enc.table.row(m).transpose();
  } else {
    const auto& f = ds.instances[static_cast<std::size_t>(m)].features;
    const Eigen::Map<const Eigen::VectorXd> x(f.data(), static_cast<Eigen::Index>(f.size()));
    out += enc.weight * x + enc.bias;
  }
}

void check_encoder(const TaskEncoder& enc, const DatasetEvaluator& eval) {
  if (enc.num_answers != eval.num_answers())
    throw std::invalid_argument("task encoder: answer count mismatch");
  if (enc.kind == EncoderKind::Tabular && enc.num_instances != eval.num_instances())
    throw std::invalid_argument("task encoder: instance count mismatch");
}

}  // namespace

void ZeroShotCache::tau_into(const TaskEncoder& enc, int m, Eigen::VectorXd& out) const {
  Eigen::VectorXd logits;
  encoder_logits_into(enc, zs_, eval_->dataset(), m, logits);
  softmax_into(logits, out);
}

void ZeroShotCache::add_logit_grad(const TaskEncoder& enc, int m, const Eigen::VectorXd& g,
                                   Eigen::VectorXd& flat_grad) const {
  const int k = enc.num_answers;
  if (enc.kind == EncoderKind::Tabular) {
    flat_grad.segment(static_cast<Eigen::Index>(m) * k, k) += g;
  } else {
    const int d = enc.feature_dim;
    const auto& f = eval_->dataset().instances[static_cast<std::size_t>(m)].features;
    for (int a = 0; a < k; ++a) {
      for (int j = 0; j < d; ++j)
        flat_grad[a * d + j] += g[a] * f[static_cast<std::size_t>(j)];
    }
    flat_grad.tail(k) += g;
  }
}

Eigen::VectorXd tau(const TaskEncoder& enc, const DatasetEvaluator& eval, int m) {
  check_encoder(enc, eval);
  ZeroShotCache cache(eval);  // convenience path; hot paths hold their own cache
  Eigen::VectorXd out;
  cache.tau_into(enc, m, out);
  return out;
}

Eigen::VectorXd tau(const TaskEncoder& enc, const ConditionalModel& model, const Instance& x) {
  if (enc.kind != EncoderKind::Linear)
    throw std::invalid_argument("tau: out-of-dataset instances need a Linear encoder");
  if (enc.num_answers != model.num_answers())
    throw std::invalid_argument("tau: answer count mismatch");
  Eigen::VectorXd logits = model.log_scores(x, {});
  logits.array() -= logsumexp(logits);
  const Eigen::Map<const Eigen::VectorXd> xv(x.features.data(),
                                             static_cast<Eigen::Index>(x.features.size()));
  logits += enc.weight * xv + enc.bias;
  Eigen::VectorXd out;
  softmax_into(logits, out);
  return out;
}

double prior_entropy(const TaskEncoder& enc, const DatasetEvaluator& eval,
                     std::span<const int> instances) {
  check_encoder(enc, eval);
  if (instances.empty()) throw std::invalid_argument("prior_entropy: empty instance set");
  ZeroShotCache cache(eval);
  Eigen::VectorXd prior = Eigen::VectorXd::Zero(enc.num_answers);
  Eigen::VectorXd t;
  for (int m : instances) {
    cache.tau_into(enc, m, t);
    prior += t;
  }
  prior /= static_cast<double>(instances.size());
  return entropy(prior);
}

int predict(const TaskEncoder& enc, const DatasetEvaluator& eval, int m) {
  return argmax_lowest(tau(enc, eval, m));
}

Labeling predict_all(const TaskEncoder& enc, const DatasetEvaluator& eval) {
  check_encoder(enc, eval);
  ZeroShotCache cache(eval);
  Labeling out(static_cast<std::size_t>(eval.num_instances()));
  Eigen::VectorXd t;
  for (int m = 0; m < eval.num_instances(); ++m) {
    cache.tau_into(enc, m, t);
    out[static_cast<std::size_t>(m)] = argmax_lowest(t);
  }
  return out;
}

double exact_amortized_objective(const TaskEncoder& enc, const ZeroShotCache& cache, int N,
                                 Exec exec, std::int64_t tuple_cap) {
  const DatasetEvaluator& eval = cache.evaluator();
  check_encoder(enc, eval);
  const int m_total = cache.num_instances();
  const int k = cache.num_answers();
  if (N < 1 || N > m_total)
    throw std::invalid_argument("exact_amortized_objective: N must be in [1, M]");
  const std::int64_t tuples = ordered_tuple_count(m_total, N, tuple_cap);
  if (std::pow(static_cast<double>(k), N - 1) > 65536.0)
    throw std::invalid_argument(
        "exact_amortized_objective: context expansion K^(N-1) too large to enumerate");

  struct Scratch {
    std::vector<int> unrank;
    std::vector<int> tuple;
    std::vector<ContextItem> ctx;
    std::vector<Eigen::VectorXd> tau_at;   // per recursion depth
    std::vector<Eigen::VectorXd> logp_at;  // per recursion depth
  };
  std::vector<double> per_tuple(static_cast<std::size_t>(tuples), 0.0);
  parallel_for_scratch(
      tuples, exec,
      [&] {
        Scratch s;
        s.tuple.resize(static_cast<std::size_t>(N));
        s.tau_at.resize(static_cast<std::size_t>(N));
        s.logp_at.resize(static_cast<std::size_t>(N));
        return s;
      },
      [&](Scratch& s, std::int64_t rank) {
        unrank_tuple(rank, m_total, N, s.unrank, s.tuple);
        s.ctx.clear();
        double value = 0.0;
        // DFS over context label assignments, weighted by their tau mass.
        auto walk = [&](auto&& self, int pos, double weight) -> void {
          Eigen::VectorXd& t = s.tau_at[static_cast<std::size_t>(pos)];
          Eigen::VectorXd& lp = s.logp_at[static_cast<std::size_t>(pos)];
          cache.tau_into(enc, s.tuple[static_cast<std::size_t>(pos)], t);
          eval.renorm_log_probs_into(s.tuple[static_cast<std::size_t>(pos)], s.ctx, lp);
          value += weight * t.dot(lp) / static_cast<double>(N);
          if (pos + 1 == N) return;
          for (int y = 0; y < k; ++y) {
            s.ctx.push_back({s.tuple[static_cast<std::size_t>(pos)], y});
            self(self, pos + 1, weight * t[y]);
            s.ctx.pop_back();
          }
        };
        walk(walk, 0, 1.0);
        per_tuple[static_cast<std::size_t>(rank)] = value;
      });
  double total = 0.0;
  for (double v : per_tuple) total += v;
  return total / static_cast<double>(tuples);
}

namespace {

// Per-tuple estimator state shared by both estimators and the trainer (the
// trainer additionally wants the tau rows for the prior regularizer).
struct ElementResult {
  GradientEstimate est;
  std::vector<std::pair<int, Eigen::VectorXd>> taus;  // (instance, tau) per position
};

void check_tuple(const TaskEncoder& enc, const ZeroShotCache& cache, std::span<const int> tuple) {
  if (tuple.empty()) throw std::invalid_argument("gradient estimator: empty tuple");
  for (std::size_t i = 0; i < tuple.size(); ++i) {
    if (tuple[i] < 0 || tuple[i] >= cache.num_instances())
      throw std::invalid_argument("gradient estimator: tuple index out of range");
    for (std::size_t j = i + 1; j < tuple.size(); ++j) {
      if (tuple[i] == tuple[j])
        throw std::invalid_argument("gradient estimator: tuple has repeated instances");
    }
  }
  if (enc.kind == EncoderKind::Tabular && enc.num_instances != cache.num_instances())
    throw std::invalid_argument("gradient estimator: encoder/dataset size mismatch");
}

void estimate_element(const TaskEncoder& enc, const ZeroShotCache& cache,
                      std::span<const int> tuple, Estimator kind, Rng& rng, bool want_taus,
                      ElementResult& out) {
  check_tuple(enc, cache, tuple);
  const DatasetEvaluator& eval = cache.evaluator();
  const int n_total = static_cast<int>(tuple.size());
  const int k = enc.num_answers;
  const double inv_n = 1.0 / static_cast<double>(n_total);

  out.est.grad = Eigen::VectorXd::Zero(enc.param_count());
  out.est.objective_sample = 0.0;
  out.est.marginal_sample = 0.0;
  out.est.baseline_value = 0.0;
  out.taus.clear();

  // Running sum of grad log tau(y_j | x_j) over sampled positions so far.
  Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(enc.param_count());
  std::vector<ContextItem> ctx_sampled;
  std::vector<ContextItem> ctx_greedy;
  ctx_sampled.reserve(static_cast<std::size_t>(n_total));
  ctx_greedy.reserve(static_cast<std::size_t>(n_total));

  Eigen::VectorXd tau_n, j_vec, j_star, logit_g;
  for (int n = 0; n < n_total; ++n) {
    const int m = tuple[static_cast<std::size_t>(n)];
    cache.tau_into(enc, m, tau_n);

    if (kind == Estimator::NaiveReinforce) {
      const int y = rng.categorical(std::span<const double>(tau_n.data(),
                                                            static_cast<std::size_t>(k)));
      const double j_n = inv_n * eval.renorm_log_prob(y, m, ctx_sampled);
      logit_g = -tau_n;
      logit_g[y] += 1.0;
      cache.add_logit_grad(enc, m, logit_g, score_sum);  // j <= n includes this position
      out.est.grad += j_n * score_sum;
      out.est.objective_sample += j_n;
      ctx_sampled.push_back({m, y});
    } else {
      eval.renorm_log_probs_into(m, ctx_sampled, j_vec);
      j_vec *= inv_n;
      eval.renorm_log_probs_into(m, ctx_greedy, j_star);
      j_star *= inv_n;
      // Expectations under tau, with 0 * -inf read as 0 (answers tau never
      // picks may legitimately carry -inf log-probability).
      double j_tilde = 0.0;
      double baseline = 0.0;
      for (int a = 0; a < k; ++a) {
        if (tau_n[a] > 0.0) {
          j_tilde += tau_n[a] * j_vec[a];
          baseline += tau_n[a] * j_star[a];
        }
      }

      // Score-function part over the sampled prefix only (empty at n = 0).
      if (n > 0) out.est.grad += (j_tilde - baseline) * score_sum;
      // Pathwise part: d J-tilde / d logit_a = tau_a (J_a - J-tilde).
      logit_g.resize(k);
      for (int a = 0; a < k; ++a)
        logit_g[a] = tau_n[a] > 0.0 ? tau_n[a] * (j_vec[a] - j_tilde) : 0.0;
      cache.add_logit_grad(enc, m, logit_g, out.est.grad);

      const int y = rng.categorical(std::span<const double>(tau_n.data(),
                                                            static_cast<std::size_t>(k)));
      const int y_greedy = argmax_lowest(tau_n);
      logit_g = -tau_n;
      logit_g[y] += 1.0;
      cache.add_logit_grad(enc, m, logit_g, score_sum);
      out.est.objective_sample += j_vec[y];
      out.est.marginal_sample += j_tilde;
      out.est.baseline_value += baseline;
      ctx_sampled.push_back({m, y});
      ctx_greedy.push_back({m, y_greedy});
    }
    if (want_taus) out.taus.emplace_back(m, tau_n);
  }
  if (kind == Estimator::NaiveReinforce) out.est.marginal_sample = out.est.objective_sample;
}

}  // namespace

GradientEstimate grad_naive_reinforce(const TaskEncoder& enc, const ZeroShotCache& cache,
                                      std::span<const int> tuple, Rng& rng) {
  ElementResult r;
  estimate_element(enc, cache, tuple, Estimator::NaiveReinforce, rng, false, r);
  return std::move(r.est);
}

GradientEstimate grad_low_variance(const TaskEncoder& enc, const ZeroShotCache& cache,
                                   std::span<const int> tuple, Rng& rng) {
  ElementResult r;
  estimate_element(enc, cache, tuple, Estimator::LowVariance, rng, false, r);
  return std::move(r.est);
}

TrainResult train_uft(const DatasetEvaluator& eval, const TrainConfig& config) {
  const int m_total = eval.num_instances();
  if (config.N < 1 || config.N > m_total)
    throw std::invalid_argument("train_uft: need 1 <= N <= dataset size");
  if (config.batch < 1 || config.iterations < 0)
    throw std::invalid_argument("train_uft: batch and iterations must be positive");
  if (!(config.lr > 0.0)) throw std::invalid_argument("train_uft: lr must be > 0");
  if (!(config.gamma >= 0.0)) throw std::invalid_argument("train_uft: gamma must be >= 0");

  TaskEncoder enc = init_task_encoder(eval.model(), eval.dataset(), config.encoder);
  ZeroShotCache cache(eval);
  const Eigen::Index p = enc.param_count();
  const int k = enc.num_answers;

  Eigen::VectorXd theta = enc.flatten();
  Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(p);

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  std::vector<ElementResult> elements(static_cast<std::size_t>(config.batch));
  Eigen::VectorXd grad(p), prior(k), tau_dot_buf, logit_g(k);

  for (int t = 0; t < config.iterations; ++t) {
    // Independent stream per (iteration, element): thread-count-proof.
    parallel_for_scratch(
        config.batch, config.exec, [] { return std::vector<int>(); },
        [&](std::vector<int>& tuple, std::int64_t b) {
          Rng rng(derive_seed(config.seed, {0x0f7u, static_cast<std::uint64_t>(t),
                                            static_cast<std::uint64_t>(b)}));
          rng.sample_without_replacement(m_total, config.N, tuple);
          estimate_element(enc, cache, tuple, config.estimator, rng, true,
                           elements[static_cast<std::size_t>(b)]);
        });

    // Fixed-order reduction: objective gradient, then the exact gradient of
    // gamma * R through the minibatch prior.
    grad.setZero();
    double objective_j = 0.0;
    prior.setZero();
    for (const ElementResult& el : elements) {
      grad += el.est.grad;
      objective_j += el.est.objective_sample;
      for (const auto& [m, tau_row] : el.taus) prior += tau_row;
    }
    const double batch_inv = 1.0 / static_cast<double>(config.batch);
    grad *= batch_inv;
    objective_j *= batch_inv;
    const double occ_count = static_cast<double>(config.batch) * config.N;
    prior /= occ_count;
    const double reg_entropy = entropy(prior);

    if (config.gamma > 0.0) {
      Eigen::VectorXd log_prior(k);
      for (int a = 0; a < k; ++a) log_prior[a] = prior[a] > 0.0 ? std::log(prior[a]) : 0.0;
      const double scale = -config.gamma / occ_count;
      for (const ElementResult& el : elements) {
        for (const auto& [m, tau_row] : el.taus) {
          const double center = tau_row.dot(log_prior);
          logit_g = scale * tau_row.cwiseProduct(log_prior - Eigen::VectorXd::Constant(k, center));
          cache.add_logit_grad(enc, m, logit_g, grad);
        }
      }
    }

    TrainIterRow row;
    row.iteration = t;
    row.entropy = reg_entropy;
    row.regularizer = config.gamma * reg_entropy;
    row.objective = objective_j + row.regularizer;
    if (eval.dataset().has_gold()) {
      Labeling pred(static_cast<std::size_t>(m_total));
      for (int m = 0; m < m_total; ++m) {
        cache.tau_into(enc, m, tau_dot_buf);
        pred[static_cast<std::size_t>(m)] = argmax_lowest(tau_dot_buf);
      }
      row.accuracy = labeling_agreement(pred, eval.dataset().gold);
    }
    result.trace.push_back(row);

    if (!std::isfinite(row.objective))
      throw DivergenceError("train_uft: objective became non-finite at iteration " +
                            std::to_string(t));

    if (config.optimizer == OptimizerKind::Sgd) {
      theta += config.lr * grad;
    } else {
      adam_m = config.adam_beta1 * adam_m + (1.0 - config.adam_beta1) * grad;
      adam_v = config.adam_beta2 * adam_v + (1.0 - config.adam_beta2) * grad.cwiseProduct(grad);
      const double bc1 = 1.0 - std::pow(config.adam_beta1, t + 1);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, t + 1);
      theta += (config.lr / bc1) *
               adam_m.cwiseQuotient(((adam_v / bc2).cwiseSqrt().array() + config.adam_eps).matrix());
    }
    enc.unflatten(theta);

    if (enc.max_abs_param() > config.divergence_max_abs)
      throw DivergenceError("train_uft: parameter magnitude exceeded " +
                            std::to_string(config.divergence_max_abs) + " at iteration " +
                            std::to_string(t));
  }

  std::vector<int> all(static_cast<std::size_t>(m_total));
  for (int i = 0; i < m_total; ++i) all[static_cast<std::size_t>(i)] = i;
  result.final_prior_entropy = prior_entropy(enc, eval, all);
  result.argmax_labeling = predict_all(enc, eval);
  result.encoder = std::move(enc);
  return result;
}

TrainResult train_uft(const ConditionalModel& model, const TaskDataset& dataset,
                      const TrainConfig& config) {
  DatasetEvaluator eval(model, dataset);
  return train_uft(eval, config);
}

}  // namespace jinfer
