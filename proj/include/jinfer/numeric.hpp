#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace jinfer {

// Stable log(sum(exp(v))). Handles -inf entries (they contribute zero mass);
// all -inf yields -inf.
inline double logsumexp(const Eigen::VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;  // all -inf (or a NaN, which propagates below)
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += std::exp(v[i] - mx);
  return mx + std::log(total);
}

// v <- v - logsumexp(v), so exp(v) sums to one.
inline void log_softmax_inplace(Eigen::VectorXd& v) { v.array() -= logsumexp(v); }

// out = softmax(v), stable.
inline void softmax_into(const Eigen::VectorXd& v, Eigen::VectorXd& out) {
  const double mx = v.maxCoeff();
  out = (v.array() - mx).exp();
  out /= out.sum();
}

// Shannon entropy (natural log) of a probability vector; 0 log 0 := 0.
inline double entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

// Index of the maximum, lowest index on ties (strict-greater scan).
inline int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace jinfer
