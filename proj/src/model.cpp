#include "jinfer/model.hpp"

#include <stdexcept>

#include "jinfer/numeric.hpp"

namespace jinfer {

namespace {

void check_call(const ConditionalModel& model, int y_or_minus1, const SupportContext& ctx) {
  const int k = model.num_answers();
  if (y_or_minus1 >= 0 && y_or_minus1 >= k)
    throw std::invalid_argument("log_conditional: answer index out of range");
  if (static_cast<int>(ctx.size()) > model.context_budget())
    throw std::invalid_argument("log_conditional: context exceeds model budget");
  for (const auto& ex : ctx) {
    if (ex.answer < 0 || ex.answer >= k)
      throw std::invalid_argument("log_conditional: context answer index out of range");
  }
}

}  // namespace

double log_conditional(const ConditionalModel& model, int y, const Instance& x,
                       const SupportContext& ctx) {
  if (y < 0) throw std::invalid_argument("log_conditional: negative answer index");
  check_call(model, y, ctx);
  return model.log_scores(x, ctx)[y];
}

int sample_answer(const ConditionalModel& model, const Instance& x, const SupportContext& ctx,
                  Rng& rng) {
  check_call(model, -1, ctx);
  const Eigen::VectorXd scores = model.log_scores(x, ctx);
  return rng.categorical_from_log(std::span<const double>(scores.data(),
                                                          static_cast<std::size_t>(scores.size())));
}

}  // namespace jinfer
