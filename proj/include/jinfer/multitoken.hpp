#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "jinfer/model.hpp"

namespace jinfer {

// Answers as token sequences, for models that emit one token at a time.
struct TokenizedAnswerSet {
  std::vector<std::vector<std::string>> sequences;  // one non-empty sequence per answer

  int size() const { return static_cast<int>(sequences.size()); }

  static TokenizedAnswerSet from_answer_set(const AnswerSet& answers);

  // K >= 2, sequences non-empty, no exact duplicates. Throws std::invalid_argument.
  void validate() const;
};

struct PrefixResult {
  std::vector<int> lengths;       // minimal distinguishing prefix length per answer
  std::vector<bool> shadowed;     // answer is a strict prefix of another answer
  bool any_shadowed() const;
};

// Shortest prefix of each answer's token sequence shared by no other answer.
// When an answer is a strict prefix of another, no distinguishing prefix
// exists; the full sequence is returned and the answer flagged shadowed
// (scores then under-separate those two answers — caller's judgment call).
PrefixResult minimal_distinguishing_prefixes(const TokenizedAnswerSet& answers);

// Next-token distribution source. Implementations return log-probabilities
// over their vocabulary given the query, the support context, and the label
// tokens emitted so far.
class TokenLevelModel {
 public:
  virtual ~TokenLevelModel() = default;

  virtual const std::vector<std::string>& vocab() const = 0;
  virtual Eigen::VectorXd next_token_log_probs(const Instance& x, const SupportContext& ctx,
                                               std::span<const std::string> emitted) const = 0;

  int vocab_index(const std::string& token) const;  // throws if unknown
};

// First-token approximation: score each answer by the log-probability of its
// first token, renormalized across answers. Refuses answer sets where two
// answers share a first token (FirstTokenAmbiguousError).
Eigen::VectorXd first_token_log_scores(const TokenLevelModel& model,
                                       const TokenizedAnswerSet& answers, const Instance& x,
                                       const SupportContext& ctx);
double first_token_logprob(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                           const Instance& x, const SupportContext& ctx, int answer);

// Bag-of-tokens approximation: sum the log-probabilities of the tokens in
// each answer's minimal distinguishing prefix, every token scored against the
// prompt alone (no emitted-prefix conditioning), then renormalize across
// answers. Collapses to the first-token score when first tokens are distinct.
Eigen::VectorXd bot_log_scores(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                               const Instance& x, const SupportContext& ctx);
double bot_logprob(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                   const Instance& x, const SupportContext& ctx, int answer);

// Adapter exposing either approximation as a ConditionalModel whose
// log_scores are the raw (pre-renormalization) per-answer scores.
class TokenAnswerModel : public ConditionalModel {
 public:
  enum class Scoring { FirstToken, BagOfTokens };

  TokenAnswerModel(const TokenLevelModel& model, TokenizedAnswerSet answers, Scoring scoring);

  int num_answers() const override { return answers_.size(); }
  bool normalized_over_answers() const override { return false; }
  Eigen::VectorXd log_scores(const Instance& x, const SupportContext& ctx) const override;

 private:
  const TokenLevelModel* model_;
  TokenizedAnswerSet answers_;
  Scoring scoring_;
};

}  // namespace jinfer
