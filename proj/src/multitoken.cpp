#include "jinfer/multitoken.hpp"

#include <stdexcept>

#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"

namespace jinfer {

TokenizedAnswerSet TokenizedAnswerSet::from_answer_set(const AnswerSet& answers) {
  TokenizedAnswerSet out;
  out.sequences.reserve(answers.answers.size());
  for (const auto& a : answers.answers) {
    // Untokenized answers count as one single-token sequence (their name).
    out.sequences.push_back(a.tokens.empty() ? std::vector<std::string>{a.name} : a.tokens);
  }
  out.validate();
  return out;
}

void TokenizedAnswerSet::validate() const {
  if (sequences.size() < 2)
    throw std::invalid_argument("TokenizedAnswerSet: need at least 2 answers");
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].empty())
      throw std::invalid_argument("TokenizedAnswerSet: answer " + std::to_string(i) +
                                  " has an empty token sequence");
    for (const std::string& t : sequences[i]) {
      if (t.empty())
        throw std::invalid_argument("TokenizedAnswerSet: empty token in answer " +
                                    std::to_string(i));
    }
    for (std::size_t j = i + 1; j < sequences.size(); ++j) {
      if (sequences[i] == sequences[j])
        throw std::invalid_argument("TokenizedAnswerSet: answers " + std::to_string(i) + " and " +
                                    std::to_string(j) + " have identical token sequences");
    }
  }
}

bool PrefixResult::any_shadowed() const {
  for (bool s : shadowed) {
    if (s) return true;
  }
  return false;
}

namespace {

// Does sequence `s` extend (or equal) the first `len` tokens of `prefix_of`?
bool shares_prefix(const std::vector<std::string>& s, const std::vector<std::string>& prefix_of,
                   std::size_t len) {
  if (s.size() < len) return false;
  for (std::size_t t = 0; t < len; ++t) {
    if (s[t] != prefix_of[t]) return false;
  }
  return true;
}

}  // namespace

PrefixResult minimal_distinguishing_prefixes(const TokenizedAnswerSet& answers) {
  answers.validate();
  const int k = answers.size();
  PrefixResult result;
  result.lengths.resize(static_cast<std::size_t>(k), 0);
  result.shadowed.resize(static_cast<std::size_t>(k), false);
  for (int a = 0; a < k; ++a) {
    const auto& seq = answers.sequences[static_cast<std::size_t>(a)];
    int found = 0;
    for (std::size_t len = 1; len <= seq.size(); ++len) {
      bool clash = false;
      for (int b = 0; b < k && !clash; ++b) {
        if (b != a) clash = shares_prefix(answers.sequences[static_cast<std::size_t>(b)], seq, len);
      }
      if (!clash) {
        found = static_cast<int>(len);
        break;
      }
    }
    if (found == 0) {
      // Some other answer extends this entire sequence; the best we can do is
      // the full sequence.
      result.lengths[static_cast<std::size_t>(a)] = static_cast<int>(seq.size());
      result.shadowed[static_cast<std::size_t>(a)] = true;
    } else {
      result.lengths[static_cast<std::size_t>(a)] = found;
    }
  }
  return result;
}

int TokenLevelModel::vocab_index(const std::string& token) const {
  const auto& v = vocab();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == token) return static_cast<int>(i);
  }
  throw std::invalid_argument("TokenLevelModel: token '" + token + "' not in vocabulary");
}

Eigen::VectorXd first_token_log_scores(const TokenLevelModel& model,
                                       const TokenizedAnswerSet& answers, const Instance& x,
                                       const SupportContext& ctx) {
  answers.validate();
  const int k = answers.size();
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      if (answers.sequences[static_cast<std::size_t>(a)].front() ==
          answers.sequences[static_cast<std::size_t>(b)].front())
        throw FirstTokenAmbiguousError("first-token scores undefined: answers " +
                                       std::to_string(a) + " and " + std::to_string(b) +
                                       " share first token '" +
                                       answers.sequences[static_cast<std::size_t>(a)].front() +
                                       "'");
    }
  }
  const Eigen::VectorXd lp = model.next_token_log_probs(x, ctx, {});
  Eigen::VectorXd scores(k);
  for (int a = 0; a < k; ++a)
    scores[a] = lp[model.vocab_index(answers.sequences[static_cast<std::size_t>(a)].front())];
  scores.array() -= logsumexp(scores);
  return scores;
}

double first_token_logprob(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                           const Instance& x, const SupportContext& ctx, int answer) {
  if (answer < 0 || answer >= answers.size())
    throw std::invalid_argument("first_token_logprob: answer index out of range");
  return first_token_log_scores(model, answers, x, ctx)[answer];
}

Eigen::VectorXd bot_log_scores(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                               const Instance& x, const SupportContext& ctx) {
  const PrefixResult prefixes = minimal_distinguishing_prefixes(answers);
  const int k = answers.size();
  const Eigen::VectorXd lp = model.next_token_log_probs(x, ctx, {});
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(k);
  for (int a = 0; a < k; ++a) {
    const auto& seq = answers.sequences[static_cast<std::size_t>(a)];
    for (int t = 0; t < prefixes.lengths[static_cast<std::size_t>(a)]; ++t)
      scores[a] += lp[model.vocab_index(seq[static_cast<std::size_t>(t)])];
  }
  scores.array() -= logsumexp(scores);
  return scores;
}

double bot_logprob(const TokenLevelModel& model, const TokenizedAnswerSet& answers,
                   const Instance& x, const SupportContext& ctx, int answer) {
  if (answer < 0 || answer >= answers.size())
    throw std::invalid_argument("bot_logprob: answer index out of range");
  return bot_log_scores(model, answers, x, ctx)[answer];
}

TokenAnswerModel::TokenAnswerModel(const TokenLevelModel& model, TokenizedAnswerSet answers,
                                   Scoring scoring)
    : model_(&model), answers_(std::move(answers)), scoring_(scoring) {
  answers_.validate();
}

Eigen::VectorXd TokenAnswerModel::log_scores(const Instance& x, const SupportContext& ctx) const {
  const int k = answers_.size();
  const Eigen::VectorXd lp = model_->next_token_log_probs(x, ctx, {});
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(k);
  if (scoring_ == Scoring::FirstToken) {
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        if (answers_.sequences[static_cast<std::size_t>(a)].front() ==
            answers_.sequences[static_cast<std::size_t>(b)].front())
          throw FirstTokenAmbiguousError("TokenAnswerModel: shared first token");
      }
    }
    for (int a = 0; a < k; ++a)
      scores[a] = lp[model_->vocab_index(answers_.sequences[static_cast<std::size_t>(a)].front())];
  } else {
    const PrefixResult prefixes = minimal_distinguishing_prefixes(answers_);
    for (int a = 0; a < k; ++a) {
      const auto& seq = answers_.sequences[static_cast<std::size_t>(a)];
      for (int t = 0; t < prefixes.lengths[static_cast<std::size_t>(a)]; ++t)
        scores[a] += lp[model_->vocab_index(seq[static_cast<std::size_t>(t)])];
    }
  }
  return scores;  // raw scores; renormalization is the caller's business
}

}  // namespace jinfer
