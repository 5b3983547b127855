#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "jinfer/errors.hpp"
#include "jinfer/multitoken.hpp"
#include "jinfer/objective.hpp"

using namespace jinfer;

namespace {

Instance text_instance(const std::string& id) {
  Instance inst;
  inst.id = id;
  inst.text = "prompt";
  return inst;
}

// Fixed next-token table. Optionally swaps to a second table once anything
// has been emitted, to pin down which calls condition on the emitted prefix.
class TableTokenModel : public TokenLevelModel {
 public:
  TableTokenModel(std::vector<std::string> vocab, std::vector<double> base_probs)
      : vocab_(std::move(vocab)), base_(std::move(base_probs)) {}

  void set_after_emit(std::vector<double> probs) { after_emit_ = std::move(probs); }

  const std::vector<std::string>& vocab() const override { return vocab_; }

  Eigen::VectorXd next_token_log_probs(const Instance&, const SupportContext&,
                                       std::span<const std::string> emitted) const override {
    const std::vector<double>& probs =
        (!emitted.empty() && !after_emit_.empty()) ? after_emit_ : base_;
    Eigen::VectorXd lp(static_cast<int>(probs.size()));
    for (std::size_t i = 0; i < probs.size(); ++i) lp[static_cast<int>(i)] = std::log(probs[i]);
    return lp;
  }

 private:
  std::vector<std::string> vocab_;
  std::vector<double> base_;
  std::vector<double> after_emit_;
};

TokenizedAnswerSet seqs(std::vector<std::vector<std::string>> s) {
  TokenizedAnswerSet t;
  t.sequences = std::move(s);
  return t;
}

}  // namespace

TEST_CASE("minimal distinguishing prefixes: the three canonical shapes") {
  // Distinct first tokens: length 1 each.
  PrefixResult r = minimal_distinguishing_prefixes(seqs({{"a"}, {"b"}}));
  CHECK(r.lengths == std::vector<int>{1, 1});
  CHECK_FALSE(r.any_shadowed());

  // Shared first token: both need their second token.
  r = minimal_distinguishing_prefixes(seqs({{"a", "b"}, {"a", "c"}}));
  CHECK(r.lengths == std::vector<int>{2, 2});
  CHECK_FALSE(r.any_shadowed());

  // One answer is a strict prefix of the other: it has no distinguishing
  // prefix at all and gets flagged.
  r = minimal_distinguishing_prefixes(seqs({{"a"}, {"a", "b"}}));
  CHECK(r.lengths == std::vector<int>{1, 2});
  REQUIRE(r.shadowed.size() == 2);
  CHECK(r.shadowed[0]);
  CHECK_FALSE(r.shadowed[1]);
  CHECK(r.any_shadowed());
}

TEST_CASE("prefix lengths are per-answer minimal in a mixed set") {
  const PrefixResult r =
      minimal_distinguishing_prefixes(seqs({{"x"}, {"y", "z"}, {"y", "w", "q"}}));
  CHECK(r.lengths == std::vector<int>{1, 2, 2});
  CHECK_FALSE(r.any_shadowed());
}

TEST_CASE("tokenized answer sets validate size, emptiness, and duplicates") {
  CHECK_NOTHROW(seqs({{"a"}, {"b"}}).validate());
  CHECK_THROWS_AS(seqs({{"a"}}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(seqs({{"a"}, {}}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(seqs({{"a", "b"}, {"a", "b"}}).validate(), std::invalid_argument);
}

TEST_CASE("from_answer_set uses explicit tokens when present, otherwise the name") {
  AnswerSet ys;
  ys.answers.push_back({"yes", {}});
  ys.answers.push_back({"no way", {"no", "way"}});
  const TokenizedAnswerSet t = TokenizedAnswerSet::from_answer_set(ys);
  REQUIRE(t.size() == 2);
  CHECK(t.sequences[0] == std::vector<std::string>{"yes"});
  CHECK(t.sequences[1] == std::vector<std::string>{"no", "way"});
}

TEST_CASE("first-token scores renormalize 0.6/0.2 mass to exactly 0.75/0.25") {
  const TableTokenModel model({"a", "b", "x"}, {0.6, 0.2, 0.2});
  const TokenizedAnswerSet answers = seqs({{"a"}, {"b"}});
  const Instance x = text_instance("q");

  const Eigen::VectorXd s = first_token_log_scores(model, answers, x, {});
  CHECK(s[0] == doctest::Approx(std::log(0.75)).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(first_token_logprob(model, answers, x, {}, 0) ==
        doctest::Approx(std::log(0.75)).epsilon(1e-12));
  CHECK(first_token_logprob(model, answers, x, {}, 1) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("a shared first token makes first-token scoring refuse") {
  const TableTokenModel model({"x", "p", "q"}, {0.5, 0.3, 0.2});
  const TokenizedAnswerSet answers = seqs({{"x", "p"}, {"x", "q"}});
  const Instance x = text_instance("q");
  CHECK_THROWS_AS(first_token_log_scores(model, answers, x, {}), FirstTokenAmbiguousError);
  CHECK_THROWS_AS(first_token_logprob(model, answers, x, {}, 0), FirstTokenAmbiguousError);
}

TEST_CASE("bag-of-tokens hand table: products 0.15 and 0.10 renormalize to 0.6/0.4") {
  TableTokenModel model({"x", "p", "q"}, {0.5, 0.3, 0.2});
  const TokenizedAnswerSet answers = seqs({{"x", "p"}, {"x", "q"}});
  const Instance x = text_instance("q");

  const Eigen::VectorXd s = bot_log_scores(model, answers, x, {});
  CHECK(s[0] == doctest::Approx(std::log(0.6)).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(std::log(0.4)).epsilon(1e-12));
  CHECK(bot_logprob(model, answers, x, {}, 1) == doctest::Approx(std::log(0.4)).epsilon(1e-12));

  // Every token is scored against the prompt alone: a model that shifts its
  // distribution after the first emission must not change the scores.
  model.set_after_emit({0.01, 0.98, 0.01});
  const Eigen::VectorXd same = bot_log_scores(model, answers, x, {});
  CHECK(same[0] == doctest::Approx(std::log(0.6)).epsilon(1e-12));
  CHECK(same[1] == doctest::Approx(std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("bag-of-tokens collapses to first-token scoring when first tokens are distinct") {
  const TableTokenModel model({"a", "c", "b", "d"}, {0.4, 0.3, 0.2, 0.1});
  const TokenizedAnswerSet answers = seqs({{"a", "c"}, {"b", "d"}});
  const Instance x = text_instance("q");

  const Eigen::VectorXd ft = first_token_log_scores(model, answers, x, {});
  const Eigen::VectorXd bot = bot_log_scores(model, answers, x, {});
  REQUIRE(ft.size() == bot.size());
  for (int i = 0; i < ft.size(); ++i)
    CHECK(bot[i] == doctest::Approx(ft[i]).epsilon(1e-12));
}

TEST_CASE("single-token answers score identically under both approximations") {
  const TableTokenModel model({"a", "b", "x"}, {0.6, 0.2, 0.2});
  const TokenizedAnswerSet answers = seqs({{"a"}, {"b"}});
  const Instance x = text_instance("q");
  const Eigen::VectorXd ft = first_token_log_scores(model, answers, x, {});
  const Eigen::VectorXd bot = bot_log_scores(model, answers, x, {});
  for (int i = 0; i < 2; ++i) CHECK(bot[i] == doctest::Approx(ft[i]).epsilon(1e-12));
}

TEST_CASE("the conditional-model adapter renormalizes to the same probabilities") {
  const TableTokenModel model({"a", "b", "x"}, {0.6, 0.2, 0.2});
  const Instance x = text_instance("q");

  const TokenAnswerModel ft(model, seqs({{"a"}, {"b"}}), TokenAnswerModel::Scoring::FirstToken);
  CHECK_FALSE(ft.normalized_over_answers());
  CHECK(ft.num_answers() == 2);
  CHECK(renormalized_log_conditional(ft, 0, x, {}) ==
        doctest::Approx(std::log(0.75)).epsilon(1e-12));

  const TableTokenModel model2({"x", "p", "q"}, {0.5, 0.3, 0.2});
  const TokenAnswerModel bot(model2, seqs({{"x", "p"}, {"x", "q"}}),
                             TokenAnswerModel::Scoring::BagOfTokens);
  CHECK(renormalized_log_conditional(bot, 0, x, {}) ==
        doctest::Approx(std::log(0.6)).epsilon(1e-12));
  CHECK(renormalized_log_conditional(bot, 1, x, {}) ==
        doctest::Approx(std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("vocab_index resolves tokens and rejects strangers") {
  const TableTokenModel model({"a", "b"}, {0.5, 0.5});
  CHECK(model.vocab_index("a") == 0);
  CHECK(model.vocab_index("b") == 1);
  CHECK_THROWS(model.vocab_index("zebra"));
}

TEST_CASE("scoring rejects answers whose tokens are outside the vocabulary") {
  const TableTokenModel model({"a", "b"}, {0.5, 0.5});
  const Instance x = text_instance("q");
  CHECK_THROWS(first_token_log_scores(model, seqs({{"a"}, {"zebra"}}), x, {}));
  CHECK_THROWS(bot_log_scores(model, seqs({{"a"}, {"zebra"}}), x, {}));
}
