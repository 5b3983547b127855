#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "jinfer/errors.hpp"
#include "jinfer/harness.hpp"
#include "jinfer/numeric.hpp"
#include "jinfer/synthetic.hpp"
#include "jinfer/uicl.hpp"

using namespace jinfer;

namespace {

Label close_label(int idx) {
  Label l;
  l.index = idx;
  l.text = idx == 0 ? "A" : "B";
  return l;
}

Label open_label(const std::string& text, const std::string& reasoning = "") {
  Label l;
  l.text = text;
  l.reasoning = reasoning;
  return l;
}

TaskDataset manual_dataset(int m) {
  TaskDataset ds;
  ds.answer_set = AnswerSet::of_names({"A", "B"});
  for (int i = 0; i < m; ++i) {
    Instance inst;
    inst.id = "q" + std::to_string(i);
    inst.features = {double(i)};
    ds.instances.push_back(inst);
  }
  return ds;
}

// Labels each instance by the parity of its id on the zero-shot turn, then
// rejects every supported draw: later turns must retain the turn-0 labels.
class RejectOnceSupportedSampler : public AnswerSampler {
 public:
  int num_answers() const override { return 2; }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef> support, Rng&,
                       std::uint64_t, bool) override {
    if (!support.empty()) return {Label{}, true};
    const int i = std::stoi(query.id.substr(1));
    return {close_label(i % 2), false};
  }
};

// Rejects a deterministic slice of draws by tag; answers parity otherwise.
class FlakySampler : public AnswerSampler {
 public:
  int num_answers() const override { return 2; }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef>, Rng&,
                       std::uint64_t tag, bool) override {
    if (tag % 4 == 0) return {Label{}, true};
    const int i = std::stoi(query.id.substr(1));
    return {close_label(i % 2), false};
  }
};

class AlwaysRejectSampler : public AnswerSampler {
 public:
  int num_answers() const override { return 2; }
  SampleOutcome sample(const Instance&, std::span<const SupportRef>, Rng&, std::uint64_t,
                       bool) override {
    return {Label{}, true};
  }
};

// Never gives instances q0..q2 a valid answer, so they can never join a pool.
class HoleySampler : public AnswerSampler {
 public:
  int num_answers() const override { return 2; }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef>, Rng&, std::uint64_t,
                       bool) override {
    const int i = std::stoi(query.id.substr(1));
    if (i < 3) return {Label{}, true};
    return {close_label(i % 2), false};
  }
};

class CountingSampler : public AnswerSampler {
 public:
  explicit CountingSampler(AnswerSampler& inner) : inner_(&inner) {}
  int num_answers() const override { return inner_->num_answers(); }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef> support, Rng& rng,
                       std::uint64_t tag, bool greedy) override {
    calls.fetch_add(1);
    return inner_->sample(query, support, rng, tag, greedy);
  }
  std::atomic<std::int64_t> calls{0};

 private:
  AnswerSampler* inner_;
};

TurnState pool_state(const std::vector<int>& labels) {
  TurnState st;
  st.turn = 1;
  for (int y : labels) st.labels.push_back(y < 0 ? Label{} : close_label(y));
  return st;
}

}  // namespace

TEST_CASE("majority vote counts, breaks ties low, and keeps the first representative") {
  // Clear majority.
  std::vector<Label> v = {close_label(1), close_label(0), close_label(1)};
  CHECK(majority_vote(v).index == 1);

  // Tie: lowest answer index wins.
  v = {close_label(1), close_label(0)};
  CHECK(majority_vote(v).index == 0);

  // Open-ended tie: lexicographically smallest text wins.
  std::vector<Label> open = {open_label("zebra"), open_label("apple")};
  CHECK(majority_vote(open).text == "apple");

  // Winner's representative is the first-seen instance of that candidate.
  std::vector<Label> rep = {close_label(1), close_label(0), close_label(1)};
  rep[0].reasoning = "first";
  rep[2].reasoning = "second";
  CHECK(majority_vote(rep).reasoning == "first");
}

TEST_CASE("support sampling fills per-answer quotas and falls back when a class runs dry") {
  // 5 As (0..4) and 5 Bs (5..9).
  const TurnState balanced = pool_state({0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const std::vector<int> sup = sample_support(balanced, 8, /*exclude=*/0, true, 2, rng);
    REQUIRE(sup.size() == 8);
    int a = 0, b = 0;
    for (int i : sup) {
      CHECK(i != 0);  // exclusion honored
      CHECK(i >= 0);
      CHECK(i < 10);
      (i < 5 ? a : b)++;
    }
    CHECK(a == 4);
    CHECK(b == 4);
    std::set<int> uniq(sup.begin(), sup.end());
    CHECK(uniq.size() == 8);  // without replacement
  }

  // Only one A in the pool: quota degrades to 1 A + 7 B.
  const TurnState lopsided = pool_state({0, 1, 1, 1, 1, 1, 1, 1, 1, 1});
  const std::vector<int> sup = sample_support(lopsided, 8, -1, true, 2, rng);
  int a = 0;
  for (int i : sup)
    if (i == 0) a++;
  CHECK(a == 1);
  CHECK(sup.size() == 8);
}

TEST_CASE("support sampling shuffles order and skips invalid labels") {
  const TurnState pool = pool_state({0, 0, -1, 1, 1, 0, 1, -1, 0, 1});
  Rng rng(7);
  std::set<std::vector<int>> orders;
  for (int rep = 0; rep < 20; ++rep) {
    const std::vector<int> sup = sample_support(pool, 6, -1, true, 2, rng);
    REQUIRE(sup.size() == 6);
    for (int i : sup) {
      CHECK(i != 2);
      CHECK(i != 7);
    }
    orders.insert(sup);
  }
  CHECK(orders.size() > 1);  // order is shuffled, not canonical

  // 8 valid labels; asking for more than the pool throws.
  CHECK_THROWS_AS(sample_support(pool, 8, /*exclude=*/0, true, 2, rng), InsufficientPoolError);
}

TEST_CASE("rejected draws never vote and an all-rejected instance keeps its label") {
  const TaskDataset ds = manual_dataset(10);
  RejectOnceSupportedSampler sampler;
  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 3;
  cfg.repeats = 3;
  cfg.seed = 9;
  cfg.trace_sequences = 0;
  const UiclResult res = run_uicl(sampler, ds, cfg);

  REQUIRE(res.turns.size() == 4);
  for (int m = 0; m < 10; ++m) {
    const int want = m % 2;
    for (int t = 0; t <= 3; ++t) {
      CHECK(res.turns[t].labels[m].index == want);  // retained from turn 0
    }
    for (int t = 1; t <= 3; ++t) {
      const VoteTally& tally = res.turns[t].tallies[m];
      CHECK(tally.votes.empty());
      CHECK(tally.rejected == 3);
      CHECK(tally.accepted_total() == 0);
    }
  }
  CHECK(res.final_labeling() == Labeling{0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
}

TEST_CASE("vote tallies account for every repeat") {
  const TaskDataset ds = manual_dataset(10);
  FlakySampler sampler;
  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 3;
  cfg.repeats = 5;
  cfg.seed = 4;
  cfg.trace_sequences = 0;
  const UiclResult res = run_uicl(sampler, ds, cfg);

  bool saw_rejection = false;
  for (int t = 1; t <= 3; ++t) {
    for (int m = 0; m < 10; ++m) {
      const VoteTally& tally = res.turns[t].tallies[m];
      int votes = 0;
      for (const auto& [label, count] : tally.votes) {
        CHECK(label.valid());
        CHECK(count > 0);
        votes += count;
      }
      CHECK(votes == tally.accepted_total());
      CHECK(votes + tally.rejected == 5);
      if (tally.rejected > 0) saw_rejection = true;
    }
  }
  CHECK(saw_rejection);
}

TEST_CASE("a fully rejecting sampler leaves labels invalid and final_labeling throws") {
  const TaskDataset ds = manual_dataset(6);
  AlwaysRejectSampler sampler;
  UiclConfig cfg;
  cfg.N = 2;
  cfg.turns = 2;
  cfg.repeats = 3;
  cfg.trace_sequences = 0;
  const UiclResult res = run_uicl(sampler, ds, cfg);
  for (const Label& l : res.final_labels) CHECK_FALSE(l.valid());
  CHECK_THROWS_AS(res.final_labeling(), Error);
}

TEST_CASE("support shrinks to the eligible pool instead of deadlocking") {
  const TaskDataset ds = manual_dataset(8);  // q0..q2 never validate: pool is 5
  HoleySampler sampler;
  UiclConfig cfg;
  cfg.N = 6;
  cfg.turns = 2;
  cfg.repeats = 3;
  cfg.seed = 2;
  cfg.trace_sequences = 0;

  std::atomic<bool> bad{false};
  UiclHooks hooks;
  hooks.on_support = [&](int, int instance, int, std::span<const int> support) {
    if (support.size() > 5) bad = true;
    for (int s : support) {
      if (s == instance || s < 3) bad = true;  // no self-support, no invalid members
    }
  };
  const UiclResult res = run_uicl(sampler, ds, cfg, nullptr, &hooks);
  CHECK_FALSE(bad.load());
  for (int m = 3; m < 8; ++m) CHECK(res.final_labels[m].index == m % 2);
  for (int m = 0; m < 3; ++m) CHECK_FALSE(res.final_labels[m].valid());
}

TEST_CASE("greedy turn zero is the zero-shot argmax labeling") {
  const SyntheticTask task = make_fixture("ref-m8");
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);

  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 1;
  cfg.repeats = 3;
  cfg.greedy = true;
  cfg.trace_sequences = 0;
  const UiclResult res = run_uicl(model, task.dataset, cfg);

  Eigen::VectorXd lp(2);
  for (int m = 0; m < task.dataset.size(); ++m) {
    eval.renorm_log_probs_into(m, {}, lp);
    CHECK(res.turns[0].labels[m].index == argmax_lowest(lp));
  }
}

TEST_CASE("one seed, one answer: reruns and exec modes are identical") {
  const SyntheticTask task = make_fixture("ref-m8");
  const SyntheticModel model = task.make_model();

  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 3;
  cfg.repeats = 3;
  cfg.seed = 21;
  cfg.trace_sequences = 64;

  cfg.exec = Exec::Serial;
  const UiclResult a = run_uicl(model, task.dataset, cfg);
  const UiclResult b = run_uicl(model, task.dataset, cfg);
  cfg.exec = Exec::Parallel;
  const UiclResult c = run_uicl(model, task.dataset, cfg);

  REQUIRE(a.turns.size() == 4);
  for (int t = 0; t <= 3; ++t) {
    for (int m = 0; m < task.dataset.size(); ++m) {
      CHECK(a.turns[t].labels[m].index == b.turns[t].labels[m].index);
      CHECK(a.turns[t].labels[m].index == c.turns[t].labels[m].index);
    }
    CHECK(a.objective_trace[t].value == b.objective_trace[t].value);  // bitwise
    CHECK(a.objective_trace[t].value == c.objective_trace[t].value);
    CHECK(a.accuracy_trace[t] == c.accuracy_trace[t]);
  }
}

TEST_CASE("a context-free greedy run holds labels and trace values constant") {
  // No context signal, sharp head: every turn reproduces the zero-shot argmax,
  // and the shared per-run trace sample makes the estimates exactly equal.
  SyntheticGenOptions opts;
  opts.logit_scale = 5.0;
  SyntheticModelParams k;
  k.kernel_bandwidth = 1.0;
  k.context_strength = 0.0;
  const SyntheticTask task = generate_synthetic_task(5, 10, 2, 2, 0.3, k, opts);
  const SyntheticModel model = task.make_model();

  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 3;
  cfg.repeats = 3;
  cfg.greedy = true;
  cfg.seed = 6;
  cfg.trace_sequences = 128;
  const UiclResult res = run_uicl(model, task.dataset, cfg);

  for (int t = 1; t <= 3; ++t) {
    for (int m = 0; m < 10; ++m)
      CHECK(res.turns[t].labels[m].index == res.turns[0].labels[m].index);
    CHECK(res.objective_trace[t].value == res.objective_trace[0].value);
    CHECK(res.accuracy_trace[t] == res.accuracy_trace[0]);
  }
}

TEST_CASE("checkpointed two-stage run equals the uninterrupted run and skips finished turns") {
  const SyntheticTask task = make_fixture("ref-m8");
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);
  ModelAnswerSampler sampler(model, task.dataset.answer_set);

  UiclConfig cfg;
  cfg.N = 4;
  cfg.turns = 4;
  cfg.repeats = 3;
  cfg.seed = 13;
  cfg.trace_sequences = 64;

  const UiclResult oneshot = run_uicl(sampler, task.dataset, cfg, &eval);

  const auto dir = std::filesystem::temp_directory_path() / "jinfer_uicl_ckpt_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  UiclConfig staged = cfg;
  staged.checkpoint_dir = dir.string();
  staged.turns = 2;
  (void)run_uicl(sampler, task.dataset, staged, &eval);

  CountingSampler counter(sampler);
  staged.turns = 4;
  const UiclResult resumed = run_uicl(counter, task.dataset, staged, &eval);

  // Only turns 3 and 4 ran: 2 turns x 8 instances x 3 repeats.
  CHECK(counter.calls.load() == 2 * 8 * 3);

  REQUIRE(resumed.turns.size() == oneshot.turns.size());
  for (std::size_t t = 0; t < oneshot.turns.size(); ++t) {
    for (int m = 0; m < task.dataset.size(); ++m)
      CHECK(resumed.turns[t].labels[m].index == oneshot.turns[t].labels[m].index);
    CHECK(resumed.objective_trace[t].value == oneshot.objective_trace[t].value);
    CHECK(resumed.objective_trace[t].std_error == oneshot.objective_trace[t].std_error);
  }
  CHECK(resumed.final_labeling() == oneshot.final_labeling());
  std::filesystem::remove_all(dir);
}

TEST_CASE("uicl validates its configuration") {
  const TaskDataset ds = manual_dataset(6);
  AlwaysRejectSampler sampler;
  UiclConfig cfg;
  cfg.N = 6;  // must be < dataset size
  CHECK_THROWS(run_uicl(sampler, ds, cfg));
  cfg.N = 2;
  cfg.turns = -1;
  CHECK_THROWS(run_uicl(sampler, ds, cfg));
  cfg.turns = 2;
  cfg.repeats = 0;
  CHECK_THROWS(run_uicl(sampler, ds, cfg));
}
