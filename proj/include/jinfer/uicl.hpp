#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jinfer/objective.hpp"

namespace jinfer {

// A label as carried between turns. Close-ended answers have an index into
// the answer set (text = display string); open-ended answers are raw text
// with index -1 plus optional reasoning kept for support rendering. An
// instance that has never produced a parseable answer holds an invalid label.
struct Label {
  int index = -1;
  std::string text;
  std::string reasoning;

  bool valid() const { return index >= 0 || !text.empty(); }
};

// Vote provenance for one instance and one turn. For turns >= 1,
// sum(counts) + rejected == repeats always.
struct VoteTally {
  std::vector<std::pair<Label, int>> votes;  // distinct candidates with counts
  int rejected = 0;

  int accepted_total() const;
};

struct TurnState {
  int turn = 0;
  std::vector<Label> labels;     // one per dataset instance, by position
  std::vector<VoteTally> tallies;
};

struct SupportRef {
  const Instance* instance = nullptr;
  const Label* label = nullptr;
};

struct SampleOutcome {
  Label label;
  bool rejected = false;
};

// Anything that can propose an answer for a query given labeled support
// examples: the synthetic model directly, or a remote endpoint behind a
// prompt template. `tag` is a stable per-call salt (remote backends fold it
// into their cache key / request seed); `rng` drives local sampling.
class AnswerSampler {
 public:
  virtual ~AnswerSampler() = default;

  // Number of close-ended answers, or 0 for open-ended samplers.
  virtual int num_answers() const = 0;

  virtual SampleOutcome sample(const Instance& query, std::span<const SupportRef> support,
                               Rng& rng, std::uint64_t tag, bool greedy) = 0;
};

// Close-ended sampler over a ConditionalModel; never rejects.
class ModelAnswerSampler : public AnswerSampler {
 public:
  ModelAnswerSampler(const ConditionalModel& model, const AnswerSet& answers);

  int num_answers() const override { return answers_->size(); }
  SampleOutcome sample(const Instance& query, std::span<const SupportRef> support, Rng& rng,
                       std::uint64_t tag, bool greedy) override;

 private:
  const ConditionalModel* model_;
  const AnswerSet* answers_;
};

struct UiclConfig {
  int N = 16;           // support-set size (must be < dataset size)
  int turns = 5;
  int repeats = 5;      // support/answer draws per instance per turn (odd recommended)
  bool balance = true;  // per-answer quotas in support sampling
  bool greedy = false;  // argmax instead of temperature-1 sampling
  std::uint64_t seed = 0;
  std::int64_t trace_sequences = 256;  // MC sequences per turn for the objective trace; 0 = off
  Exec exec = Exec::Parallel;
  std::string checkpoint_dir;  // when set: write per-turn JSON and resume from it
};

// Test/inspection hooks; called from inside the (possibly parallel) turn loop.
struct UiclHooks {
  std::function<void(int turn, int instance, int repeat, std::span<const int> support)> on_support;
};

struct UiclResult {
  std::vector<TurnState> turns;                  // turn 0 .. T
  std::vector<ObjectiveEstimate> objective_trace;  // per turn; num_sequences 0 when skipped
  std::vector<double> accuracy_trace;            // per turn; NaN without gold
  std::vector<Label> final_labels;

  // Final labels as answer indices; throws Error if any label is invalid.
  Labeling final_labeling() const;
};

// Majority answer; ties break to the lowest answer index (close-ended) or the
// lexicographically smallest text (open-ended). The returned label is the
// first-seen representative of the winning candidate, so reasoning text rides
// along deterministically.
Label majority_vote(std::span<const Label> candidates);

// Support-set draw from the previous turn's state: instances with valid
// labels, excluding `exclude_instance`, balanced per answer when asked
// (quota floor(N/K) each, remainder to the largest classes, unbalanced fill
// when a class runs dry), order shuffled. Throws InsufficientPoolError when
// fewer than N eligible instances exist.
std::vector<int> sample_support(const TurnState& pool, int N, int exclude_instance, bool balance,
                                int num_answers, Rng& rng);

// Multi-turn self-labeling: turn 0 samples every instance zero-shot; each
// later turn relabels every instance by majority vote over `repeats`
// (support draw from the previous turn, one sampled answer) and commits all
// updates synchronously. Rejected samples never vote and never enter pools;
// an instance whose draws all reject keeps its previous label. If rejections
// shrink the eligible pool below N, support sets shrink to the pool size
// rather than deadlocking the run. All randomness is derived per
// (turn, instance, repeat), so results are Exec-independent and resume from a
// checkpoint reproduces the uninterrupted run exactly.
UiclResult run_uicl(AnswerSampler& sampler, const TaskDataset& dataset, const UiclConfig& config,
                    const DatasetEvaluator* trace_eval = nullptr,
                    const UiclHooks* hooks = nullptr);

// Close-ended convenience: model sampler + objective trace evaluator.
UiclResult run_uicl(const ConditionalModel& model, const TaskDataset& dataset,
                    const UiclConfig& config, const UiclHooks* hooks = nullptr);

}  // namespace jinfer
