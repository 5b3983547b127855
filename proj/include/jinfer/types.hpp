#pragma once

#include <string>
#include <vector>

namespace jinfer {

// Finite answer space Y shared by every instance of a task. Each answer has a
// display string; token sequences are optional and only consumed by the
// multitoken approximations.
struct AnswerSet {
  struct Answer {
    std::string name;
    std::vector<std::string> tokens;  // optional tokenization of the name
  };

  std::vector<Answer> answers;

  int size() const { return static_cast<int>(answers.size()); }
  const std::string& name(int y) const { return answers[static_cast<std::size_t>(y)].name; }

  // Index of a display string, -1 if absent (exact compare; parsers do their
  // own normalization before calling this).
  int index_of(const std::string& answer_name) const;

  static AnswerSet of_names(std::vector<std::string> names);

  // K >= 2, names unique and non-empty. Throws std::invalid_argument.
  void validate() const;
};

// One task instance: either a feature vector (synthetic path) or raw text
// (remote path). Exactly one of the two is populated.
struct Instance {
  std::string id;
  std::vector<double> features;
  std::string text;

  bool has_features() const { return !features.empty(); }

  // id non-empty, exactly one payload, features finite. Throws std::invalid_argument.
  void validate() const;
};

// A labeled example shown as context: (instance, answer index).
struct SupportExample {
  Instance instance;
  int answer = -1;
};
using SupportContext = std::vector<SupportExample>;

// Index-based form of a context entry, relative to a TaskDataset. The fast
// evaluation paths work in these; materializing SupportContext is the slow
// generic fallback.
struct ContextItem {
  int instance = -1;
  int answer = -1;
};

// A full labeling of a dataset: answer index per instance, aligned by position.
using Labeling = std::vector<int>;

struct TaskDataset {
  std::vector<Instance> instances;
  AnswerSet answer_set;
  Labeling gold;  // empty, or one answer index per instance

  int size() const { return static_cast<int>(instances.size()); }
  bool has_gold() const { return !gold.empty(); }

  // Non-empty, unique instance ids, valid instances, gold (if present) sized
  // and in range. Throws std::invalid_argument.
  void validate() const;
};

// Fraction of positions where two labelings agree (used for accuracy vs gold).
double labeling_agreement(const Labeling& a, const Labeling& b);

}  // namespace jinfer
