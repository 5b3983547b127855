#include "jinfer/types.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace jinfer {

int AnswerSet::index_of(const std::string& answer_name) const {
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (answers[i].name == answer_name) return static_cast<int>(i);
  }
  return -1;
}

AnswerSet AnswerSet::of_names(std::vector<std::string> names) {
  AnswerSet set;
  set.answers.reserve(names.size());
  for (auto& n : names) set.answers.push_back({std::move(n), {}});
  set.validate();
  return set;
}

void AnswerSet::validate() const {
  if (answers.size() < 2) throw std::invalid_argument("AnswerSet: need at least 2 answers");
  std::unordered_set<std::string> seen;
  for (const auto& a : answers) {
    if (a.name.empty()) throw std::invalid_argument("AnswerSet: empty answer name");
    if (!seen.insert(a.name).second)
      throw std::invalid_argument("AnswerSet: duplicate answer name '" + a.name + "'");
  }
}

void Instance::validate() const {
  if (id.empty()) throw std::invalid_argument("Instance: empty id");
  if (features.empty() && text.empty())
    throw std::invalid_argument("Instance '" + id + "': neither features nor text set");
  if (!features.empty() && !text.empty())
    throw std::invalid_argument("Instance '" + id + "': both features and text set");
  for (double f : features) {
    if (!std::isfinite(f))
      throw std::invalid_argument("Instance '" + id + "': non-finite feature value");
  }
}

void TaskDataset::validate() const {
  if (instances.empty()) throw std::invalid_argument("TaskDataset: no instances");
  answer_set.validate();
  std::unordered_set<std::string> ids;
  for (const auto& inst : instances) {
    inst.validate();
    if (!ids.insert(inst.id).second)
      throw std::invalid_argument("TaskDataset: duplicate instance id '" + inst.id + "'");
  }
  if (!gold.empty()) {
    if (gold.size() != instances.size())
      throw std::invalid_argument("TaskDataset: gold labeling size mismatch");
    for (int y : gold) {
      if (y < 0 || y >= answer_set.size())
        throw std::invalid_argument("TaskDataset: gold answer index out of range");
    }
  }
}

double labeling_agreement(const Labeling& a, const Labeling& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("labeling_agreement: size mismatch or empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(a.size());
}

}  // namespace jinfer
