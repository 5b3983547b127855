#include "jinfer/uicl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"

namespace jinfer {

namespace {

using nlohmann::json;

// Canonical ordering/equality key: indexed answers sort by index and precede
// raw-text answers, which sort lexicographically.
std::pair<int, std::string> label_key(const Label& label) {
  if (label.index >= 0) return {label.index, std::string()};
  return {std::numeric_limits<int>::max(), label.text};
}

}  // namespace

int VoteTally::accepted_total() const {
  int total = 0;
  for (const auto& [label, count] : votes) total += count;
  return total;
}

Labeling UiclResult::final_labeling() const {
  Labeling out;
  out.reserve(final_labels.size());
  for (const Label& label : final_labels) {
    if (label.index < 0)
      throw Error("UiclResult: final labels are not all close-ended answer indices");
    out.push_back(label.index);
  }
  return out;
}

Label majority_vote(std::span<const Label> candidates) {
  if (candidates.empty()) throw std::invalid_argument("majority_vote: no candidates");
  // Count per key; remember the first-seen representative per key.
  std::map<std::pair<int, std::string>, std::pair<int, const Label*>> counts;
  for (const Label& c : candidates) {
    auto [it, fresh] = counts.try_emplace(label_key(c), 0, &c);
    ++it->second.first;
  }
  const Label* best = nullptr;
  int best_count = -1;
  for (const auto& [key, entry] : counts) {  // key-ascending: ties resolve to lowest key
    if (entry.first > best_count) {
      best_count = entry.first;
      best = entry.second;
    }
  }
  return *best;
}

std::vector<int> sample_support(const TurnState& pool, int N, int exclude_instance, bool balance,
                                int num_answers, Rng& rng) {
  const int m = static_cast<int>(pool.labels.size());
  if (N < 1) throw std::invalid_argument("sample_support: N must be >= 1");

  // Eligible instances grouped by label key, in instance order.
  std::map<std::pair<int, std::string>, std::vector<int>> classes;
  int eligible = 0;
  for (int i = 0; i < m; ++i) {
    if (i == exclude_instance) continue;
    const Label& label = pool.labels[static_cast<std::size_t>(i)];
    if (!label.valid()) continue;
    classes[label_key(label)].push_back(i);
    ++eligible;
  }
  if (eligible < N)
    throw InsufficientPoolError("sample_support: pool holds " + std::to_string(eligible) +
                                " eligible instances, need " + std::to_string(N));

  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(N));
  std::vector<char> taken(static_cast<std::size_t>(m), 0);

  if (balance) {
    // Per-answer quota floor(N/K); the remainder goes to the largest classes.
    const int k_eff = num_answers > 0 ? num_answers : static_cast<int>(classes.size());
    const int base = N / std::max(k_eff, 1);
    int remainder = N - base * k_eff;

    std::vector<std::pair<std::pair<int, std::string>, int>> by_size;  // (key, count)
    for (const auto& [key, members] : classes)
      by_size.emplace_back(key, static_cast<int>(members.size()));
    std::stable_sort(by_size.begin(), by_size.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::map<std::pair<int, std::string>, int> quota;
    for (const auto& [key, count] : by_size) {
      quota[key] = base + (remainder > 0 ? 1 : 0);
      if (remainder > 0) --remainder;
    }

    std::vector<int> draw;
    for (const auto& [key, members] : classes) {  // key-ascending for determinism
      const int want = std::min<int>(quota[key], static_cast<int>(members.size()));
      if (want <= 0) continue;
      rng.sample_without_replacement(static_cast<int>(members.size()), want, draw);
      for (int d : draw) {
        chosen.push_back(members[static_cast<std::size_t>(d)]);
        taken[static_cast<std::size_t>(members[static_cast<std::size_t>(d)])] = 1;
      }
    }
  }

  // Unbalanced fill (the whole draw, when balancing is off).
  if (static_cast<int>(chosen.size()) < N) {
    std::vector<int> rest;
    for (const auto& [key, members] : classes) {
      for (int i : members) {
        if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);
      }
    }
    std::sort(rest.begin(), rest.end());  // instance order, independent of class layout
    const int need = N - static_cast<int>(chosen.size());
    std::vector<int> draw;
    rng.sample_without_replacement(static_cast<int>(rest.size()), need, draw);
    for (int d : draw) chosen.push_back(rest[static_cast<std::size_t>(d)]);
  }

  rng.shuffle(chosen);
  return chosen;
}

ModelAnswerSampler::ModelAnswerSampler(const ConditionalModel& model, const AnswerSet& answers)
    : model_(&model), answers_(&answers) {
  answers.validate();
  if (model.num_answers() != answers.size())
    throw std::invalid_argument("ModelAnswerSampler: model/answer-set size mismatch");
}

SampleOutcome ModelAnswerSampler::sample(const Instance& query,
                                         std::span<const SupportRef> support, Rng& rng,
                                         std::uint64_t /*tag*/, bool greedy) {
  SupportContext ctx;
  ctx.reserve(support.size());
  for (const SupportRef& ref : support) {
    if (ref.label == nullptr || ref.label->index < 0)
      throw std::invalid_argument("ModelAnswerSampler: support label is not close-ended");
    ctx.push_back({*ref.instance, ref.label->index});
  }
  const Eigen::VectorXd scores = model_->log_scores(query, ctx);
  const int y = greedy ? argmax_lowest(scores)
                       : rng.categorical_from_log(std::span<const double>(
                             scores.data(), static_cast<std::size_t>(scores.size())));
  SampleOutcome out;
  out.label.index = y;
  out.label.text = answers_->name(y);
  return out;
}

namespace {

constexpr std::uint64_t kTraceStream = 0x7a11;

json label_to_json(const Label& label) {
  return json{{"index", label.index}, {"text", label.text}, {"reasoning", label.reasoning}};
}

Label label_from_json(const json& j) {
  Label label;
  label.index = j.at("index").get<int>();
  label.text = j.at("text").get<std::string>();
  label.reasoning = j.value("reasoning", std::string());
  return label;
}

std::filesystem::path checkpoint_path(const std::string& dir, int turn) {
  char name[32];
  std::snprintf(name, sizeof(name), "uicl_turn_%04d.json", turn);
  return std::filesystem::path(dir) / name;
}

void save_checkpoint(const std::string& dir, const TaskDataset& ds, const TurnState& state,
                     const ObjectiveEstimate& objective, double accuracy) {
  std::filesystem::create_directories(dir);
  json j;
  j["turn"] = state.turn;
  json labels = json::array();
  for (std::size_t i = 0; i < state.labels.size(); ++i) {
    json entry = label_to_json(state.labels[i]);
    entry["id"] = ds.instances[i].id;
    labels.push_back(std::move(entry));
  }
  j["labels"] = std::move(labels);
  json tallies = json::array();
  for (const VoteTally& tally : state.tallies) {
    json votes = json::array();
    for (const auto& [label, count] : tally.votes) {
      json v = label_to_json(label);
      v["count"] = count;
      votes.push_back(std::move(v));
    }
    tallies.push_back(json{{"votes", std::move(votes)}, {"rejected", tally.rejected}});
  }
  j["tallies"] = std::move(tallies);
  if (objective.num_sequences > 0) {
    j["objective"] = json{{"value", objective.value},
                          {"std_error", objective.std_error},
                          {"num_sequences", objective.num_sequences},
                          {"N", objective.N}};
  } else {
    j["objective"] = nullptr;
  }
  if (std::isnan(accuracy)) {
    j["accuracy"] = nullptr;
  } else {
    j["accuracy"] = accuracy;
  }
  const auto path = checkpoint_path(dir, state.turn);
  std::ofstream out(path);
  if (!out) throw Error("uicl checkpoint: cannot write " + path.string());
  out << j.dump(2) << '\n';
}

bool load_checkpoint(const std::string& dir, const TaskDataset& ds, int turn, TurnState& state,
                     ObjectiveEstimate& objective, double& accuracy) {
  const auto path = checkpoint_path(dir, turn);
  std::ifstream in(path);
  if (!in) return false;
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("uicl checkpoint: malformed " + path.string() + ": " + e.what());
  }
  if (j.at("turn").get<int>() != turn) throw Error("uicl checkpoint: turn mismatch in " + path.string());
  const json& labels = j.at("labels");
  if (static_cast<int>(labels.size()) != ds.size())
    throw Error("uicl checkpoint: label count does not match dataset in " + path.string());
  state.turn = turn;
  state.labels.clear();
  state.labels.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].at("id").get<std::string>() != ds.instances[i].id)
      throw Error("uicl checkpoint: instance id mismatch in " + path.string());
    state.labels.push_back(label_from_json(labels[i]));
  }
  state.tallies.clear();
  for (const json& tj : j.at("tallies")) {
    VoteTally tally;
    tally.rejected = tj.at("rejected").get<int>();
    for (const json& vj : tj.at("votes"))
      tally.votes.emplace_back(label_from_json(vj), vj.at("count").get<int>());
    state.tallies.push_back(std::move(tally));
  }
  objective = ObjectiveEstimate{};
  if (!j.at("objective").is_null()) {
    const json& oj = j.at("objective");
    objective.value = oj.at("value").get<double>();
    objective.std_error = oj.at("std_error").get<double>();
    objective.num_sequences = oj.at("num_sequences").get<std::int64_t>();
    objective.N = oj.at("N").get<int>();
  }
  accuracy = j.at("accuracy").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                        : j.at("accuracy").get<double>();
  return true;
}

double accuracy_vs_gold(const TaskDataset& ds, const std::vector<Label>& labels) {
  if (!ds.has_gold()) return std::numeric_limits<double>::quiet_NaN();
  int hits = 0;
  for (int i = 0; i < ds.size(); ++i) {
    if (labels[static_cast<std::size_t>(i)].index == ds.gold[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

bool all_close_ended(const std::vector<Label>& labels) {
  for (const Label& label : labels) {
    if (label.index < 0) return false;
  }
  return true;
}

}  // namespace

UiclResult run_uicl(AnswerSampler& sampler, const TaskDataset& dataset, const UiclConfig& config,
                    const DatasetEvaluator* trace_eval, const UiclHooks* hooks) {
  dataset.validate();
  const int m = dataset.size();
  if (config.N < 1 || config.N >= m)
    throw std::invalid_argument("run_uicl: need 1 <= N < dataset size");
  if (config.repeats < 1) throw std::invalid_argument("run_uicl: repeats must be >= 1");
  if (config.turns < 0) throw std::invalid_argument("run_uicl: negative turn count");
  const bool close_ended = sampler.num_answers() > 0;
  if (close_ended && sampler.num_answers() != dataset.answer_set.size())
    throw std::invalid_argument("run_uicl: sampler/dataset answer count mismatch");

  UiclResult result;

  // One tuple sample shared by every turn's estimate (common random numbers):
  // turn-over-turn movement then reflects labeling changes, not resampling
  // noise, and identical labelings trace identically.
  const std::uint64_t trace_seed = derive_seed(config.seed, {kTraceStream});
  auto trace_turn = [&](const TurnState& state) {
    ObjectiveEstimate est;
    est.N = config.N;
    if (trace_eval != nullptr && config.trace_sequences > 0 && close_ended &&
        all_close_ended(state.labels)) {
      Labeling labeling;
      labeling.reserve(state.labels.size());
      for (const Label& label : state.labels) labeling.push_back(label.index);
      est = mc_joint_objective(*trace_eval, labeling, config.N, config.trace_sequences, trace_seed,
                               config.exec);
    }
    result.objective_trace.push_back(est);
    result.accuracy_trace.push_back(accuracy_vs_gold(dataset, state.labels));
  };

  // Resume whatever consecutive turn checkpoints exist.
  int start_turn = 0;
  if (!config.checkpoint_dir.empty()) {
    for (int t = 0; t <= config.turns; ++t) {
      TurnState state;
      ObjectiveEstimate objective;
      double accuracy = 0.0;
      if (!load_checkpoint(config.checkpoint_dir, dataset, t, state, objective, accuracy)) break;
      result.turns.push_back(std::move(state));
      result.objective_trace.push_back(objective);
      result.accuracy_trace.push_back(accuracy);
      start_turn = t + 1;
    }
  }

  if (start_turn == 0) {
    // Turn 0: independent zero-shot draws.
    TurnState state;
    state.turn = 0;
    state.labels.resize(static_cast<std::size_t>(m));
    state.tallies.resize(static_cast<std::size_t>(m));
    parallel_for(m, config.exec, [&](std::int64_t i) {
      const std::uint64_t stream =
          derive_seed(config.seed, {0, static_cast<std::uint64_t>(i), 0});
      Rng rng(stream);
      if (hooks != nullptr && hooks->on_support)
        hooks->on_support(0, static_cast<int>(i), 0, {});
      SampleOutcome outcome = sampler.sample(dataset.instances[static_cast<std::size_t>(i)], {},
                                             rng, stream, config.greedy);
      VoteTally& tally = state.tallies[static_cast<std::size_t>(i)];
      if (outcome.rejected) {
        tally.rejected = 1;
      } else {
        state.labels[static_cast<std::size_t>(i)] = outcome.label;
        tally.votes.emplace_back(outcome.label, 1);
      }
    });
    result.turns.push_back(std::move(state));
    trace_turn(result.turns.back());
    if (!config.checkpoint_dir.empty())
      save_checkpoint(config.checkpoint_dir, dataset, result.turns.back(),
                      result.objective_trace.back(), result.accuracy_trace.back());
    start_turn = 1;
  }

  for (int t = start_turn; t <= config.turns; ++t) {
    const TurnState& prev = result.turns.back();
    int eligible = 0;
    for (const Label& label : prev.labels) {
      if (label.valid()) ++eligible;
    }

    TurnState state;
    state.turn = t;
    state.labels.resize(static_cast<std::size_t>(m));
    state.tallies.resize(static_cast<std::size_t>(m));
    parallel_for(m, config.exec, [&](std::int64_t i) {
      const std::size_t idx = static_cast<std::size_t>(i);
      const int pool_size = eligible - (prev.labels[idx].valid() ? 1 : 0);
      // Rejection fallout may shrink the pool below N; degrade the support
      // size rather than abort a long (possibly remote) run.
      const int support_n = std::min(config.N, pool_size);

      std::vector<Label> accepted;
      accepted.reserve(static_cast<std::size_t>(config.repeats));
      VoteTally& tally = state.tallies[idx];
      std::vector<SupportRef> refs;
      for (int r = 0; r < config.repeats; ++r) {
        const std::uint64_t stream = derive_seed(
            config.seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i),
                          static_cast<std::uint64_t>(r)});
        Rng rng(stream);
        std::vector<int> support;
        if (support_n > 0)
          support = sample_support(prev, support_n, static_cast<int>(i), config.balance,
                                   sampler.num_answers(), rng);
        if (hooks != nullptr && hooks->on_support)
          hooks->on_support(t, static_cast<int>(i), r, support);
        refs.clear();
        refs.reserve(support.size());
        for (int s : support) {
          refs.push_back({&dataset.instances[static_cast<std::size_t>(s)],
                          &prev.labels[static_cast<std::size_t>(s)]});
        }
        SampleOutcome outcome =
            sampler.sample(dataset.instances[idx], refs, rng, stream, config.greedy);
        if (outcome.rejected) {
          ++tally.rejected;
        } else {
          accepted.push_back(outcome.label);
        }
      }

      for (const Label& label : accepted) {
        bool found = false;
        for (auto& [existing, count] : tally.votes) {
          if (label_key(existing) == label_key(label)) {
            ++count;
            found = true;
            break;
          }
        }
        if (!found) tally.votes.emplace_back(label, 1);
      }
      if (tally.accepted_total() + tally.rejected != config.repeats)
        throw Error("run_uicl: vote tally does not conserve the repeat count");

      if (accepted.empty()) {
        state.labels[idx] = prev.labels[idx];  // retain previous-turn label
      } else {
        state.labels[idx] = majority_vote(accepted);
      }
    });

    result.turns.push_back(std::move(state));
    trace_turn(result.turns.back());
    if (!config.checkpoint_dir.empty())
      save_checkpoint(config.checkpoint_dir, dataset, result.turns.back(),
                      result.objective_trace.back(), result.accuracy_trace.back());
  }

  result.final_labels = result.turns.back().labels;
  return result;
}

UiclResult run_uicl(const ConditionalModel& model, const TaskDataset& dataset,
                    const UiclConfig& config, const UiclHooks* hooks) {
  ModelAnswerSampler sampler(model, dataset.answer_set);
  DatasetEvaluator trace_eval(model, dataset);
  return run_uicl(sampler, dataset, config, &trace_eval, hooks);
}

}  // namespace jinfer
