#include "jinfer/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "jinfer/digest.hpp"
#include "jinfer/errors.hpp"
#include "jinfer/numeric.hpp"
#include "jinfer/rng.hpp"

namespace jinfer {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

// Shortest decimal string that parses back to exactly the same double; NaN
// renders as the empty field. Keeps CSV output stable and round-trippable.
std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  for (int prec = 15; prec <= 17; ++prec) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return "nan";
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("short write to " + path.string());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// JSONL ingestion

TaskDataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("load_dataset_jsonl: cannot read " + path);

  TaskDataset ds;
  std::vector<int> labels;  // -1 = absent
  std::set<std::string> seen_ids;
  bool have_header = false;
  std::string line;
  int line_no = 0;

  auto fail = [&](const std::string& what) -> void {
    throw Error("load_dataset_jsonl: " + path + " line " + std::to_string(line_no) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object()) fail("expected a JSON object");

    if (!have_header) {
      require_keys(j, "header", {"answers"});
      if (!j.contains("answers") || !j["answers"].is_array())
        fail("header must be {\"answers\": [...]}");
      std::vector<std::string> names;
      for (const auto& a : j["answers"]) {
        if (!a.is_string()) fail("answers must be strings");
        names.push_back(a.get<std::string>());
      }
      try {
        ds.answer_set = AnswerSet::of_names(names);
      } catch (const std::exception& e) {
        fail(e.what());
      }
      have_header = true;
      continue;
    }

    require_keys(j, "instance line", {"id", "input", "features", "label"});
    if (!j.contains("id") || !j["id"].is_string()) fail("missing string \"id\"");
    Instance inst;
    inst.id = j["id"].get<std::string>();
    if (!seen_ids.insert(inst.id).second) fail("duplicate id '" + inst.id + "'");

    const bool has_input = j.contains("input");
    const bool has_features = j.contains("features");
    if (has_input == has_features) fail("need exactly one of \"input\" or \"features\"");
    if (has_input) {
      if (!j["input"].is_string()) fail("\"input\" must be a string");
      inst.text = j["input"].get<std::string>();
    } else {
      if (!j["features"].is_array()) fail("\"features\" must be an array of numbers");
      for (const auto& f : j["features"]) {
        if (!f.is_number()) fail("\"features\" must be an array of numbers");
        inst.features.push_back(f.get<double>());
      }
    }
    try {
      inst.validate();
    } catch (const std::exception& e) {
      fail(e.what());
    }

    int label = -1;
    if (j.contains("label")) {
      if (!j["label"].is_string()) fail("\"label\" must be a string");
      const std::string name = j["label"].get<std::string>();
      label = ds.answer_set.index_of(name);
      if (label < 0) fail("label '" + name + "' is not in the answer set");
    }
    ds.instances.push_back(std::move(inst));
    labels.push_back(label);
  }

  if (!have_header) throw Error("load_dataset_jsonl: " + path + ": empty file (no header line)");
  if (ds.instances.empty()) throw Error("load_dataset_jsonl: " + path + ": no instance lines");

  const bool all_labeled =
      std::all_of(labels.begin(), labels.end(), [](int v) { return v >= 0; });
  if (all_labeled) ds.gold = labels;
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic task JSON

void save_task_json(const SyntheticTask& task, const std::string& path) {
  task.dataset.validate();
  task.params.validate();

  json j;
  json answers = json::array();
  for (int k = 0; k < task.dataset.answer_set.size(); ++k)
    answers.push_back(task.dataset.answer_set.name(k));
  j["answers"] = std::move(answers);

  json weights = json::array();
  for (int k = 0; k < task.params.num_answers(); ++k) {
    json row = json::array();
    for (int c = 0; c < task.params.feature_dim(); ++c)
      row.push_back(task.params.zero_shot_weights(k, c));
    weights.push_back(std::move(row));
  }
  json params;
  params["weights"] = std::move(weights);
  json bias = json::array();
  for (int k = 0; k < task.params.num_answers(); ++k) bias.push_back(task.params.bias(k));
  params["bias"] = std::move(bias);
  if (std::isinf(task.params.kernel_bandwidth))
    params["kernel_bandwidth"] = "inf";
  else
    params["kernel_bandwidth"] = task.params.kernel_bandwidth;
  params["context_strength"] = task.params.context_strength;
  params["recency_decay"] = task.params.recency_decay;
  j["params"] = std::move(params);

  json instances = json::array();
  for (int m = 0; m < task.dataset.size(); ++m) {
    const Instance& inst = task.dataset.instances[static_cast<std::size_t>(m)];
    json row;
    row["id"] = inst.id;
    row["features"] = inst.features;
    row["gold"] = task.dataset.gold[static_cast<std::size_t>(m)];
    instances.push_back(std::move(row));
  }
  j["instances"] = std::move(instances);

  write_text_file(path, j.dump(2) + "\n");
}

SyntheticTask load_task_json(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error("load_task_json: " + path + ": " + e.what());
  }

  try {
    require_keys(j, "task", {"answers", "params", "instances"});
    SyntheticTask task;
    std::vector<std::string> names = j.at("answers").get<std::vector<std::string>>();
    task.dataset.answer_set = AnswerSet::of_names(names);
    const int K = task.dataset.answer_set.size();

    const json& p = j.at("params");
    require_keys(p, "params",
                 {"weights", "bias", "kernel_bandwidth", "context_strength", "recency_decay"});
    const auto w = p.at("weights").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(w.size()) != K)
      throw std::invalid_argument("params.weights must have one row per answer");
    const int d = w.empty() ? 0 : static_cast<int>(w[0].size());
    task.params.zero_shot_weights.resize(K, d);
    for (int k = 0; k < K; ++k) {
      if (static_cast<int>(w[static_cast<std::size_t>(k)].size()) != d)
        throw std::invalid_argument("params.weights rows must have equal length");
      for (int c = 0; c < d; ++c)
        task.params.zero_shot_weights(k, c) = w[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
    }
    const auto b = p.at("bias").get<std::vector<double>>();
    if (static_cast<int>(b.size()) != K)
      throw std::invalid_argument("params.bias must have one entry per answer");
    task.params.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), K);
    if (p.at("kernel_bandwidth").is_string()) {
      if (p.at("kernel_bandwidth").get<std::string>() != "inf")
        throw std::invalid_argument("params.kernel_bandwidth: only \"inf\" is a valid string");
      task.params.kernel_bandwidth = std::numeric_limits<double>::infinity();
    } else {
      task.params.kernel_bandwidth = p.at("kernel_bandwidth").get<double>();
    }
    task.params.context_strength = p.at("context_strength").get<double>();
    task.params.recency_decay = p.at("recency_decay").get<double>();

    for (const json& row : j.at("instances")) {
      require_keys(row, "instance", {"id", "features", "gold"});
      Instance inst;
      inst.id = row.at("id").get<std::string>();
      inst.features = row.at("features").get<std::vector<double>>();
      task.dataset.instances.push_back(std::move(inst));
      const int g = row.at("gold").get<int>();
      if (g < 0 || g >= K) throw std::invalid_argument("instance gold out of range");
      task.dataset.gold.push_back(g);
    }

    task.params.validate();
    task.dataset.validate();
    return task;
  } catch (const json::exception& e) {
    throw Error("load_task_json: " + path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error("load_task_json: " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Fixtures

namespace {

SyntheticModelParams knobs(double bandwidth, double strength, double decay = 1.0) {
  SyntheticModelParams p;
  p.kernel_bandwidth = bandwidth;
  p.context_strength = strength;
  p.recency_decay = decay;
  return p;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

struct FixtureDef {
  const char* name;
  const char* summary;
  SyntheticTask (*make)();
};

// Frozen constants; regenerate the numbers in the summaries with
// `jinfer gen-task --fixture <name> --measure` after any change here.
const FixtureDef kFixtures[] = {
    {"micro-m4",
     "4 instances, 2 answers: small enough for exhaustive gradient oracles",
     [] { return generate_synthetic_task(11, 4, 2, 2, 0.8, knobs(1.0, 1.0)); }},
    {"ref-m8",
     "8 instances, 2 answers, real context signal; brute force stays cheap",
     [] { return generate_synthetic_task(22, 8, 2, 2, 0.9, knobs(1.25, 1.5)); }},
    {"ref-m16",
     "16 instances, 2 answers; sized for gradient-variance measurements",
     [] { return generate_synthetic_task(33, 16, 2, 2, 0.9, knobs(1.25, 1.5)); }},
    {"ref-m64",
     "64 instances, 2 answers; imperfect low-confidence zero-shot (0.77) "
     "plus a strong context kernel, so demonstrations and relabeling help — "
     "the support-size scaling testbed",
     [] {
       SyntheticGenOptions opts;
       opts.logit_scale = 0.3;  // flat head: the joint objective prefers the
                                // coherent labeling over zero-shot guesses
       return generate_synthetic_task(44, 64, 2, 2, 3.0, knobs(1.25, 3.0), opts);
     }},
    {"collapse",
     "constant context kernel: agreement is rewarded regardless of distance, "
     "so unregularized training collapses to one answer (prior entropy ~0.01 "
     "at gamma 0 vs ~0.64 at gamma 10)",
     [] { return generate_synthetic_task(50, 32, 2, 2, 2.5, knobs(kInf, 1.0)); }},
    {"icl-free",
     "zero context strength and a sharp zero-shot head: relabeling rounds "
     "must not fabricate gains here",
     [] {
       SyntheticGenOptions opts;
       opts.logit_scale = 3.0;
       return generate_synthetic_task(66, 64, 2, 2, 0.9, knobs(1.25, 0.0), opts);
     }},
};

}  // namespace

const std::vector<FixtureInfo>& list_fixtures() {
  static const std::vector<FixtureInfo> infos = [] {
    std::vector<FixtureInfo> v;
    for (const FixtureDef& f : kFixtures) v.push_back({f.name, f.summary});
    return v;
  }();
  return infos;
}

SyntheticTask make_fixture(const std::string& name) {
  for (const FixtureDef& f : kFixtures)
    if (name == f.name) return f.make();
  std::string known;
  for (const FixtureDef& f : kFixtures) {
    if (!known.empty()) known += ", ";
    known += f.name;
  }
  throw std::invalid_argument("unknown fixture '" + name + "' (known: " + known + ")");
}

// ---------------------------------------------------------------------------
// Task quality

Labeling predict_zero_shot(const DatasetEvaluator& eval) {
  const int M = eval.num_instances();
  Labeling pred(static_cast<std::size_t>(M));
  Eigen::VectorXd buf(eval.num_answers());
  for (int m = 0; m < M; ++m) {
    eval.renorm_log_probs_into(m, {}, buf);
    pred[static_cast<std::size_t>(m)] = argmax_lowest(buf);
  }
  return pred;
}

Labeling predict_supervised_icl(const DatasetEvaluator& eval, int support_n, std::uint64_t seed) {
  const TaskDataset& ds = eval.dataset();
  if (!ds.has_gold())
    throw std::invalid_argument("predict_supervised_icl: dataset has no gold labels");
  const int M = eval.num_instances();
  if (support_n < 1 || support_n >= M)
    throw std::invalid_argument("predict_supervised_icl: need 1 <= support_n < M");

  Labeling pred(static_cast<std::size_t>(M));
  Eigen::VectorXd buf(eval.num_answers());
  std::vector<int> draw;
  std::vector<ContextItem> ctx(static_cast<std::size_t>(support_n));
  for (int m = 0; m < M; ++m) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(m)}));
    rng.sample_without_replacement(M - 1, support_n, draw);
    for (int i = 0; i < support_n; ++i) {
      const int other = draw[static_cast<std::size_t>(i)] +
                        (draw[static_cast<std::size_t>(i)] >= m ? 1 : 0);  // skip the query
      ctx[static_cast<std::size_t>(i)] = {other, ds.gold[static_cast<std::size_t>(other)]};
    }
    eval.renorm_log_probs_into(m, ctx, buf);
    pred[static_cast<std::size_t>(m)] = argmax_lowest(buf);
  }
  return pred;
}

double labeling_accuracy(const Labeling& pred, const TaskDataset& dataset) {
  if (!dataset.has_gold()) return std::numeric_limits<double>::quiet_NaN();
  return labeling_agreement(pred, dataset.gold);
}

TaskQuality measure_task_quality(const DatasetEvaluator& eval, int support_n, std::uint64_t seed) {
  TaskQuality q;
  q.support_n = support_n;
  q.zero_shot_accuracy = labeling_accuracy(predict_zero_shot(eval), eval.dataset());
  q.supervised_icl_accuracy =
      labeling_accuracy(predict_supervised_icl(eval, support_n, seed), eval.dataset());
  return q;
}

// ---------------------------------------------------------------------------
// Method names

std::string method_name(Method m) {
  switch (m) {
    case Method::ZeroShot: return "zero-shot";
    case Method::SupervisedIcl: return "supervised-icl";
    case Method::Uicl: return "uicl";
    case Method::Uft: return "uft";
    case Method::BruteForce: return "brute-force";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::ZeroShot, Method::SupervisedIcl, Method::Uicl, Method::Uft,
                   Method::BruteForce})
    if (name == method_name(m)) return m;
  throw std::invalid_argument(
      "unknown method '" + name +
      "' (known: zero-shot, supervised-icl, uicl, uft, brute-force)");
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

Estimator parse_estimator(const std::string& s) {
  if (s == "naive") return Estimator::NaiveReinforce;
  if (s == "low-variance") return Estimator::LowVariance;
  throw std::invalid_argument("estimator must be 'naive' or 'low-variance', got '" + s + "'");
}

std::string estimator_name(Estimator e) {
  return e == Estimator::NaiveReinforce ? "naive" : "low-variance";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("optimizer must be 'sgd' or 'adam', got '" + s + "'");
}

EncoderKind parse_encoder(const std::string& s) {
  if (s == "tabular") return EncoderKind::Tabular;
  if (s == "linear") return EncoderKind::Linear;
  throw std::invalid_argument("encoder must be 'tabular' or 'linear', got '" + s + "'");
}

ParserKind parse_parser_kind(const std::string& s) {
  if (s == "exact") return ParserKind::ExactMatch;
  if (s == "regex") return ParserKind::Regex;
  if (s == "answer-line") return ParserKind::AnswerLine;
  throw std::invalid_argument("parser must be 'exact', 'regex' or 'answer-line', got '" + s + "'");
}

std::string parser_kind_name(ParserKind k) {
  switch (k) {
    case ParserKind::ExactMatch: return "exact";
    case ParserKind::Regex: return "regex";
    case ParserKind::AnswerLine: return "answer-line";
  }
  return "?";
}

void parse_uft_block(const json& j, TrainConfig& tc) {
  require_keys(j, "uft", {"batch", "iterations", "lr", "gamma", "estimator", "optimizer",
                          "encoder", "adam_beta1", "adam_beta2", "adam_eps",
                          "divergence_max_abs"});
  if (j.contains("batch")) tc.batch = j["batch"].get<int>();
  if (j.contains("iterations")) tc.iterations = j["iterations"].get<int>();
  if (j.contains("lr")) tc.lr = j["lr"].get<double>();
  if (j.contains("gamma")) tc.gamma = j["gamma"].get<double>();
  if (j.contains("estimator")) tc.estimator = parse_estimator(j["estimator"].get<std::string>());
  if (j.contains("optimizer")) tc.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
  if (j.contains("encoder")) tc.encoder = parse_encoder(j["encoder"].get<std::string>());
  if (j.contains("adam_beta1")) tc.adam_beta1 = j["adam_beta1"].get<double>();
  if (j.contains("adam_beta2")) tc.adam_beta2 = j["adam_beta2"].get<double>();
  if (j.contains("adam_eps")) tc.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("divergence_max_abs"))
    tc.divergence_max_abs = j["divergence_max_abs"].get<double>();
}

void parse_uicl_block(const json& j, UiclConfig& uc) {
  require_keys(j, "uicl", {"turns", "repeats", "balance", "greedy"});
  if (j.contains("turns")) uc.turns = j["turns"].get<int>();
  if (j.contains("repeats")) uc.repeats = j["repeats"].get<int>();
  if (j.contains("balance")) uc.balance = j["balance"].get<bool>();
  if (j.contains("greedy")) uc.greedy = j["greedy"].get<bool>();
}

void parse_backend_block(const json& j, BackendConfig& bc) {
  require_keys(j, "backend",
               {"base_url", "path", "model", "api_key_env", "max_concurrent",
                "per_minute_budget", "temperature", "max_output_tokens", "cache_dir",
                "timeout_s", "retry"});
  if (j.contains("base_url")) bc.base_url = j["base_url"].get<std::string>();
  if (j.contains("path")) bc.path = j["path"].get<std::string>();
  if (j.contains("model")) bc.model = j["model"].get<std::string>();
  if (j.contains("api_key_env")) bc.api_key_env = j["api_key_env"].get<std::string>();
  if (j.contains("max_concurrent")) bc.max_concurrent = j["max_concurrent"].get<int>();
  if (j.contains("per_minute_budget")) bc.per_minute_budget = j["per_minute_budget"].get<int>();
  if (j.contains("temperature")) bc.temperature = j["temperature"].get<double>();
  if (j.contains("max_output_tokens")) bc.max_output_tokens = j["max_output_tokens"].get<int>();
  if (j.contains("cache_dir")) bc.cache_dir = j["cache_dir"].get<std::string>();
  if (j.contains("timeout_s")) bc.timeout_s = j["timeout_s"].get<double>();
  if (j.contains("retry")) {
    const json& r = j["retry"];
    require_keys(r, "retry", {"max_attempts", "backoff_base_s", "backoff_cap_s"});
    if (r.contains("max_attempts")) bc.retry.max_attempts = r["max_attempts"].get<int>();
    if (r.contains("backoff_base_s")) bc.retry.backoff_base_s = r["backoff_base_s"].get<double>();
    if (r.contains("backoff_cap_s")) bc.retry.backoff_cap_s = r["backoff_cap_s"].get<double>();
  }
}

void parse_prompt_block(const json& j, PromptTemplate& pt) {
  require_keys(j, "prompt", {"instance_pattern", "answer_pattern", "separator", "system_prompt",
                             "parser", "parser_pattern"});
  if (j.contains("instance_pattern")) pt.instance_pattern = j["instance_pattern"].get<std::string>();
  if (j.contains("answer_pattern")) pt.answer_pattern = j["answer_pattern"].get<std::string>();
  if (j.contains("separator")) pt.separator = j["separator"].get<std::string>();
  if (j.contains("system_prompt")) pt.system_prompt = j["system_prompt"].get<std::string>();
  if (j.contains("parser")) pt.parser.kind = parse_parser_kind(j["parser"].get<std::string>());
  if (j.contains("parser_pattern")) pt.parser.pattern = j["parser_pattern"].get<std::string>();
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json j;
  json task;
  if (!c.fixture.empty()) task["fixture"] = c.fixture;
  if (!c.task_json.empty()) task["json"] = c.task_json;
  if (!c.dataset_jsonl.empty()) task["jsonl"] = c.dataset_jsonl;
  if (c.has_synthetic) {
    json s;
    s["seed"] = c.synthetic_seed;
    s["M"] = c.synthetic_m;
    s["K"] = c.synthetic_k;
    s["d"] = c.synthetic_d;
    s["noise"] = c.synthetic_noise;
    if (std::isinf(c.synthetic_knobs.kernel_bandwidth))
      s["bandwidth"] = "inf";
    else
      s["bandwidth"] = c.synthetic_knobs.kernel_bandwidth;
    s["strength"] = c.synthetic_knobs.context_strength;
    s["decay"] = c.synthetic_knobs.recency_decay;
    s["center_scale"] = c.synthetic_opts.center_scale;
    s["spread"] = c.synthetic_opts.instance_spread;
    s["logit_scale"] = c.synthetic_opts.logit_scale;
    task["synthetic"] = std::move(s);
  }
  j["task"] = std::move(task);

  json methods = json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["methods"] = std::move(methods);
  j["N"] = c.sweep_n;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir;
  j["parallel"] = c.parallel;
  j["serial_kernels"] = (c.exec == Exec::Serial);
  j["objective_sequences"] = c.objective_sequences;
  j["labeling_cap"] = c.labeling_cap;
  j["tuple_cap"] = c.tuple_cap;

  json uft;
  uft["batch"] = c.uft.batch;
  uft["iterations"] = c.uft.iterations;
  uft["lr"] = c.uft.lr;
  uft["gamma"] = c.uft.gamma;
  uft["estimator"] = estimator_name(c.uft.estimator);
  uft["optimizer"] = c.uft.optimizer == OptimizerKind::Sgd ? "sgd" : "adam";
  uft["encoder"] = c.uft.encoder == EncoderKind::Tabular ? "tabular" : "linear";
  uft["adam_beta1"] = c.uft.adam_beta1;
  uft["adam_beta2"] = c.uft.adam_beta2;
  uft["adam_eps"] = c.uft.adam_eps;
  uft["divergence_max_abs"] = c.uft.divergence_max_abs;
  j["uft"] = std::move(uft);

  json uicl;
  uicl["turns"] = c.uicl.turns;
  uicl["repeats"] = c.uicl.repeats;
  uicl["balance"] = c.uicl.balance;
  uicl["greedy"] = c.uicl.greedy;
  j["uicl"] = std::move(uicl);

  if (c.has_backend) {
    json b;
    b["base_url"] = c.backend.base_url;
    b["path"] = c.backend.path;
    b["model"] = c.backend.model;
    b["api_key_env"] = c.backend.api_key_env;
    b["max_concurrent"] = c.backend.max_concurrent;
    b["per_minute_budget"] = c.backend.per_minute_budget;
    b["temperature"] = c.backend.temperature;
    b["max_output_tokens"] = c.backend.max_output_tokens;
    b["cache_dir"] = c.backend.cache_dir;
    b["timeout_s"] = c.backend.timeout_s;
    b["retry"] = {{"max_attempts", c.backend.retry.max_attempts},
                  {"backoff_base_s", c.backend.retry.backoff_base_s},
                  {"backoff_cap_s", c.backend.retry.backoff_cap_s}};
    j["backend"] = std::move(b);
    json p;
    p["instance_pattern"] = c.prompt.instance_pattern;
    p["answer_pattern"] = c.prompt.answer_pattern;
    p["separator"] = c.prompt.separator;
    p["system_prompt"] = c.prompt.system_prompt;
    p["parser"] = parser_kind_name(c.prompt.parser.kind);
    p["parser_pattern"] = c.prompt.parser.pattern;
    j["prompt"] = std::move(p);
  }
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  const int sources = (!fixture.empty() ? 1 : 0) + (!task_json.empty() ? 1 : 0) +
                      (!dataset_jsonl.empty() ? 1 : 0) + (has_synthetic ? 1 : 0);
  if (sources != 1)
    throw std::invalid_argument("config: exactly one task source (fixture/json/jsonl/synthetic)");
  if (methods.empty()) throw std::invalid_argument("config: methods must be non-empty");
  if (sweep_n.empty()) throw std::invalid_argument("config: N sweep must be non-empty");
  for (int n : sweep_n)
    if (n < 1) throw std::invalid_argument("config: every N must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("config: seeds must be non-empty");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw std::invalid_argument("config: seeds must be distinct");
  if (parallel < 1) throw std::invalid_argument("config: parallel must be >= 1");
  if (objective_sequences < 0)
    throw std::invalid_argument("config: objective_sequences must be >= 0");
  if (!dataset_jsonl.empty()) {
    if (!has_backend)
      throw std::invalid_argument("config: a jsonl task source needs a backend block");
    for (Method m : methods)
      if (m == Method::Uft || m == Method::BruteForce)
        throw std::invalid_argument(
            "config: " + method_name(m) +
            " needs answer log-probabilities and cannot run against a jsonl+backend source");
  } else if (has_backend) {
    throw std::invalid_argument("config: backend block is only valid with a jsonl task source");
  }
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  try {
    require_keys(j, "config",
                 {"task", "methods", "N", "seeds", "out_dir", "parallel", "serial_kernels",
                  "objective_sequences", "labeling_cap", "tuple_cap", "uft", "uicl", "backend",
                  "prompt"});
    ExperimentConfig c;

    if (!j.contains("task")) throw std::invalid_argument("config: missing \"task\"");
    const json& t = j["task"];
    require_keys(t, "task", {"fixture", "json", "jsonl", "synthetic"});
    if (t.contains("fixture")) c.fixture = t["fixture"].get<std::string>();
    if (t.contains("json")) c.task_json = t["json"].get<std::string>();
    if (t.contains("jsonl")) c.dataset_jsonl = t["jsonl"].get<std::string>();
    if (t.contains("synthetic")) {
      const json& s = t["synthetic"];
      require_keys(s, "synthetic",
                   {"seed", "M", "K", "d", "noise", "bandwidth", "strength", "decay",
                    "center_scale", "spread", "logit_scale"});
      c.has_synthetic = true;
      c.synthetic_seed = s.at("seed").get<std::uint64_t>();
      c.synthetic_m = s.at("M").get<int>();
      c.synthetic_k = s.at("K").get<int>();
      c.synthetic_d = s.at("d").get<int>();
      c.synthetic_noise = s.at("noise").get<double>();
      if (s.contains("bandwidth")) {
        if (s["bandwidth"].is_string()) {
          if (s["bandwidth"].get<std::string>() != "inf")
            throw std::invalid_argument("synthetic.bandwidth: only \"inf\" is a valid string");
          c.synthetic_knobs.kernel_bandwidth = std::numeric_limits<double>::infinity();
        } else {
          c.synthetic_knobs.kernel_bandwidth = s["bandwidth"].get<double>();
        }
      }
      if (s.contains("strength"))
        c.synthetic_knobs.context_strength = s["strength"].get<double>();
      if (s.contains("decay")) c.synthetic_knobs.recency_decay = s["decay"].get<double>();
      if (s.contains("center_scale"))
        c.synthetic_opts.center_scale = s["center_scale"].get<double>();
      if (s.contains("spread")) c.synthetic_opts.instance_spread = s["spread"].get<double>();
      if (s.contains("logit_scale"))
        c.synthetic_opts.logit_scale = s["logit_scale"].get<double>();
    }

    if (!j.contains("methods")) throw std::invalid_argument("config: missing \"methods\"");
    for (const json& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    if (!j.contains("N")) throw std::invalid_argument("config: missing \"N\"");
    c.sweep_n = j["N"].get<std::vector<int>>();
    if (!j.contains("seeds")) throw std::invalid_argument("config: missing \"seeds\"");
    c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("parallel")) c.parallel = j["parallel"].get<int>();
    if (j.contains("serial_kernels") && j["serial_kernels"].get<bool>()) c.exec = Exec::Serial;
    if (j.contains("objective_sequences"))
      c.objective_sequences = j["objective_sequences"].get<std::int64_t>();
    if (j.contains("labeling_cap")) c.labeling_cap = j["labeling_cap"].get<std::int64_t>();
    if (j.contains("tuple_cap")) c.tuple_cap = j["tuple_cap"].get<std::int64_t>();
    if (j.contains("uft")) parse_uft_block(j["uft"], c.uft);
    if (j.contains("uicl")) parse_uicl_block(j["uicl"], c.uicl);
    if (j.contains("backend")) {
      c.has_backend = true;
      parse_backend_block(j["backend"], c.backend);
    }
    if (j.contains("prompt")) parse_prompt_block(j["prompt"], c.prompt);

    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_text_file(path));
}

RemoteSetup parse_remote_setup(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("remote setup: malformed JSON: ") + e.what());
  }
  try {
    require_keys(j, "remote setup", {"backend", "prompt"});
    RemoteSetup setup;
    if (j.contains("backend")) parse_backend_block(j["backend"], setup.backend);
    if (j.contains("prompt")) parse_prompt_block(j["prompt"], setup.prompt);
    return setup;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("remote setup: ") + e.what());
  }
}

RemoteSetup load_remote_setup(const std::string& path) {
  return parse_remote_setup(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Experiment sweep

namespace {

struct CellSpec {
  Method method = Method::ZeroShot;
  int n = 1;
  std::uint64_t listed_seed = 0;
};

struct CellOut {
  MetricsRow row;
  std::string failure;  // empty = ok
  std::vector<std::pair<std::string, std::string>> files;  // relpath -> content
};

std::uint64_t cell_seed_of(const CellSpec& cell) {
  return derive_seed(cell.listed_seed,
                     {static_cast<std::uint64_t>(cell.method) + 1,
                      static_cast<std::uint64_t>(cell.n)});
}

std::string uft_trace_csv(const std::vector<TrainIterRow>& trace) {
  std::ostringstream ss;
  ss << "iteration,objective,regularizer,entropy,accuracy\n";
  for (const TrainIterRow& r : trace)
    ss << r.iteration << ',' << fmt_double(r.objective) << ',' << fmt_double(r.regularizer)
       << ',' << fmt_double(r.entropy) << ',' << fmt_double(r.accuracy) << '\n';
  return ss.str();
}

std::string uicl_trace_csv(const UiclResult& result) {
  std::ostringstream ss;
  ss << "turn,objective,objective_stderr,accuracy\n";
  for (std::size_t t = 0; t < result.turns.size(); ++t) {
    const ObjectiveEstimate& est = result.objective_trace[t];
    ss << result.turns[t].turn << ',';
    if (est.num_sequences > 0)
      ss << fmt_double(est.value) << ',' << fmt_double(est.std_error);
    else
      ss << ',';
    ss << ',' << fmt_double(result.accuracy_trace[t]) << '\n';
  }
  return ss.str();
}

// One synthetic-path sweep cell; exceptions are caught by the caller.
void run_synthetic_cell(const ExperimentConfig& config, const SyntheticTask& task,
                        const CellSpec& cell, Exec exec, CellOut& out) {
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);
  const std::uint64_t cell_seed = cell_seed_of(cell);
  const std::string tag =
      "_N" + std::to_string(cell.n) + "_s" + std::to_string(cell.listed_seed);

  Labeling labeling;
  bool have_objective = false;
  switch (cell.method) {
    case Method::ZeroShot:
      labeling = predict_zero_shot(eval);
      break;
    case Method::SupervisedIcl:
      labeling = predict_supervised_icl(eval, cell.n, derive_seed(cell_seed, {0x51c}));
      break;
    case Method::Uft: {
      TrainConfig tc = config.uft;
      tc.N = cell.n;
      tc.seed = cell_seed;
      tc.exec = exec;
      const TrainResult result = train_uft(eval, tc);
      labeling = result.argmax_labeling;
      out.row.step = result.trace.empty() ? 0 : result.trace.back().iteration;
      out.files.emplace_back("trace_uft" + tag + ".csv", uft_trace_csv(result.trace));
      break;
    }
    case Method::Uicl: {
      UiclConfig uc = config.uicl;
      uc.N = cell.n;
      uc.seed = cell_seed;
      uc.exec = exec;
      uc.trace_sequences = config.objective_sequences;
      uc.checkpoint_dir.clear();  // checkpointing belongs to the run-uicl subcommand
      const UiclResult result = run_uicl(model, task.dataset, uc);
      labeling = result.final_labeling();
      out.row.step = result.turns.back().turn;
      out.row.accuracy = result.accuracy_trace.back();
      const ObjectiveEstimate& last = result.objective_trace.back();
      if (last.num_sequences > 0) {
        out.row.objective = last.value;
        out.row.objective_stderr = last.std_error;
        have_objective = true;
      }
      out.files.emplace_back("trace_uicl" + tag + ".csv", uicl_trace_csv(result));
      break;
    }
    case Method::BruteForce: {
      const SolverResult result = brute_force_argmax(eval, cell.n, 1e-9, exec,
                                                     config.labeling_cap, config.tuple_cap);
      labeling = result.best_labeling;
      break;
    }
  }

  if (std::isnan(out.row.accuracy)) out.row.accuracy = labeling_accuracy(labeling, task.dataset);
  if (!have_objective && config.objective_sequences > 0) {
    const ObjectiveEstimate est =
        mc_joint_objective(eval, labeling, cell.n, config.objective_sequences,
                           derive_seed(cell_seed, {0x0b1}), exec);
    out.row.objective = est.value;
    out.row.objective_stderr = est.std_error;
  }
}

// One jsonl+backend sweep cell. Objective columns stay empty: a chat endpoint
// yields samples, not answer log-probabilities.
void run_remote_cell(const ExperimentConfig& config, const TaskDataset& dataset,
                     ChatBackend& backend, const CellSpec& cell, CellOut& out) {
  RemoteSampler sampler(backend, config.prompt, &dataset.answer_set);
  const std::uint64_t cell_seed = cell_seed_of(cell);
  const int M = dataset.size();
  Rng dummy(0);

  switch (cell.method) {
    case Method::ZeroShot: {
      Labeling pred(static_cast<std::size_t>(M), -1);
      for (int i = 0; i < M; ++i) {
        // Tag independent of N: identical across sweep cells, so the response
        // cache collapses the flat baseline into one round of requests.
        const SampleOutcome o =
            sampler.sample(dataset.instances[static_cast<std::size_t>(i)], {}, dummy,
                           derive_seed(cell.listed_seed, {0x25, static_cast<std::uint64_t>(i)}),
                           true);
        if (!o.rejected) pred[static_cast<std::size_t>(i)] = o.label.index;
      }
      out.row.accuracy = labeling_accuracy(pred, dataset);
      break;
    }
    case Method::SupervisedIcl: {
      if (!dataset.has_gold())
        throw Error("supervised-icl needs gold labels in the jsonl file");
      std::vector<Label> gold_labels(static_cast<std::size_t>(M));
      for (int i = 0; i < M; ++i) {
        gold_labels[static_cast<std::size_t>(i)].index = dataset.gold[static_cast<std::size_t>(i)];
        gold_labels[static_cast<std::size_t>(i)].text =
            dataset.answer_set.name(dataset.gold[static_cast<std::size_t>(i)]);
      }
      if (cell.n >= M) throw Error("supervised-icl needs N < M");
      Labeling pred(static_cast<std::size_t>(M), -1);
      std::vector<int> draw;
      for (int i = 0; i < M; ++i) {
        Rng rng(derive_seed(cell_seed, {0x51c, static_cast<std::uint64_t>(i)}));
        rng.sample_without_replacement(M - 1, cell.n, draw);
        std::vector<SupportRef> support;
        for (int v : draw) {
          const int other = v + (v >= i ? 1 : 0);
          support.push_back({&dataset.instances[static_cast<std::size_t>(other)],
                             &gold_labels[static_cast<std::size_t>(other)]});
        }
        const SampleOutcome o =
            sampler.sample(dataset.instances[static_cast<std::size_t>(i)], support, dummy,
                           derive_seed(cell_seed, {0x5a, static_cast<std::uint64_t>(i)}), true);
        if (!o.rejected) pred[static_cast<std::size_t>(i)] = o.label.index;
      }
      out.row.accuracy = labeling_accuracy(pred, dataset);
      break;
    }
    case Method::Uicl: {
      UiclConfig uc = config.uicl;
      uc.N = cell.n;
      uc.seed = cell_seed;
      uc.exec = Exec::Serial;
      uc.trace_sequences = 0;
      uc.checkpoint_dir.clear();
      const UiclResult result = run_uicl(sampler, dataset, uc);
      out.row.step = result.turns.back().turn;
      out.row.accuracy = result.accuracy_trace.back();
      const std::string tag =
          "_N" + std::to_string(cell.n) + "_s" + std::to_string(cell.listed_seed);
      out.files.emplace_back("trace_uicl" + tag + ".csv", uicl_trace_csv(result));
      break;
    }
    default:
      throw Error("method not available against a jsonl+backend source");
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();

  // Task source
  SyntheticTask task;
  TaskDataset jsonl_dataset;
  const bool remote = !config.dataset_jsonl.empty();
  if (!config.fixture.empty()) {
    task = make_fixture(config.fixture);
  } else if (!config.task_json.empty()) {
    task = load_task_json(config.task_json);
  } else if (config.has_synthetic) {
    task = generate_synthetic_task(config.synthetic_seed, config.synthetic_m, config.synthetic_k,
                                   config.synthetic_d, config.synthetic_noise,
                                   config.synthetic_knobs, config.synthetic_opts);
  } else {
    jsonl_dataset = load_dataset_jsonl(config.dataset_jsonl);
  }

  std::vector<CellSpec> cells;
  for (Method m : config.methods)
    for (int n : config.sweep_n)
      for (std::uint64_t s : config.seeds) cells.push_back({m, n, s});

  std::vector<CellOut> outs(cells.size());
  const int pool = remote ? 1 : std::max(1, config.parallel);
  const Exec cell_exec = pool > 1 ? Exec::Serial : config.exec;

  std::unique_ptr<ChatBackend> backend;
  if (remote) backend = std::make_unique<ChatBackend>(config.backend);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      CellOut& out = outs[i];
      out.row.method = cells[i].method;
      out.row.n = cells[i].n;
      out.row.seed = cells[i].listed_seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        if (remote)
          run_remote_cell(config, jsonl_dataset, *backend, cells[i], out);
        else
          run_synthetic_cell(config, task, cells[i], cell_exec, out);
      } catch (const std::exception& e) {
        out.row.failed = true;
        out.row.accuracy = out.row.objective = out.row.objective_stderr =
            std::numeric_limits<double>::quiet_NaN();
        out.failure = e.what();
        out.files.clear();
      }
      out.row.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  // Emit everything in cell order so reruns are byte-identical.
  const std::filesystem::path dir(config.out_dir);
  std::filesystem::create_directories(dir);

  ExperimentResult result;
  std::ostringstream metrics;
  metrics << "method,N,step,seed,status,accuracy,objective,objective_stderr\n";
  std::ostringstream timings;
  timings << "method,N,seed,wall_clock_s\n";
  std::ostringstream failures;
  std::vector<std::pair<std::string, std::string>> files;

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellOut& out = outs[i];
    const MetricsRow& r = out.row;
    result.rows.push_back(r);
    metrics << method_name(r.method) << ',' << r.n << ',' << r.step << ',' << r.seed << ','
            << (r.failed ? "FAILED" : "OK") << ',' << fmt_double(r.accuracy) << ','
            << fmt_double(r.objective) << ',' << fmt_double(r.objective_stderr) << '\n';
    char wall[32];
    std::snprintf(wall, sizeof(wall), "%.3f", r.wall_clock_s);
    timings << method_name(r.method) << ',' << r.n << ',' << r.seed << ',' << wall << '\n';
    if (r.failed) {
      ++result.failed_cells;
      const std::string msg = "method=" + method_name(r.method) + " N=" + std::to_string(r.n) +
                              " seed=" + std::to_string(r.seed) + ": " + out.failure;
      result.failures.push_back(msg);
      failures << msg << '\n';
    }
    for (const auto& f : out.files) files.push_back(f);
  }

  files.emplace_back("metrics.csv", metrics.str());
  if (result.failed_cells > 0) files.emplace_back("failures.txt", failures.str());

  json manifest;
  manifest["artifact"] = "jinfer";
  manifest["version"] = kVersion;
  const json config_echo = experiment_config_to_json(config);
  manifest["config"] = config_echo;
  manifest["config_hash"] = hex_digest(config_echo.dump());
  manifest["seeds"] = config.seeds;
  json outputs;
  for (const auto& [relpath, content] : files) {
    write_text_file(dir / relpath, content);
    outputs[relpath] = hex_digest(content);
    result.output_files.push_back(relpath);
  }
  manifest["outputs"] = std::move(outputs);
  // Timing is real wall clock and never reproducible; hashed but kept out of
  // "outputs" so the reproducibility contract stays honest.
  write_text_file(dir / "timings.csv", timings.str());
  manifest["volatile"] = {{"timings.csv", hex_digest(timings.str())}};
  result.output_files.push_back("timings.csv");

  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  result.output_files.push_back("manifest.json");
  return result;
}

// ---------------------------------------------------------------------------
// Estimator comparison

double estimator_gradient_variance(const TaskEncoder& enc, const ZeroShotCache& cache,
                                   Estimator estimator, int N, std::int64_t draws,
                                   std::uint64_t seed, Exec exec) {
  if (draws < 2) throw std::invalid_argument("estimator_gradient_variance: draws must be >= 2");
  const int M = cache.num_instances();
  if (N < 1 || N > M)
    throw std::invalid_argument("estimator_gradient_variance: need 1 <= N <= M");
  const Eigen::Index P = enc.param_count();
  Eigen::MatrixXd grads(draws, P);

  struct Scratch {
    std::vector<int> tuple;
  };
  parallel_for_scratch(
      draws, exec, [] { return Scratch{}; },
      [&](Scratch& s, std::int64_t i) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
        rng.sample_without_replacement(M, N, s.tuple);
        const GradientEstimate ge = estimator == Estimator::NaiveReinforce
                                        ? grad_naive_reinforce(enc, cache, s.tuple, rng)
                                        : grad_low_variance(enc, cache, s.tuple, rng);
        grads.row(i) = ge.grad.transpose();
      });

  // Fixed-order two-pass variance, summed over coordinates.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(P);
  for (std::int64_t i = 0; i < draws; ++i) mean += grads.row(i).transpose();
  mean /= static_cast<double>(draws);
  double total = 0.0;
  for (std::int64_t i = 0; i < draws; ++i)
    total += (grads.row(i).transpose() - mean).squaredNorm();
  return total / static_cast<double>(draws - 1);
}

EstimatorComparison compare_estimators(const DatasetEvaluator& eval, const CompareConfig& config) {
  if (config.iterations < 1)
    throw std::invalid_argument("compare_estimators: iterations must be >= 1");
  if (config.seeds.empty()) throw std::invalid_argument("compare_estimators: seeds empty");

  EstimatorComparison report;
  report.seeds = config.seeds;
  report.variance_draws = config.variance_draws;
  const std::size_t iters = static_cast<std::size_t>(config.iterations);
  report.curve_naive.assign(iters, 0.0);
  report.curve_low_variance.assign(iters, 0.0);

  const ZeroShotCache cache(eval);
  std::vector<int> all_instances(static_cast<std::size_t>(eval.num_instances()));
  std::iota(all_instances.begin(), all_instances.end(), 0);

  for (std::uint64_t s : config.seeds) {
    for (Estimator est : {Estimator::NaiveReinforce, Estimator::LowVariance}) {
      TrainConfig tc = config.train;
      tc.iterations = config.iterations;
      tc.seed = s;
      tc.estimator = est;
      const TrainResult run = train_uft(eval, tc);
      auto& curve = est == Estimator::NaiveReinforce ? report.curve_naive
                                                     : report.curve_low_variance;
      for (std::size_t i = 0; i < iters; ++i) curve[i] += run.trace[i].objective;
      auto& finals =
          est == Estimator::NaiveReinforce ? report.final_naive : report.final_low_variance;
      // Noise-free final comparison: exact expectation at the final
      // parameters, not the last minibatch estimate.
      const double j_exact = exact_amortized_objective(run.encoder, cache, tc.N, tc.exec);
      const double r_full = prior_entropy(run.encoder, eval, all_instances);
      finals.push_back(j_exact + tc.gamma * r_full);
    }
  }
  for (std::size_t i = 0; i < iters; ++i) {
    report.curve_naive[i] /= static_cast<double>(config.seeds.size());
    report.curve_low_variance[i] /= static_cast<double>(config.seeds.size());
  }
  for (std::size_t k = 0; k < config.seeds.size(); ++k)
    if (report.final_low_variance[k] >= report.final_naive[k]) ++report.low_variance_wins;

  // Gradient variance at the shared zero init and at a mid-training point.
  const TaskEncoder enc0 =
      init_task_encoder(eval.model(), eval.dataset(), config.train.encoder);
  TaskEncoder enc_mid = enc0;
  if (config.iterations / 2 >= 1) {
    TrainConfig tc = config.train;
    tc.iterations = config.iterations / 2;
    tc.seed = config.seeds.front();
    tc.estimator = Estimator::LowVariance;
    enc_mid = train_uft(eval, tc).encoder;
  }
  const std::uint64_t vseed_init = derive_seed(config.seeds.front(), {0x7a9, 0});
  const std::uint64_t vseed_mid = derive_seed(config.seeds.front(), {0x7a9, 1});
  const int N = config.train.N;
  const Exec exec = config.train.exec;
  report.variance_naive_init = estimator_gradient_variance(
      enc0, cache, Estimator::NaiveReinforce, N, config.variance_draws, vseed_init, exec);
  report.variance_low_variance_init = estimator_gradient_variance(
      enc0, cache, Estimator::LowVariance, N, config.variance_draws, vseed_init, exec);
  report.variance_naive_mid = estimator_gradient_variance(
      enc_mid, cache, Estimator::NaiveReinforce, N, config.variance_draws, vseed_mid, exec);
  report.variance_low_variance_mid = estimator_gradient_variance(
      enc_mid, cache, Estimator::LowVariance, N, config.variance_draws, vseed_mid, exec);

  if (!config.out_dir.empty()) {
    const std::filesystem::path dir(config.out_dir);
    std::filesystem::create_directories(dir);
    std::ostringstream curves;
    curves << "iteration,naive_mean,low_variance_mean\n";
    for (std::size_t i = 0; i < iters; ++i)
      curves << i << ',' << fmt_double(report.curve_naive[i]) << ','
             << fmt_double(report.curve_low_variance[i]) << '\n';
    std::ostringstream finals;
    finals << "seed,naive_final,low_variance_final\n";
    for (std::size_t k = 0; k < config.seeds.size(); ++k)
      finals << config.seeds[k] << ',' << fmt_double(report.final_naive[k]) << ','
             << fmt_double(report.final_low_variance[k]) << '\n';
    std::ostringstream var;
    var << "checkpoint,draws,naive,low_variance\n";
    var << "init," << config.variance_draws << ',' << fmt_double(report.variance_naive_init)
        << ',' << fmt_double(report.variance_low_variance_init) << '\n';
    var << "mid," << config.variance_draws << ',' << fmt_double(report.variance_naive_mid) << ','
        << fmt_double(report.variance_low_variance_mid) << '\n';
    for (const auto& [name, content] :
         std::initializer_list<std::pair<const char*, std::string>>{
             {"estimator_curves.csv", curves.str()},
             {"estimator_finals.csv", finals.str()},
             {"estimator_variance.csv", var.str()}}) {
      write_text_file(dir / name, content);
      report.output_files.push_back(name);
    }
  }
  return report;
}

}  // namespace jinfer
