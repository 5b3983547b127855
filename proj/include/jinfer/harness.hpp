#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "jinfer/objective.hpp"
#include "jinfer/remote.hpp"
#include "jinfer/solver.hpp"
#include "jinfer/synthetic.hpp"
#include "jinfer/types.hpp"
#include "jinfer/uft.hpp"
#include "jinfer/uicl.hpp"

namespace jinfer {

// ---------------------------------------------------------------------------
// Dataset ingestion
//
// JSONL layout: a header line {"answers": ["yes", "no", ...]} followed by one
// object per instance: {"id": str, "input": str | "features": [..],
// "label": optional str in answers}. Gold is attached only when every line
// carries a label. Malformed lines, duplicate ids, and labels outside the
// answer set are reported with their line number.
TaskDataset load_dataset_jsonl(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic task (de)serialization. Field names are fixed here:
// {"answers": [...],
//  "params": {"weights": [[..]..], "bias": [..], "kernel_bandwidth": num|"inf",
//             "context_strength": num, "recency_decay": num},
//  "instances": [{"id": str, "features": [..], "gold": int}, ...]}
void save_task_json(const SyntheticTask& task, const std::string& path);
SyntheticTask load_task_json(const std::string& path);

// ---------------------------------------------------------------------------
// Built-in fixtures: small frozen synthetic tasks the tests and example
// configs share. Generated on demand (deterministic), never read from disk.
struct FixtureInfo {
  std::string name;
  std::string summary;
};
const std::vector<FixtureInfo>& list_fixtures();
SyntheticTask make_fixture(const std::string& name);  // std::invalid_argument on unknown name

// ---------------------------------------------------------------------------
// Task quality: is there an in-context signal worth studying? Tasks for
// support-size scaling experiments should clear both bars first (decent but
// imperfect zero-shot, and a visible gain from gold demonstrations).
struct TaskQuality {
  double zero_shot_accuracy = 0.0;
  double supervised_icl_accuracy = 0.0;
  int support_n = 0;
};
TaskQuality measure_task_quality(const DatasetEvaluator& eval, int support_n, std::uint64_t seed);

Labeling predict_zero_shot(const DatasetEvaluator& eval);
// Per-instance argmax given `support_n` gold-labeled examples drawn uniformly
// without replacement (query excluded), one seeded draw per instance.
Labeling predict_supervised_icl(const DatasetEvaluator& eval, int support_n, std::uint64_t seed);
// Exact-match accuracy vs gold; NaN when the dataset has no gold.
double labeling_accuracy(const Labeling& pred, const TaskDataset& dataset);

// ---------------------------------------------------------------------------
// Experiment sweep

enum class Method { ZeroShot, SupervisedIcl, Uicl, Uft, BruteForce };
std::string method_name(Method m);
Method parse_method(const std::string& name);  // std::invalid_argument on unknown

// Parsed from a JSON config file; see parse_experiment_config for the schema.
struct ExperimentConfig {
  // Task source — exactly one of:
  std::string fixture;                    // built-in fixture name
  std::string task_json;                  // path to a saved synthetic task
  std::string dataset_jsonl;              // raw dataset; needs the backend block
  bool has_synthetic = false;             // inline generation block
  std::uint64_t synthetic_seed = 0;
  int synthetic_m = 0, synthetic_k = 0, synthetic_d = 0;
  double synthetic_noise = 0.0;
  SyntheticModelParams synthetic_knobs;   // weights/bias ignored
  SyntheticGenOptions synthetic_opts;

  std::vector<Method> methods;            // sweep axis
  std::vector<int> sweep_n;               // sweep axis, non-empty
  std::vector<std::uint64_t> seeds;       // distinct, non-empty
  std::string out_dir = "out";
  int parallel = 1;                       // sweep-cell pool width (synthetic path)
  Exec exec = Exec::Parallel;             // within-cell kernels (forced Serial when parallel > 1)

  TrainConfig uft;                        // N/seed/exec overwritten per cell
  UiclConfig uicl;                        // N/seed/exec/trace_sequences overwritten per cell
  std::int64_t objective_sequences = 256; // MC sequences for each cell's J^N column; 0 = skip
  std::int64_t labeling_cap = kDefaultLabelingCap;
  std::int64_t tuple_cap = kDefaultTupleCap;

  bool has_backend = false;               // remote path (dataset_jsonl source only)
  BackendConfig backend;
  PromptTemplate prompt;

  void validate() const;  // throws std::invalid_argument
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Standalone {"backend": {...}, "prompt": {...}} file, as used by the
// run-uicl subcommand's remote path.
struct RemoteSetup {
  BackendConfig backend;
  PromptTemplate prompt;
};
RemoteSetup parse_remote_setup(const std::string& json_text);
RemoteSetup load_remote_setup(const std::string& path);

// One sweep cell's outcome. wall_clock_s goes to timings.csv, never to
// metrics.csv: the metrics file must be byte-identical across reruns of the
// same config on the synthetic path, and timing noise would break that.
struct MetricsRow {
  Method method = Method::ZeroShot;
  int n = 1;
  int step = 0;  // final iteration (UFT) / final turn (UICL) / 0 otherwise
  std::uint64_t seed = 0;
  bool failed = false;
  double accuracy = std::numeric_limits<double>::quiet_NaN();          // NaN = absent
  double objective = std::numeric_limits<double>::quiet_NaN();         // J^N of final labeling
  double objective_stderr = std::numeric_limits<double>::quiet_NaN();
  double wall_clock_s = 0.0;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;            // one per cell, config order
  std::vector<std::string> failures;       // "method=... N=... seed=...: message"
  std::vector<std::string> output_files;   // paths relative to out_dir, manifest included
  int failed_cells = 0;
};

// Runs every (method x N x seed) cell, continuing past per-cell failures.
// Writes into config.out_dir: metrics.csv, per-run trace CSVs, failures.txt
// (when any), timings.csv, and manifest.json listing every output with a
// content hash. Cell seeds derive from (listed seed, method, N), so adding
// sweep points never perturbs existing cells. Synthetic-path cells run in a
// pool of `parallel` threads; dataset_jsonl cells run one at a time and
// serialize through the backend's rate limiter.
ExperimentResult run_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Estimator comparison: paired training runs (shared seeds, shared zero init)
// of plain REINFORCE vs the variance-reduced estimator, plus gradient-variance
// measurements at two parameter checkpoints (the zero init, and the point
// reached by half the iteration budget).
struct CompareConfig {
  // Defaults pick a budget where the naive runs are still climbing, so the
  // convergence-speed gap is visible in the finals; small batches keep the
  // per-step noise relevant.
  int iterations = 40;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  TrainConfig train;                   // estimator/seed/iterations overwritten
  std::int64_t variance_draws = 10000;
  std::string out_dir;                 // when set: write the report CSVs here
  CompareConfig() {
    train.N = 4;
    train.batch = 8;
  }
};

struct EstimatorComparison {
  std::vector<std::uint64_t> seeds;
  // Per seed: exact objective of the final parameters (enumerated expectation
  // plus gamma * full-dataset prior entropy), so the paired comparison is
  // free of minibatch estimation noise.
  std::vector<double> final_naive;
  std::vector<double> final_low_variance;
  int low_variance_wins = 0;               // seeds where low-variance >= naive
  std::vector<double> curve_naive;         // per-iteration mean over seeds
  std::vector<double> curve_low_variance;
  double variance_naive_init = 0.0;        // summed per-coordinate gradient variance
  double variance_low_variance_init = 0.0;
  double variance_naive_mid = 0.0;
  double variance_low_variance_mid = 0.0;
  std::int64_t variance_draws = 0;
  std::vector<std::string> output_files;
};

EstimatorComparison compare_estimators(const DatasetEvaluator& eval, const CompareConfig& config);

// Summed per-coordinate variance of one estimator's single-draw gradient at
// fixed parameters, over `draws` seeded (tuple, answers) samples.
double estimator_gradient_variance(const TaskEncoder& enc, const ZeroShotCache& cache,
                                   Estimator estimator, int N, std::int64_t draws,
                                   std::uint64_t seed, Exec exec = Exec::Parallel);

// ---------------------------------------------------------------------------
// Report: static SVG line charts rendered from an experiment directory's CSVs.

struct SeriesPoint {
  double x = 0.0, y = 0.0;
};
struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};
void write_svg_line_chart(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series);

// Renders whatever the directory's CSVs support (accuracy-vs-N, UICL turn
// traces, UFT iteration traces, estimator curves); returns the files written.
std::vector<std::string> write_report(const std::string& experiment_dir);

}  // namespace jinfer
