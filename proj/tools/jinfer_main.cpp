// Command-line front end: task generation, exact solving, training,
// relabeling rounds, sweeps, estimator comparisons, and report rendering.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "jinfer/harness.hpp"

namespace {

using namespace jinfer;

struct TaskArgs {
  std::string fixture;
  std::string task_json;

  void attach(CLI::App* cmd) {
    auto* f = cmd->add_option("--fixture", fixture, "built-in fixture name");
    auto* t = cmd->add_option("--task", task_json, "path to a task JSON file");
    f->excludes(t);
  }

  SyntheticTask load() const {
    if (!fixture.empty()) return make_fixture(fixture);
    if (!task_json.empty()) return load_task_json(task_json);
    throw std::invalid_argument("need --fixture or --task");
  }
};

std::string labeling_to_names(const Labeling& labeling, const AnswerSet& answers) {
  std::string out;
  for (std::size_t i = 0; i < labeling.size(); ++i) {
    if (i > 0) out += ' ';
    out += answers.name(labeling[i]);
  }
  return out;
}

void print_quality(const SyntheticTask& task, int support_n, std::uint64_t seed) {
  const SyntheticModel model = task.make_model();
  const DatasetEvaluator eval(model, task.dataset);
  const TaskQuality q = measure_task_quality(eval, support_n, seed);
  std::printf("zero-shot accuracy        %.4f\n", q.zero_shot_accuracy);
  std::printf("supervised-icl accuracy   %.4f  (N=%d gold demonstrations)\n",
              q.supervised_icl_accuracy, q.support_n);
}

int run(int argc, char** argv) {
  CLI::App app{"joint inference over task datasets"};
  app.require_subcommand(1);
  int threads = 0;
  bool serial = false;
  app.add_option("--threads", threads, "cap kernel threads (0 = hardware default)");
  app.add_flag("--serial", serial, "run all kernels single-threaded");

  // --- gen-task
  auto* gen = app.add_subcommand("gen-task", "generate a synthetic task (or dump a fixture)");
  TaskArgs gen_fixture_only;  // --fixture only; --task makes no sense here
  std::string gen_fixture, gen_out;
  std::uint64_t gen_seed = 1;
  int gen_m = 64, gen_k = 2, gen_d = 2;
  double gen_noise = 0.9;
  std::string gen_bandwidth = "1.25";
  double gen_strength = 2.0, gen_decay = 1.0;
  SyntheticGenOptions gen_opts;
  bool gen_measure = false;
  int gen_support = 8;
  gen->add_option("--fixture", gen_fixture, "dump a built-in fixture instead of generating");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--M", gen_m, "instances");
  gen->add_option("--K", gen_k, "answers");
  gen->add_option("--d", gen_d, "feature dimension");
  gen->add_option("--noise", gen_noise, "zero-shot weight noise");
  gen->add_option("--bandwidth", gen_bandwidth, "context kernel bandwidth (or 'inf')");
  gen->add_option("--strength", gen_strength, "context strength");
  gen->add_option("--decay", gen_decay, "recency decay in (0,1]");
  gen->add_option("--logit-scale", gen_opts.logit_scale, "zero-shot logit sharpness");
  gen->add_option("--spread", gen_opts.instance_spread, "instance spread around centers");
  gen->add_option("--center-scale", gen_opts.center_scale, "cluster center scale");
  gen->add_option("--out", gen_out, "write the task JSON here");
  gen->add_flag("--measure", gen_measure, "print zero-shot / supervised-icl accuracy");
  gen->add_option("--support-n", gen_support, "demonstrations for --measure");

  // --- list-fixtures
  auto* lsf = app.add_subcommand("list-fixtures", "list built-in fixtures");

  // --- run-zero-shot
  auto* zs = app.add_subcommand("run-zero-shot", "per-instance argmax with no context");
  TaskArgs zs_task;
  zs_task.attach(zs);

  // --- solve-exact
  auto* solve = app.add_subcommand("solve-exact", "brute-force the best labeling");
  TaskArgs solve_task;
  solve_task.attach(solve);
  int solve_n = 2;
  double solve_tol = 1e-9;
  std::int64_t solve_lcap = kDefaultLabelingCap, solve_tcap = kDefaultTupleCap;
  solve->add_option("--N", solve_n, "support size of the objective");
  solve->add_option("--tie-tol", solve_tol, "tie tolerance");
  solve->add_option("--labeling-cap", solve_lcap, "max labelings to enumerate");
  solve->add_option("--tuple-cap", solve_tcap, "max ordered tuples per labeling");

  // --- train-uft
  auto* train = app.add_subcommand("train-uft", "train the task encoder on the joint objective");
  TaskArgs train_task;
  train_task.attach(train);
  TrainConfig tc;
  std::string train_estimator = "low-variance", train_optimizer = "adam",
              train_encoder = "tabular", train_trace;
  train->add_option("--N", tc.N, "support size");
  train->add_option("--iterations", tc.iterations, "training iterations");
  train->add_option("--batch", tc.batch, "tuples per iteration");
  train->add_option("--lr", tc.lr, "learning rate");
  train->add_option("--gamma", tc.gamma, "prior-entropy weight");
  train->add_option("--seed", tc.seed, "training seed");
  train->add_option("--estimator", train_estimator, "naive | low-variance");
  train->add_option("--optimizer", train_optimizer, "sgd | adam");
  train->add_option("--encoder", train_encoder, "tabular | linear");
  train->add_option("--trace", train_trace, "write the per-iteration trace CSV here");

  // --- run-uicl
  auto* uicl = app.add_subcommand("run-uicl", "multi-turn relabeling with majority vote");
  TaskArgs uicl_task;
  uicl_task.attach(uicl);
  std::string uicl_jsonl, uicl_backend_json, uicl_trace;
  UiclConfig uc;
  bool uicl_unbalanced = false;
  uicl->add_option("--jsonl", uicl_jsonl, "JSONL dataset (remote backend required)");
  uicl->add_option("--backend-config", uicl_backend_json,
                   "JSON file with {\"backend\": {...}, \"prompt\": {...}}");
  uicl->add_option("--N", uc.N, "support size");
  uicl->add_option("--turns", uc.turns, "relabeling turns");
  uicl->add_option("--repeats", uc.repeats, "support/answer draws per instance per turn");
  uicl->add_option("--seed", uc.seed, "run seed");
  uicl->add_flag("--greedy", uc.greedy, "argmax answers instead of sampling");
  uicl->add_flag("--unbalanced", uicl_unbalanced, "skip per-answer support quotas");
  uicl->add_option("--trace-sequences", uc.trace_sequences,
                   "MC sequences per turn for the objective trace (0 = off)");
  uicl->add_option("--checkpoint-dir", uc.checkpoint_dir, "write/resume per-turn checkpoints");
  uicl->add_option("--trace", uicl_trace, "write the per-turn trace CSV here");

  // --- sweep
  auto* sweep = app.add_subcommand("sweep", "run an experiment config");
  std::string sweep_config, sweep_out, sweep_seeds;
  int sweep_parallel = 0;
  sweep->add_option("--config", sweep_config, "experiment config JSON")->required();
  sweep->add_option("--out", sweep_out, "override the output directory");
  sweep->add_option("--seeds", sweep_seeds, "override seeds (comma-separated)");
  sweep->add_option("--parallel", sweep_parallel, "override the sweep-cell pool width");

  // --- compare-estimators
  auto* cmp = app.add_subcommand("compare-estimators",
                                 "paired naive vs low-variance training runs");
  TaskArgs cmp_task;
  cmp_task.attach(cmp);
  CompareConfig cc;
  std::string cmp_seeds;
  cmp->add_option("--iterations", cc.iterations, "iterations per run");
  cmp->add_option("--seeds", cmp_seeds, "comma-separated seeds");
  cmp->add_option("--N", cc.train.N, "support size");
  cmp->add_option("--batch", cc.train.batch, "tuples per iteration");
  cmp->add_option("--lr", cc.train.lr, "learning rate");
  cmp->add_option("--gamma", cc.train.gamma, "prior-entropy weight");
  cmp->add_option("--draws", cc.variance_draws, "gradient draws per variance checkpoint");
  cmp->add_option("--out", cc.out_dir, "write the report CSVs here");

  // --- report
  auto* rep = app.add_subcommand("report", "render SVG charts from an experiment directory");
  std::string rep_dir;
  rep->add_option("--dir", rep_dir, "experiment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (threads > 0) set_max_threads(threads);
  const Exec exec = serial ? Exec::Serial : Exec::Parallel;

  if (gen->parsed()) {
    SyntheticTask task;
    if (!gen_fixture.empty()) {
      task = make_fixture(gen_fixture);
    } else {
      SyntheticModelParams knobs;
      knobs.kernel_bandwidth = gen_bandwidth == "inf"
                                   ? std::numeric_limits<double>::infinity()
                                   : std::stod(gen_bandwidth);
      knobs.context_strength = gen_strength;
      knobs.recency_decay = gen_decay;
      task = generate_synthetic_task(gen_seed, gen_m, gen_k, gen_d, gen_noise, knobs, gen_opts);
    }
    std::printf("task: M=%d K=%d d=%d\n", task.dataset.size(), task.dataset.answer_set.size(),
                task.params.feature_dim());
    if (gen_measure) print_quality(task, gen_support, 7);
    if (!gen_out.empty()) {
      save_task_json(task, gen_out);
      std::printf("wrote %s\n", gen_out.c_str());
    }
    return 0;
  }

  if (lsf->parsed()) {
    for (const FixtureInfo& f : list_fixtures())
      std::printf("%-10s %s\n", f.name.c_str(), f.summary.c_str());
    return 0;
  }

  if (zs->parsed()) {
    const SyntheticTask task = zs_task.load();
    const SyntheticModel model = task.make_model();
    const DatasetEvaluator eval(model, task.dataset);
    const Labeling pred = predict_zero_shot(eval);
    const ObjectiveEstimate j1 = exact_joint_objective(eval, pred, 1, exec);
    std::printf("accuracy   %.4f\n", labeling_accuracy(pred, task.dataset));
    std::printf("J^1        %.6f\n", j1.value);
    std::printf("labeling   %s\n", labeling_to_names(pred, task.dataset.answer_set).c_str());
    return 0;
  }

  if (solve->parsed()) {
    const SyntheticTask task = solve_task.load();
    const SyntheticModel model = task.make_model();
    const DatasetEvaluator eval(model, task.dataset);
    const SolverResult r = brute_force_argmax(eval, solve_n, solve_tol, exec, solve_lcap,
                                              solve_tcap);
    std::printf("best value  %.8f  (%lld labelings evaluated, %lld within tie tolerance)\n",
                r.best_value, static_cast<long long>(r.num_evaluated),
                static_cast<long long>(r.ties));
    std::printf("labeling    %s\n",
                labeling_to_names(r.best_labeling, task.dataset.answer_set).c_str());
    std::printf("accuracy    %.4f\n", labeling_accuracy(r.best_labeling, task.dataset));
    return 0;
  }

  if (train->parsed()) {
    const SyntheticTask task = train_task.load();
    tc.estimator =
        train_estimator == "naive" ? Estimator::NaiveReinforce : Estimator::LowVariance;
    tc.optimizer = train_optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    tc.encoder = train_encoder == "linear" ? EncoderKind::Linear : EncoderKind::Tabular;
    tc.exec = exec;
    const SyntheticModel model = task.make_model();
    const DatasetEvaluator eval(model, task.dataset);
    const TrainResult r = train_uft(eval, tc);
    const TrainIterRow& last = r.trace.back();
    std::printf("final objective  %.6f   (iteration %d)\n", last.objective, last.iteration);
    std::printf("prior entropy    %.6f\n", r.final_prior_entropy);
    std::printf("accuracy         %.4f\n", labeling_accuracy(r.argmax_labeling, task.dataset));
    if (!train_trace.empty()) {
      std::ofstream out(train_trace, std::ios::binary);
      out << "iteration,objective,regularizer,entropy,accuracy\n";
      for (const TrainIterRow& row : r.trace) {
        char line[160];
        std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g\n", row.iteration,
                      row.objective, row.regularizer, row.entropy, row.accuracy);
        out << line;
      }
      std::printf("wrote %s\n", train_trace.c_str());
    }
    return 0;
  }

  if (uicl->parsed()) {
    uc.balance = !uicl_unbalanced;
    uc.exec = exec;
    UiclResult r;
    TaskDataset dataset;
    if (!uicl_jsonl.empty()) {
      if (uicl_backend_json.empty())
        throw std::invalid_argument("--jsonl needs --backend-config");
      dataset = load_dataset_jsonl(uicl_jsonl);
      const RemoteSetup setup = load_remote_setup(uicl_backend_json);
      ChatBackend backend(setup.backend);
      RemoteSampler sampler(backend, setup.prompt, &dataset.answer_set);
      uc.trace_sequences = 0;
      r = run_uicl(sampler, dataset, uc);
      std::printf("network calls  %lld\n", static_cast<long long>(backend.network_calls()));
    } else {
      const SyntheticTask task = uicl_task.load();
      dataset = task.dataset;
      const SyntheticModel model = task.make_model();
      r = run_uicl(model, dataset, uc);
    }
    for (std::size_t t = 0; t < r.turns.size(); ++t) {
      const ObjectiveEstimate& est = r.objective_trace[t];
      if (est.num_sequences > 0)
        std::printf("turn %2d  accuracy %.4f  objective %.6f +- %.6f\n", r.turns[t].turn,
                    r.accuracy_trace[t], est.value, est.std_error);
      else
        std::printf("turn %2d  accuracy %.4f\n", r.turns[t].turn, r.accuracy_trace[t]);
    }
    if (!uicl_trace.empty()) {
      std::ofstream out(uicl_trace, std::ios::binary);
      out << "turn,objective,objective_stderr,accuracy\n";
      for (std::size_t t = 0; t < r.turns.size(); ++t) {
        const ObjectiveEstimate& est = r.objective_trace[t];
        char line[160];
        if (est.num_sequences > 0)
          std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g\n", r.turns[t].turn, est.value,
                        est.std_error, r.accuracy_trace[t]);
        else
          std::snprintf(line, sizeof(line), "%d,,,%.10g\n", r.turns[t].turn,
                        r.accuracy_trace[t]);
        out << line;
      }
      std::printf("wrote %s\n", uicl_trace.c_str());
    }
    return 0;
  }

  if (sweep->parsed()) {
    ExperimentConfig config = load_experiment_config(sweep_config);
    if (!sweep_out.empty()) config.out_dir = sweep_out;
    if (!sweep_seeds.empty()) {
      config.seeds.clear();
      std::stringstream ss(sweep_seeds);
      std::string item;
      while (std::getline(ss, item, ',')) config.seeds.push_back(std::stoull(item));
    }
    if (sweep_parallel > 0) config.parallel = sweep_parallel;
    if (serial) config.exec = Exec::Serial;
    config.validate();
    const ExperimentResult result = run_experiment(config);
    std::printf("%zu cells, %d failed; outputs in %s\n", result.rows.size(),
                result.failed_cells, config.out_dir.c_str());
    for (const std::string& f : result.failures) std::printf("FAILED %s\n", f.c_str());
    return result.failed_cells == 0 ? 0 : 1;
  }

  if (cmp->parsed()) {
    const SyntheticTask task = cmp_task.load();
    if (!cmp_seeds.empty()) {
      cc.seeds.clear();
      std::stringstream ss(cmp_seeds);
      std::string item;
      while (std::getline(ss, item, ',')) cc.seeds.push_back(std::stoull(item));
    }
    cc.train.exec = exec;
    const SyntheticModel model = task.make_model();
    const DatasetEvaluator eval(model, task.dataset);
    const EstimatorComparison r = compare_estimators(eval, cc);
    for (std::size_t k = 0; k < r.seeds.size(); ++k)
      std::printf("seed %llu  naive %.6f   low-variance %.6f\n",
                  static_cast<unsigned long long>(r.seeds[k]), r.final_naive[k],
                  r.final_low_variance[k]);
    std::printf("low-variance wins %d/%zu\n", r.low_variance_wins, r.seeds.size());
    std::printf("gradient variance  init: naive %.4g  low-variance %.4g\n",
                r.variance_naive_init, r.variance_low_variance_init);
    std::printf("gradient variance  mid:  naive %.4g  low-variance %.4g\n",
                r.variance_naive_mid, r.variance_low_variance_mid);
    return 0;
  }

  if (rep->parsed()) {
    for (const std::string& f : write_report(rep_dir)) std::printf("wrote %s\n", f.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
