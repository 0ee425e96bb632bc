#include "morphfit/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>

#include <CLI11.hpp>

#include "morphfit/config.hpp"
#include "morphfit/fdcheck.hpp"
#include "morphfit/io_util.hpp"
#include "morphfit/train.hpp"

namespace morphfit {

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_out = true) {
  cmd->add_option("--config", opts.config_path, "JSON config file (defaults used when omitted)");
  if (needs_out) cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "override the top-level config seed");
}

ProjectConfig resolve_config(const CommonOpts& opts) {
  ProjectConfig config =
      opts.config_path.empty() ? default_config() : load_config_file(opts.config_path);
  if (opts.seed) config.apply_seed(*opts.seed);
  return config;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

int cmd_gen_model(const CommonOpts& opts) {
  const ProjectConfig config = resolve_config(opts);
  const MorphableModel model = synthesize_model(config.model);
  const std::string path = join(opts.out_dir, "model.mm3d");
  save_model(model, path, config.model);
  log_info("wrote " + path + " (N=" + std::to_string(model.n_vertices) + ")");
  return 0;
}

int cmd_gen_data(const CommonOpts& opts, const std::string& model_path) {
  const ProjectConfig config = resolve_config(opts);
  const MorphableModel model = load_model(model_path);
  const GeneratedSplits splits = generate_splits(model, config.data);
  write_dataset(splits.annotated, join(opts.out_dir, "annotated.mfds"));
  write_dataset(splits.wild, join(opts.out_dir, "wild.mfds"));
  write_dataset(splits.eval, join(opts.out_dir, "eval.mfds"));
  log_info("wrote " + std::to_string(splits.annotated.size()) + " annotated, " +
           std::to_string(splits.wild.size()) + " wild, " + std::to_string(splits.eval.size()) +
           " eval records under " + opts.out_dir);
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& model_path, const std::string& data_dir,
              const std::string& stage, const std::string& variant, const std::string& mask,
              const std::string& checkpoint_path) {
  ProjectConfig config = resolve_config(opts);
  if (!variant.empty()) {
    const bool keep_mask = config.training.flags.use_weight_mask;
    config.training.flags = flags_for_variant(variant);
    config.training.flags.use_weight_mask = keep_mask;
  }
  if (!mask.empty()) {
    if (mask != "on" && mask != "off") throw ConfigError("--mask expects on|off");
    config.training.flags.use_weight_mask = (mask == "on");
  }

  const MorphableModel model = load_model(model_path);
  const Dataset annotated = read_dataset(join(data_dir, "annotated.mfds"));
  const Dataset wild = read_dataset(join(data_dir, "wild.mfds"));

  std::optional<Trainer> trainer;
  if (stage == "2") {
    if (checkpoint_path.empty())
      throw ConfigError("--stage 2 requires --checkpoint with a stage-1 file");
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    trainer.emplace(config.training, model, annotated, wild, cp);
  } else {
    trainer.emplace(config.training, model, annotated, wild);
  }

  if (stage == "1" || stage == "both") {
    trainer->train_stage1();
    save_checkpoint(trainer->make_checkpoint(1), join(opts.out_dir, "checkpoint_stage1.mfck"));
    write_stage1_log(trainer->stage1_history(), join(opts.out_dir, "stage1_losses.csv"));
    log_info("stage 1 done (" + std::to_string(trainer->stage1_history().size()) + " logged steps)");
  }
  if (stage == "2" || stage == "both") {
    trainer->train_stage2();
    save_checkpoint(trainer->make_checkpoint(2), join(opts.out_dir, "checkpoint_stage2.mfck"));
    write_stage2_log(trainer->stage2_history(), join(opts.out_dir, "stage2_losses.csv"));
    log_info("stage 2 done (" + std::to_string(trainer->stage2_history().size()) + " logged steps)");
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_path,
             const std::string& checkpoint_path, const std::string& data_path) {
  const ProjectConfig config = resolve_config(opts);
  const MorphableModel model = load_model(model_path);
  const Checkpoint cp = load_checkpoint(checkpoint_path);
  const Dataset eval_set = read_dataset(data_path);
  const EvalReport report = evaluate_checkpoint(cp.stack, model, eval_set, config.eval);
  const std::string path = join(opts.out_dir, "report.csv");
  write_report_csv(report, path);
  for (int m = 0; m < kMetricCount; ++m) {
    const Metric metric = static_cast<Metric>(m);
    if (metric == Metric::nme_reconstruction && !config.eval.with_reconstruction) continue;
    const MetricSummary s = summarize_metric(report, metric);
    std::printf("%s: mean %.4f%s\n", metric_name(metric), s.overall_mean,
                s.discarded_mean ? (" (worst-" + std::to_string(report.options.discard_worst) +
                                    " discarded: " + format_double(*s.discarded_mean) + ")")
                                       .c_str()
                                 : "");
  }
  log_info("wrote " + path);
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& model_path, const std::string& data_dir) {
  const ProjectConfig config = resolve_config(opts);
  const MorphableModel model = load_model(model_path);
  const Dataset annotated = read_dataset(join(data_dir, "annotated.mfds"));
  const Dataset wild = read_dataset(join(data_dir, "wild.mfds"));
  const Dataset eval_set = read_dataset(join(data_dir, "eval.mfds"));

  AblationConfig ab;
  ab.base = config.training;
  ab.seeds = config.ablation_seeds;
  ab.wild_volumes = config.wild_volumes;
  ab.eval = config.eval;
  ab.eval.with_reconstruction = false;

  const AblationResult result = run_ablation_suite(ab, model, annotated, wild, eval_set);
  write_ablation_csv(result, join(opts.out_dir, "ablation.csv"));
  write_ablation_runs_csv(result, join(opts.out_dir, "ablation_runs.csv"));
  log_info("wrote ablation tables under " + opts.out_dir);
  return 0;
}

int cmd_edc_export(const std::string& report_path, const std::string& metric, int discard,
                   const std::string& out_path) {
  const EvalReport report = read_report_csv(report_path);
  std::optional<Metric> which;
  for (int m = 0; m < kMetricCount; ++m)
    if (metric == metric_name(static_cast<Metric>(m))) which = static_cast<Metric>(m);
  if (!which) throw ConfigError("unknown metric '" + metric + "'");
  std::vector<double> values;
  values.reserve(report.records.size());
  for (const EvalRecord& r : report.records) values.push_back(r.metric(*which));
  const EdcCurve curve = edc(std::move(values), discard);
  write_edc_csv(curve, out_path);
  std::printf("%s: %zu kept values, mean %.6f\n", metric.c_str(), curve.values.size(), curve.mean);
  return 0;
}

int cmd_grad_check(std::uint64_t seed, int trials) {
  const auto checks = run_loss_grad_checks(seed, trials);
  bool ok = true;
  for (const LossGradCheck& c : checks) {
    std::printf("%-8s max_rel_err %.3e (trials %d, worst coord %lld: analytic %.6e numeric %.6e)\n",
                c.loss_name.c_str(), c.report.max_rel_err, c.report.trials,
                static_cast<long long>(c.report.worst_index), c.report.worst_analytic,
                c.report.worst_numeric);
    ok = ok && c.report.max_rel_err < 1e-4;
  }
  std::printf("grad-check %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 4;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale 3D face fitting laboratory"};
  app.require_subcommand(0, 1);
  bool explain_config = false;
  app.add_flag("--explain-config", explain_config, "print the full default config JSON and exit");

  CommonOpts gen_model_opts;
  CLI::App* gen_model = app.add_subcommand("gen-model", "synthesize a morphable model");
  add_common(gen_model, gen_model_opts);

  CommonOpts gen_data_opts;
  std::string gd_model;
  CLI::App* gen_data = app.add_subcommand("gen-data", "generate the synthetic datasets");
  add_common(gen_data, gen_data_opts);
  gen_data->add_option("--model", gd_model, "model file")->required();

  CommonOpts train_opts;
  std::string tr_model, tr_data, tr_stage = "both", tr_variant, tr_mask, tr_checkpoint;
  CLI::App* train = app.add_subcommand("train", "run the two-stage training loop");
  add_common(train, train_opts);
  train->add_option("--model", tr_model, "model file")->required();
  train->add_option("--data", tr_data, "directory with annotated.mfds/wild.mfds")->required();
  train->add_option("--stage", tr_stage, "1|2|both")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--variant", tr_variant, "base|cyc|sc|cyc+sc");
  train->add_option("--mask", tr_mask, "on|off");
  train->add_option("--checkpoint", tr_checkpoint, "stage-1 checkpoint (for --stage 2)");

  CommonOpts eval_opts;
  std::string ev_model, ev_checkpoint, ev_data;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on an eval split");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--model", ev_model, "model file")->required();
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev_data, "eval dataset file")->required();

  CommonOpts ablate_opts;
  std::string ab_model, ab_data;
  CLI::App* ablate = app.add_subcommand("ablate", "run the variant/volume ablation suite");
  add_common(ablate, ablate_opts);
  ablate->add_option("--model", ab_model, "model file")->required();
  ablate->add_option("--data", ab_data, "directory with the three dataset files")->required();

  std::string edc_report, edc_metric = "nme_2d_sparse", edc_out = "edc.csv";
  int edc_discard = 20;
  CLI::App* edc_cmd = app.add_subcommand("edc-export", "export an error distribution curve");
  edc_cmd->add_option("--report", edc_report, "report.csv from eval")->required();
  edc_cmd->add_option("--metric", edc_metric, "metric column to export");
  edc_cmd->add_option("--discard", edc_discard, "worst cases to discard");
  edc_cmd->add_option("--out", edc_out, "output CSV path");

  std::uint64_t gc_seed = 7;
  int gc_trials = 100;
  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference check of every loss");
  gc->add_option("--seed", gc_seed, "seed for the checked networks and data");
  gc->add_option("--trials", gc_trials, "trials per loss");

  std::vector<std::string> argv_copy(args);
  try {
    std::vector<const char*> argv;
    argv.push_back("morphfit");
    for (const std::string& a : argv_copy) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (explain_config) {
      std::fputs(config_to_json(default_config()).c_str(), stdout);
      return 0;
    }
    if (gen_model->parsed()) return cmd_gen_model(gen_model_opts);
    if (gen_data->parsed()) return cmd_gen_data(gen_data_opts, gd_model);
    if (train->parsed())
      return cmd_train(train_opts, tr_model, tr_data, tr_stage, tr_variant, tr_mask, tr_checkpoint);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, ev_model, ev_checkpoint, ev_data);
    if (ablate->parsed()) return cmd_ablate(ablate_opts, ab_model, ab_data);
    if (edc_cmd->parsed()) return cmd_edc_export(edc_report, edc_metric, edc_discard, edc_out);
    if (gc->parsed()) return cmd_grad_check(gc_seed, gc_trials);
    std::fputs(app.help().c_str(), stderr);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "data integrity error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace morphfit
