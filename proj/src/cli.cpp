#include "longtail/analysis.hpp"
#include "longtail/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace longtail {

namespace {

struct CommonOpts {
  std::string config_path;
  int classes = 0, n1 = 0, epochs = 0, batch = 0, test_per_class = 0;
  uint64_t task_seed = 0;
  Scalar beta = 0, lr = 0, momentum = 0, alpha = 0, scale = 0;
  Scalar mu = 0, gamma = 0, lambda1 = 0, lambda2 = 0, lambda3 = 0;
  Scalar noise = 0, group_hi = 0, group_lo = 0;
  std::vector<uint64_t> seeds;
  std::vector<std::string> ablate;
  std::string out, cache;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "flat json config file");
  sub->add_option("--classes", o.classes, "number of classes");
  sub->add_option("--n1", o.n1, "largest class count");
  sub->add_option("--beta", o.beta, "imbalance ratio n1/nC");
  sub->add_option("--task-seed", o.task_seed, "generative seed of the task");
  sub->add_option("--noise", o.noise, "sample noise level");
  sub->add_option("--test-per-class", o.test_per_class,
                  "balanced evaluation draw");
  sub->add_option("--epochs", o.epochs, "training epochs");
  sub->add_option("--batch-size", o.batch, "minibatch size");
  sub->add_option("--lr", o.lr, "initial learning rate");
  sub->add_option("--momentum", o.momentum, "sgd momentum");
  sub->add_option("--alpha", o.alpha, "adapter mixing weight");
  sub->add_option("--scale", o.scale, "cosine logit scale");
  sub->add_option("--group-hi", o.group_hi, "head group cutoff");
  sub->add_option("--group-lo", o.group_lo, "tail group cutoff");
  sub->add_option("--mu", o.mu, "compensation strength");
  sub->add_option("--gamma", o.gamma, "compensation exponent");
  sub->add_option("--lambda1", o.lambda1, "frozen-feature logit weight");
  sub->add_option("--lambda2", o.lambda2, "text-classifier logit weight");
  sub->add_option("--lambda3", o.lambda3, "recomposed logit weight");
  sub->add_option("--ablate", o.ablate,
                  "components to switch off: sg,init,cf,fit (none for all on)")
      ->delimiter(',');
  sub->add_option("--seed", o.seeds, "training seed list")->delimiter(',');
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--cache", o.cache, "foundation cache directory");
}

ExperimentConfig build_config(const CLI::App* sub, const CommonOpts& o) {
  ExperimentConfig cfg;
  if (sub->count("--config")) {
    std::ifstream is(o.config_path);
    if (!is)
      throw std::invalid_argument("config: cannot read " + o.config_path);
    cfg = config_from_json(nlohmann::json::parse(is), cfg);
  }
  if (sub->count("--classes")) cfg.task.classes = o.classes;
  if (sub->count("--n1")) cfg.task.n1 = o.n1;
  if (sub->count("--beta")) cfg.task.beta = o.beta;
  if (sub->count("--task-seed")) cfg.task.seed = o.task_seed;
  if (sub->count("--noise")) cfg.noise = o.noise;
  if (sub->count("--test-per-class")) cfg.test_per_class = o.test_per_class;
  if (sub->count("--epochs")) cfg.train.epochs = o.epochs;
  if (sub->count("--batch-size")) cfg.train.batch_size = o.batch;
  if (sub->count("--lr")) cfg.train.lr0 = o.lr;
  if (sub->count("--momentum")) cfg.train.momentum = o.momentum;
  if (sub->count("--alpha")) cfg.train.alpha = o.alpha;
  if (sub->count("--scale")) cfg.train.scale = o.scale;
  if (sub->count("--group-hi")) cfg.train.group_hi = o.group_hi;
  if (sub->count("--group-lo")) cfg.train.group_lo = o.group_lo;
  if (sub->count("--mu")) cfg.train.loss.mu = o.mu;
  if (sub->count("--gamma")) cfg.train.loss.gamma = o.gamma;
  if (sub->count("--lambda1")) cfg.train.loss.lambda1 = o.lambda1;
  if (sub->count("--lambda2")) cfg.train.loss.lambda2 = o.lambda2;
  if (sub->count("--lambda3")) cfg.train.loss.lambda3 = o.lambda3;
  if (sub->count("--ablate")) apply_ablate_names(cfg.train.flags, o.ablate);
  if (sub->count("--seed")) cfg.seeds = o.seeds;
  if (sub->count("--out")) cfg.out = o.out;
  if (sub->count("--cache")) cfg.cache = o.cache;
  cfg.validate();
  return cfg;
}

void print_aggregate(const char* label, const Aggregate& a, size_t seeds) {
  std::printf("%s acc_all median %.4f (min %.4f, max %.4f) over %zu seed%s\n",
              label, a.median, a.min, a.max, seeds, seeds == 1 ? "" : "s");
}

int do_run(const CLI::App* sub, const CommonOpts& o) {
  const ExperimentConfig cfg = build_config(sub, o);
  const RunRecord rec = run(cfg);
  print_aggregate("final", rec.acc_all, rec.per_seed.size());
  std::printf("wrote %s/metrics.csv and %s/summary.json\n", cfg.out.c_str(),
              cfg.out.c_str());
  return 0;
}

int do_ablation(const CLI::App* sub, const CommonOpts& o) {
  const ExperimentConfig cfg = build_config(sub, o);
  const std::vector<AblationRow> rows = run_ablation(cfg);
  for (const AblationRow& row : rows) {
    char label[32];
    std::snprintf(label, sizeof(label), "sg=%d init=%d cf=%d fit=%d",
                  row.flags.sg, row.flags.init, row.flags.cf, row.flags.fit);
    print_aggregate(label, row.record.acc_all, row.record.per_seed.size());
  }
  std::printf("wrote %s/ablation.csv and %s/summary.json\n", cfg.out.c_str(),
              cfg.out.c_str());
  return 0;
}

int do_sweep(const CLI::App* sub, const CommonOpts& o, const std::string& param,
             const std::vector<Scalar>& values) {
  const ExperimentConfig cfg = build_config(sub, o);
  const std::vector<SweepPoint> points = run_sweep(cfg, param, values);
  std::printf("swept %s over %zu value%s x %zu seed%s; wrote %s/sweep.csv\n",
              param.c_str(), values.size(), values.size() == 1 ? "" : "s",
              cfg.seeds.size(), cfg.seeds.size() == 1 ? "" : "s",
              cfg.out.c_str());
  (void)points;
  return 0;
}

int do_attention(const CLI::App* sub, const CommonOpts& o, int samples) {
  const ExperimentConfig cfg = build_config(sub, o);
  if (samples < 1)
    throw std::invalid_argument("attention: samples must be >= 1");
  const SyntheticTaskSpec spec =
      make_task(cfg.task, 8, 4, cfg.noise, cfg.test_per_class);
  const TaskData data = generate(spec);
  const FoundationBundle bundle = cached_foundation(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seeds.front();
  const TrainResult result = train(tc, bundle, data);
  const size_t take =
      std::min(static_cast<size_t>(samples), data.test.images.size());
  const std::vector<Mat> picks(data.test.images.begin(),
                               data.test.images.begin() +
                                   static_cast<long>(take));
  const std::string dir = cfg.out + "/attention";
  export_attention(result.model, bundle, picks, dir);
  std::printf("exported %zu sample%s to %s\n", take, take == 1 ? "" : "s",
              dir.c_str());
  return 0;
}

struct StudyOpts {
  int classes = 10, n1 = 500, dim = 4, samples = 200;
  Scalar beta = 100.0;
  uint64_t seed = 13;
  std::vector<Scalar> mu_grid{0.25, 0.5, 0.75, 1.0};
  std::vector<Scalar> gamma_grid{0.01, 0.02, 0.05, 0.1, 0.2};
  std::string out = "runs/study";
};

int do_study(const StudyOpts& o) {
  LongTailSpec lt;
  lt.classes = o.classes;
  lt.n1 = o.n1;
  lt.beta = o.beta;
  const Vec counts = longtail_counts(lt);
  const GaussianClassModel model =
      make_gaussian_model(o.classes, o.dim, counts, o.seed);
  const RatioStudyResult res = marginal_ratio_study(
      model, counts, o.gamma_grid, o.mu_grid, o.samples, o.seed);
  std::filesystem::create_directories(o.out);
  save_ratio_study(o.out + "/study.json", res);
  if (res.degenerate)
    std::printf("degenerate study (constant series)\n");
  else
    std::printf("pearson r %.4f (p %.3g); best mu %.3g gamma %.3g\n", res.r,
                res.p, res.best_mu, res.best_gamma);
  std::printf("wrote %s/study.json\n", o.out.c_str());
  return 0;
}

struct ParamsOpts {
  int width = 16, bottleneck = 4, heads = 2, prompts = 4, depth = 2;
};

int do_params(const ParamsOpts& o) {
  const ParameterTable t =
      parameter_table(o.width, o.bottleneck, o.heads, o.prompts);
  std::printf("module        per-block  x%d blocks\n", o.depth);
  const std::pair<const char*, long> rows[] = {
      {"bitfit", t.bitfit},           {"vpt", t.vpt},
      {"adapter", t.adapter},         {"lora", t.lora},
      {"adaptformer", t.adaptformer}, {"sg-adapter", t.sg}};
  for (const auto& [name, count] : rows)
    std::printf("%-13s %9ld  %9ld\n", name, count,
                count * static_cast<long>(o.depth));
  return 0;
}

struct DatasetOpts {
  int classes = 10, n1 = 500, test_per_class = 20;
  Scalar beta = 100.0, noise = 0.3;
  uint64_t task_seed = 1;
  std::string out = "runs/dataset";
};

int do_dataset(const DatasetOpts& o) {
  LongTailSpec lt;
  lt.classes = o.classes;
  lt.n1 = o.n1;
  lt.beta = o.beta;
  lt.seed = o.task_seed;
  const SyntheticTaskSpec spec =
      make_task(lt, 8, 4, o.noise, o.test_per_class);
  const TaskData data = generate(spec);
  save_dataset(o.out, spec, data);
  std::printf("wrote %zu train + %zu test samples to %s\n",
              data.train.images.size(), data.test.images.size(),
              o.out.c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"semantic-guided long-tailed fine-tuning experiments"};
  app.require_subcommand(1);

  CommonOpts run_opts, abl_opts, sweep_opts, attn_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "train and evaluate");
  add_common(run_cmd, run_opts);
  CLI::App* abl_cmd =
      app.add_subcommand("ablation", "five-row component ladder");
  add_common(abl_cmd, abl_opts);

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "sensitivity grid over one hyperparameter");
  add_common(sweep_cmd, sweep_opts);
  std::string sweep_param;
  std::vector<Scalar> sweep_values;
  sweep_cmd->add_option("--param", sweep_param,
                        "alpha, mu, gamma, lambda1, lambda2 or lambda3")
      ->required();
  sweep_cmd->add_option("--values", sweep_values, "grid values")
      ->required()
      ->delimiter(',');

  CLI::App* attn_cmd =
      app.add_subcommand("attention", "export attention archives");
  add_common(attn_cmd, attn_opts);
  int attn_samples = 4;
  attn_cmd->add_option("--samples", attn_samples, "test samples to export");

  StudyOpts study_opts;
  CLI::App* study_cmd =
      app.add_subcommand("study", "gaussian marginal-ratio study");
  study_cmd->add_option("--classes", study_opts.classes, "number of classes");
  study_cmd->add_option("--n1", study_opts.n1, "largest class count");
  study_cmd->add_option("--beta", study_opts.beta, "imbalance ratio");
  study_cmd->add_option("--dim", study_opts.dim, "feature dimension");
  study_cmd->add_option("--samples", study_opts.samples, "draws per class");
  study_cmd->add_option("--seed", study_opts.seed, "model and draw seed");
  study_cmd->add_option("--mu-grid", study_opts.mu_grid, "mu grid")
      ->delimiter(',');
  study_cmd->add_option("--gamma-grid", study_opts.gamma_grid, "gamma grid")
      ->delimiter(',');
  study_cmd->add_option("--out", study_opts.out, "output directory");

  ParamsOpts params_opts;
  CLI::App* params_cmd =
      app.add_subcommand("params", "per-block parameter counts");
  params_cmd->add_option("--width", params_opts.width, "token width d");
  params_cmd->add_option("--bottleneck", params_opts.bottleneck,
                         "adapter bottleneck r");
  params_cmd->add_option("--heads", params_opts.heads, "attention heads");
  params_cmd->add_option("--prompts", params_opts.prompts, "prompt tokens");
  params_cmd->add_option("--depth", params_opts.depth, "encoder blocks");

  DatasetOpts ds_opts;
  CLI::App* ds_cmd =
      app.add_subcommand("dataset", "generate and save a synthetic task");
  ds_cmd->add_option("--classes", ds_opts.classes, "number of classes");
  ds_cmd->add_option("--n1", ds_opts.n1, "largest class count");
  ds_cmd->add_option("--beta", ds_opts.beta, "imbalance ratio");
  ds_cmd->add_option("--task-seed", ds_opts.task_seed, "generative seed");
  ds_cmd->add_option("--noise", ds_opts.noise, "sample noise level");
  ds_cmd->add_option("--test-per-class", ds_opts.test_per_class,
                     "balanced evaluation draw");
  ds_cmd->add_option("--out", ds_opts.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(run_cmd)) return do_run(run_cmd, run_opts);
    if (app.got_subcommand(abl_cmd)) return do_ablation(abl_cmd, abl_opts);
    if (app.got_subcommand(sweep_cmd))
      return do_sweep(sweep_cmd, sweep_opts, sweep_param, sweep_values);
    if (app.got_subcommand(attn_cmd))
      return do_attention(attn_cmd, attn_opts, attn_samples);
    if (app.got_subcommand(study_cmd)) return do_study(study_opts);
    if (app.got_subcommand(params_cmd)) return do_params(params_opts);
    if (app.got_subcommand(ds_cmd)) return do_dataset(ds_opts);
    std::fprintf(stderr, "no subcommand selected\n");
    return 1;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace longtail
