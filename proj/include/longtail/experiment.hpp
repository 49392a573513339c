#pragma once

#include "longtail/trainer.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace longtail {

// Everything one training experiment depends on, file- and flag-addressable.
struct ExperimentConfig {
  LongTailSpec task;        // classes, n1, beta, generative seed
  Scalar noise = 0.3;       // per-pixel sample noise of the synthetic task
  int test_per_class = 20;  // balanced evaluation draw
  TrainConfig train;        // train.seed is replaced by each entry of seeds
  std::vector<uint64_t> seeds{5};
  std::string out = "runs/default";
  std::string cache;  // foundation cache root; defaults to <out>/cache

  void validate() const;
  std::string cache_dir() const;
};

// Resets flags then switches off each named component (sg, init, cf, fit).
void apply_ablate_names(AblationFlags& flags,
                        const std::vector<std::string>& names);

// Flat key/value form mirroring the CLI flags; keys sort canonically.
nlohmann::json to_flat_json(const ExperimentConfig& cfg);
// Overlays the known keys onto base; unknown keys are usage errors.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  ExperimentConfig base = {});
// Hash of the semantic fields (task + training + seeds; not out/cache).
uint64_t config_hash(const ExperimentConfig& cfg);

// Builds the foundation bundle once per distinct task and reuses it from a
// content-addressed directory afterwards.
FoundationBundle cached_foundation(const ExperimentConfig& cfg);

struct SeedRun {
  uint64_t seed = 0;
  std::vector<Metrics> history;
  Metrics final_test;
};

struct Aggregate {
  Scalar median = 0, min = 0, max = 0;  // over per-seed final test acc_all
};

struct RunRecord {
  uint64_t config_hash = 0;
  std::vector<SeedRun> per_seed;
  Aggregate acc_all;
};

Scalar median_of(std::vector<Scalar> v);
Aggregate aggregate_over(const std::vector<SeedRun>& per_seed);

// Trains every seed and writes <out>/metrics.csv (one header, per-seed blocks
// in seed order) plus <out>/summary.json.
RunRecord run(const ExperimentConfig& cfg);

// The five ablation rows: none; +sg; +sg+init; +sg+init+cf; all four.
std::vector<AblationFlags> ablation_ladder();

struct AblationRow {
  AblationFlags flags;
  RunRecord record;
};

// Runs the ladder per seed and writes <out>/ablation.csv (test-split rows,
// flag and seed columns) plus <out>/summary.json.
std::vector<AblationRow> run_ablation(const ExperimentConfig& base);

struct AblationCsvRow {
  AblationFlags flags;
  uint64_t seed = 0;
  Metrics metrics;
};

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::vector<AblationCsvRow> parse_ablation_csv(const std::string& text);

struct SweepPoint {
  std::string param;
  Scalar value = 0;
  uint64_t seed = 0;
  Metrics final_test;
};

// param is one of alpha, mu, gamma, lambda1, lambda2, lambda3.
void apply_sweep_param(TrainConfig& tc, const std::string& param, Scalar value);

// Reruns the experiment at each value and writes <out>/sweep.csv.
std::vector<SweepPoint> run_sweep(const ExperimentConfig& base,
                                  const std::string& param,
                                  const std::vector<Scalar>& values);

std::string sweep_csv(const std::vector<SweepPoint>& points);

// Entry point behind the command-line tool; returns the process exit code
// (0 ok, 1 usage error, 2 training abort).
int cli_main(int argc, const char* const* argv);

}  // namespace longtail
