#pragma once

#include "longtail/trainer.hpp"

#include <array>
#include <string>
#include <vector>

namespace longtail {

// --- attention-score decomposition ------------------------------------------

// Eight-term expansion of (Q K^T) V for one head when the input columns are
// split into halves f = [f1, f2] and the projections are split into matching
// row blocks. terms[i] is indexed by bits (q, k, v), each 0 for the f1 half
// and 1 for the f2 half; their sum equals the direct product.
Scalar decomposition_gap(const Mat& f, const Mat& wq, const Mat& wk,
                         const Mat& wv, std::array<Mat, 8>* terms = nullptr);

// Randomized instance of the identity; returns the max abs discrepancy.
Scalar msa_decomposition_check(int d, int d_k, int b, uint64_t seed);

// --- marginal-ratio approximation study -------------------------------------

struct GaussianClassModel {
  std::vector<Vec> means;
  std::vector<Mat> covariances;  // symmetric positive definite
  Vec p_source;                  // train priors, sum 1
  Vec p_target;                  // test priors, sum 1
  void validate() const;
};

// Deterministic well-separated mixture whose source priors follow the counts.
GaussianClassModel make_gaussian_model(int classes, int dim, const Vec& counts,
                                       uint64_t seed);

struct PearsonResult {
  Scalar r = 0;
  Scalar p = 1;             // two-sided
  bool degenerate = false;  // fewer than 3 points or a constant series
};

PearsonResult pearson_correlation(const Vec& x, const Vec& y);

// Regularized incomplete beta I_x(a, b), the tail integral behind the
// two-sided p-value of a t statistic.
Scalar regularized_incomplete_beta(Scalar a, Scalar b, Scalar x);

struct RatioStudyResult {
  Vec ratios;  // per-class mean of the source/target marginal ratio
  Scalar r = 0;
  Scalar p = 1;
  bool degenerate = false;
  std::vector<Scalar> mu_grid, gamma_grid;
  Mat fit_rms;  // mu_grid.size() x gamma_grid.size()
  Scalar best_mu = 0, best_gamma = 0;
};

// Draws per-class samples, evaluates both marginals analytically from the
// mixture, and correlates the per-class mean ratios with the class sizes.
RatioStudyResult marginal_ratio_study(const GaussianClassModel& model,
                                      const Vec& counts,
                                      const std::vector<Scalar>& gamma_grid,
                                      const std::vector<Scalar>& mu_grid,
                                      int samples_per_class, uint64_t seed);

void save_ratio_study(const std::string& path, const RatioStudyResult& r);

// --- attention archives ------------------------------------------------------

// Per sample and per encoder variant, every attention map plus its class-token
// row. maps holds depth*heads matrices in (block, head) order.
struct AttentionEntry {
  int sample = 0;
  std::string variant;    // "tuned" or "zeroshot"
  std::vector<Mat> maps;  // tokens x tokens each
  Mat cls_rows;           // (depth*heads) x tokens
};

// Writes dir/index.json plus one binary file per (sample, variant).
void export_attention(const SageModel& model, const FoundationBundle& bundle,
                      const std::vector<Mat>& samples, const std::string& dir);
std::vector<AttentionEntry> load_attention(const std::string& dir);

// --- parameter accounting ----------------------------------------------------

struct ParameterTable {
  long bitfit = 0;       // 11d
  long vpt = 0;          // pd
  long adapter = 0;      // (2r+3)d + r
  long lora = 0;         // 4rd
  long adaptformer = 0;  // (2r+3)d + r + 1
  long sg = 0;           // (5r+d+4)d + 3r + 2
};

// Per-block learnable counts for the six fine-tuning modules; the adaptformer
// and sg entries match the allocation counts of the corresponding modules.
ParameterTable parameter_table(int d, int r, int heads, int prompts);

}  // namespace longtail
