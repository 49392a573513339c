#pragma once

#include "longtail/heads.hpp"
#include "longtail/types.hpp"

#include <vector>

namespace longtail {

struct ClassFrequencies {
  Vec counts;        // n_i > 0
  Scalar total = 0;  // sum of counts
  Scalar n_min = 0;
  Scalar beta = 1;   // max count / min count
};

ClassFrequencies make_frequencies(const Vec& counts);

struct LossConfig {
  Scalar mu = 0.5;
  Scalar gamma = 0.05;
  Scalar lambda1 = 0.015;
  Scalar lambda2 = 0.015;
  Scalar lambda3 = 0.4;
};

// Frequency-weighted softmax losses. All reductions are batch means; the
// per-class offsets enter in log space with max subtraction. dz, when
// requested, is the gradient of the mean loss.

Scalar la_loss(const Mat& logits, const std::vector<int>& labels,
               const ClassFrequencies& freq, Mat* dz = nullptr);

// Lambda_i = mu * n_i^gamma * S_N / (C * n_min)
Vec compensation_factors(const ClassFrequencies& freq, Scalar mu, Scalar gamma);

Scalar cf_loss(const Mat& logits, const std::vector<int>& labels,
               const ClassFrequencies& freq, Scalar mu, Scalar gamma,
               Mat* dz = nullptr);

// z_i - log P_s(i) + log P_t(i); the adjustment is formed first so equal
// priors leave the logits bit-identical.
Mat post_compensate(const Mat& logits, const Vec& p_source, const Vec& p_target);

// Theta(i) = (P_s(i)/P_t(i)) * sum_j (P_t(j)/P_s(j)) e^{z_j} / sum_j e^{z_j}
Mat theta_diagnostic(const Mat& logits, const Vec& p_source, const Vec& p_target);

// Upsilon(z) = (1/C) sum_j (S_N/n_j) e^{z_j} / sum_j e^{z_j}, one per row.
Vec upsilon_value(const Mat& logits, const ClassFrequencies& freq);
// Tight upper bound S_N / (C * n_min).
Scalar upsilon_bound(const ClassFrequencies& freq);

struct CompositeGrads {
  Mat dz, dz_v, dz_t;
  Scalar ds1 = 0, ds2 = 0;
};

// cf(z) + l1*cf(z_v) + l2*cf(z_t) + l3*cf(z + s1 z_v + s2 z_t)
Scalar composite_loss(const Mat& z, const Mat& z_v, const Mat& z_t,
                      const FITState& fit, const std::vector<int>& labels,
                      const ClassFrequencies& freq, const LossConfig& cfg,
                      CompositeGrads* grads = nullptr);

}  // namespace longtail
