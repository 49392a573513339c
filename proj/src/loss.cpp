#include "longtail/loss.hpp"

#include "longtail/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace longtail {

ClassFrequencies make_frequencies(const Vec& counts) {
  if (counts.size() == 0)
    throw std::invalid_argument("make_frequencies: empty counts");
  for (Index i = 0; i < counts.size(); ++i)
    if (!(counts(i) > 0.0))
      throw std::invalid_argument("make_frequencies: count " +
                                  std::to_string(i) + " not positive");
  ClassFrequencies f;
  f.counts = counts;
  f.total = counts.sum();
  f.n_min = counts.minCoeff();
  f.beta = counts.maxCoeff() / f.n_min;
  return f;
}

namespace {

void check_labels(const Mat& logits, const std::vector<int>& labels) {
  if (Index(labels.size()) != logits.rows())
    throw std::invalid_argument("loss: batch size mismatch");
  for (int y : labels)
    if (y < 0 || y >= logits.cols())
      throw std::invalid_argument("loss: label " + std::to_string(y) +
                                  " out of range");
}

// Mean of -log softmax(z + offsets)[y] over the batch, max-subtracted.
Scalar offset_softmax_loss(const Mat& logits, const std::vector<int>& labels,
                           const RowVec& log_offsets, Mat* dz) {
  check_finite(logits, "loss");
  check_labels(logits, labels);
  Mat shifted = logits.rowwise() + log_offsets;
  Mat probs = softmax_rows(shifted);
  Vec mx = shifted.rowwise().maxCoeff();
  const Index b = logits.rows();
  Scalar loss = 0;
  for (Index i = 0; i < b; ++i) {
    const Scalar lse =
        mx(i) + std::log((shifted.row(i).array() - mx(i)).exp().sum());
    loss += lse - shifted(i, labels[i]);
  }
  loss /= Scalar(b);
  if (dz) {
    *dz = probs / Scalar(b);
    for (Index i = 0; i < b; ++i) (*dz)(i, labels[i]) -= 1.0 / Scalar(b);
  }
  return loss;
}

RowVec log_counts(const ClassFrequencies& freq) {
  return freq.counts.array().log().matrix().transpose();
}

}  // namespace

Scalar la_loss(const Mat& logits, const std::vector<int>& labels,
               const ClassFrequencies& freq, Mat* dz) {
  if (freq.counts.size() != logits.cols())
    throw std::invalid_argument("la_loss: class count mismatch");
  return offset_softmax_loss(logits, labels, log_counts(freq), dz);
}

Vec compensation_factors(const ClassFrequencies& freq, Scalar mu,
                         Scalar gamma) {
  if (!(mu > 0.0))
    throw std::invalid_argument("compensation_factors: mu must be positive");
  const Scalar c = Scalar(freq.counts.size());
  const Scalar base = mu * freq.total / (c * freq.n_min);
  return base * freq.counts.array().pow(gamma);
}

Scalar cf_loss(const Mat& logits, const std::vector<int>& labels,
               const ClassFrequencies& freq, Scalar mu, Scalar gamma,
               Mat* dz) {
  if (freq.counts.size() != logits.cols())
    throw std::invalid_argument("cf_loss: class count mismatch");
  Vec lambda = compensation_factors(freq, mu, gamma);
  RowVec offsets =
      log_counts(freq) + lambda.array().log().matrix().transpose();
  return offset_softmax_loss(logits, labels, offsets, dz);
}

Mat post_compensate(const Mat& logits, const Vec& p_source,
                    const Vec& p_target) {
  if (p_source.size() != logits.cols() || p_target.size() != logits.cols())
    throw std::invalid_argument("post_compensate: prior size mismatch");
  for (Index i = 0; i < p_source.size(); ++i)
    if (!(p_source(i) > 0.0) || !(p_target(i) > 0.0))
      throw std::invalid_argument("post_compensate: priors must be positive");
  RowVec adjust = (p_target.array().log() - p_source.array().log())
                      .matrix()
                      .transpose();
  return logits.rowwise() + adjust;
}

Mat theta_diagnostic(const Mat& logits, const Vec& p_source,
                     const Vec& p_target) {
  if (p_source.size() != logits.cols() || p_target.size() != logits.cols())
    throw std::invalid_argument("theta_diagnostic: prior size mismatch");
  for (Index i = 0; i < p_source.size(); ++i)
    if (!(p_source(i) > 0.0) || !(p_target(i) > 0.0))
      throw std::invalid_argument("theta_diagnostic: priors must be positive");
  RowVec ratio =
      (p_source.array() / p_target.array()).matrix().transpose();
  RowVec inv_ratio =
      (p_target.array() / p_source.array()).matrix().transpose();
  Mat probs = softmax_rows(logits);
  Vec bracket = probs * inv_ratio.transpose();
  Mat theta = bracket * ratio;  // outer product, rows x classes
  return theta;
}

Vec upsilon_value(const Mat& logits, const ClassFrequencies& freq) {
  if (freq.counts.size() != logits.cols())
    throw std::invalid_argument("upsilon_value: class count mismatch");
  const Scalar c = Scalar(freq.counts.size());
  RowVec w = (freq.total / freq.counts.array()).matrix().transpose();
  Mat probs = softmax_rows(logits);
  return (probs * w.transpose()) / c;
}

Scalar upsilon_bound(const ClassFrequencies& freq) {
  return freq.total / (Scalar(freq.counts.size()) * freq.n_min);
}

Scalar composite_loss(const Mat& z, const Mat& z_v, const Mat& z_t,
                      const FITState& fit, const std::vector<int>& labels,
                      const ClassFrequencies& freq, const LossConfig& cfg,
                      CompositeGrads* grads) {
  Mat zhat = fit_logits(z, z_v, z_t, fit);
  Mat g0, g1, g2, g3;
  Mat* p0 = grads ? &g0 : nullptr;
  Mat* p1 = grads ? &g1 : nullptr;
  Mat* p2 = grads ? &g2 : nullptr;
  Mat* p3 = grads ? &g3 : nullptr;
  const Scalar l0 = cf_loss(z, labels, freq, cfg.mu, cfg.gamma, p0);
  const Scalar l1 = cf_loss(z_v, labels, freq, cfg.mu, cfg.gamma, p1);
  const Scalar l2 = cf_loss(z_t, labels, freq, cfg.mu, cfg.gamma, p2);
  const Scalar l3 = cf_loss(zhat, labels, freq, cfg.mu, cfg.gamma, p3);
  if (grads) {
    grads->dz = g0 + cfg.lambda3 * g3;
    grads->dz_v = cfg.lambda1 * g1 + cfg.lambda3 * fit.s1.scalar() * g3;
    grads->dz_t = cfg.lambda2 * g2 + cfg.lambda3 * fit.s2.scalar() * g3;
    grads->ds1 = cfg.lambda3 * (g3.array() * z_v.array()).sum();
    grads->ds2 = cfg.lambda3 * (g3.array() * z_t.array()).sum();
  }
  return l0 + cfg.lambda1 * l1 + cfg.lambda2 * l2 + cfg.lambda3 * l3;
}

}  // namespace longtail
