#include "longtail/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace longtail {

void check_finite(const Mat& x, const char* what) {
  if (!x.allFinite())
    throw std::runtime_error(std::string(what) + ": non-finite input");
}

Mat softmax_rows(const Mat& x) {
  check_finite(x, "softmax_rows");
  Mat y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp();
  Vec sums = y.rowwise().sum();
  return y.array().colwise() / sums.array();
}

Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  Vec dot = (y.array() * dy.array()).rowwise().sum();
  return y.array() * (dy.colwise() - dot).array();
}

Mat layer_norm(const Mat& x, const RowVec& gain, const RowVec& bias,
               Scalar eps, LayerNormCache* cache) {
  check_finite(x, "layer_norm");
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.array().square().rowwise().mean();
  Vec inv_std = (var.array() + eps).sqrt().inverse();
  Mat xhat = centered.array().colwise() * inv_std.array();
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  Mat out = xhat.array().rowwise() * gain.array();
  out.rowwise() += bias;
  return out;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache,
                        const RowVec& gain, RowVec* dgain, RowVec* dbias) {
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.array();
  Vec m1 = dxhat.rowwise().mean();
  Vec m2 = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Mat dx = (dxhat.colwise() - m1).array() -
           (cache.xhat.array().colwise() * m2.array());
  return dx.array().colwise() * cache.inv_std.array();
}

Mat l2_normalize_rows(const Mat& x, Scalar eps) {
  check_finite(x, "l2_normalize_rows");
  Vec norms = x.rowwise().norm();
  return x.array().colwise() / (norms.array() + eps);
}

Mat l2_normalize_rows_strict(const Mat& x) {
  check_finite(x, "l2_normalize_rows_strict");
  Vec norms = x.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i)
    if (norms(i) == 0.0)
      throw std::invalid_argument("l2_normalize_rows_strict: zero-norm row " +
                                  std::to_string(i));
  return x.array().colwise() / norms.array();
}

Mat l2_normalize_rows_backward(const Mat& x, const Mat& dy, Scalar eps) {
  Mat dx(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar n0 = x.row(i).norm();
    const Scalar n = n0 + eps;
    if (n0 == 0.0) {
      dx.row(i) = dy.row(i) / eps;
      continue;
    }
    const Scalar dot = dy.row(i).dot(x.row(i));
    dx.row(i) = dy.row(i) / n - x.row(i) * (dot / (n0 * n * n));
  }
  return dx;
}

namespace {
constexpr Scalar kInvSqrt2 = 0.7071067811865475244;
constexpr Scalar kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Mat gelu(const Mat& x) {
  return x.unaryExpr(
      [](Scalar v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Mat gelu_grad(const Mat& x) {
  return x.unaryExpr([](Scalar v) {
    const Scalar cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    return cdf + v * std::exp(-0.5 * v * v) * kInvSqrt2Pi;
  });
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

}  // namespace longtail
