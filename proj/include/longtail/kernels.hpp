#pragma once

#include "longtail/types.hpp"

namespace longtail {

inline constexpr Scalar kLayerNormEps = 1e-5;
inline constexpr Scalar kNormalizeEps = 1e-12;

// Throws std::invalid_argument if x holds a NaN or Inf.
void check_finite(const Mat& x, const char* what);

// Row-wise softmax with max subtraction.
Mat softmax_rows(const Mat& x);
// dx from y = softmax_rows(x) and upstream dy.
Mat softmax_rows_backward(const Mat& y, const Mat& dy);

struct LayerNormCache {
  Mat xhat;     // normalized rows before gain/bias
  Vec inv_std;  // per-row 1/sqrt(var + eps), population variance
};

// Row-wise layer norm, population variance, eps inside the sqrt.
Mat layer_norm(const Mat& x, const RowVec& gain, const RowVec& bias,
               Scalar eps = kLayerNormEps, LayerNormCache* cache = nullptr);
// dx; accumulates parameter gradients into dgain/dbias when non-null.
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache,
                        const RowVec& gain, RowVec* dgain = nullptr,
                        RowVec* dbias = nullptr);

// Rows scaled to unit norm; eps added to the norm so zero rows stay zero.
Mat l2_normalize_rows(const Mat& x, Scalar eps = kNormalizeEps);
// Same map but a zero row is an error. Meant for test-side checks.
Mat l2_normalize_rows_strict(const Mat& x);
Mat l2_normalize_rows_backward(const Mat& x, const Mat& dy,
                               Scalar eps = kNormalizeEps);

// Exact erf-based forms so the analytic derivative matches the forward.
Mat gelu(const Mat& x);
Mat gelu_grad(const Mat& x);
Mat relu(const Mat& x);

}  // namespace longtail
