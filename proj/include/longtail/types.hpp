#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace longtail {

using Scalar = double;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

// Named dense array with an optional gradient buffer.
// Frozen parameters carry no gradient storage at all.
struct Param {
  std::string name;
  Mat value;
  std::optional<Mat> grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {}

  bool trainable() const { return grad.has_value(); }
  void enable_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
  void disable_grad() { grad.reset(); }
  void zero_grad() {
    if (grad) grad->setZero();
  }
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad) *grad += g;
  }
  Index size() const { return value.size(); }
  // Scalar parameters are stored as 1x1 arrays.
  Scalar scalar() const { return value(0, 0); }
};

using ParamRefs = std::vector<Param*>;

inline void enable_grads(const ParamRefs& ps) {
  for (Param* p : ps) p->enable_grad();
}

inline void zero_grads(const ParamRefs& ps) {
  for (Param* p : ps) p->zero_grad();
}

inline void disable_grads(const ParamRefs& ps) {
  for (Param* p : ps) p->disable_grad();
}

inline Index total_size(const ParamRefs& ps) {
  Index n = 0;
  for (const Param* p : ps) n += p->size();
  return n;
}

}  // namespace longtail
