#include "longtail/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace longtail {

Scalar cosine_lr(long step, long total, Scalar lr0) {
  if (total <= 0 || step < 0 || step > total)
    throw std::invalid_argument("cosine_lr: step outside [0, total]");
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi_v<Scalar> * Scalar(step) /
                         Scalar(total)));
}

SgdMomentum::SgdMomentum(ParamRefs params, Scalar momentum)
    : params_(std::move(params)), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const Param* p : params_)
    velocity_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
}

void SgdMomentum::step(Scalar lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->grad)
      throw std::logic_error("SgdMomentum: frozen parameter " + p->name);
    velocity_[i] = momentum_ * velocity_[i] + *p->grad;
    p->value -= lr * velocity_[i];
  }
}

}  // namespace longtail
