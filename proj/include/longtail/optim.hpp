#pragma once

#include "longtail/types.hpp"

namespace longtail {

// half-cosine decay from lr0 at step 0 to 0 at step == total
Scalar cosine_lr(long step, long total, Scalar lr0);

// classic momentum: v <- m*v + g, p <- p - lr*v
class SgdMomentum {
 public:
  SgdMomentum(ParamRefs params, Scalar momentum);
  void step(Scalar lr);

 private:
  ParamRefs params_;
  std::vector<Mat> velocity_;
  Scalar momentum_;
};

}  // namespace longtail
