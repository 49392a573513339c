#pragma once

#include "longtail/types.hpp"

#include <functional>

namespace longtail {

struct GradCheckReport {
  std::string param;
  Scalar max_rel_error = 0.0;
  Scalar max_abs_error = 0.0;
  bool passed = true;
};

// Central-difference check of the analytic gradients already stored in each
// param's grad buffer. loss must be a pure function of the param values;
// every entry is perturbed by +-eps and restored. Relative error uses
// |a - n| / max(|a|, |n|, 1e-8).
std::vector<GradCheckReport> grad_check(const std::function<Scalar()>& loss,
                                        const ParamRefs& params,
                                        Scalar eps = 1e-5, Scalar tol = 1e-4);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace longtail
