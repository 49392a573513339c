#include "longtail/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace longtail {

std::vector<GradCheckReport> grad_check(const std::function<Scalar()>& loss,
                                        const ParamRefs& params, Scalar eps,
                                        Scalar tol) {
  std::vector<GradCheckReport> reports;
  reports.reserve(params.size());
  for (Param* p : params) {
    if (!p->trainable())
      throw std::invalid_argument("grad_check: param " + p->name +
                                  " has no gradient buffer");
    GradCheckReport rep;
    rep.param = p->name;
    for (Index j = 0; j < p->value.size(); ++j) {
      Scalar* entry = p->value.data() + j;
      const Scalar saved = *entry;
      *entry = saved + eps;
      const Scalar up = loss();
      *entry = saved - eps;
      const Scalar down = loss();
      *entry = saved;
      const Scalar numeric = (up - down) / (2.0 * eps);
      const Scalar analytic = *(p->grad->data() + j);
      const Scalar abs_err = std::abs(analytic - numeric);
      const Scalar denom =
          std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-8)});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      rep.max_rel_error = std::max(rep.max_rel_error, abs_err / denom);
    }
    rep.passed = rep.max_rel_error < tol;
    reports.push_back(std::move(rep));
  }
  return reports;
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.passed; });
}

}  // namespace longtail
