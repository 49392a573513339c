#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "longtail/grad_check.hpp"
#include "longtail/rng.hpp"
#include "longtail/sg_adapter.hpp"

using namespace longtail;

namespace {

Mat random_mat(uint64_t seed, int rows, int cols, double scale = 1.0) {
  auto g = make_stream(seed, 77);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(g, 0.0, scale);
  return m;
}

SGAdapterParams random_adapter(uint64_t seed, int d, int r, double alpha) {
  auto g = make_stream(seed, 78);
  SGAdapterParams p = make_sg_adapter(d, r, alpha, g, "sg.0.");
  // push every array off its init point so no branch is accidentally dead
  for (Param* q : sg_trainable_params(p))
    for (Index i = 0; i < q->value.size(); ++i)
      q->value.data()[i] += normal(g, 0.0, 0.3);
  return p;
}

}  // namespace

TEST_CASE("guidance is the arithmetic mean of classifier rows") {
  Mat w(3, 4);
  w << 1, 2, 3, 4, 5, 6, 7, 8, 0, -3, 2, 0;
  Guidance g = build_guidance(w);
  RowVec want(4);
  want << 2.0, 5.0 / 3.0, 4.0, 4.0;
  CHECK((g.wbar - want).cwiseAbs().maxCoeff() < 1e-15);

  Mat one(1, 2);
  one << 7, -1;
  CHECK((build_guidance(one).wbar - one.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(build_guidance(Mat(0, 4)), std::invalid_argument);
}

TEST_CASE("freshly built adapter is a no-op") {
  auto g = make_stream(3, 78);
  SGAdapterParams p = make_sg_adapter(8, 2, 0.1, g, "sg.0.");
  Mat f = random_mat(1, 5, 8);
  Guidance gd{random_mat(2, 1, 8).row(0)};
  Mat out = sg_forward(f, gd, p);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zeroed textual path ignores the guidance") {
  SGAdapterParams p = random_adapter(11, 8, 2, 0.3);
  p.s_vt.value.setZero();
  p.w_vt_down.value.setZero();
  p.b_vt_down.value.setZero();
  Mat f = random_mat(4, 6, 8);
  Mat a = sg_forward(f, Guidance{random_mat(5, 1, 8).row(0)}, p);
  Mat b = sg_forward(f, Guidance{random_mat(6, 1, 8).row(0)}, p);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("output interpolates linearly in alpha") {
  Mat f = random_mat(21, 5, 8);
  Guidance gd{random_mat(22, 1, 8).row(0)};
  SGAdapterParams p0 = random_adapter(23, 8, 3, 0.0);
  SGAdapterParams p1 = random_adapter(23, 8, 3, 0.0);
  SGAdapterParams pm = random_adapter(23, 8, 3, 0.0);
  p1.alpha.value(0, 0) = 1.0;
  const double a = 0.35;
  pm.alpha.value(0, 0) = a;
  Mat lo = sg_forward(f, gd, p0);
  Mat hi = sg_forward(f, gd, p1);
  Mat mid = sg_forward(f, gd, pm);
  CHECK((mid - (a * hi + (1 - a) * lo)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward matches a per-element transcription of the math") {
  const int b = 2, d = 8, r = 2;
  SGAdapterParams p = random_adapter(31, d, r, 0.25);
  Mat f = random_mat(32, b, d);
  RowVec wbar = random_mat(33, 1, d).row(0);
  Mat got = sg_forward(f, Guidance{wbar}, p);

  // scalar-loop re-derivation
  auto ln_row = [&](const RowVec& x) {
    double m = 0, v = 0;
    for (int j = 0; j < d; ++j) m += x(j);
    m /= d;
    for (int j = 0; j < d; ++j) v += (x(j) - m) * (x(j) - m);
    v /= d;
    RowVec out(d);
    for (int j = 0; j < d; ++j)
      out(j) = (x(j) - m) / std::sqrt(v + 1e-5) * p.ln_gain.value(0, j) +
               p.ln_bias.value(0, j);
    return out;
  };
  RowVec f_t = ln_row(wbar);
  RowVec proj(d);
  for (int j = 0; j < d; ++j) {
    proj(j) = p.b_proj.value(0, j);
    for (int i = 0; i < d; ++i) proj(j) += f_t(i) * p.w_proj.value(i, j);
  }
  RowVec t_down(r);
  for (int k = 0; k < r; ++k) {
    t_down(k) = p.b_t_down.value(0, k);
    for (int i = 0; i < d; ++i) t_down(k) += f_t(i) * p.w_t_down.value(i, k);
  }
  Mat want(b, d);
  for (int n = 0; n < b; ++n) {
    RowVec f_v = ln_row(f.row(n));
    RowVec f_vt(d);
    for (int j = 0; j < d; ++j) f_vt(j) = f_v(j) * proj(j);
    RowVec bneck(2 * r);
    for (int k = 0; k < r; ++k) {
      double av = p.b_v_down.value(0, k);
      for (int i = 0; i < d; ++i) av += f_v(i) * p.w_v_down.value(i, k);
      bneck(k) = av;
      double cv = p.b_vt_down.value(0, k);
      for (int i = 0; i < d; ++i) cv += f_vt(i) * p.w_vt_down.value(i, k);
      bneck(r + k) = cv + p.s_vt.scalar() * t_down(k);
    }
    const double al = p.alpha.scalar();
    for (int j = 0; j < d; ++j) {
      double acc = p.b_up.value(0, j);
      for (int k = 0; k < 2 * r; ++k) {
        double mixed =
            al * std::max(0.0, bneck(k)) + (1.0 - al) * bneck(k);
        acc += mixed * p.w_up.value(k, j);
      }
      want(n, j) = acc;
    }
  }
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter count formula equals allocation") {
  CHECK(sg_param_count(8, 2) == 184);
  CHECK(sg_param_count(1, 1) == 15);
  auto g = make_stream(99, 1);
  for (int trial = 0; trial < 5; ++trial) {
    int d = 1 + int(uniform(g, 0, 1) * 24);
    int r = 1 + int(uniform(g, 0, 1) * 7);
    SGAdapterParams p = make_sg_adapter(d, r, 0.1, g, "sg.x.");
    CHECK(total_size(sg_trainable_params(p)) == sg_param_count(d, r));
  }
}

TEST_CASE("backward matches central differences for every array") {
  const int d = 8, r = 3;
  SGAdapterParams p = random_adapter(41, d, r, 0.3);
  Param wbar("wbar", random_mat(42, 1, d));
  Mat f = random_mat(43, 4, d);
  Mat weights = random_mat(44, 4, d);  // fixed projection to a scalar

  ParamRefs params = sg_trainable_params(p);
  params.push_back(&wbar);
  enable_grads(params);

  auto loss = [&] {
    return (sg_forward(f, Guidance{wbar.value.row(0)}, p).array() *
            weights.array())
        .sum();
  };
  zero_grads(params);
  SGForwardCache cache;
  sg_forward(f, Guidance{wbar.value.row(0)}, p, &cache);
  RowVec dwbar = RowVec::Zero(d);
  sg_backward(weights, cache, p, &dwbar);
  *wbar.grad = dwbar;

  auto reports = grad_check(loss, params, 1e-5, 1e-6);
  for (const auto& rep : reports) {
    INFO(rep.param);
    CHECK(rep.passed);
  }
}
