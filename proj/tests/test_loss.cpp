#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "longtail/grad_check.hpp"
#include "longtail/kernels.hpp"
#include "longtail/loss.hpp"
#include "longtail/rng.hpp"

#include <cmath>

using namespace longtail;

namespace {

Mat random_mat(uint64_t seed, int rows, int cols) {
  auto g = make_stream(seed, 997);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(g);
  return m;
}

ClassFrequencies freq_of(std::initializer_list<Scalar> counts) {
  Vec v(static_cast<Index>(counts.size()));
  Index i = 0;
  for (Scalar c : counts) v(i++) = c;
  return make_frequencies(v);
}

}  // namespace

TEST_CASE("class frequency summary") {
  ClassFrequencies f = freq_of({100, 10});
  CHECK(f.counts.size() == 2);
  CHECK(f.total == 110.0);
  CHECK(f.n_min == 10.0);

  Vec bad(2);
  bad << 5, 0;
  CHECK_THROWS_AS(make_frequencies(bad), std::invalid_argument);
  CHECK_THROWS_AS(make_frequencies(Vec{}), std::invalid_argument);
}

TEST_CASE("adjusted loss on uniform logits gives log of class count") {
  Mat z2 = Mat::Zero(1, 2), z4 = Mat::Zero(1, 4);
  ClassFrequencies f2 = freq_of({7, 7}), f4 = freq_of({3, 3, 3, 3});
  CHECK(la_loss(z2, {0}, f2) ==
        doctest::Approx(0.69314718055994531).epsilon(1e-14));
  CHECK(la_loss(z4, {2}, f4) ==
        doctest::Approx(1.3862943611198906).epsilon(1e-14));
}

TEST_CASE("adjusted loss is shift invariant and balanced counts reduce to cross entropy") {
  Mat z = random_mat(3, 4, 5);
  ClassFrequencies f = freq_of({9, 9, 9, 9, 9});
  std::vector<int> y{0, 3, 2, 4};
  Scalar base = la_loss(z, y, f);
  Mat shifted = z;
  shifted.array() += 13.25;
  CHECK(la_loss(shifted, y, f) == doctest::Approx(base).epsilon(1e-12));

  Mat p = softmax_rows(z);
  Scalar ce = 0;
  for (size_t i = 0; i < y.size(); ++i) ce -= std::log(p(static_cast<Index>(i), y[i]));
  ce /= static_cast<Scalar>(y.size());
  CHECK(base == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("adjusted loss gradient matches central differences") {
  Param z("z", random_mat(4, 3, 4));
  ClassFrequencies f = freq_of({40, 12, 3, 1});
  std::vector<int> y{1, 3, 0};
  enable_grads({&z});
  Mat dz;
  la_loss(z.value, y, f, &dz);
  *z.grad = dz;
  auto loss = [&] { return la_loss(z.value, y, f); };
  CHECK(all_passed(grad_check(loss, {&z}, 1e-5, 1e-6)));
}

TEST_CASE("compensation factors") {
  ClassFrequencies f = freq_of({100, 10});
  Vec lam = compensation_factors(f, 0.5, 0.06);
  CHECK(lam(0) == doctest::Approx(3.6252060310301195).epsilon(1e-14));
  CHECK(lam(1) == doctest::Approx(3.1574224591164276).epsilon(1e-14));

  // exponent zero flattens every factor to the shared floor
  Vec flat = compensation_factors(f, 0.5, 0.0);
  CHECK(flat(0) == doctest::Approx(0.5 * 110.0 / 20.0).epsilon(1e-14));
  CHECK(flat(0) == flat(1));

  // positive exponent keeps the factor monotone in the count
  ClassFrequencies g = freq_of({500, 300, 40, 6});
  Vec mono = compensation_factors(g, 1.25, 0.1);
  for (Index i = 0; i + 1 < mono.size(); ++i) CHECK(mono(i) > mono(i + 1));

  CHECK_THROWS_AS(compensation_factors(f, 0.0, 0.06), std::invalid_argument);
}

TEST_CASE("compensated loss reduces to the adjusted loss at exponent zero") {
  ClassFrequencies f = freq_of({250, 60, 14, 2});
  for (uint64_t seed : {11, 12, 13, 14}) {
    Mat z = random_mat(seed, 5, 4);
    std::vector<int> y{0, 1, 2, 3, 1};
    CHECK(std::abs(cf_loss(z, y, f, 0.7, 0.0) - la_loss(z, y, f)) < 1e-12);
  }
}

TEST_CASE("compensated loss worked value and gradient") {
  ClassFrequencies f = freq_of({100, 10});
  Mat z = Mat::Zero(1, 2);
  CHECK(cf_loss(z, {0}, f, 0.5, 0.06) ==
        doctest::Approx(0.083510250940273415).epsilon(1e-14));

  Param zp("z", random_mat(21, 4, 3));
  ClassFrequencies g = freq_of({120, 30, 5});
  std::vector<int> y{2, 0, 1, 2};
  enable_grads({&zp});
  Mat dz;
  cf_loss(zp.value, y, g, 0.5, 0.06, &dz);
  *zp.grad = dz;
  auto loss = [&] { return cf_loss(zp.value, y, g, 0.5, 0.06); };
  CHECK(all_passed(grad_check(loss, {&zp}, 1e-5, 1e-6)));
}

TEST_CASE("post-compensation") {
  Vec ps(2), pt(2);
  ps << 0.9, 0.1;
  pt << 0.5, 0.5;

  Mat z(1, 2);
  z << 1, 2;
  Mat out = post_compensate(z, ps, pt);
  CHECK(out(0, 0) == doctest::Approx(0.41221333509788099).epsilon(1e-12));
  CHECK(out(0, 1) == doctest::Approx(3.6094379124341004).epsilon(1e-12));

  // matched priors leave the logits bit-identical
  Mat r = random_mat(30, 6, 4);
  Vec p(4);
  p << 0.4, 0.3, 0.2, 0.1;
  Mat same = post_compensate(r, p, p);
  CHECK((same - r).cwiseAbs().maxCoeff() == 0.0);

  Vec zero(2);
  zero << 1.0, 0.0;
  CHECK_THROWS_AS(post_compensate(z, zero, pt), std::invalid_argument);
  CHECK_THROWS_AS(post_compensate(z, ps, zero), std::invalid_argument);
}

TEST_CASE("prior-shift diagnostic") {
  Vec ps(2), pt(2);
  ps << 0.9, 0.1;
  pt << 0.5, 0.5;
  Mat z = Mat::Zero(1, 2);
  Mat th = theta_diagnostic(z, ps, pt);
  CHECK(th(0, 0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(th(0, 1) == doctest::Approx(0.5555555555555556).epsilon(1e-12));

  // matched priors give a ratio of exactly one everywhere
  Mat r = random_mat(31, 5, 3);
  Vec p(3);
  p << 0.5, 0.3, 0.2;
  Mat ones = theta_diagnostic(r, p, p);
  CHECK((ones.array() - 1.0).abs().maxCoeff() < 1e-12);

  // correcting the logits divides the class posterior by the diagnostic
  Mat zr = random_mat(32, 4, 3);
  Vec psr(3), ptr(3);
  psr << 0.7, 0.2, 0.1;
  ptr << 0.2, 0.5, 0.3;
  Mat before = softmax_rows(zr);
  Mat after = softmax_rows(post_compensate(zr, psr, ptr));
  Mat thr = theta_diagnostic(zr, psr, ptr);
  CHECK((after.array() * thr.array() - before.array()).abs().maxCoeff() <
        1e-12);
}

TEST_CASE("tail-weighted posterior mass stays under its bound") {
  ClassFrequencies f = freq_of({100, 10});
  CHECK(upsilon_bound(f) == doctest::Approx(5.5).epsilon(1e-14));

  ClassFrequencies g = freq_of({300, 120, 40, 9, 2});
  Scalar bound = upsilon_bound(g);
  auto rng = make_stream(77, 4242);
  for (int trial = 0; trial < 1000; ++trial) {
    Mat z(1, 5);
    for (Index j = 0; j < 5; ++j) z(0, j) = uniform(rng, -10.0, 10.0);
    Vec u = upsilon_value(z, g);
    CHECK(u(0) <= bound + 1e-12);
  }

  // the bound is attained when all mass sits on the rarest class
  Mat peak = Mat::Zero(1, 5);
  peak(0, 4) = 60.0;
  CHECK(upsilon_value(peak, g)(0) == doctest::Approx(bound).epsilon(1e-6));
}

TEST_CASE("composite loss collapses to its first term when mixing is off") {
  ClassFrequencies f = freq_of({90, 25, 4});
  Mat z = random_mat(40, 4, 3), zv = random_mat(41, 4, 3),
      zt = random_mat(42, 4, 3);
  std::vector<int> y{0, 2, 1, 1};
  FITState fit;
  fit.s1.value(0, 0) = 0.3;
  fit.s2.value(0, 0) = 0.2;
  LossConfig cfg;
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
  CompositeGrads grads;
  Scalar l = composite_loss(z, zv, zt, fit, y, f, cfg, &grads);
  Mat dz_ref;
  Scalar ref = cf_loss(z, y, f, cfg.mu, cfg.gamma, &dz_ref);
  CHECK(l == doctest::Approx(ref).epsilon(1e-14));
  CHECK((grads.dz - dz_ref).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(grads.dz_v.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.dz_t.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.ds1 == 0.0);
  CHECK(grads.ds2 == 0.0);
}

TEST_CASE("composite loss gradient matches central differences") {
  ClassFrequencies f = freq_of({150, 40, 12, 3});
  std::vector<int> y{1, 0, 3, 2, 0};
  Param z("z", random_mat(50, 5, 4));
  Param zv("zv", random_mat(51, 5, 4));
  Param zt("zt", random_mat(52, 5, 4));
  FITState fit;
  fit.s1.value(0, 0) = 0.35;
  fit.s2.value(0, 0) = -0.15;
  LossConfig cfg;  // defaults engage every term
  ParamRefs params{&z, &zv, &zt, &fit.s1, &fit.s2};
  enable_grads(params);

  CompositeGrads grads;
  composite_loss(z.value, zv.value, zt.value, fit, y, f, cfg, &grads);
  *z.grad = grads.dz;
  *zv.grad = grads.dz_v;
  *zt.grad = grads.dz_t;
  (*fit.s1.grad)(0, 0) = grads.ds1;
  (*fit.s2.grad)(0, 0) = grads.ds2;

  auto loss = [&] {
    return composite_loss(z.value, zv.value, zt.value, fit, y, f, cfg);
  };
  // mixing weights shrink some entries to ~1e-5, where central differences
  // carry ~1e-6 relative noise, so the tolerance sits above that floor
  CHECK(all_passed(grad_check(loss, params, 1e-5, 1e-5)));
}
