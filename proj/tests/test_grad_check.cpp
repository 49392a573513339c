#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "longtail/grad_check.hpp"
#include "longtail/kernels.hpp"

using namespace longtail;

TEST_CASE("grad check accepts the exact gradient of a quadratic") {
  Param p("x", Mat::Zero(2, 3));
  p.value << 1.0, -2.0, 0.5, 3.0, 0.0, -1.5;
  p.enable_grad();
  auto loss = [&] { return p.value.array().square().sum(); };
  *p.grad = 2.0 * p.value;
  auto reports = grad_check(loss, {&p});
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].param == "x");
  CHECK(reports[0].passed);
  CHECK(reports[0].max_rel_error < 1e-4);
}

TEST_CASE("grad check flags a wrong analytic gradient") {
  Param p("x", Mat::Constant(1, 2, 1.0));
  p.enable_grad();
  auto loss = [&] { return p.value.sum(); };
  *p.grad = Mat::Constant(1, 2, 1.3);  // true gradient is 1.0
  auto reports = grad_check(loss, {&p});
  CHECK_FALSE(reports[0].passed);
  CHECK_FALSE(all_passed(reports));
  CHECK(reports[0].max_rel_error > 0.2);
}

TEST_CASE("grad check handles a constant loss with zero gradient") {
  Param p("x", Mat::Constant(1, 3, 0.7));
  p.enable_grad();
  auto loss = [&] { return 42.0; };
  auto reports = grad_check(loss, {&p});
  CHECK(reports[0].passed);
  CHECK(reports[0].max_abs_error == 0.0);
}

TEST_CASE("grad check restores parameter values") {
  Param p("x", Mat::Constant(2, 2, 0.25));
  p.enable_grad();
  Mat before = p.value;
  auto loss = [&] { return p.value.array().cube().sum(); };
  *p.grad = 3.0 * p.value.array().square();
  grad_check(loss, {&p});
  CHECK((p.value - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad check requires a gradient buffer") {
  Param p("frozen", Mat::Zero(1, 1));
  auto loss = [&] { return 0.0; };
  CHECK_THROWS_AS(grad_check(loss, {&p}), std::invalid_argument);
}

TEST_CASE("grad check covers a composite of library kernels") {
  Param p("x", Mat::Zero(2, 4));
  p.value << 0.3, -1.0, 2.0, 0.1, -0.4, 0.9, -2.2, 1.4;
  p.enable_grad();
  RowVec g = RowVec::Ones(4), b = RowVec::Zero(4);
  auto loss = [&] {
    Mat y = layer_norm(p.value, g, b);
    return softmax_rows(gelu(y)).array().square().sum();
  };
  // analytic chain
  LayerNormCache cache;
  Mat y = layer_norm(p.value, g, b, kLayerNormEps, &cache);
  Mat gy = gelu(y);
  Mat s = softmax_rows(gy);
  Mat ds = 2.0 * s;
  Mat dgy = softmax_rows_backward(s, ds);
  Mat dy = dgy.array() * gelu_grad(y).array();
  *p.grad = layer_norm_backward(dy, cache, g);
  auto reports = grad_check(loss, {&p});
  CHECK(all_passed(reports));
  CHECK(reports[0].max_rel_error < 1e-5);
}
