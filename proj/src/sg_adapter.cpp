#include "longtail/sg_adapter.hpp"

#include "longtail/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace longtail {

Guidance build_guidance(const Mat& classifier) {
  if (classifier.rows() == 0)
    throw std::invalid_argument("build_guidance: empty classifier");
  check_finite(classifier, "build_guidance");
  return Guidance{classifier.colwise().mean()};
}

Mat sg_forward(const Mat& f_tilde, const Guidance& g, const SGAdapterParams& p,
               SGForwardCache* cache) {
  const int d = p.width;
  if (f_tilde.cols() != d || g.wbar.cols() != d)
    throw std::invalid_argument("sg_forward: width mismatch, got " +
                                std::to_string(f_tilde.cols()) + " and " +
                                std::to_string(g.wbar.cols()) + ", want " +
                                std::to_string(d));
  SGForwardCache local;
  SGForwardCache& c = cache ? *cache : local;

  const RowVec gain = p.ln_gain.value.row(0);
  const RowVec bias = p.ln_bias.value.row(0);
  c.f_v = layer_norm(f_tilde, gain, bias, kLayerNormEps, &c.ln_v);
  c.f_t = layer_norm(g.wbar, gain, bias, kLayerNormEps, &c.ln_t).row(0);

  c.proj = c.f_t * p.w_proj.value + p.b_proj.value.row(0);
  c.f_vt = c.f_v.array().rowwise() * c.proj.array();

  Mat a = c.f_v * p.w_v_down.value;
  a.rowwise() += p.b_v_down.value.row(0);
  c.t_down = c.f_t * p.w_t_down.value + p.b_t_down.value.row(0);
  Mat ct = c.f_vt * p.w_vt_down.value;
  ct.rowwise() += p.b_vt_down.value.row(0) + p.s_vt.scalar() * c.t_down;

  const int r = p.bottleneck;
  c.bottleneck.resize(f_tilde.rows(), 2 * r);
  c.bottleneck << a, ct;

  const Scalar al = p.alpha.scalar();
  Mat mixed = al * relu(c.bottleneck) + (1.0 - al) * c.bottleneck;
  Mat out = mixed * p.w_up.value;
  out.rowwise() += p.b_up.value.row(0);
  return out;
}

Mat sg_backward(const Mat& dout, const SGForwardCache& c, SGAdapterParams& p,
                RowVec* dwbar) {
  const Scalar al = p.alpha.scalar();
  const int r = p.bottleneck;

  Mat mixed = al * relu(c.bottleneck) + (1.0 - al) * c.bottleneck;
  p.b_up.accumulate(dout.colwise().sum());
  p.w_up.accumulate(mixed.transpose() * dout);
  Mat dmixed = dout * p.w_up.value.transpose();
  Mat mask = (c.bottleneck.array() > 0.0).cast<Scalar>();
  Mat db = dmixed.array() * (al * mask.array() + (1.0 - al));

  Mat da = db.leftCols(r);
  Mat dct = db.rightCols(r);

  // visual bottleneck
  p.w_v_down.accumulate(c.f_v.transpose() * da);
  p.b_v_down.accumulate(da.colwise().sum());
  Mat df_v = da * p.w_v_down.value.transpose();

  // modulated bottleneck
  p.w_vt_down.accumulate(c.f_vt.transpose() * dct);
  p.b_vt_down.accumulate(dct.colwise().sum());
  Mat df_vt = dct * p.w_vt_down.value.transpose();

  // textual bottleneck, scaled by s_vt and broadcast over rows
  RowVec dct_cols = dct.colwise().sum();
  p.s_vt.accumulate(Mat::Constant(1, 1, dct_cols.dot(c.t_down)));
  RowVec dt_down = p.s_vt.scalar() * dct_cols;
  p.w_t_down.accumulate(c.f_t.transpose() * dt_down);
  p.b_t_down.accumulate(dt_down);
  RowVec df_t = dt_down * p.w_t_down.value.transpose();

  // modulation f_vt = f_v .* proj
  df_v.array() += df_vt.array().rowwise() * c.proj.array();
  RowVec dproj = (df_vt.array() * c.f_v.array()).colwise().sum();
  p.w_proj.accumulate(c.f_t.transpose() * dproj);
  p.b_proj.accumulate(dproj);
  df_t += dproj * p.w_proj.value.transpose();

  // shared layer norm over both branches
  const RowVec gain = p.ln_gain.value.row(0);
  RowVec dgain = RowVec::Zero(p.width), dbias = RowVec::Zero(p.width);
  Mat df_tilde = layer_norm_backward(df_v, c.ln_v, gain, &dgain, &dbias);
  Mat dw = layer_norm_backward(df_t, c.ln_t, gain, &dgain, &dbias);
  p.ln_gain.accumulate(dgain);
  p.ln_bias.accumulate(dbias);
  if (dwbar) *dwbar += dw.row(0);
  return df_tilde;
}

long sg_param_count(int width, int bottleneck) {
  const long d = width, r = bottleneck;
  return (5 * r + d + 4) * d + 3 * r + 2;
}

SGAdapterParams make_sg_adapter(int width, int bottleneck, Scalar alpha,
                                std::mt19937_64& rng,
                                const std::string& prefix) {
  if (width <= 0 || bottleneck <= 0)
    throw std::invalid_argument("make_sg_adapter: non-positive dims");
  const int d = width, r = bottleneck;
  const Scalar bound = 1.0 / std::sqrt(Scalar(d));
  auto u = [&](int rows, int cols) {
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i)
      m.data()[i] = uniform(rng, -bound, bound);
    return m;
  };
  SGAdapterParams p;
  p.width = d;
  p.bottleneck = r;
  p.ln_gain = {prefix + "ln_gain", Mat::Ones(1, d)};
  p.ln_bias = {prefix + "ln_bias", Mat::Zero(1, d)};
  p.w_proj = {prefix + "w_proj", u(d, d)};
  p.b_proj = {prefix + "b_proj", Mat::Zero(1, d)};
  p.w_v_down = {prefix + "w_v_down", u(d, r)};
  p.b_v_down = {prefix + "b_v_down", Mat::Zero(1, r)};
  p.w_vt_down = {prefix + "w_vt_down", u(d, r)};
  p.b_vt_down = {prefix + "b_vt_down", Mat::Zero(1, r)};
  p.w_t_down = {prefix + "w_t_down", u(d, r)};
  p.b_t_down = {prefix + "b_t_down", Mat::Zero(1, r)};
  p.w_up = {prefix + "w_up", Mat::Zero(2 * r, d)};  // no-op start
  p.b_up = {prefix + "b_up", Mat::Zero(1, d)};
  p.s_vt = {prefix + "s_vt", Mat::Constant(1, 1, 0.5)};
  p.s_block = {prefix + "s_block", Mat::Constant(1, 1, 0.1)};
  p.alpha = {prefix + "alpha", Mat::Constant(1, 1, alpha)};
  return p;
}

ParamRefs sg_params(SGAdapterParams& p) {
  return {&p.ln_gain,    &p.ln_bias,   &p.w_proj,  &p.b_proj, &p.w_v_down,
          &p.b_v_down,   &p.w_vt_down, &p.b_vt_down, &p.w_t_down,
          &p.b_t_down,   &p.w_up,      &p.b_up,    &p.s_vt,   &p.s_block,
          &p.alpha};
}

ParamRefs sg_trainable_params(SGAdapterParams& p) {
  ParamRefs all = sg_params(p);
  all.pop_back();  // alpha stays frozen
  return all;
}

}  // namespace longtail
