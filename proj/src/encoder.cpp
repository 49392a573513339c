#include "longtail/encoder.hpp"

#include "longtail/kernels.hpp"
#include "longtail/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace longtail {

const char* to_string(BlockMode m) {
  switch (m) {
    case BlockMode::plain: return "plain";
    case BlockMode::adaptformer: return "adaptformer";
    case BlockMode::sage: return "sage";
  }
  return "?";
}

BlockMode block_mode_from_string(const std::string& s) {
  if (s == "plain") return BlockMode::plain;
  if (s == "adaptformer") return BlockMode::adaptformer;
  if (s == "sage") return BlockMode::sage;
  throw std::invalid_argument("unknown block mode: " + s);
}

void EncoderConfig::validate() const {
  if (depth < 0) throw std::invalid_argument("encoder: negative depth");
  if (width <= 0 || heads <= 0 || head_width <= 0)
    throw std::invalid_argument("encoder: non-positive width/heads");
  if (heads * head_width != width)
    throw std::invalid_argument(
        "encoder: heads*head_width != width (" + std::to_string(heads) + "*" +
        std::to_string(head_width) + " != " + std::to_string(width) + ")");
  if (grid <= 0 || patch <= 0 || grid % patch != 0)
    throw std::invalid_argument("encoder: grid " + std::to_string(grid) +
                                " not divisible by patch " +
                                std::to_string(patch));
  if (mode != BlockMode::plain && bottleneck <= 0)
    throw std::invalid_argument("encoder: adapter mode needs bottleneck > 0");
}

MSAResult msa_forward(const Mat& x, const BlockParams& b,
                      const EncoderConfig& cfg, int tokens, MSACache* cache) {
  const int t = tokens, h = cfg.heads, dk = cfg.head_width;
  if (x.cols() != cfg.width || x.rows() % t != 0)
    throw std::invalid_argument("msa_forward: bad token matrix " +
                                std::to_string(x.rows()) + "x" +
                                std::to_string(x.cols()));
  const int n = int(x.rows() / t);
  const Scalar inv_sqrt_dk = 1.0 / std::sqrt(Scalar(dk));

  MSACache local;
  MSACache& c = cache ? *cache : local;
  c.q.assign(n, std::vector<Mat>(h));
  c.k.assign(n, std::vector<Mat>(h));
  c.v.assign(n, std::vector<Mat>(h));
  c.attn.assign(n, HeadAttention(h));
  c.concat.resize(x.rows(), cfg.width);

  for (int s = 0; s < n; ++s) {
    const auto xs = x.middleRows(s * t, t);
    for (int j = 0; j < h; ++j) {
      Mat q = xs * b.wq.value.middleCols(j * dk, dk);
      Mat k = xs * b.wk.value.middleCols(j * dk, dk);
      Mat v = xs * b.wv.value.middleCols(j * dk, dk);
      Mat a = softmax_rows(q * k.transpose() * inv_sqrt_dk);
      c.concat.block(s * t, j * dk, t, dk) = a * v;
      c.q[s][j] = std::move(q);
      c.k[s][j] = std::move(k);
      c.v[s][j] = std::move(v);
      c.attn[s][j] = std::move(a);
    }
  }
  MSAResult res;
  res.out = c.concat * b.wo.value;
  res.attn = c.attn;
  return res;
}

Mat msa_backward(const Mat& dout, const Mat& x, const MSACache& c,
                 BlockParams& b, const EncoderConfig& cfg, int tokens) {
  const int t = tokens, h = cfg.heads, dk = cfg.head_width;
  const int n = int(x.rows() / t);
  const Scalar inv_sqrt_dk = 1.0 / std::sqrt(Scalar(dk));

  b.wo.accumulate(c.concat.transpose() * dout);
  Mat dconcat = dout * b.wo.value.transpose();
  Mat dx = Mat::Zero(x.rows(), x.cols());
  for (int s = 0; s < n; ++s) {
    const auto xs = x.middleRows(s * t, t);
    auto dxs = dx.middleRows(s * t, t);
    for (int j = 0; j < h; ++j) {
      Mat dh = dconcat.block(s * t, j * dk, t, dk);
      const Mat& a = c.attn[s][j];
      Mat da = dh * c.v[s][j].transpose();
      Mat dv = a.transpose() * dh;
      Mat ds = softmax_rows_backward(a, da) * inv_sqrt_dk;
      Mat dq = ds * c.k[s][j];
      Mat dkk = ds.transpose() * c.q[s][j];
      dxs += dq * b.wq.value.middleCols(j * dk, dk).transpose() +
             dkk * b.wk.value.middleCols(j * dk, dk).transpose() +
             dv * b.wv.value.middleCols(j * dk, dk).transpose();
      if (b.wq.grad) b.wq.grad->middleCols(j * dk, dk) += xs.transpose() * dq;
      if (b.wk.grad) b.wk.grad->middleCols(j * dk, dk) += xs.transpose() * dkk;
      if (b.wv.grad) b.wv.grad->middleCols(j * dk, dk) += xs.transpose() * dv;
    }
  }
  return dx;
}

BlockResult block_forward(const Mat& x, const BlockParams& b,
                          const EncoderConfig& cfg, int tokens, BlockMode mode,
                          const Guidance* guidance, BlockCache* cache) {
  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  c.x = x;

  MSAResult msa = msa_forward(x, b, cfg, tokens, &c.msa);
  c.f_tilde = msa.out + x;

  c.ln2_out = layer_norm(c.f_tilde, b.ln2_gain.value.row(0),
                         b.ln2_bias.value.row(0), kLayerNormEps, &c.ln2);
  c.mlp_pre = c.ln2_out * b.mlp_w1.value;
  c.mlp_pre.rowwise() += b.mlp_b1.value.row(0);
  c.mlp_act = gelu(c.mlp_pre);
  Mat mlp_out = c.mlp_act * b.mlp_w2.value;
  mlp_out.rowwise() += b.mlp_b2.value.row(0);

  BlockResult res;
  res.attn = std::move(msa.attn);
  switch (mode) {
    case BlockMode::plain:
      res.out = mlp_out + c.f_tilde;
      break;
    case BlockMode::adaptformer: {
      if (!b.adapter)
        throw std::invalid_argument("block_forward: adapter params missing");
      const AdaptFormerParams& a = *b.adapter;
      c.af_norm = layer_norm(c.f_tilde, a.ln_gain.value.row(0),
                             a.ln_bias.value.row(0), kLayerNormEps, &c.ln_af);
      c.af_pre = c.af_norm * a.w_down.value;
      c.af_pre.rowwise() += a.b_down.value.row(0);
      c.af_act = relu(c.af_pre);
      c.af_out = c.af_act * a.w_up.value;
      c.af_out.rowwise() += a.b_up.value.row(0);
      res.out = mlp_out + a.s.scalar() * c.af_out + c.f_tilde;
      break;
    }
    case BlockMode::sage: {
      if (!b.sg)
        throw std::invalid_argument("block_forward: sage params missing");
      if (!guidance)
        throw std::invalid_argument("block_forward: sage needs guidance");
      c.sg_out = sg_forward(c.f_tilde, *guidance, *b.sg, &c.sg);
      res.out = mlp_out + b.sg->s_block.scalar() * c.sg_out + c.f_tilde;
      break;
    }
  }
  return res;
}

Mat block_backward(const Mat& dout, const BlockCache& c, BlockParams& b,
                   const EncoderConfig& cfg, int tokens, BlockMode mode,
                   RowVec* dwbar) {
  Mat df_tilde = dout;  // residual branch

  // adapter branch
  if (mode == BlockMode::adaptformer) {
    AdaptFormerParams& a = *b.adapter;
    const Scalar s = a.s.scalar();
    a.s.accumulate(Mat::Constant(1, 1, (dout.array() * c.af_out.array()).sum()));
    Mat dao = s * dout;
    a.b_up.accumulate(dao.colwise().sum());
    a.w_up.accumulate(c.af_act.transpose() * dao);
    Mat dact = dao * a.w_up.value.transpose();
    Mat dpre = dact.array() * (c.af_pre.array() > 0.0).cast<Scalar>();
    a.b_down.accumulate(dpre.colwise().sum());
    a.w_down.accumulate(c.af_norm.transpose() * dpre);
    Mat dnorm = dpre * a.w_down.value.transpose();
    RowVec dg = RowVec::Zero(a.width), dbb = RowVec::Zero(a.width);
    df_tilde += layer_norm_backward(dnorm, c.ln_af, a.ln_gain.value.row(0),
                                    &dg, &dbb);
    a.ln_gain.accumulate(dg);
    a.ln_bias.accumulate(dbb);
  } else if (mode == BlockMode::sage) {
    SGAdapterParams& sg = *b.sg;
    sg.s_block.accumulate(
        Mat::Constant(1, 1, (dout.array() * c.sg_out.array()).sum()));
    Mat dso = sg.s_block.scalar() * dout;
    df_tilde += sg_backward(dso, c.sg, sg, dwbar);
  }

  // MLP branch
  Mat dmlp = dout;
  b.mlp_b2.accumulate(dmlp.colwise().sum());
  b.mlp_w2.accumulate(c.mlp_act.transpose() * dmlp);
  Mat dact = dmlp * b.mlp_w2.value.transpose();
  Mat dpre = dact.array() * gelu_grad(c.mlp_pre).array();
  b.mlp_b1.accumulate(dpre.colwise().sum());
  b.mlp_w1.accumulate(c.ln2_out.transpose() * dpre);
  Mat dln2_out = dpre * b.mlp_w1.value.transpose();
  RowVec dg = RowVec::Zero(cfg.width), dbb = RowVec::Zero(cfg.width);
  df_tilde +=
      layer_norm_backward(dln2_out, c.ln2, b.ln2_gain.value.row(0), &dg, &dbb);
  b.ln2_gain.accumulate(dg);
  b.ln2_bias.accumulate(dbb);

  // f_tilde = msa(x) + x
  return df_tilde + msa_backward(df_tilde, c.x, c.msa, b, cfg, tokens);
}

EncodeResult encode(const std::vector<Mat>& images, const EncoderParams& p,
                    const Guidance* guidance, EncodeCache* cache) {
  const EncoderConfig& cfg = p.config;
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("encode: empty batch");
  const int n = int(images.size());
  const int t = cfg.tokens(), d = cfg.width;
  const int side = cfg.grid / cfg.patch, pp = cfg.patch * cfg.patch;

  EncodeCache local;
  EncodeCache& c = cache ? *cache : local;
  c.patches.assign(n, Mat());
  c.x0.resize(n * t, d);

  for (int s = 0; s < n; ++s) {
    const Mat& img = images[s];
    if (img.rows() != cfg.grid || img.cols() != cfg.grid)
      throw std::invalid_argument(
          "encode: image " + std::to_string(s) + " is " +
          std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
          ", want " + std::to_string(cfg.grid) + "x" +
          std::to_string(cfg.grid));
    check_finite(img, "encode");
    Mat flat(t - 1, pp);
    for (int pr = 0; pr < side; ++pr)
      for (int pc = 0; pc < side; ++pc) {
        Mat block = img.block(pr * cfg.patch, pc * cfg.patch, cfg.patch,
                              cfg.patch);
        for (int i = 0; i < cfg.patch; ++i)
          flat.block(pr * side + pc, i * cfg.patch, 1, cfg.patch) =
              block.row(i);
      }
    c.patches[s] = flat;
    auto xs = c.x0.middleRows(s * t, t);
    xs.row(0) = p.stem.cls.value.row(0);
    xs.bottomRows(t - 1) = flat * p.stem.patch_proj.value;
    xs.bottomRows(t - 1).rowwise() += p.stem.patch_bias.value.row(0);
    xs += p.stem.pos.value;
  }

  c.blocks.assign(n, std::vector<BlockCache>(cfg.depth));
  EncodeResult res;
  res.attn.assign(cfg.depth, BatchAttention(n));
  res.features.resize(n, d);
  for (int s = 0; s < n; ++s) {
    Mat x = c.x0.middleRows(s * t, t);
    for (int l = 0; l < cfg.depth; ++l) {
      BlockResult br = block_forward(x, p.blocks[l], cfg, t, cfg.mode,
                                     guidance, &c.blocks[s][l]);
      res.attn[l][s] = std::move(br.attn[0]);
      x = std::move(br.out);
    }
    res.features.row(s) = x.row(0);
  }
  return res;
}

void encode_backward(const Mat& dfeatures, const EncodeCache& c,
                     EncoderParams& p, RowVec* dwbar) {
  const EncoderConfig& cfg = p.config;
  const int t = cfg.tokens();
  const int n = int(dfeatures.rows());
  for (int s = 0; s < n; ++s) {
    Mat dxs = Mat::Zero(t, cfg.width);
    dxs.row(0) = dfeatures.row(s);
    for (int l = cfg.depth - 1; l >= 0; --l)
      dxs = block_backward(dxs, c.blocks[s][l], p.blocks[l], cfg, t, cfg.mode,
                           dwbar);
    p.stem.pos.accumulate(dxs);
    p.stem.cls.accumulate(dxs.row(0));
    p.stem.patch_bias.accumulate(dxs.bottomRows(t - 1).colwise().sum());
    p.stem.patch_proj.accumulate(c.patches[s].transpose() *
                                 dxs.bottomRows(t - 1));
  }
}

long adaptformer_param_count(int width, int bottleneck) {
  const long d = width, r = bottleneck;
  return (2 * r + 3) * d + r + 1;
}

namespace {

Mat uniform_mat(std::mt19937_64& rng, int rows, int cols, Scalar bound) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -bound, bound);
  return m;
}

Mat normal_mat(std::mt19937_64& rng, int rows, int cols, Scalar stddev) {
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng, 0.0, stddev);
  return m;
}

AdaptFormerParams make_adaptformer(int d, int r, std::mt19937_64& rng,
                                   const std::string& prefix) {
  AdaptFormerParams a;
  a.width = d;
  a.bottleneck = r;
  a.ln_gain = {prefix + "ln_gain", Mat::Ones(1, d)};
  a.ln_bias = {prefix + "ln_bias", Mat::Zero(1, d)};
  a.w_down = {prefix + "w_down",
              uniform_mat(rng, d, r, 1.0 / std::sqrt(Scalar(d)))};
  a.b_down = {prefix + "b_down", Mat::Zero(1, r)};
  a.w_up = {prefix + "w_up", Mat::Zero(r, d)};  // no-op start
  a.b_up = {prefix + "b_up", Mat::Zero(1, d)};
  a.s = {prefix + "s", Mat::Constant(1, 1, 0.1)};
  return a;
}

}  // namespace

EncoderParams make_encoder(const EncoderConfig& cfg, uint64_t seed,
                           Scalar alpha) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  const int d = cfg.width, t = cfg.tokens(), pp = cfg.patch * cfg.patch;
  std::mt19937_64 rng = make_stream(seed, /*tag=*/0x5eed);

  p.stem.patch_proj = {"stem.patch_proj",
                       uniform_mat(rng, pp, d, 1.0 / std::sqrt(Scalar(pp)))};
  p.stem.patch_bias = {"stem.patch_bias", Mat::Zero(1, d)};
  p.stem.pos = {"stem.pos", normal_mat(rng, t, d, 0.02)};
  p.stem.cls = {"stem.cls", normal_mat(rng, 1, d, 0.02)};

  const Scalar wb = 1.0 / std::sqrt(Scalar(d));
  p.blocks.resize(cfg.depth);
  for (int l = 0; l < cfg.depth; ++l) {
    BlockParams& b = p.blocks[l];
    const std::string pre = "blocks." + std::to_string(l) + ".";
    b.wq = {pre + "wq", uniform_mat(rng, d, d, wb)};
    b.wk = {pre + "wk", uniform_mat(rng, d, d, wb)};
    b.wv = {pre + "wv", uniform_mat(rng, d, d, wb)};
    b.wo = {pre + "wo", uniform_mat(rng, d, d, wb)};
    b.mlp_w1 = {pre + "mlp_w1", uniform_mat(rng, d, 4 * d, wb)};
    b.mlp_b1 = {pre + "mlp_b1", Mat::Zero(1, 4 * d)};
    b.mlp_w2 = {pre + "mlp_w2",
                uniform_mat(rng, 4 * d, d, 1.0 / std::sqrt(Scalar(4 * d)))};
    b.mlp_b2 = {pre + "mlp_b2", Mat::Zero(1, d)};
    b.ln1_gain = {pre + "ln1_gain", Mat::Ones(1, d)};
    b.ln1_bias = {pre + "ln1_bias", Mat::Zero(1, d)};
    b.ln2_gain = {pre + "ln2_gain", Mat::Ones(1, d)};
    b.ln2_bias = {pre + "ln2_bias", Mat::Zero(1, d)};
    if (cfg.mode == BlockMode::adaptformer)
      b.adapter = make_adaptformer(d, cfg.bottleneck, rng,
                                   "adapter." + std::to_string(l) + ".");
    else if (cfg.mode == BlockMode::sage)
      b.sg = make_sg_adapter(d, cfg.bottleneck, alpha, rng,
                             "sg." + std::to_string(l) + ".");
  }
  return p;
}

ParamRefs adaptformer_params(AdaptFormerParams& a) {
  return {&a.ln_gain, &a.ln_bias, &a.w_down, &a.b_down,
          &a.w_up,    &a.b_up,    &a.s};
}

ParamRefs block_params(BlockParams& b) {
  ParamRefs ps = {&b.wq,     &b.wk,     &b.wv,     &b.wo,
                  &b.mlp_w1, &b.mlp_b1, &b.mlp_w2, &b.mlp_b2,
                  &b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias};
  if (b.adapter)
    for (Param* q : adaptformer_params(*b.adapter)) ps.push_back(q);
  if (b.sg)
    for (Param* q : sg_params(*b.sg)) ps.push_back(q);
  return ps;
}

ParamRefs encoder_params(EncoderParams& p) {
  ParamRefs ps = {&p.stem.patch_proj, &p.stem.patch_bias, &p.stem.pos,
                  &p.stem.cls};
  for (BlockParams& b : p.blocks)
    for (Param* q : block_params(b)) ps.push_back(q);
  return ps;
}

ParamRefs encoder_base_params(EncoderParams& p) {
  ParamRefs ps = {&p.stem.patch_proj, &p.stem.patch_bias, &p.stem.pos,
                  &p.stem.cls};
  for (BlockParams& b : p.blocks) {
    for (Param* q : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp_w1, &b.mlp_b1,
                     &b.mlp_w2, &b.mlp_b2, &b.ln1_gain, &b.ln1_bias,
                     &b.ln2_gain, &b.ln2_bias})
      ps.push_back(q);
  }
  return ps;
}

ParamRefs encoder_adapter_params(EncoderParams& p) {
  ParamRefs ps;
  for (BlockParams& b : p.blocks) {
    if (b.adapter)
      for (Param* q : adaptformer_params(*b.adapter)) ps.push_back(q);
    if (b.sg)
      for (Param* q : sg_trainable_params(*b.sg)) ps.push_back(q);
  }
  return ps;
}

}  // namespace longtail
