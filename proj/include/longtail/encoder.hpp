#pragma once

#include "longtail/sg_adapter.hpp"
#include "longtail/types.hpp"

#include <optional>
#include <random>
#include <vector>

namespace longtail {

enum class BlockMode { plain, adaptformer, sage };

const char* to_string(BlockMode m);
BlockMode block_mode_from_string(const std::string& s);

struct EncoderConfig {
  int depth = 2;        // number of blocks
  int width = 16;       // token width d
  int heads = 2;        // attention heads
  int head_width = 8;   // per-head width, heads * head_width == width
  int bottleneck = 4;   // adapter bottleneck r
  int grid = 8;         // image side, pixels
  int patch = 4;        // patch side, pixels
  BlockMode mode = BlockMode::plain;

  int tokens() const {
    const int side = grid / patch;
    return side * side + 1;  // patches plus the class token
  }
  void validate() const;
};

struct AdaptFormerParams {
  int width = 0, bottleneck = 0;
  Param ln_gain, ln_bias;  // 1 x d
  Param w_down, b_down;    // d x r, 1 x r
  Param w_up, b_up;        // r x d, 1 x d
  Param s;                 // 1 x 1 learnable scale
};

struct BlockParams {
  // Fused per-head projections; head j owns columns [j*d_k, (j+1)*d_k).
  Param wq, wk, wv;  // d x d
  Param wo;          // d x d
  Param mlp_w1, mlp_b1;  // d x 4d, 1 x 4d
  Param mlp_w2, mlp_b2;  // 4d x d, 1 x d
  // Two norm pairs; the residual branch uses ln2 before the MLP, ln1 is
  // carried frozen at identity for layout parity with the production block.
  Param ln1_gain, ln1_bias;
  Param ln2_gain, ln2_bias;
  std::optional<AdaptFormerParams> adapter;
  std::optional<SGAdapterParams> sg;
};

struct StemParams {
  Param patch_proj;  // patch^2 x d
  Param patch_bias;  // 1 x d
  Param pos;         // tokens x d
  Param cls;         // 1 x d
};

struct EncoderParams {
  EncoderConfig config;
  StemParams stem;
  std::vector<BlockParams> blocks;
};

// Attention for one sample: one tokens x tokens matrix per head.
using HeadAttention = std::vector<Mat>;
// Per-sample attention for a batch.
using BatchAttention = std::vector<HeadAttention>;

// Token matrices are stored stacked: sample s owns rows
// [s*tokens, (s+1)*tokens) of an (n*tokens) x d matrix.

struct MSACache {
  std::vector<std::vector<Mat>> q, k, v;  // [sample][head], tokens x d_k
  BatchAttention attn;
  Mat concat;  // stacked head outputs, (n*tokens) x d
};

struct MSAResult {
  Mat out;  // pre-residual, same shape as the input
  BatchAttention attn;
};

// x stacks per-sample token matrices; tokens is the per-sample row count.
MSAResult msa_forward(const Mat& x, const BlockParams& b,
                      const EncoderConfig& cfg, int tokens,
                      MSACache* cache = nullptr);
// Returns d(loss)/dx and accumulates projection gradients when enabled.
Mat msa_backward(const Mat& dout, const Mat& x, const MSACache& cache,
                 BlockParams& b, const EncoderConfig& cfg, int tokens);

struct BlockCache {
  Mat x;
  MSACache msa;
  Mat f_tilde;
  LayerNormCache ln2;
  Mat ln2_out, mlp_pre, mlp_act;
  SGForwardCache sg;
  Mat sg_out;
  LayerNormCache ln_af;
  Mat af_norm, af_pre, af_act, af_out;
};

struct BlockResult {
  Mat out;
  BatchAttention attn;
};

// mode selects the residual recomposition; guidance is required for sage.
BlockResult block_forward(const Mat& x, const BlockParams& b,
                          const EncoderConfig& cfg, int tokens, BlockMode mode,
                          const Guidance* guidance = nullptr,
                          BlockCache* cache = nullptr);
Mat block_backward(const Mat& dout, const BlockCache& cache, BlockParams& b,
                   const EncoderConfig& cfg, int tokens, BlockMode mode,
                   RowVec* dwbar = nullptr);

struct EncodeCache {
  std::vector<Mat> patches;  // per sample, (tokens-1) x patch^2
  Mat x0;
  // indexed [sample][block]; samples run the stack independently so a
  // sample's features do not depend on what else shares the batch
  std::vector<std::vector<BlockCache>> blocks;
};

struct EncodeResult {
  Mat features;                       // n x d class-token features
  std::vector<BatchAttention> attn;   // per block
};

EncodeResult encode(const std::vector<Mat>& images, const EncoderParams& p,
                    const Guidance* guidance = nullptr,
                    EncodeCache* cache = nullptr);
void encode_backward(const Mat& dfeatures, const EncodeCache& cache,
                     EncoderParams& p, RowVec* dwbar = nullptr);

long adaptformer_param_count(int width, int bottleneck);

EncoderParams make_encoder(const EncoderConfig& cfg, uint64_t seed,
                           Scalar alpha = 0.1);

ParamRefs block_params(BlockParams& b);          // mode-aware full set
ParamRefs encoder_params(EncoderParams& p);      // serialization order
ParamRefs encoder_base_params(EncoderParams& p); // stem + frozen-block arrays
ParamRefs encoder_adapter_params(EncoderParams& p);  // learnable adapter set
ParamRefs adaptformer_params(AdaptFormerParams& a);

}  // namespace longtail
