#pragma once

#include "longtail/kernels.hpp"
#include "longtail/types.hpp"

#include <random>
#include <string>

namespace longtail {

// Bottleneck adapter with a textual branch driven by the mean classifier row.
// alpha mixes the rectified and linear up-projections and is a fixed
// hyperparameter, stored alongside the arrays but never trained.
struct SGAdapterParams {
  int width = 0;       // d
  int bottleneck = 0;  // r
  Param ln_gain, ln_bias;      // 1 x d, shared by visual and textual inputs
  Param w_proj, b_proj;        // d x d, 1 x d textual modulation
  Param w_v_down, b_v_down;    // d x r, 1 x r visual bottleneck
  Param w_vt_down, b_vt_down;  // d x r, 1 x r modulated bottleneck
  Param w_t_down, b_t_down;    // d x r, 1 x r textual bottleneck
  Param w_up, b_up;            // 2r x d, 1 x d
  Param s_vt;                  // 1 x 1 textual path scale
  Param s_block;               // 1 x 1 block-level adapter scale
  Param alpha;                 // 1 x 1, frozen
};

struct Guidance {
  RowVec wbar;  // 1 x d mean classifier row
};

// Arithmetic mean of the classifier rows at call time; no detaching, the
// gradient of anything downstream flows back into every classifier row.
Guidance build_guidance(const Mat& classifier);

struct SGForwardCache {
  LayerNormCache ln_v, ln_t;
  Mat f_v;       // N x d
  RowVec f_t;    // 1 x d
  RowVec proj;   // 1 x d
  Mat f_vt;      // N x d
  RowVec t_down; // 1 x r
  Mat bottleneck;  // N x 2r, pre-activation
};

// Adapter output before the block-level scale s_block.
Mat sg_forward(const Mat& f_tilde, const Guidance& g, const SGAdapterParams& p,
               SGForwardCache* cache = nullptr);

// Returns d(loss)/d(f_tilde); accumulates parameter gradients into enabled
// buffers and the guidance gradient into dwbar when non-null.
Mat sg_backward(const Mat& dout, const SGForwardCache& cache,
                SGAdapterParams& p, RowVec* dwbar = nullptr);

// Closed-form learnable count for one adapter; equals the allocated sizes.
long sg_param_count(int width, int bottleneck);

SGAdapterParams make_sg_adapter(int width, int bottleneck, Scalar alpha,
                                std::mt19937_64& rng,
                                const std::string& prefix);

// Every array incl. the frozen alpha (serialization order).
ParamRefs sg_params(SGAdapterParams& p);
// The learnable subset.
ParamRefs sg_trainable_params(SGAdapterParams& p);

}  // namespace longtail
