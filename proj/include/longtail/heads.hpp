#pragma once

#include "longtail/types.hpp"

#include <string>
#include <vector>

namespace longtail {

// Per-class prompt-template embeddings. template column j of every class
// corresponds to prompt_templates()[j % 60] with [cls] filled in.
struct TextEmbeddingSet {
  int classes = 0;
  int templates = 0;  // same count for every class
  int width = 0;
  std::vector<Mat> per_class;  // each templates x width
};

// The 60 prompt templates, carried as configuration data only.
const std::vector<std::string>& prompt_templates();

TextEmbeddingSet load_text_embeddings(const std::string& csv_path);
void save_text_embeddings(const TextEmbeddingSet& t,
                          const std::string& csv_path);

struct ClassifierWeights {
  Param W;   // C x d, trainable
  Mat W_zs;  // C x d, frozen zero-shot copy
};

// Row i of both matrices is the mean of class i's template embeddings;
// W starts as an exact copy of W_zs.
ClassifierWeights init_classifier_from_text(const TextEmbeddingSet& t);

// scale * normalize(f) * normalize(W)^T
Mat cosine_logits(const Mat& f, const Mat& W, Scalar scale);
// Writes d(loss)/df into df and accumulates d(loss)/dW into dW when non-null.
void cosine_logits_backward(const Mat& dz, const Mat& f, const Mat& W,
                            Scalar scale, Mat* df, Mat* dW);

struct FITState {
  Param s1{"fit.s1", Mat::Zero(1, 1)};
  Param s2{"fit.s2", Mat::Zero(1, 1)};
};

// z + s1 * z_v + s2 * z_t
Mat fit_logits(const Mat& z, const Mat& z_v, const Mat& z_t,
               const FITState& fit);

}  // namespace longtail
