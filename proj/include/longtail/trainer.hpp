#pragma once

#include "longtail/data.hpp"
#include "longtail/loss.hpp"
#include "longtail/optim.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace longtail {

// One switch per pipeline stage. Off means: sg — AdaptFormer instead of the
// semantic-guided adapter; init — random unit-norm classifier rows instead of
// the zero-shot rows; cf — frequency exponent gamma treated as 0 (plain
// logit-adjusted objective); fit — logit-recomposition terms dropped and
// evaluation reads the fine-tuned logits alone.
struct AblationFlags {
  bool sg = true;
  bool init = true;
  bool cf = true;
  bool fit = true;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  Scalar lr0 = 0.01;
  Scalar momentum = 0.9;
  uint64_t seed = 5;
  Scalar alpha = 0.1;   // negative-activation mix inside the adapter
  Scalar scale = 25.0;  // cosine logit scale shared by all three logit sets
  Scalar group_hi = 100.0;
  Scalar group_lo = 20.0;
  AblationFlags flags;
  LossConfig loss;
  void validate() const;
};

// Flags folded into the loss terms: cf off zeroes gamma, fit off zeroes the
// three mixing weights.
LossConfig effective_loss(const TrainConfig& cfg);

struct Metrics {
  int epoch = 0;
  std::string split;
  Scalar acc_all = 0;
  std::optional<Scalar> acc_head, acc_med, acc_tail;
  Scalar loss = 0;
};

struct SageModel {
  EncoderParams encoder;         // base frozen, adapters trainable
  ClassifierWeights classifier;  // W trainable, W_zs frozen
  FITState fit;                  // trainable only when the fit flag is on
};

// Fresh adapters and classifier over the frozen bundle. Gradient buffers are
// enabled on exactly the trainable set selected by the flags.
SageModel make_model(const TrainConfig& cfg, const FoundationBundle& bundle);
// The optimizer's parameter set, in a fixed order.
ParamRefs trainable_params(SageModel& m, const AblationFlags& flags);

// Index order the training loop visits in the given epoch.
std::vector<int> epoch_permutation(uint64_t seed, int epoch, int n);

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Forward-only objective on one batch. fzs_rows holds the frozen encoder's
// features for the same rows; it may be empty when the fit flag is off.
Scalar batch_objective(const SageModel& m, const TrainConfig& cfg,
                       const ClassFrequencies& freq,
                       const std::vector<Mat>& images,
                       const std::vector<int>& labels, const Mat& fzs_rows);

// One forward/backward/parameter update; returns the batch objective before
// the step. Throws TrainingDiverged on a non-finite objective.
Scalar train_step(SageModel& m, SgdMomentum& opt, const TrainConfig& cfg,
                  const ClassFrequencies& freq, const std::vector<Mat>& images,
                  const std::vector<int>& labels, const Mat& fzs_rows,
                  Scalar lr);

// Top-1 accuracy over the set, overall and per frequency group; a group with
// no samples is reported absent. Predictions read the recomposed logits when
// the fit flag is on, otherwise the fine-tuned logits. loss is the training
// objective evaluated on the set.
Metrics evaluate(const SageModel& m, const FoundationBundle& bundle,
                 const TrainConfig& cfg, const ClassFrequencies& freq,
                 const Dataset& set, const std::vector<Group>& groups);

struct TrainResult {
  SageModel model;
  std::vector<Metrics> history;  // per epoch: one train row, one test row
};

// SGD with momentum over adapters, classifier, and recomposition scales,
// cosine-decayed per iteration. The bundle stays frozen throughout.
TrainResult train(const TrainConfig& cfg, const FoundationBundle& bundle,
                  const TaskData& data);

// columns: epoch,split,acc_all,acc_head,acc_med,acc_tail,loss
// Absent group accuracies serialize as empty cells.
std::string metrics_csv(const std::vector<Metrics>& rows);
void save_metrics_csv(const std::string& path,
                      const std::vector<Metrics>& rows);
std::vector<Metrics> parse_metrics_csv(const std::string& text);
std::vector<Metrics> load_metrics_csv(const std::string& path);

}  // namespace longtail
