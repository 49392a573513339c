#pragma once

#include "longtail/encoder.hpp"
#include "longtail/heads.hpp"
#include "longtail/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace longtail {

enum class Group { head, medium, tail };
const char* to_string(Group g);
Group group_from_string(const std::string& s);

// exponential class-size profile with endpoint ratio beta
struct LongTailSpec {
  int classes = 10;
  int n1 = 500;
  Scalar beta = 100.0;
  uint64_t seed = 1;
  void validate() const;
};

// n_i = round(n1 * beta^(-(i-1)/(C-1))), nonincreasing, every count >= 1
Vec longtail_counts(const LongTailSpec& spec);

// head if n > hi, tail if n < lo, else medium (both cutoffs land on medium)
std::vector<Group> split_groups(const Vec& counts, Scalar hi = 100.0,
                                Scalar lo = 20.0);

// class-conditional Gaussians around per-class spatial patterns
struct SyntheticTaskSpec {
  int grid = 8;
  int patch = 4;
  Scalar noise = 0.3;
  std::vector<Mat> patterns;  // one grid x grid mean per class
  LongTailSpec train;
  int test_per_class = 20;
  void validate() const;
};

SyntheticTaskSpec make_task(const LongTailSpec& train, int grid = 8,
                            int patch = 4, Scalar noise = 0.3,
                            int test_per_class = 20,
                            Scalar pattern_scale = 1.0);

struct Dataset {
  std::vector<Mat> images;
  std::vector<int> labels;
};

struct TaskData {
  Dataset train;  // long-tailed, class-major order
  Dataset test;   // balanced
  Vec counts;     // per-class train sizes
};

// per-class seeded streams; deterministic regardless of schedule
TaskData generate(const SyntheticTaskSpec& task);

// directory layout: meta.json + samples.bin (little-endian float64 images)
// + labels.bin (little-endian u32); samples.bin holds the class patterns,
// then train rows, then test rows
void save_dataset(const std::string& dir, const SyntheticTaskSpec& task,
                  const TaskData& data);

struct LoadedDataset {
  SyntheticTaskSpec task;  // patterns restored from the archive head
  TaskData data;
  std::vector<Group> groups;
};
LoadedDataset load_dataset(const std::string& dir);

// frozen stand-in for a large pretrained vision-language encoder
struct FoundationConfig {
  EncoderConfig encoder;  // mode forced to plain while pretraining
  int per_class = 100;    // balanced pretraining draw per class
  int epochs = 30;
  int batch_size = 32;
  Scalar lr = 0.05;
  Scalar momentum = 0.9;
  Scalar weight_decay = 1e-3;  // keeps the scale-blind cosine head bounded
  Scalar scale = 10.0;         // cosine logit scale while pretraining
  int templates = 8;           // jittered class-mean copies per class
  Scalar jitter = 0.05;
  uint64_t seed = 11;
};

struct FoundationBundle {
  EncoderParams encoder;  // frozen: no parameter carries a gradient buffer
  TextEmbeddingSet text;  // consumed by init_classifier_from_text
};

// pretrains a plain encoder + cosine classifier on a balanced draw from the
// task's generative family, freezes it, and emits jittered class-mean
// features as the per-class templates
FoundationBundle build_foundation(const SyntheticTaskSpec& task,
                                  const FoundationConfig& cfg);

uint64_t bundle_checksum(const FoundationBundle& bundle);
void save_foundation(const std::string& dir, const FoundationBundle& bundle);
FoundationBundle load_foundation(const std::string& dir);

}  // namespace longtail
