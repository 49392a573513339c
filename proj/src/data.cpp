#include "longtail/data.hpp"

#include "longtail/kernels.hpp"
#include "longtail/loss.hpp"
#include "longtail/optim.hpp"
#include "longtail/rng.hpp"
#include "longtail/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace longtail {

using nlohmann::json;

namespace {

constexpr uint64_t kPatternTag = 0x7061;
constexpr uint64_t kTrainTag = 0x7472;
constexpr uint64_t kTestTag = 0x7465;
constexpr uint64_t kShuffleTag = 0x7368;
constexpr uint64_t kJitterTag = 0x6a69;
constexpr uint64_t kWinitTag = 0x7769;
constexpr uint64_t kFoundationMix = 0x666f756eull;

}  // namespace

const char* to_string(Group g) {
  switch (g) {
    case Group::head: return "head";
    case Group::medium: return "medium";
    case Group::tail: return "tail";
  }
  return "?";
}

Group group_from_string(const std::string& s) {
  if (s == "head") return Group::head;
  if (s == "medium") return Group::medium;
  if (s == "tail") return Group::tail;
  throw std::invalid_argument("unknown group: " + s);
}

void LongTailSpec::validate() const {
  if (classes < 1) throw std::invalid_argument("longtail: classes < 1");
  if (!(beta >= 1.0)) throw std::invalid_argument("longtail: beta < 1");
  if (beta > 1.0 && classes < 2)
    throw std::invalid_argument("longtail: ratio > 1 needs at least 2 classes");
  if (n1 < 1) throw std::invalid_argument("longtail: n1 < 1");
  if (Scalar(n1) < beta)
    throw std::invalid_argument("longtail: n1 < beta leaves the rarest class empty");
}

Vec longtail_counts(const LongTailSpec& spec) {
  spec.validate();
  Vec counts(spec.classes);
  if (spec.classes == 1) {
    counts(0) = Scalar(spec.n1);
    return counts;
  }
  for (int i = 0; i < spec.classes; ++i)
    counts(i) = Scalar(std::llround(
        Scalar(spec.n1) *
        std::pow(spec.beta, -Scalar(i) / Scalar(spec.classes - 1))));
  return counts;
}

std::vector<Group> split_groups(const Vec& counts, Scalar hi, Scalar lo) {
  if (!(hi > lo) || !(lo >= 1.0))
    throw std::invalid_argument("split_groups: need hi > lo >= 1");
  std::vector<Group> groups(static_cast<size_t>(counts.size()));
  for (Index i = 0; i < counts.size(); ++i)
    groups[static_cast<size_t>(i)] = counts(i) > hi   ? Group::head
                                     : counts(i) < lo ? Group::tail
                                                      : Group::medium;
  return groups;
}

void SyntheticTaskSpec::validate() const {
  train.validate();
  if (grid <= 0 || patch <= 0 || grid % patch != 0)
    throw std::invalid_argument("task: grid not divisible by patch");
  if (!(noise >= 0.0)) throw std::invalid_argument("task: negative noise");
  if (test_per_class < 1)
    throw std::invalid_argument("task: test_per_class < 1");
  if (Index(patterns.size()) != train.classes)
    throw std::invalid_argument("task: pattern count != classes");
  for (const Mat& p : patterns)
    if (p.rows() != grid || p.cols() != grid)
      throw std::invalid_argument("task: pattern shape != grid");
}

SyntheticTaskSpec make_task(const LongTailSpec& train, int grid, int patch,
                            Scalar noise, int test_per_class,
                            Scalar pattern_scale) {
  SyntheticTaskSpec task;
  task.grid = grid;
  task.patch = patch;
  task.noise = noise;
  task.train = train;
  task.test_per_class = test_per_class;
  task.patterns.reserve(static_cast<size_t>(train.classes));
  for (int c = 0; c < train.classes; ++c) {
    auto g = make_stream(train.seed, kPatternTag, static_cast<uint64_t>(c));
    Mat p(grid, grid);
    for (Index i = 0; i < p.size(); ++i)
      p.data()[i] = normal(g, 0.0, pattern_scale);
    task.patterns.push_back(std::move(p));
  }
  task.validate();
  return task;
}

namespace {

void draw_class(const SyntheticTaskSpec& task, int c, long n, uint64_t tag,
                Dataset* out) {
  auto g = make_stream(task.train.seed, tag, static_cast<uint64_t>(c));
  for (long k = 0; k < n; ++k) {
    Mat img = task.patterns[static_cast<size_t>(c)];
    if (task.noise > 0.0)
      for (Index i = 0; i < img.size(); ++i)
        img.data()[i] += normal(g, 0.0, task.noise);
    out->images.push_back(std::move(img));
    out->labels.push_back(c);
  }
}

}  // namespace

TaskData generate(const SyntheticTaskSpec& task) {
  task.validate();
  TaskData data;
  data.counts = longtail_counts(task.train);
  for (int c = 0; c < task.train.classes; ++c) {
    draw_class(task, c, static_cast<long>(data.counts(c)), kTrainTag,
               &data.train);
    draw_class(task, c, task.test_per_class, kTestTag, &data.test);
  }
  return data;
}

namespace {

void write_images(std::ostream& os, const std::vector<Mat>& images) {
  for (const Mat& m : images)
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) put_f64_le(os, m(i, j));
}

std::vector<Mat> read_images(std::istream& is, size_t n, int grid) {
  std::vector<Mat> images;
  images.reserve(n);
  for (size_t k = 0; k < n; ++k) {
    Mat m(grid, grid);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64_le(is);
    images.push_back(std::move(m));
  }
  if (!is) throw std::runtime_error("dataset: truncated samples.bin");
  return images;
}

}  // namespace

void save_dataset(const std::string& dir, const SyntheticTaskSpec& task,
                  const TaskData& data) {
  task.validate();
  std::filesystem::create_directories(dir);

  std::vector<Group> groups = split_groups(data.counts);
  json meta = {{"grid", task.grid},
               {"patch", task.patch},
               {"noise", task.noise},
               {"test_per_class", task.test_per_class},
               {"train",
                {{"classes", task.train.classes},
                 {"n1", task.train.n1},
                 {"beta", task.train.beta},
                 {"seed", task.train.seed}}},
               {"counts", std::vector<Scalar>(
                              data.counts.data(),
                              data.counts.data() + data.counts.size())},
               {"groups", json::array()},
               {"pattern_count", task.patterns.size()},
               {"train_count", data.train.images.size()},
               {"test_count", data.test.images.size()}};
  for (Group g : groups) meta["groups"].push_back(to_string(g));
  std::ofstream mout(dir + "/meta.json", std::ios::trunc);
  if (!mout) throw std::runtime_error("dataset: cannot write meta.json");
  mout << meta.dump(2) << "\n";

  // patterns first, then train rows, then test rows
  std::ofstream sout(dir + "/samples.bin", std::ios::binary | std::ios::trunc);
  if (!sout) throw std::runtime_error("dataset: cannot write samples.bin");
  write_images(sout, task.patterns);
  write_images(sout, data.train.images);
  write_images(sout, data.test.images);

  std::ofstream lout(dir + "/labels.bin", std::ios::binary | std::ios::trunc);
  if (!lout) throw std::runtime_error("dataset: cannot write labels.bin");
  for (int y : data.train.labels) put_u32_le(lout, static_cast<uint32_t>(y));
  for (int y : data.test.labels) put_u32_le(lout, static_cast<uint32_t>(y));
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream min(dir + "/meta.json");
  if (!min) throw std::runtime_error("dataset: missing meta.json in " + dir);
  json meta = json::parse(min);

  LoadedDataset out;
  out.task.grid = meta.at("grid").get<int>();
  out.task.patch = meta.at("patch").get<int>();
  out.task.noise = meta.at("noise").get<Scalar>();
  out.task.test_per_class = meta.at("test_per_class").get<int>();
  const auto& tr = meta.at("train");
  out.task.train.classes = tr.at("classes").get<int>();
  out.task.train.n1 = tr.at("n1").get<int>();
  out.task.train.beta = tr.at("beta").get<Scalar>();
  out.task.train.seed = tr.at("seed").get<uint64_t>();

  const auto counts = meta.at("counts").get<std::vector<Scalar>>();
  out.data.counts = Eigen::Map<const Vec>(counts.data(),
                                          static_cast<Index>(counts.size()));
  for (const auto& g : meta.at("groups"))
    out.groups.push_back(group_from_string(g.get<std::string>()));

  const auto pattern_count = meta.at("pattern_count").get<size_t>();
  const auto train_count = meta.at("train_count").get<size_t>();
  const auto test_count = meta.at("test_count").get<size_t>();

  std::ifstream sin(dir + "/samples.bin", std::ios::binary);
  if (!sin) throw std::runtime_error("dataset: missing samples.bin in " + dir);
  out.task.patterns = read_images(sin, pattern_count, out.task.grid);
  out.data.train.images = read_images(sin, train_count, out.task.grid);
  out.data.test.images = read_images(sin, test_count, out.task.grid);

  std::ifstream lin(dir + "/labels.bin", std::ios::binary);
  if (!lin) throw std::runtime_error("dataset: missing labels.bin in " + dir);
  for (size_t k = 0; k < train_count; ++k)
    out.data.train.labels.push_back(static_cast<int>(get_u32_le(lin)));
  for (size_t k = 0; k < test_count; ++k)
    out.data.test.labels.push_back(static_cast<int>(get_u32_le(lin)));
  if (!lin) throw std::runtime_error("dataset: truncated labels.bin");

  out.task.validate();
  return out;
}

namespace {

std::vector<Mat> gather(const std::vector<Mat>& images,
                        const std::vector<size_t>& order, size_t begin,
                        size_t end) {
  std::vector<Mat> batch;
  batch.reserve(end - begin);
  for (size_t k = begin; k < end; ++k) batch.push_back(images[order[k]]);
  return batch;
}

Mat class_mean_features(const Dataset& set, const EncoderParams& enc,
                        int classes, int batch_size) {
  const int d = enc.config.width;
  Mat sums = Mat::Zero(classes, d);
  Vec counts = Vec::Zero(classes);
  const size_t n = set.images.size();
  for (size_t start = 0; start < n; start += size_t(batch_size)) {
    const size_t stop = std::min(n, start + size_t(batch_size));
    std::vector<Mat> batch(set.images.begin() + long(start),
                           set.images.begin() + long(stop));
    // direction centroids: average unit vectors, matching cosine geometry
    Mat f = l2_normalize_rows(encode(batch, enc).features);
    for (size_t k = start; k < stop; ++k) {
      sums.row(set.labels[k]) += f.row(long(k - start));
      counts(set.labels[k]) += 1.0;
    }
  }
  for (int c = 0; c < classes; ++c) {
    if (counts(c) == 0.0)
      throw std::runtime_error("build_foundation: class " + std::to_string(c) +
                               " missing from pretraining draw");
    sums.row(c) /= counts(c);
  }
  return sums;
}

}  // namespace

FoundationBundle build_foundation(const SyntheticTaskSpec& task,
                                  const FoundationConfig& cfg) {
  task.validate();

  // balanced draw from the same generative family, on its own seed
  SyntheticTaskSpec pre = task;
  pre.train.n1 = cfg.per_class;
  pre.train.beta = 1.0;
  pre.train.seed = splitmix64(task.train.seed ^ kFoundationMix);
  pre.validate();
  TaskData data = generate(pre);

  EncoderConfig ecfg = cfg.encoder;
  ecfg.grid = task.grid;
  ecfg.patch = task.patch;
  ecfg.mode = BlockMode::plain;
  ecfg.validate();

  EncoderParams enc = make_encoder(ecfg, cfg.seed);
  auto wg = make_stream(cfg.seed, kWinitTag);
  Param W("classifier.W", Mat(task.train.classes, ecfg.width));
  for (Index i = 0; i < W.value.size(); ++i)
    W.value.data()[i] = normal(wg, 0.0, 1.0 / std::sqrt(Scalar(ecfg.width)));

  ParamRefs params = encoder_params(enc);
  params.push_back(&W);
  enable_grads(params);
  SgdMomentum opt(params, cfg.momentum);
  ClassFrequencies freq = make_frequencies(data.counts);

  const size_t n = data.train.images.size();
  const size_t batches = (n + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size);
  const long total = long(batches) * cfg.epochs;
  long step = 0;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto shuffle_rng =
        make_stream(cfg.seed, kShuffleTag, static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < n; start += size_t(cfg.batch_size)) {
      const size_t stop = std::min(n, start + size_t(cfg.batch_size));
      std::vector<Mat> batch = gather(data.train.images, order, start, stop);
      std::vector<int> labels;
      labels.reserve(stop - start);
      for (size_t k = start; k < stop; ++k)
        labels.push_back(data.train.labels[order[k]]);

      EncodeCache cache;
      Mat f = encode(batch, enc, nullptr, &cache).features;
      Mat z = cosine_logits(f, W.value, cfg.scale);
      Mat dz;
      const Scalar loss = la_loss(z, labels, freq, &dz);
      if (!std::isfinite(loss))
        throw std::runtime_error("build_foundation: pretraining diverged");

      zero_grads(params);
      Mat df;
      cosine_logits_backward(dz, f, W.value, cfg.scale, &df, &*W.grad);
      encode_backward(df, cache, enc);
      if (cfg.weight_decay > 0.0)
        for (Param* p : params) *p->grad += cfg.weight_decay * p->value;
      opt.step(cosine_lr(step, total, cfg.lr));
      ++step;
    }
  }

  // jittered class-mean features stand in for per-class text templates
  Mat means = class_mean_features(data.train, enc, task.train.classes,
                                  cfg.batch_size);
  FoundationBundle bundle;
  bundle.text.classes = task.train.classes;
  bundle.text.templates = cfg.templates;
  bundle.text.width = ecfg.width;
  for (int c = 0; c < task.train.classes; ++c) {
    auto jg = make_stream(cfg.seed, kJitterTag, static_cast<uint64_t>(c));
    Mat t(cfg.templates, ecfg.width);
    for (int j = 0; j < cfg.templates; ++j)
      for (int k = 0; k < ecfg.width; ++k)
        t(j, k) = means(c, k) + normal(jg, 0.0, cfg.jitter);
    bundle.text.per_class.push_back(std::move(t));
  }

  disable_grads(encoder_params(enc));
  bundle.encoder = std::move(enc);
  return bundle;
}

uint64_t bundle_checksum(const FoundationBundle& bundle) {
  uint64_t h = kFnvOffset;
  // const_cast only to reuse the canonical enumeration; values untouched
  for (Param* p :
       encoder_params(const_cast<EncoderParams&>(bundle.encoder))) {
    h = fnv1a(p->name, h);
    h = mat_checksum(p->value, h);
  }
  for (const Mat& t : bundle.text.per_class) h = mat_checksum(t, h);
  return h;
}

void save_foundation(const std::string& dir, const FoundationBundle& bundle) {
  std::filesystem::create_directories(dir);
  save_encoder_snapshot(dir + "/encoder.bin", bundle.encoder);
  save_text_embeddings(bundle.text, dir + "/text.csv");
}

FoundationBundle load_foundation(const std::string& dir) {
  FoundationBundle bundle;
  bundle.encoder = load_encoder_snapshot(dir + "/encoder.bin");
  bundle.text = load_text_embeddings(dir + "/text.csv");
  return bundle;
}

}  // namespace longtail
