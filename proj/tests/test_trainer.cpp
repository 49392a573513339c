#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "longtail/rng.hpp"
#include "longtail/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>

using namespace longtail;

namespace {

const SyntheticTaskSpec& task() {
  static const SyntheticTaskSpec t = [] {
    LongTailSpec lt;
    lt.classes = 3;
    lt.n1 = 30;
    lt.beta = 10;
    lt.seed = 3;
    return make_task(lt, 8, 4, 0.3, 10);
  }();
  return t;
}

const TaskData& data() {
  static const TaskData d = generate(task());
  return d;
}

const FoundationBundle& bundle() {
  static const FoundationBundle b = [] {
    FoundationConfig fc;
    fc.per_class = 50;
    fc.epochs = 15;
    return build_foundation(task(), fc);
  }();
  return b;
}

TrainConfig base_cfg() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr0 = 0.01;
  cfg.seed = 7;
  cfg.group_hi = 20;  // counts are [30, 9, 3]
  cfg.group_lo = 8;
  return cfg;
}

struct Batch {
  std::vector<Mat> images;
  std::vector<int> labels;
  Mat fzs;
};

Batch first_batch(int size) {
  Batch b;
  for (int i = 0; i < size; ++i) {
    b.images.push_back(data().train.images[static_cast<size_t>(i)]);
    b.labels.push_back(data().train.labels[static_cast<size_t>(i)]);
  }
  b.fzs = encode(b.images, bundle().encoder).features;
  return b;
}

Scalar max_param_gap(ParamRefs a, ParamRefs b) {
  REQUIRE(a.size() == b.size());
  Scalar gap = 0;
  for (size_t i = 0; i < a.size(); ++i)
    gap = std::max(gap,
                   (a[i]->value - b[i]->value).cwiseAbs().maxCoeff());
  return gap;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.01) == 0.01);
  CHECK(cosine_lr(100, 100, 0.01) == 0.0);
  CHECK(cosine_lr(50, 100, 0.01) ==
        doctest::Approx(0.005).epsilon(1e-14));
  CHECK(cosine_lr(25, 100, 0.01) ==
        doctest::Approx(0.5 * 0.01 *
                        (1.0 + std::cos(0.25 * std::acos(-1.0))))
            .epsilon(1e-14));
  CHECK_THROWS_AS(cosine_lr(-1, 100, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.01), std::invalid_argument);
}

TEST_CASE("momentum recurrence follows the velocity form") {
  Param p("p", Mat::Ones(1, 2));
  p.enable_grad();
  SgdMomentum opt({&p}, 0.9);

  (*p.grad)(0, 0) = 1.0;
  (*p.grad)(0, 1) = 2.0;
  opt.step(0.1);
  CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(p.value(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  (*p.grad)(0, 0) = 0.5;
  (*p.grad)(0, 1) = 0.5;
  opt.step(0.1);
  // v = 0.9*[1,2] + [0.5,0.5] = [1.4, 2.3]
  CHECK(p.value(0, 0) == doctest::Approx(0.9 - 0.14).epsilon(1e-15));
  CHECK(p.value(0, 1) == doctest::Approx(0.8 - 0.23).epsilon(1e-15));

  Param frozen("q", Mat::Ones(1, 1));
  SgdMomentum opt2({&frozen}, 0.9);
  CHECK_THROWS_AS(opt2.step(0.1), std::logic_error);
}

TEST_CASE("config validation rejects out-of-range fields") {
  auto broken = [](auto mutate) {
    TrainConfig cfg = base_cfg();
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.epochs = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.batch_size = 0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr0 = 0.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.momentum = 1.0; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.alpha = 1.5; }).validate(),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      broken([](TrainConfig& c) { c.group_hi = 5.0; }).validate(),
      std::invalid_argument);
  CHECK_NOTHROW(base_cfg().validate());
}

TEST_CASE("ablation flags fold into the loss terms") {
  TrainConfig cfg = base_cfg();
  const LossConfig on = effective_loss(cfg);
  CHECK(on.gamma == cfg.loss.gamma);
  CHECK(on.lambda1 == cfg.loss.lambda1);

  cfg.flags.cf = false;
  const LossConfig no_cf = effective_loss(cfg);
  CHECK(no_cf.gamma == 0.0);
  CHECK(no_cf.lambda3 == cfg.loss.lambda3);

  cfg.flags.cf = true;
  cfg.flags.fit = false;
  const LossConfig no_fit = effective_loss(cfg);
  CHECK(no_fit.gamma == cfg.loss.gamma);
  CHECK(no_fit.lambda1 == 0.0);
  CHECK(no_fit.lambda2 == 0.0);
  CHECK(no_fit.lambda3 == 0.0);
}

TEST_CASE("model assembly grafts the frozen base and enables the right set") {
  TrainConfig cfg = base_cfg();
  cfg.alpha = 0.25;
  SageModel m = make_model(cfg, bundle());

  CHECK(m.encoder.config.mode == BlockMode::sage);
  CHECK(m.encoder.blocks[0].sg->alpha.scalar() == 0.25);

  EncoderParams donor = bundle().encoder;
  ParamRefs src = encoder_base_params(donor);
  ParamRefs dst = encoder_base_params(m.encoder);
  REQUIRE(src.size() == dst.size());
  for (size_t i = 0; i < src.size(); ++i) {
    CHECK(dst[i]->name == src[i]->name);
    CHECK(dst[i]->value == src[i]->value);
    CHECK_FALSE(dst[i]->trainable());
  }

  const int d = m.encoder.config.width;
  const int r = m.encoder.config.bottleneck;
  ParamRefs adapters = encoder_adapter_params(m.encoder);
  for (Param* p : adapters) CHECK(p->trainable());
  CHECK(total_size(adapters) ==
        m.encoder.config.depth * sg_param_count(d, r));

  ParamRefs psi = trainable_params(m, cfg.flags);
  CHECK(psi.size() == adapters.size() + 3);  // classifier + two scales
  CHECK(m.classifier.W.trainable());
  CHECK(m.fit.s1.trainable());
  CHECK(m.fit.s2.trainable());
  CHECK(m.fit.s1.scalar() == 0.0);
  CHECK(m.fit.s2.scalar() == 0.0);

  // classifier rows start at the zero-shot rows
  CHECK(m.classifier.W.value == m.classifier.W_zs);
}

TEST_CASE("ablated assembly swaps the adapter and the classifier init") {
  TrainConfig cfg = base_cfg();
  cfg.flags.sg = false;
  cfg.flags.init = false;
  cfg.flags.fit = false;
  SageModel m = make_model(cfg, bundle());

  CHECK(m.encoder.config.mode == BlockMode::adaptformer);
  const int d = m.encoder.config.width;
  const int r = m.encoder.config.bottleneck;
  CHECK(total_size(encoder_adapter_params(m.encoder)) ==
        m.encoder.config.depth * adaptformer_param_count(d, r));

  ParamRefs psi = trainable_params(m, cfg.flags);
  CHECK(psi.size() == encoder_adapter_params(m.encoder).size() + 1);
  CHECK_FALSE(m.fit.s1.trainable());
  CHECK_FALSE(m.fit.s2.trainable());

  // random unit-norm rows replace the zero-shot copy; the zero-shot rows stay
  const ClassifierWeights zs = init_classifier_from_text(bundle().text);
  CHECK(m.classifier.W_zs == zs.W_zs);
  CHECK(m.classifier.W.value != zs.W.value);
  for (Index i = 0; i < m.classifier.W.value.rows(); ++i)
    CHECK(m.classifier.W.value.row(i).norm() ==
          doctest::Approx(1.0).epsilon(1e-12));

  // the draw is a pure function of the seed
  SageModel again = make_model(cfg, bundle());
  CHECK(again.classifier.W.value == m.classifier.W.value);
}

TEST_CASE("epoch permutation is a deterministic permutation") {
  const std::vector<int> p0 = epoch_permutation(7, 0, 32);
  std::vector<int> sorted = p0;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> iota(32);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(epoch_permutation(7, 0, 32) == p0);
  CHECK(epoch_permutation(7, 1, 32) != p0);
  CHECK(epoch_permutation(8, 0, 32) != p0);
}

TEST_CASE("one training step lowers the batch objective") {
  const TrainConfig cfg = base_cfg();
  SageModel m = make_model(cfg, bundle());
  const ClassFrequencies freq = make_frequencies(data().counts);
  const Batch b = first_batch(16);

  ParamRefs psi = trainable_params(m, cfg.flags);
  SgdMomentum opt(psi, cfg.momentum);

  const Scalar before = batch_objective(m, cfg, freq, b.images, b.labels, b.fzs);
  const Scalar reported =
      train_step(m, opt, cfg, freq, b.images, b.labels, b.fzs, 1e-3);
  CHECK(reported == before);
  const Scalar after = batch_objective(m, cfg, freq, b.images, b.labels, b.fzs);
  CHECK(after < before);
}

TEST_CASE("fit off reduces the objective to the compensated loss exactly") {
  TrainConfig cfg = base_cfg();
  cfg.flags.fit = false;
  SageModel m = make_model(cfg, bundle());
  const ClassFrequencies freq = make_frequencies(data().counts);
  const Batch b = first_batch(12);

  const Scalar obj = batch_objective(m, cfg, freq, b.images, b.labels, Mat());

  const Guidance g = build_guidance(m.classifier.W.value);
  const Mat f = encode(b.images, m.encoder, &g).features;
  const Mat z = cosine_logits(f, m.classifier.W.value, cfg.scale);
  const LossConfig lc = effective_loss(cfg);
  const Scalar direct = cf_loss(z, b.labels, freq, lc.mu, lc.gamma);
  CHECK(obj == direct);
}

TEST_CASE("cf off matches the logit-adjusted objective") {
  TrainConfig cfg = base_cfg();
  cfg.flags.fit = false;
  cfg.flags.cf = false;
  SageModel m = make_model(cfg, bundle());
  const ClassFrequencies freq = make_frequencies(data().counts);
  const Batch b = first_batch(12);

  const Scalar obj = batch_objective(m, cfg, freq, b.images, b.labels, Mat());

  const Guidance g = build_guidance(m.classifier.W.value);
  const Mat f = encode(b.images, m.encoder, &g).features;
  const Mat z = cosine_logits(f, m.classifier.W.value, cfg.scale);
  const Scalar la = la_loss(z, b.labels, freq);
  CHECK(std::abs(obj - la) <= 1e-12);
}

TEST_CASE("flag-gated loop equals a hand-rolled adapter baseline") {
  TrainConfig cfg = base_cfg();
  cfg.flags.sg = false;
  cfg.flags.cf = false;
  cfg.flags.fit = false;

  const TrainResult run = train(cfg, bundle(), data());

  // Same schedule, same batches, but written against the plain pieces:
  // AdaptFormer encoder, cosine head, logit-adjusted loss.
  SageModel m = make_model(cfg, bundle());
  const ClassFrequencies freq = make_frequencies(data().counts);
  ParamRefs psi = trainable_params(m, cfg.flags);
  SgdMomentum opt(psi, cfg.momentum);

  const int n = static_cast<int>(data().train.images.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total = steps_per_epoch * cfg.epochs;
  long step = 0;
  std::vector<Scalar> epoch_loss;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> perm = epoch_permutation(cfg.seed, epoch, n);
    Scalar sum = 0;
    long batches = 0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int b1 = std::min(n, b0 + cfg.batch_size);
      std::vector<Mat> images;
      std::vector<int> labels;
      for (int i = b0; i < b1; ++i) {
        const int idx = perm[static_cast<size_t>(i)];
        images.push_back(data().train.images[static_cast<size_t>(idx)]);
        labels.push_back(data().train.labels[static_cast<size_t>(idx)]);
      }
      zero_grads(psi);
      EncodeCache cache;
      const Mat f = encode(images, m.encoder, nullptr, &cache).features;
      const Mat z = cosine_logits(f, m.classifier.W.value, cfg.scale);
      Mat dz;
      sum += la_loss(z, labels, freq, &dz);
      ++batches;
      Mat df;
      cosine_logits_backward(dz, f, m.classifier.W.value, cfg.scale, &df,
                             &*m.classifier.W.grad);
      encode_backward(df, cache, m.encoder);
      opt.step(cosine_lr(step, total, cfg.lr0));
      ++step;
    }
    epoch_loss.push_back(sum / static_cast<Scalar>(batches));
  }

  REQUIRE(run.history.size() == 2 * static_cast<size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Metrics& row = run.history[static_cast<size_t>(2 * epoch)];
    CHECK(row.split == "train");
    CHECK(row.epoch == epoch);
    CHECK(std::abs(row.loss - epoch_loss[static_cast<size_t>(epoch)]) <=
          1e-10);
  }

  SageModel trained = run.model;
  CHECK(max_param_gap(trainable_params(trained, cfg.flags),
                      trainable_params(m, cfg.flags)) <= 1e-9);
}

TEST_CASE("same configuration and seed reproduce the run") {
  const TrainConfig cfg = base_cfg();
  TrainResult a = train(cfg, bundle(), data());
  TrainResult b = train(cfg, bundle(), data());
  CHECK(metrics_csv(a.history) == metrics_csv(b.history));
  CHECK(a.model.classifier.W.value == b.model.classifier.W.value);
  CHECK(a.model.fit.s1.scalar() == b.model.fit.s1.scalar());
  CHECK(max_param_gap(trainable_params(a.model, cfg.flags),
                      trainable_params(b.model, cfg.flags)) == 0.0);
}

TEST_CASE("training leaves every frozen parameter untouched") {
  const uint64_t before = bundle_checksum(bundle());
  const TrainConfig cfg = base_cfg();
  TrainResult run = train(cfg, bundle(), data());
  CHECK(bundle_checksum(bundle()) == before);

  EncoderParams donor = bundle().encoder;
  ParamRefs src = encoder_base_params(donor);
  ParamRefs dst = encoder_base_params(run.model.encoder);
  REQUIRE(src.size() == dst.size());
  for (size_t i = 0; i < src.size(); ++i) {
    CHECK(dst[i]->value == src[i]->value);
    CHECK_FALSE(dst[i]->trainable());
  }
  const ClassifierWeights zs = init_classifier_from_text(bundle().text);
  CHECK(run.model.classifier.W_zs == zs.W_zs);

  // training moved the trainable side
  CHECK(run.model.classifier.W.value != zs.W.value);
}

TEST_CASE("metrics history carries both splits and a descending trend hook") {
  TrainConfig cfg = base_cfg();
  cfg.epochs = 3;
  const TrainResult run = train(cfg, bundle(), data());
  REQUIRE(run.history.size() == 6);
  for (size_t i = 0; i < run.history.size(); ++i) {
    const Metrics& m = run.history[i];
    CHECK(m.epoch == static_cast<int>(i / 2));
    CHECK(m.split == (i % 2 == 0 ? "train" : "test"));
    CHECK(m.acc_all >= 0.0);
    CHECK(m.acc_all <= 1.0);
    REQUIRE(m.acc_head.has_value());
    REQUIRE(m.acc_med.has_value());
    REQUIRE(m.acc_tail.has_value());
    CHECK(std::isfinite(m.loss));
  }
  // every class group is populated, so acc_all is their weighted mix
  const Metrics& last = run.history.back();
  const Scalar mix =
      (10.0 * *last.acc_head + 10.0 * *last.acc_med + 10.0 * *last.acc_tail) /
      30.0;
  CHECK(last.acc_all == doctest::Approx(mix).epsilon(1e-12));
}

TEST_CASE("evaluate: a predictor locked to the first class scores the base rate") {
  // Degenerate task: every class shares one pattern and there is no noise, so
  // all samples produce the same feature; a classifier whose first row is
  // that feature then wins strictly everywhere.
  LongTailSpec lt;
  lt.classes = 3;
  lt.n1 = 30;
  lt.beta = 10;
  lt.seed = 9;
  SyntheticTaskSpec shared = make_task(lt, 8, 4, 0.0, 10);
  shared.patterns[1] = shared.patterns[0];
  shared.patterns[2] = shared.patterns[0];
  const TaskData d = generate(shared);

  TrainConfig cfg = base_cfg();
  cfg.flags.sg = false;
  cfg.flags.fit = false;
  SageModel m = make_model(cfg, bundle());

  const Mat f = encode({d.test.images[0]}, m.encoder).features;
  m.classifier.W.value.row(0) = f.row(0);
  m.classifier.W.value.row(1) = -f.row(0);
  auto g = make_stream(4, 2);
  for (Index j = 0; j < m.classifier.W.value.cols(); ++j)
    m.classifier.W.value(2, j) = normal(g);

  const Mat z = cosine_logits(f, m.classifier.W.value, cfg.scale);
  REQUIRE(z(0, 0) > z(0, 1));
  REQUIRE(z(0, 0) > z(0, 2));

  const ClassFrequencies freq = make_frequencies(d.counts);
  const std::vector<Group> groups =
      split_groups(d.counts, cfg.group_hi, cfg.group_lo);
  const Metrics r = evaluate(m, bundle(), cfg, freq, d.test, groups);

  // balanced test set, 10 per class, 3 classes
  CHECK(r.acc_all == 10.0 / 30.0);
  REQUIRE(r.acc_head.has_value());
  REQUIRE(r.acc_med.has_value());
  REQUIRE(r.acc_tail.has_value());
  CHECK(*r.acc_head == 1.0);
  CHECK(*r.acc_med == 0.0);
  CHECK(*r.acc_tail == 0.0);
}

TEST_CASE("evaluate: feature prototypes are a perfect oracle without noise") {
  LongTailSpec lt;
  lt.classes = 3;
  lt.n1 = 12;
  lt.beta = 4;
  lt.seed = 5;
  const SyntheticTaskSpec clean = make_task(lt, 8, 4, 0.0, 5);
  const TaskData d = generate(clean);

  TrainConfig cfg = base_cfg();
  cfg.flags.sg = false;
  cfg.flags.fit = false;
  cfg.group_hi = 8.0;  // counts are [12, 6, 3]
  cfg.group_lo = 4.0;
  SageModel m = make_model(cfg, bundle());

  const Mat f = encode(d.test.images, m.encoder).features;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < d.test.labels.size(); ++i) {
      if (d.test.labels[i] == c) {
        m.classifier.W.value.row(c) = f.row(static_cast<Index>(i));
        break;
      }
    }
  }

  const ClassFrequencies freq = make_frequencies(d.counts);
  const std::vector<Group> groups =
      split_groups(d.counts, cfg.group_hi, cfg.group_lo);
  const Metrics r = evaluate(m, bundle(), cfg, freq, d.test, groups);
  CHECK(r.acc_all == 1.0);
  CHECK(*r.acc_head == 1.0);
  CHECK(*r.acc_med == 1.0);
  CHECK(*r.acc_tail == 1.0);
}

TEST_CASE("evaluate: random rows on noise sit at chance, absent groups stay absent") {
  LongTailSpec lt;
  lt.classes = 10;
  lt.n1 = 10;
  lt.beta = 1;
  lt.seed = 21;
  const SyntheticTaskSpec noisy = make_task(lt, 8, 4, 25.0, 100);
  const TaskData d = generate(noisy);
  REQUIRE(d.test.images.size() == 1000);

  SageModel m;
  m.encoder = bundle().encoder;  // plain frozen encoder
  auto g = make_stream(99, 0xabcd);
  Mat W(10, m.encoder.config.width);
  for (Index i = 0; i < W.rows(); ++i) {
    for (Index j = 0; j < W.cols(); ++j) W(i, j) = normal(g);
    W.row(i) /= W.row(i).norm();
  }
  m.classifier.W = Param("classifier.W", W);
  m.classifier.W_zs = W;

  TrainConfig cfg = base_cfg();
  cfg.flags.fit = false;
  cfg.group_hi = 100.0;  // every class count is 10: all tail
  cfg.group_lo = 20.0;

  const ClassFrequencies freq = make_frequencies(d.counts);
  const std::vector<Group> groups =
      split_groups(d.counts, cfg.group_hi, cfg.group_lo);
  const Metrics r = evaluate(m, bundle(), cfg, freq, d.test, groups);

  CHECK_FALSE(r.acc_head.has_value());
  CHECK_FALSE(r.acc_med.has_value());
  REQUIRE(r.acc_tail.has_value());
  CHECK(*r.acc_tail == r.acc_all);
  CHECK(r.acc_all >= 0.07);
  CHECK(r.acc_all <= 0.13);
}

TEST_CASE("a poisoned scale surfaces as a divergence abort") {
  const TrainConfig cfg = base_cfg();
  SageModel m = make_model(cfg, bundle());
  const ClassFrequencies freq = make_frequencies(data().counts);
  const Batch b = first_batch(8);
  ParamRefs psi = trainable_params(m, cfg.flags);
  SgdMomentum opt(psi, cfg.momentum);

  m.fit.s1.value(0, 0) = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(
      train_step(m, opt, cfg, freq, b.images, b.labels, b.fzs, 1e-3),
      TrainingDiverged);
}

TEST_CASE("train rejects an empty training set") {
  TaskData empty;
  empty.counts = data().counts;
  empty.test = data().test;
  CHECK_THROWS_AS(train(base_cfg(), bundle(), empty), std::invalid_argument);
}

TEST_CASE("metrics csv round trip preserves every field") {
  std::vector<Metrics> rows(3);
  rows[0] = {0, "train", 0.5, 1.0, 0.25, 0.0, 2.25};
  rows[1] = {0, "test", 0.125, std::nullopt, std::nullopt, 0.125, 1.0 / 3.0};
  rows[2] = {1, "test", 1.0, 1.0, std::nullopt, 1.0, 0.0078125};

  const std::string text = metrics_csv(rows);
  CHECK(text.rfind("epoch,split,acc_all,acc_head,acc_med,acc_tail,loss\n",
                   0) == 0);
  const std::vector<Metrics> back = parse_metrics_csv(text);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].epoch == rows[i].epoch);
    CHECK(back[i].split == rows[i].split);
    CHECK(back[i].acc_all == rows[i].acc_all);
    CHECK(back[i].acc_head == rows[i].acc_head);
    CHECK(back[i].acc_med == rows[i].acc_med);
    CHECK(back[i].acc_tail == rows[i].acc_tail);
    CHECK(back[i].loss == rows[i].loss);
  }

  const auto dir = std::filesystem::temp_directory_path() / "lt_metrics_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "metrics.csv").string();
  save_metrics_csv(path, rows);
  const std::vector<Metrics> loaded = load_metrics_csv(path);
  CHECK(metrics_csv(loaded) == text);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics csv parser rejects malformed input") {
  CHECK_THROWS_AS(parse_metrics_csv("nope\n0,train,1,1,1,1,0\n"),
                  std::invalid_argument);
  const std::string header =
      "epoch,split,acc_all,acc_head,acc_med,acc_tail,loss\n";
  CHECK_THROWS_AS(parse_metrics_csv(header + "0,train,1,1,1,0\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_metrics_csv(header + "0,train,x,1,1,1,0\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_metrics_csv(header + "0,,1,1,1,1,0\n"),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_metrics_csv(header + "0,train,1,1,1,1,0,9\n"),
                  std::invalid_argument);
}

TEST_CASE("a real history survives the csv round trip byte for byte") {
  TrainConfig cfg = base_cfg();
  cfg.epochs = 1;
  const TrainResult run = train(cfg, bundle(), data());
  const std::string text = metrics_csv(run.history);
  CHECK(metrics_csv(parse_metrics_csv(text)) == text);
}
