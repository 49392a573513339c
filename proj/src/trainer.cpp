#include "longtail/trainer.hpp"

#include "longtail/rng.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace longtail {

namespace {

constexpr uint64_t kShuffleTag = 0x73687566;     // batch order streams
constexpr uint64_t kClassifierTag = 0x636c7372;  // random classifier rows

const char* kMetricsHeader = "epoch,split,acc_all,acc_head,acc_med,acc_tail,loss";

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs < 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size < 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("TrainConfig: momentum outside [0, 1)");
  if (!(scale > 0.0)) throw std::invalid_argument("TrainConfig: scale must be > 0");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("TrainConfig: alpha outside [0, 1]");
  if (!(group_hi >= group_lo) || !(group_lo > 0.0))
    throw std::invalid_argument("TrainConfig: group thresholds must satisfy hi >= lo > 0");
}

LossConfig effective_loss(const TrainConfig& cfg) {
  LossConfig lc = cfg.loss;
  if (!cfg.flags.cf) lc.gamma = 0.0;
  if (!cfg.flags.fit) lc.lambda1 = lc.lambda2 = lc.lambda3 = 0.0;
  return lc;
}

SageModel make_model(const TrainConfig& cfg, const FoundationBundle& bundle) {
  cfg.validate();
  EncoderConfig ecfg = bundle.encoder.config;
  ecfg.mode = cfg.flags.sg ? BlockMode::sage : BlockMode::adaptformer;

  SageModel m;
  m.encoder = make_encoder(ecfg, cfg.seed, cfg.alpha);

  // Graft the frozen pretrained base over the freshly initialized shell.
  EncoderParams donor = bundle.encoder;
  ParamRefs src = encoder_base_params(donor);
  ParamRefs dst = encoder_base_params(m.encoder);
  if (src.size() != dst.size())
    throw std::logic_error("make_model: base parameter sets differ");
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name ||
        src[i]->value.rows() != dst[i]->value.rows() ||
        src[i]->value.cols() != dst[i]->value.cols())
      throw std::logic_error("make_model: base parameter mismatch at " +
                             dst[i]->name);
    dst[i]->value = src[i]->value;
  }

  m.classifier = init_classifier_from_text(bundle.text);
  if (!cfg.flags.init) {
    auto g = make_stream(cfg.seed, kClassifierTag);
    Mat& W = m.classifier.W.value;
    for (Index r = 0; r < W.rows(); ++r) {
      for (Index c = 0; c < W.cols(); ++c) W(r, c) = normal(g);
      const Scalar norm = W.row(r).norm();
      if (!(norm > 0.0))
        throw std::runtime_error("make_model: degenerate classifier row draw");
      W.row(r) /= norm;
    }
  }

  enable_grads(encoder_adapter_params(m.encoder));
  m.classifier.W.enable_grad();
  if (cfg.flags.fit) {
    m.fit.s1.enable_grad();
    m.fit.s2.enable_grad();
  }
  return m;
}

ParamRefs trainable_params(SageModel& m, const AblationFlags& flags) {
  ParamRefs ps = encoder_adapter_params(m.encoder);
  ps.push_back(&m.classifier.W);
  if (flags.fit) {
    ps.push_back(&m.fit.s1);
    ps.push_back(&m.fit.s2);
  }
  return ps;
}

std::vector<int> epoch_permutation(uint64_t seed, int epoch, int n) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto g = make_stream(seed, kShuffleTag, static_cast<uint64_t>(epoch));
  std::shuffle(idx.begin(), idx.end(), g);
  return idx;
}

namespace {

struct BatchForward {
  Mat features;
  Mat z, z_v, z_t;
  Scalar loss = 0;
  CompositeGrads cg;  // fit path
  Mat dz;             // plain path
};

// Shared forward pass; fills gradients when want_grads is set.
BatchForward forward_batch(const SageModel& m, const TrainConfig& cfg,
                           const ClassFrequencies& freq,
                           const std::vector<Mat>& images,
                           const std::vector<int>& labels, const Mat& fzs_rows,
                           bool want_grads, EncodeCache* cache) {
  const LossConfig lc = effective_loss(cfg);
  Guidance g;
  const Guidance* pg = nullptr;
  if (m.encoder.config.mode == BlockMode::sage) {
    g = build_guidance(m.classifier.W.value);
    pg = &g;
  }
  BatchForward fwd;
  fwd.features = encode(images, m.encoder, pg, cache).features;
  fwd.z = cosine_logits(fwd.features, m.classifier.W.value, cfg.scale);
  if (cfg.flags.fit) {
    if (fzs_rows.rows() != fwd.features.rows())
      throw std::invalid_argument(
          "forward_batch: frozen feature rows do not match the batch");
    fwd.z_v = cosine_logits(fzs_rows, m.classifier.W.value, cfg.scale);
    fwd.z_t = cosine_logits(fwd.features, m.classifier.W_zs, cfg.scale);
    fwd.loss = composite_loss(fwd.z, fwd.z_v, fwd.z_t, m.fit, labels, freq, lc,
                              want_grads ? &fwd.cg : nullptr);
  } else {
    fwd.loss = cf_loss(fwd.z, labels, freq, lc.mu, lc.gamma,
                       want_grads ? &fwd.dz : nullptr);
  }
  return fwd;
}

}  // namespace

Scalar batch_objective(const SageModel& m, const TrainConfig& cfg,
                       const ClassFrequencies& freq,
                       const std::vector<Mat>& images,
                       const std::vector<int>& labels, const Mat& fzs_rows) {
  return forward_batch(m, cfg, freq, images, labels, fzs_rows, false, nullptr)
      .loss;
}

Scalar train_step(SageModel& m, SgdMomentum& opt, const TrainConfig& cfg,
                  const ClassFrequencies& freq, const std::vector<Mat>& images,
                  const std::vector<int>& labels, const Mat& fzs_rows,
                  Scalar lr) {
  zero_grads(trainable_params(m, cfg.flags));

  EncodeCache cache;
  BatchForward fwd;
  try {
    fwd = forward_batch(m, cfg, freq, images, labels, fzs_rows, true, &cache);
  } catch (const std::runtime_error& e) {
    // Non-finite values tripped a forward check: the run has diverged.
    throw TrainingDiverged(std::string("train_step: ") + e.what());
  }
  if (!std::isfinite(fwd.loss))
    throw TrainingDiverged("train_step: non-finite objective " +
                           std::to_string(fwd.loss) + " on a batch of " +
                           std::to_string(images.size()) + " samples");

  Mat& Wgrad = *m.classifier.W.grad;
  Mat dfeat;
  if (cfg.flags.fit) {
    cosine_logits_backward(fwd.cg.dz, fwd.features, m.classifier.W.value,
                           cfg.scale, &dfeat, &Wgrad);
    Mat discard;
    cosine_logits_backward(fwd.cg.dz_v, fzs_rows, m.classifier.W.value,
                           cfg.scale, &discard, &Wgrad);
    Mat dfeat_t;
    cosine_logits_backward(fwd.cg.dz_t, fwd.features, m.classifier.W_zs,
                           cfg.scale, &dfeat_t, nullptr);
    dfeat += dfeat_t;
    m.fit.s1.accumulate(Mat::Constant(1, 1, fwd.cg.ds1));
    m.fit.s2.accumulate(Mat::Constant(1, 1, fwd.cg.ds2));
  } else {
    cosine_logits_backward(fwd.dz, fwd.features, m.classifier.W.value,
                           cfg.scale, &dfeat, &Wgrad);
  }

  RowVec dwbar;
  RowVec* pwbar = nullptr;
  if (m.encoder.config.mode == BlockMode::sage) {
    dwbar = RowVec::Zero(m.encoder.config.width);
    pwbar = &dwbar;
  }
  encode_backward(dfeat, cache, m.encoder, pwbar);
  if (pwbar) {
    // The guidance vector is the mean classifier row, so its gradient spreads
    // evenly over the rows.
    Wgrad.rowwise() += dwbar / static_cast<Scalar>(Wgrad.rows());
  }

  opt.step(lr);
  return fwd.loss;
}

namespace {

Metrics eval_impl(const SageModel& m, const TrainConfig& cfg,
                  const ClassFrequencies& freq, const Dataset& set,
                  const std::vector<Group>& groups, const Mat* fzs) {
  const int n = static_cast<int>(set.images.size());
  if (n == 0) throw std::invalid_argument("evaluate: empty set");
  if (set.labels.size() != set.images.size())
    throw std::invalid_argument("evaluate: image/label count mismatch");

  BatchForward fwd = forward_batch(m, cfg, freq, set.images, set.labels,
                                   cfg.flags.fit ? *fzs : Mat(), false, nullptr);
  Mat scores = cfg.flags.fit ? fit_logits(fwd.z, fwd.z_v, fwd.z_t, m.fit)
                             : std::move(fwd.z);

  std::array<long, 3> hits{}, totals{};
  long all_hits = 0;
  for (int i = 0; i < n; ++i) {
    const int y = set.labels[i];
    if (y < 0 || y >= static_cast<int>(groups.size()))
      throw std::out_of_range("evaluate: label outside the group table");
    Index pred;
    scores.row(i).maxCoeff(&pred);
    const int gi = static_cast<int>(groups[static_cast<size_t>(y)]);
    ++totals[static_cast<size_t>(gi)];
    if (pred == y) {
      ++hits[static_cast<size_t>(gi)];
      ++all_hits;
    }
  }

  auto ratio = [](long h, long t) -> std::optional<Scalar> {
    if (t == 0) return std::nullopt;
    return static_cast<Scalar>(h) / static_cast<Scalar>(t);
  };
  Metrics out;
  out.split = "test";
  out.acc_all = static_cast<Scalar>(all_hits) / static_cast<Scalar>(n);
  out.acc_head = ratio(hits[0], totals[0]);
  out.acc_med = ratio(hits[1], totals[1]);
  out.acc_tail = ratio(hits[2], totals[2]);
  out.loss = fwd.loss;
  return out;
}

}  // namespace

Metrics evaluate(const SageModel& m, const FoundationBundle& bundle,
                 const TrainConfig& cfg, const ClassFrequencies& freq,
                 const Dataset& set, const std::vector<Group>& groups) {
  Mat fzs;
  if (cfg.flags.fit) fzs = encode(set.images, bundle.encoder).features;
  return eval_impl(m, cfg, freq, set, groups, cfg.flags.fit ? &fzs : nullptr);
}

TrainResult train(const TrainConfig& cfg, const FoundationBundle& bundle,
                  const TaskData& data) {
  cfg.validate();
  const int n = static_cast<int>(data.train.images.size());
  if (n == 0) throw std::invalid_argument("train: empty training set");

  SageModel model = make_model(cfg, bundle);
  const ClassFrequencies freq = make_frequencies(data.counts);
  const std::vector<Group> groups =
      split_groups(data.counts, cfg.group_hi, cfg.group_lo);

  Mat fzs_train, fzs_test;
  if (cfg.flags.fit) {
    fzs_train = encode(data.train.images, bundle.encoder).features;
    fzs_test = encode(data.test.images, bundle.encoder).features;
  }

  ParamRefs psi = trainable_params(model, cfg.flags);
  SgdMomentum opt(psi, cfg.momentum);

  const int d = model.encoder.config.width;
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  TrainResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> perm = epoch_permutation(cfg.seed, epoch, n);
    Scalar loss_sum = 0;
    long batches = 0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const int b1 = std::min(n, b0 + cfg.batch_size);
      const int bsize = b1 - b0;
      std::vector<Mat> images;
      images.reserve(static_cast<size_t>(bsize));
      std::vector<int> labels(static_cast<size_t>(bsize));
      Mat fzs_rows;
      if (cfg.flags.fit) fzs_rows.resize(bsize, d);
      for (int i = 0; i < bsize; ++i) {
        const int idx = perm[static_cast<size_t>(b0 + i)];
        images.push_back(data.train.images[static_cast<size_t>(idx)]);
        labels[static_cast<size_t>(i)] =
            data.train.labels[static_cast<size_t>(idx)];
        if (cfg.flags.fit) fzs_rows.row(i) = fzs_train.row(idx);
      }
      loss_sum += train_step(model, opt, cfg, freq, images, labels, fzs_rows,
                             cosine_lr(step, total_steps, cfg.lr0));
      ++step;
      ++batches;
    }

    Metrics tr = eval_impl(model, cfg, freq, data.train, groups,
                           cfg.flags.fit ? &fzs_train : nullptr);
    tr.epoch = epoch;
    tr.split = "train";
    tr.loss = loss_sum / static_cast<Scalar>(batches);
    res.history.push_back(std::move(tr));

    Metrics te = eval_impl(model, cfg, freq, data.test, groups,
                           cfg.flags.fit ? &fzs_test : nullptr);
    te.epoch = epoch;
    te.split = "test";
    res.history.push_back(std::move(te));
  }
  res.model = std::move(model);
  return res;
}

namespace {

void append_number(std::string& out, Scalar v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

Scalar parse_number(const std::string& cell, const char* what) {
  Scalar v = 0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  const auto r = std::from_chars(first, last, v);
  if (r.ec != std::errc{} || r.ptr != last)
    throw std::invalid_argument(std::string("metrics csv: bad ") + what +
                                " value '" + cell + "'");
  return v;
}

}  // namespace

std::string metrics_csv(const std::vector<Metrics>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const Metrics& m : rows) {
    out += std::to_string(m.epoch);
    out += ',';
    out += m.split;
    out += ',';
    append_number(out, m.acc_all);
    for (const auto& acc : {m.acc_head, m.acc_med, m.acc_tail}) {
      out += ',';
      if (acc) append_number(out, *acc);
    }
    out += ',';
    append_number(out, m.loss);
    out += '\n';
  }
  return out;
}

void save_metrics_csv(const std::string& path,
                      const std::vector<Metrics>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << metrics_csv(rows);
  if (!os) throw std::runtime_error("short write to " + path);
}

std::vector<Metrics> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw std::invalid_argument("metrics csv: missing or wrong header");
  std::vector<Metrics> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 7)
      throw std::invalid_argument("metrics csv: expected 7 cells, got " +
                                  std::to_string(cells.size()));
    Metrics m;
    m.epoch = static_cast<int>(parse_number(cells[0], "epoch"));
    m.split = cells[1];
    if (m.split.empty())
      throw std::invalid_argument("metrics csv: empty split cell");
    m.acc_all = parse_number(cells[2], "acc_all");
    auto opt_cell = [&](const std::string& c,
                        const char* what) -> std::optional<Scalar> {
      if (c.empty()) return std::nullopt;
      return parse_number(c, what);
    };
    m.acc_head = opt_cell(cells[3], "acc_head");
    m.acc_med = opt_cell(cells[4], "acc_med");
    m.acc_tail = opt_cell(cells[5], "acc_tail");
    m.loss = parse_number(cells[6], "loss");
    rows.push_back(std::move(m));
  }
  return rows;
}

std::vector<Metrics> load_metrics_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_metrics_csv(buf.str());
}

}  // namespace longtail
