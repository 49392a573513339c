#include "longtail/analysis.hpp"

#include "longtail/rng.hpp"
#include "longtail/serialize.hpp"

#include <json.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace longtail {

namespace {

constexpr uint64_t kDecompTag = 0x64636d70;
constexpr uint64_t kMeanTag = 0x676d6561;
constexpr uint64_t kCovTag = 0x67636f76;
constexpr uint64_t kDrawTag = 0x67647277;

constexpr uint32_t kAttentionMagic = 0x4c544154u;  // "LTAT"
constexpr uint32_t kAttentionVersion = 1;

Mat gaussian_mat(std::mt19937_64& g, Index rows, Index cols, Scalar stddev) {
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(g, 0.0, stddev);
  return m;
}

}  // namespace

Scalar decomposition_gap(const Mat& f, const Mat& wq, const Mat& wk,
                         const Mat& wv, std::array<Mat, 8>* terms) {
  const Index d = f.cols();
  if (d % 2 != 0)
    throw std::invalid_argument("decomposition_gap: feature width must be even");
  if (wq.rows() != d || wk.rows() != d || wv.rows() != d)
    throw std::invalid_argument("decomposition_gap: projection height mismatch");
  const Index h = d / 2;

  const Mat direct = (f * wq) * (f * wk).transpose() * (f * wv);

  auto half_f = [&](int bit) { return bit ? f.rightCols(h) : f.leftCols(h); };
  auto half_w = [&](const Mat& w, int bit) {
    return bit ? w.bottomRows(h) : w.topRows(h);
  };

  Mat sum = Mat::Zero(direct.rows(), direct.cols());
  for (int q = 0; q < 2; ++q)
    for (int k = 0; k < 2; ++k)
      for (int v = 0; v < 2; ++v) {
        Mat term = (half_f(q) * half_w(wq, q)) *
                   (half_f(k) * half_w(wk, k)).transpose() *
                   (half_f(v) * half_w(wv, v));
        sum += term;
        if (terms) (*terms)[static_cast<size_t>((q << 2) | (k << 1) | v)] =
            std::move(term);
      }
  return (direct - sum).cwiseAbs().maxCoeff();
}

Scalar msa_decomposition_check(int d, int d_k, int b, uint64_t seed) {
  if (d <= 0 || d_k <= 0 || b <= 0)
    throw std::invalid_argument("msa_decomposition_check: sizes must be positive");
  if (d % 2 != 0)
    throw std::invalid_argument("msa_decomposition_check: d must be even");
  auto g = make_stream(seed, kDecompTag);
  const Mat f = gaussian_mat(g, b, d, 1.0);
  const Mat wq = gaussian_mat(g, d, d_k, 1.0);
  const Mat wk = gaussian_mat(g, d, d_k, 1.0);
  const Mat wv = gaussian_mat(g, d, d_k, 1.0);
  return decomposition_gap(f, wq, wk, wv);
}

void GaussianClassModel::validate() const {
  const size_t c = means.size();
  if (c == 0) throw std::invalid_argument("gaussian model: no classes");
  if (covariances.size() != c)
    throw std::invalid_argument("gaussian model: mean/covariance count mismatch");
  if (p_source.size() != static_cast<Index>(c) ||
      p_target.size() != static_cast<Index>(c))
    throw std::invalid_argument("gaussian model: prior length mismatch");
  const Index d = means[0].size();
  for (size_t i = 0; i < c; ++i) {
    if (means[i].size() != d)
      throw std::invalid_argument("gaussian model: mean width mismatch");
    const Mat& s = covariances[i];
    if (s.rows() != d || s.cols() != d)
      throw std::invalid_argument("gaussian model: covariance shape mismatch");
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * s.cwiseAbs().maxCoeff())
      throw std::invalid_argument("gaussian model: covariance not symmetric");
    if (Eigen::LLT<Mat>(s).info() != Eigen::Success)
      throw std::invalid_argument("gaussian model: covariance not positive definite");
  }
  for (const Vec* p : {&p_source, &p_target}) {
    if ((p->array() <= 0.0).any() || std::abs(p->sum() - 1.0) > 1e-12)
      throw std::invalid_argument("gaussian model: priors must be positive and sum to 1");
  }
}

GaussianClassModel make_gaussian_model(int classes, int dim, const Vec& counts,
                                       uint64_t seed) {
  if (classes <= 0 || dim <= 0)
    throw std::invalid_argument("make_gaussian_model: sizes must be positive");
  if (counts.size() != classes)
    throw std::invalid_argument("make_gaussian_model: counts length mismatch");
  GaussianClassModel m;
  m.means.reserve(static_cast<size_t>(classes));
  m.covariances.reserve(static_cast<size_t>(classes));
  for (int i = 0; i < classes; ++i) {
    auto gm = make_stream(seed, kMeanTag, static_cast<uint64_t>(i));
    m.means.push_back(gaussian_mat(gm, dim, 1, 3.0).col(0));
    auto gc = make_stream(seed, kCovTag, static_cast<uint64_t>(i));
    const Mat b = gaussian_mat(gc, dim, dim, 0.4);
    m.covariances.push_back(b * b.transpose() +
                            0.75 * Mat::Identity(dim, dim));
  }
  m.p_source = counts / counts.sum();
  m.p_target = Vec::Constant(classes, 1.0 / classes);
  m.validate();
  return m;
}

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
Scalar beta_cf(Scalar a, Scalar b, Scalar x) {
  constexpr int kMaxIter = 300;
  constexpr Scalar kEps = 3e-16;
  constexpr Scalar kTiny = 1e-300;
  const Scalar qab = a + b, qap = a + 1.0, qam = a - 1.0;
  Scalar c = 1.0;
  Scalar d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  Scalar h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    Scalar aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const Scalar del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("regularized_incomplete_beta: no convergence");
}

}  // namespace

Scalar regularized_incomplete_beta(Scalar a, Scalar b, Scalar x) {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("regularized_incomplete_beta: a, b must be > 0");
  if (x < 0.0 || x > 1.0)
    throw std::invalid_argument("regularized_incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const Scalar front = std::exp(std::lgamma(a + b) - std::lgamma(a) -
                                std::lgamma(b) + a * std::log(x) +
                                b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

PearsonResult pearson_correlation(const Vec& x, const Vec& y) {
  PearsonResult out;
  if (x.size() != y.size())
    throw std::invalid_argument("pearson_correlation: length mismatch");
  const Index n = x.size();
  if (n < 3) {
    out.degenerate = true;
    return out;
  }
  const Vec xc = x.array() - x.mean();
  const Vec yc = y.array() - y.mean();
  const Scalar sx = xc.norm(), sy = yc.norm();
  if (sx == 0.0 || sy == 0.0) {
    out.degenerate = true;
    return out;
  }
  out.r = xc.dot(yc) / (sx * sy);
  out.r = std::clamp(out.r, -1.0, 1.0);
  const Scalar nu = static_cast<Scalar>(n - 2);
  const Scalar one_minus = 1.0 - out.r * out.r;
  if (one_minus <= std::numeric_limits<Scalar>::epsilon()) {
    out.p = 0.0;
    return out;
  }
  const Scalar t2 = out.r * out.r * nu / one_minus;
  out.p = regularized_incomplete_beta(0.5 * nu, 0.5, nu / (nu + t2));
  return out;
}

namespace {

struct ClassDensity {
  Eigen::LLT<Mat> llt;
  Vec mean;
  Scalar log_norm;  // -0.5 * (d log 2pi + log det)
};

ClassDensity prepare_density(const Vec& mean, const Mat& cov) {
  ClassDensity cd;
  cd.mean = mean;
  cd.llt.compute(cov);
  if (cd.llt.info() != Eigen::Success)
    throw std::invalid_argument("marginal_ratio_study: singular covariance");
  const Mat& l = cd.llt.matrixLLT();
  Scalar logdet = 0;
  for (Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  cd.log_norm = -0.5 * (static_cast<Scalar>(mean.size()) *
                            std::log(2.0 * std::acos(-1.0)) +
                        logdet);
  return cd;
}

Scalar log_density(const ClassDensity& cd, const Vec& x) {
  const Vec diff = x - cd.mean;
  const Vec w = cd.llt.matrixL().solve(diff);
  return cd.log_norm - 0.5 * w.squaredNorm();
}

Scalar log_mixture(const std::vector<ClassDensity>& ds, const Vec& priors,
                   const Vec& x) {
  Vec logs(priors.size());
  for (Index k = 0; k < priors.size(); ++k)
    logs[k] = std::log(priors[k]) + log_density(ds[static_cast<size_t>(k)], x);
  const Scalar m = logs.maxCoeff();
  return m + std::log((logs.array() - m).exp().sum());
}

}  // namespace

RatioStudyResult marginal_ratio_study(const GaussianClassModel& model,
                                      const Vec& counts,
                                      const std::vector<Scalar>& gamma_grid,
                                      const std::vector<Scalar>& mu_grid,
                                      int samples_per_class, uint64_t seed) {
  model.validate();
  const int classes = static_cast<int>(model.means.size());
  if (counts.size() != classes)
    throw std::invalid_argument("marginal_ratio_study: counts length mismatch");
  if ((counts.array() <= 0.0).any())
    throw std::invalid_argument("marginal_ratio_study: counts must be positive");
  if (samples_per_class < 1)
    throw std::invalid_argument("marginal_ratio_study: need at least one sample");

  std::vector<ClassDensity> densities;
  densities.reserve(static_cast<size_t>(classes));
  for (int i = 0; i < classes; ++i)
    densities.push_back(prepare_density(model.means[static_cast<size_t>(i)],
                                        model.covariances[static_cast<size_t>(i)]));

  RatioStudyResult res;
  res.ratios = Vec::Zero(classes);
  const Index dim = model.means[0].size();
  for (int i = 0; i < classes; ++i) {
    auto g = make_stream(seed, kDrawTag, static_cast<uint64_t>(i));
    const auto& cd = densities[static_cast<size_t>(i)];
    Scalar sum = 0;
    for (int s = 0; s < samples_per_class; ++s) {
      Vec xi(dim);
      for (Index j = 0; j < dim; ++j) xi[j] = normal(g);
      const Vec x = cd.mean + cd.llt.matrixL() * xi;
      sum += std::exp(log_mixture(densities, model.p_source, x) -
                      log_mixture(densities, model.p_target, x));
    }
    res.ratios[i] = sum / static_cast<Scalar>(samples_per_class);
  }

  const PearsonResult pr = pearson_correlation(counts, res.ratios);
  res.r = pr.r;
  res.p = pr.p;
  res.degenerate = pr.degenerate;

  res.mu_grid = mu_grid;
  res.gamma_grid = gamma_grid;
  res.fit_rms = Mat::Zero(static_cast<Index>(mu_grid.size()),
                          static_cast<Index>(gamma_grid.size()));
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (size_t mi = 0; mi < mu_grid.size(); ++mi)
    for (size_t gi = 0; gi < gamma_grid.size(); ++gi) {
      Scalar sq = 0;
      for (int i = 0; i < classes; ++i) {
        const Scalar approx =
            mu_grid[mi] * std::pow(counts[i], gamma_grid[gi]);
        const Scalar diff = approx - res.ratios[i];
        sq += diff * diff;
      }
      const Scalar rms = std::sqrt(sq / static_cast<Scalar>(classes));
      res.fit_rms(static_cast<Index>(mi), static_cast<Index>(gi)) = rms;
      if (rms < best) {
        best = rms;
        res.best_mu = mu_grid[mi];
        res.best_gamma = gamma_grid[gi];
      }
    }
  return res;
}

void save_ratio_study(const std::string& path, const RatioStudyResult& r) {
  nlohmann::json j;
  j["ratios"] = std::vector<Scalar>(r.ratios.data(), r.ratios.data() + r.ratios.size());
  j["r"] = r.r;
  j["p"] = r.p;
  j["degenerate"] = r.degenerate;
  j["mu_grid"] = r.mu_grid;
  j["gamma_grid"] = r.gamma_grid;
  std::vector<std::vector<Scalar>> rms;
  for (Index i = 0; i < r.fit_rms.rows(); ++i) {
    std::vector<Scalar> row;
    for (Index k = 0; k < r.fit_rms.cols(); ++k) row.push_back(r.fit_rms(i, k));
    rms.push_back(std::move(row));
  }
  j["fit_rms"] = rms;
  j["best_mu"] = r.best_mu;
  j["best_gamma"] = r.best_gamma;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

namespace {

void write_attention_file(const std::string& path, int depth, int heads,
                          int tokens,
                          const std::vector<BatchAttention>& attn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  put_u32_le(os, kAttentionMagic);
  put_u32_le(os, kAttentionVersion);
  put_u32_le(os, static_cast<uint32_t>(depth));
  put_u32_le(os, static_cast<uint32_t>(heads));
  put_u32_le(os, static_cast<uint32_t>(tokens));
  for (int l = 0; l < depth; ++l)
    for (int h = 0; h < heads; ++h) {
      const Mat& a = attn[static_cast<size_t>(l)][0][static_cast<size_t>(h)];
      for (Index r = 0; r < a.rows(); ++r)
        for (Index c = 0; c < a.cols(); ++c) put_f64_le(os, a(r, c));
    }
  for (int l = 0; l < depth; ++l)
    for (int h = 0; h < heads; ++h) {
      const Mat& a = attn[static_cast<size_t>(l)][0][static_cast<size_t>(h)];
      for (Index c = 0; c < a.cols(); ++c) put_f64_le(os, a(0, c));
    }
  if (!os) throw std::runtime_error("short write to " + path);
}

}  // namespace

void export_attention(const SageModel& model, const FoundationBundle& bundle,
                      const std::vector<Mat>& samples, const std::string& dir) {
  if (samples.empty())
    throw std::invalid_argument("export_attention: no samples");
  std::filesystem::create_directories(dir);

  const EncoderConfig& cfg = model.encoder.config;
  const int tokens = cfg.tokens();

  Guidance g;
  const Guidance* pg = nullptr;
  if (cfg.mode == BlockMode::sage) {
    g = build_guidance(model.classifier.W.value);
    pg = &g;
  }

  nlohmann::json index;
  index["depth"] = cfg.depth;
  index["heads"] = cfg.heads;
  index["tokens"] = tokens;
  index["samples"] = samples.size();
  index["layout"] =
      "u32le magic,version,depth,heads,tokens; depth*heads maps row-major "
      "f64le; depth*heads class-token rows f64le";
  nlohmann::json files = nlohmann::json::array();

  for (size_t k = 0; k < samples.size(); ++k) {
    const std::vector<Mat> one{samples[k]};
    const struct {
      const char* variant;
      std::vector<BatchAttention> attn;
    } runs[2] = {{"tuned", encode(one, model.encoder, pg).attn},
                 {"zeroshot", encode(one, bundle.encoder).attn}};
    for (const auto& run : runs) {
      const std::string name =
          "sample_" + std::to_string(k) + "_" + run.variant + ".bin";
      const std::string path = (std::filesystem::path(dir) / name).string();
      write_attention_file(path, cfg.depth, cfg.heads, tokens, run.attn);
      nlohmann::json f;
      f["sample"] = k;
      f["variant"] = run.variant;
      f["path"] = name;
      char hex[17];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(file_checksum(path)));
      f["checksum"] = hex;
      files.push_back(std::move(f));
    }
  }
  index["files"] = std::move(files);
  std::ofstream os(std::filesystem::path(dir) / "index.json",
                   std::ios::binary);
  if (!os) throw std::runtime_error("cannot write attention index");
  os << index.dump(2) << '\n';
}

std::vector<AttentionEntry> load_attention(const std::string& dir) {
  std::ifstream is(std::filesystem::path(dir) / "index.json",
                   std::ios::binary);
  if (!is) throw std::runtime_error("cannot read attention index in " + dir);
  nlohmann::json index = nlohmann::json::parse(is);
  const int depth = index.at("depth").get<int>();
  const int heads = index.at("heads").get<int>();
  const int tokens = index.at("tokens").get<int>();

  std::vector<AttentionEntry> out;
  for (const auto& f : index.at("files")) {
    const std::string path =
        (std::filesystem::path(dir) / f.at("path").get<std::string>()).string();
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_checksum(path)));
    if (f.at("checksum").get<std::string>() != hex)
      throw std::runtime_error("attention archive checksum mismatch: " + path);

    const size_t header = 20;
    const size_t maps = static_cast<size_t>(depth) * heads;
    const size_t expected =
        header + maps * tokens * tokens * 8 + maps * tokens * 8;
    if (std::filesystem::file_size(path) != expected)
      throw std::runtime_error("attention archive truncated: " + path);
    std::ifstream fs(path, std::ios::binary);
    if (get_u32_le(fs) != kAttentionMagic ||
        get_u32_le(fs) != kAttentionVersion)
      throw std::runtime_error("attention archive bad header: " + path);
    if (get_u32_le(fs) != static_cast<uint32_t>(depth) ||
        get_u32_le(fs) != static_cast<uint32_t>(heads) ||
        get_u32_le(fs) != static_cast<uint32_t>(tokens))
      throw std::runtime_error("attention archive shape mismatch: " + path);

    AttentionEntry e;
    e.sample = f.at("sample").get<int>();
    e.variant = f.at("variant").get<std::string>();
    e.maps.resize(maps, Mat(tokens, tokens));
    for (size_t m = 0; m < maps; ++m)
      for (int r = 0; r < tokens; ++r)
        for (int c = 0; c < tokens; ++c) e.maps[m](r, c) = get_f64_le(fs);
    e.cls_rows.resize(static_cast<Index>(maps), tokens);
    for (size_t m = 0; m < maps; ++m)
      for (int c = 0; c < tokens; ++c)
        e.cls_rows(static_cast<Index>(m), c) = get_f64_le(fs);
    if (!fs) throw std::runtime_error("attention archive short read: " + path);
    out.push_back(std::move(e));
  }
  return out;
}

ParameterTable parameter_table(int d, int r, int heads, int prompts) {
  if (d <= 0 || r <= 0 || heads <= 0 || prompts <= 0)
    throw std::invalid_argument("parameter_table: arguments must be positive");
  if (d % heads != 0)
    throw std::invalid_argument("parameter_table: heads must divide the width");
  ParameterTable t;
  t.bitfit = 11L * d;
  t.vpt = static_cast<long>(prompts) * d;
  t.adapter = (2L * r + 3) * d + r;
  t.lora = 4L * r * d;
  t.adaptformer = adaptformer_param_count(d, r);
  t.sg = sg_param_count(d, r);
  return t;
}

}  // namespace longtail
