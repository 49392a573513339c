#include "longtail/heads.hpp"

#include "longtail/kernels.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace longtail {

const std::vector<std::string>& prompt_templates() {
  static const std::vector<std::string> kTemplates = {
      "a photo of a [cls].",
      "a bad photo of a [cls].",
      "a photo of many [cls].",
      "a sculpture of a [cls].",
      "a photo of the hard to see [cls].",
      "a low resolution photo of the [cls].",
      "a rendering of a [cls].",
      "graffiti of a [cls].",
      "a bad photo of the [cls].",
      "a cropped photo of the [cls].",
      "a tattoo of a [cls].",
      "the embroidered [cls].",
      "a photo of a hard to see [cls].",
      "a bright photo of a [cls].",
      "a photo of a clean [cls].",
      "a photo of a dirty [cls].",
      "a dark photo of the [cls].",
      "a drawing of a [cls].",
      "a photo of my [cls].",
      "the plastic [cls].",
      "a photo of the cool [cls].",
      "a close-up photo of a [cls].",
      "a black and white photo of the [cls].",
      "a painting of the [cls].",
      "a painting of a [cls].",
      "a pixelated photo of the [cls].",
      "a sculpture of the [cls].",
      "a bright photo of the [cls].",
      "a cropped photo of a [cls].",
      "a plastic [cls].",
      "a photo of the dirty [cls].",
      "a jpeg corrupted photo of a [cls].",
      "a blurry photo of the [cls].",
      "a photo of the [cls].",
      "a good photo of the [cls].",
      "a rendering of the [cls].",
      "a [cls] in a video game.",
      "a photo of one [cls].",
      "a doodle of a [cls].",
      "a close-up photo of the [cls].",
      "the origami [cls].",
      "the [cls] in a video game.",
      "a sketch of a [cls].",
      "a doodle of the [cls].",
      "an origami [cls].",
      "a low resolution photo of a [cls].",
      "the toy [cls].",
      "a rendition of the [cls].",
      "a photo of the clean [cls].",
      "a photo of a large [cls].",
      "a rendition of a [cls].",
      "a photo of a nice [cls].",
      "a photo of a weird [cls].",
      "a blurry photo of a [cls].",
      "a cartoon [cls].",
      "art of a [cls].",
      "a sketch of the [cls].",
      "an embroidered [cls].",
      "a pixelated photo of a [cls].",
      "itap of the [cls].",
  };
  return kTemplates;
}

TextEmbeddingSet load_text_embeddings(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(csv_path + ": empty file");
  // header: class,template,dim0,...,dim{d-1}
  std::stringstream hs(line);
  std::string field;
  std::vector<std::string> header;
  while (std::getline(hs, field, ',')) header.push_back(field);
  if (header.size() < 3 || header[0] != "class" || header[1] != "template")
    throw std::runtime_error(csv_path + ": bad header");
  const int d = int(header.size()) - 2;
  for (int j = 0; j < d; ++j)
    if (header[2 + j] != "dim" + std::to_string(j))
      throw std::runtime_error(csv_path + ": bad header column " +
                               header[2 + j]);

  std::vector<std::vector<std::pair<int, Vec>>> rows;  // per class
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> cells;
    while (std::getline(ls, field, ',')) cells.push_back(field);
    if (int(cells.size()) != d + 2)
      throw std::runtime_error(csv_path + ":" + std::to_string(lineno) +
                               ": expected " + std::to_string(d + 2) +
                               " fields, got " + std::to_string(cells.size()));
    const int cls = std::stoi(cells[0]);
    const int tpl = std::stoi(cells[1]);
    if (cls < 0 || tpl < 0)
      throw std::runtime_error(csv_path + ":" + std::to_string(lineno) +
                               ": negative index");
    Vec e(d);
    for (int j = 0; j < d; ++j) e(j) = std::stod(cells[2 + j]);
    if (int(rows.size()) <= cls) rows.resize(cls + 1);
    rows[cls].emplace_back(tpl, std::move(e));
  }
  if (rows.empty()) throw std::runtime_error(csv_path + ": no data rows");

  TextEmbeddingSet t;
  t.classes = int(rows.size());
  t.width = d;
  t.templates = int(rows[0].size());
  if (t.templates == 0) throw std::runtime_error(csv_path + ": class 0 empty");
  t.per_class.resize(t.classes);
  for (int c = 0; c < t.classes; ++c) {
    if (int(rows[c].size()) != t.templates)
      throw std::runtime_error(csv_path + ": class " + std::to_string(c) +
                               " has " + std::to_string(rows[c].size()) +
                               " templates, class 0 has " +
                               std::to_string(t.templates));
    Mat m(t.templates, d);
    std::vector<bool> seen(t.templates, false);
    for (auto& [tpl, e] : rows[c]) {
      if (tpl >= t.templates || seen[tpl])
        throw std::runtime_error(csv_path + ": class " + std::to_string(c) +
                                 ": bad template index " +
                                 std::to_string(tpl));
      seen[tpl] = true;
      m.row(tpl) = e.transpose();
    }
    t.per_class[c] = std::move(m);
  }
  return t;
}

void save_text_embeddings(const TextEmbeddingSet& t,
                          const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot open " + csv_path);
  out << "class,template";
  for (int j = 0; j < t.width; ++j) out << ",dim" << j;
  out << "\n";
  char buf[32];
  for (int c = 0; c < t.classes; ++c)
    for (int i = 0; i < t.templates; ++i) {
      out << c << ',' << i;
      for (int j = 0; j < t.width; ++j) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf,
                                     t.per_class[c](i, j),
                                     std::chars_format::general, 17);
        out << ',' << std::string_view(buf, p - buf);
      }
      out << "\n";
    }
}

ClassifierWeights init_classifier_from_text(const TextEmbeddingSet& t) {
  if (t.classes == 0 || t.templates == 0)
    throw std::invalid_argument("init_classifier_from_text: empty set");
  Mat w(t.classes, t.width);
  for (int c = 0; c < t.classes; ++c)
    w.row(c) = t.per_class[c].colwise().mean();
  ClassifierWeights cw;
  cw.W_zs = w;
  cw.W = Param("classifier.W", std::move(w));
  return cw;
}

Mat cosine_logits(const Mat& f, const Mat& W, Scalar scale) {
  if (f.cols() != W.cols())
    throw std::invalid_argument("cosine_logits: width mismatch " +
                                std::to_string(f.cols()) + " vs " +
                                std::to_string(W.cols()));
  return scale * l2_normalize_rows(f) * l2_normalize_rows(W).transpose();
}

void cosine_logits_backward(const Mat& dz, const Mat& f, const Mat& W,
                            Scalar scale, Mat* df, Mat* dW) {
  Mat u = l2_normalize_rows(f), v = l2_normalize_rows(W);
  if (df) *df = l2_normalize_rows_backward(f, scale * dz * v);
  if (dW) *dW += l2_normalize_rows_backward(W, scale * dz.transpose() * u);
}

Mat fit_logits(const Mat& z, const Mat& z_v, const Mat& z_t,
               const FITState& fit) {
  if (z.rows() != z_v.rows() || z.rows() != z_t.rows() ||
      z.cols() != z_v.cols() || z.cols() != z_t.cols())
    throw std::invalid_argument("fit_logits: shape mismatch");
  return z + fit.s1.scalar() * z_v + fit.s2.scalar() * z_t;
}

}  // namespace longtail
