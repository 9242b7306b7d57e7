#include "divbayes/data.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace divbayes {

void LabeledDataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DataError("labeled dataset: feature rows and labels differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("labeled dataset: labels must be 0 or 1");
  }
  if (!features.allFinite()) throw DataError("labeled dataset: non-finite feature");
}

namespace {

std::string at_line(long line) { return " (line " + std::to_string(line) + ")"; }

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.c_str();
  char* e = nullptr;
  errno = 0;
  out = std::strtod(b, &e);
  return e == b + s.size() && errno != ERANGE && std::isfinite(out);
}

bool skip_line(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path + "'");
  return f;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

LabeledDataset read_sparse_labeled(std::istream& is, int dim) {
  struct Row {
    int label;
    std::vector<std::pair<int, double>> entries;
  };
  std::vector<Row> rows;
  std::string line;
  long lineno = 0;
  int max_index = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    double lv = 0.0;
    if (!parse_number(tok, lv)) throw DataError("sparse: bad label '" + tok + "'" + at_line(lineno));
    Row r;
    if (lv == 1.0) {
      r.label = 1;
    } else if (lv == -1.0 || lv == 0.0) {
      r.label = 0;
    } else {
      throw DataError("sparse: label must be +1/-1 or 1/0" + at_line(lineno));
    }
    int last = 0;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos) throw DataError("sparse: expected index:value, got '" + tok + "'" + at_line(lineno));
      double idx = 0.0;
      double val = 0.0;
      if (!parse_number(tok.substr(0, colon), idx) || idx != std::floor(idx) || idx < 1 || idx > 1e8) {
        throw DataError("sparse: bad index in '" + tok + "'" + at_line(lineno));
      }
      if (!parse_number(tok.substr(colon + 1), val)) {
        throw DataError("sparse: bad value in '" + tok + "'" + at_line(lineno));
      }
      const int i = static_cast<int>(idx);
      if (i <= last) throw DataError("sparse: indices must increase" + at_line(lineno));
      if (dim > 0 && i > dim) throw DataError("sparse: index exceeds dimension" + at_line(lineno));
      last = i;
      max_index = std::max(max_index, i);
      r.entries.emplace_back(i, val);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("sparse: no examples");
  const int p = dim > 0 ? dim : max_index;
  if (p < 1) throw DataError("sparse: no features");
  LabeledDataset d;
  d.features = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), p);
  d.labels.reserve(rows.size());
  for (std::size_t n = 0; n < rows.size(); ++n) {
    d.labels.push_back(rows[n].label);
    for (const auto& [i, v] : rows[n].entries) d.features(static_cast<Eigen::Index>(n), i - 1) = v;
  }
  return d;
}

LabeledDataset load_sparse_labeled(const std::string& path, int dim) {
  auto f = open_or_throw(path);
  return read_sparse_labeled(f, dim);
}

void write_sparse_labeled(std::ostream& os, const LabeledDataset& data) {
  for (int n = 0; n < data.size(); ++n) {
    os << (data.labels[n] ? "+1" : "-1");
    for (int i = 0; i < data.dim(); ++i) {
      const double v = data.features(n, i);
      if (v != 0.0) os << ' ' << (i + 1) << ':' << fmt17(v);
    }
    os << '\n';
  }
}

Matrix read_dense_matrix(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    for (char& c : line) {
      if (c == ',' || c == '\t' || c == ';' || c == '\r') c = ' ';
    }
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      if (!parse_number(tok, v)) throw DataError("dense: bad number '" + tok + "'" + at_line(lineno));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError("dense: inconsistent number of columns" + at_line(lineno));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("dense: no rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

Matrix load_dense_matrix(const std::string& path) {
  auto f = open_or_throw(path);
  return read_dense_matrix(f);
}

void write_dense_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << fmt17(m(r, c));
    os << '\n';
  }
}

LabeledDataset load_dense_labeled(const std::string& path) {
  const Matrix m = load_dense_matrix(path);
  if (m.cols() < 2) throw DataError("dense labeled: need a label column and at least one feature");
  LabeledDataset d;
  d.features = m.rightCols(m.cols() - 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double v = m(r, 0);
    if (v == 1.0) {
      d.labels.push_back(1);
    } else if (v == 0.0 || v == -1.0) {
      d.labels.push_back(0);
    } else {
      throw DataError("dense labeled: label must be +1/-1 or 1/0" + at_line(r + 1));
    }
  }
  return d;
}

Vector center_columns(Matrix& m) {
  const Vector mean = m.colwise().mean();
  m.rowwise() -= mean.transpose();
  return mean;
}

UnlabeledDataset load_unlabeled(const std::string& path, bool center) {
  UnlabeledDataset d{load_dense_matrix(path)};
  if (center) center_columns(d.examples);
  return d;
}

LabeledDataset generate_xor_experts(int n, std::uint64_t seed, double margin, std::vector<int>* truth) {
  require(n >= 1, "generate_xor_experts: n must be >= 1");
  require(margin >= 0.0 && margin < 1.0, "generate_xor_experts: margin must be in [0, 1)");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LabeledDataset d;
  d.features.resize(n, 2);
  if (truth) truth->assign(n, 0);
  for (int i = 0; i < n; ++i) {
    double a = 0.0;
    double b = 0.0;
    do {
      a = u(rng);
      b = u(rng);
    } while (std::abs(a) < margin || std::abs(b) < margin);
    d.features(i, 0) = a;
    d.features(i, 1) = b;
    d.labels.push_back(a * b > 0.0 ? 1 : 0);
    if (truth) (*truth)[i] = a > 0.0 ? 0 : 1;
  }
  return d;
}

LabeledDataset generate_separable(int n, int p, std::uint64_t seed, double margin) {
  return generate_separable(n, p, seed, margin, seed);
}

LabeledDataset generate_separable(int n, int p, std::uint64_t seed, double margin, std::uint64_t hyperplane_seed) {
  require(n >= 1 && p >= 2, "generate_separable: need n >= 1, p >= 2");
  Rng rng(hyperplane_seed);
  Vector w(p);
  for (auto& v : w) v = standard_normal(rng);
  w.normalize();
  if (seed != hyperplane_seed) rng = Rng(seed);
  LabeledDataset d;
  d.features.resize(n, p);
  for (int i = 0; i < n; ++i) {
    Vector x(p);
    double s = 0.0;
    do {
      for (auto& v : x) v = standard_normal(rng);
      s = w.dot(x);
    } while (std::abs(s) < margin);
    d.features.row(i) = x.transpose();
    d.labels.push_back(s > 0.0 ? 1 : 0);
  }
  return d;
}

Matrix blocks_templates() {
  static const char* shapes[kBlocksShapes][kBlocksSide] = {
      {"010000", "111000", "010000", "000000", "000000", "000000"},
      {"000111", "000101", "000111", "000000", "000000", "000000"},
      {"000000", "000000", "000000", "100000", "110000", "111000"},
      {"000000", "000000", "000000", "000111", "000010", "000010"},
  };
  Matrix t = Matrix::Zero(kBlocksShapes, kBlocksSide * kBlocksSide);
  for (int k = 0; k < kBlocksShapes; ++k)
    for (int r = 0; r < kBlocksSide; ++r)
      for (int c = 0; c < kBlocksSide; ++c) t(k, r * kBlocksSide + c) = shapes[k][r][c] == '1' ? 1.0 : 0.0;
  return t;
}

BlocksData generate_blocks(int n, double noise_sigma, std::uint64_t seed) {
  require(n >= 1, "generate_blocks: n must be >= 1");
  require(noise_sigma >= 0.0, "generate_blocks: noise must be >= 0");
  Rng rng(seed);
  BlocksData out;
  out.templates = blocks_templates();
  const int D = kBlocksSide * kBlocksSide;
  out.data.examples = Matrix::Zero(n, D);
  out.presence = Eigen::MatrixXi::Zero(n, kBlocksShapes);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < kBlocksShapes; ++k) {
      if (coin(rng)) {
        out.presence(i, k) = 1;
        out.data.examples.row(i) += out.templates.row(k);
      }
    }
    for (int j = 0; j < D; ++j) out.data.examples(i, j) += noise_sigma * standard_normal(rng);
  }
  return out;
}

}  // namespace divbayes
