#ifndef DIVBAYES_DATA_HPP
#define DIVBAYES_DATA_HPP

#include "divbayes/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace divbayes {

// Rows are examples. labels are 0/1.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

struct UnlabeledDataset {
  Matrix examples;
  int size() const { return static_cast<int>(examples.rows()); }
  int dim() const { return static_cast<int>(examples.cols()); }
};

// Sparse labeled text, one example per line:
//   <label> <index>:<value> <index>:<value> ...
// label is +1/-1 or 1/0 (-1 and 0 both map to 0). Indices are 1-based and
// strictly increasing within a line. Blank lines and lines starting with '#'
// are skipped. dim <= 0 infers the dimension from the largest index; a
// positive dim fixes it and rejects larger indices.
LabeledDataset read_sparse_labeled(std::istream& is, int dim = 0);
LabeledDataset load_sparse_labeled(const std::string& path, int dim = 0);
// Writes +1/-1 labels and nonzero entries with 17 significant digits.
void write_sparse_labeled(std::ostream& os, const LabeledDataset& data);

// Dense text matrix: rows separated by newlines, fields by commas and/or
// whitespace. Every row must have the same number of fields.
Matrix read_dense_matrix(std::istream& is);
Matrix load_dense_matrix(const std::string& path);
void write_dense_matrix(std::ostream& os, const Matrix& m);

// Dense labeled: first column is the label.
LabeledDataset load_dense_labeled(const std::string& path);

UnlabeledDataset load_unlabeled(const std::string& path, bool center);
Vector center_columns(Matrix& m);

// Two experts gated by the sign of x_1; expert k labels by the sign of
// (+/-) x_2, so y = 1[x_1 x_2 > 0]. Points within `margin` of either axis are
// redrawn. truth receives the planted gate index per example.
LabeledDataset generate_xor_experts(int n, std::uint64_t seed, double margin,
                                    std::vector<int>* truth = nullptr);

// y = 1[w*.x > 0] with x ~ N(0, I_p) and |w*.x| >= margin.
LabeledDataset generate_separable(int n, int p, std::uint64_t seed, double margin);
// Same hyperplane as generate_separable with hyperplane_seed, points from seed.
LabeledDataset generate_separable(int n, int p, std::uint64_t seed, double margin, std::uint64_t hyperplane_seed);

struct BlocksData {
  UnlabeledDataset data;     // not centered
  Matrix templates;          // 4 x 36
  Eigen::MatrixXi presence;  // n x 4
};
inline constexpr int kBlocksSide = 6;
inline constexpr int kBlocksShapes = 4;
// Noisy overlays of four fixed binary 6x6 shapes, each present with
// probability 1/2, plus N(0, noise_sigma^2) pixel noise.
BlocksData generate_blocks(int n, double noise_sigma, std::uint64_t seed);
Matrix blocks_templates();

}  // namespace divbayes

#endif  // DIVBAYES_DATA_HPP
