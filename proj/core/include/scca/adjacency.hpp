#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "scca/dataset.hpp"
#include "scca/numkit/ops.hpp"
#include "scca/numkit/tensor.hpp"

// Static landmark graph built from corpus statistics: per-axis Pearson
// correlation, combined absolute correlation, and row-wise top-k selection.
namespace scca::adj {

struct CorrelationBundle {
  nk::Tensor cx;  // [N, N]
  nk::Tensor cy;  // [N, N]
  nk::Tensor c;   // (|cx| + |cy|) / 2
};

// Binary N x N neighbourhood matrix with self-loops. Every row holds exactly
// k + 1 ones; `pattern` lists the ones in row-major order. The matrix is not
// necessarily symmetric.
struct SparseAdjacency {
  nk::Tensor mask;
  std::size_t k = 0;
  nk::Pattern pattern;

  std::size_t nodes() const { return mask.dim(0); }
  std::size_t nonzeros() const { return pattern.size(); }
};

// Throws when fewer than 2 samples or a landmark coordinate has variance
// <= 1e-12 (the message names the landmark index and axis).
CorrelationBundle pearson(const data::LandmarkTensor& t);

// Keeps the diagonal plus the k largest off-diagonal entries of each row; ties
// go to the lower column index. Requires 1 <= k <= N - 1.
SparseAdjacency topk_sparsify(const nk::Tensor& c, std::size_t k);

// Validates a binary mask (self-loops, k + 1 ones per row) and derives its
// pattern.
SparseAdjacency from_mask(const nk::Tensor& mask);

// D^-1/2 M D^-1/2 with D the row degrees of M.
nk::Tensor symmetric_normalize(const nk::Tensor& m);

// Convenience: pearson + topk_sparsify on the training split.
SparseAdjacency build_adjacency(const std::vector<data::LandmarkSample>& train, std::size_t k);

// Dense binary CSV plus a sidecar `<path>.k` file holding `k=<int>`.
void write_adjacency(const std::filesystem::path& csv, const SparseAdjacency& a);
SparseAdjacency read_adjacency(const std::filesystem::path& csv);

void write_matrix_csv(const std::filesystem::path& path, const nk::Tensor& m);
nk::Tensor read_matrix_csv(const std::filesystem::path& path);

// In-degree histogram: entry d counts nodes selected as a neighbour by exactly
// d rows (self-loops included).
std::vector<std::size_t> in_degree_histogram(const SparseAdjacency& a);

}  // namespace scca::adj
