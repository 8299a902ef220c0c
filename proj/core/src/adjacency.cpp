#include "scca/adjacency.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

namespace scca::adj {
namespace {

// Correlation matrix of the columns of a row-major [M, N] matrix.
nk::Tensor column_correlation(const std::vector<double>& x, std::size_t m, std::size_t n, const char* axis) {
  std::vector<double> mean(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) mean[j] += x[r * n + j];
  for (double& v : mean) v /= static_cast<double>(m);

  std::vector<double> centered(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) centered[r * n + j] = x[r * n + j] - mean[j];

  std::vector<double> ss(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) ss[j] += centered[r * n + j] * centered[r * n + j];
  for (std::size_t j = 0; j < n; ++j) {
    if (!(ss[j] / static_cast<double>(m) > 1e-12)) {
      throw std::invalid_argument("pearson: landmark " + std::to_string(j) + " has zero variance along " + axis);
    }
  }

  nk::Tensor c({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    c[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += centered[r * n + i] * centered[r * n + j];
      const double v = std::clamp(s / std::sqrt(ss[i] * ss[j]), -1.0, 1.0);
      c[i * n + j] = v;
      c[j * n + i] = v;
    }
  }
  return c;
}

void require_square(const nk::Tensor& m, const char* op) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw std::invalid_argument(std::string(op) + ": expected a square matrix, got " + nk::shape_string(m.shape()));
  }
}

}  // namespace

CorrelationBundle pearson(const data::LandmarkTensor& t) {
  const nk::Tensor& v = t.values;
  if (v.rank() != 3 || v.dim(2) != 2) throw std::invalid_argument("pearson: expected an [M, N, 2] landmark tensor");
  const std::size_t m = v.dim(0), n = v.dim(1);
  if (m < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  std::vector<double> xs(m * n), ys(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      xs[r * n + j] = v[(r * n + j) * 2];
      ys[r * n + j] = v[(r * n + j) * 2 + 1];
    }
  CorrelationBundle b;
  b.cx = column_correlation(xs, m, n, "x");
  b.cy = column_correlation(ys, m, n, "y");
  b.c = nk::Tensor({n, n});
  for (std::size_t i = 0; i < n * n; ++i) b.c[i] = 0.5 * (std::fabs(b.cx[i]) + std::fabs(b.cy[i]));
  return b;
}

SparseAdjacency topk_sparsify(const nk::Tensor& c, std::size_t k) {
  require_square(c, "topk_sparsify");
  const std::size_t n = c.dim(0);
  if (k < 1 || k + 1 > n) {
    throw std::invalid_argument("topk_sparsify: k must lie in [1, " + std::to_string(n - 1) + "], got " +
                                std::to_string(k));
  }
  SparseAdjacency a;
  a.k = k;
  a.mask = nk::Tensor({n, n}, 0.0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    const double* row = c.ptr() + i * n;
    std::stable_sort(order.begin(), order.end(), [row](std::size_t l, std::size_t r) { return row[l] > row[r]; });
    a.mask[i * n + i] = 1.0;
    for (std::size_t t = 0; t < k; ++t) a.mask[i * n + order[t]] = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (a.mask[i * n + j] != 0.0) a.pattern.emplace_back(i, j);
  return a;
}

SparseAdjacency from_mask(const nk::Tensor& mask) {
  require_square(mask, "adjacency");
  const std::size_t n = mask.dim(0);
  SparseAdjacency a;
  a.mask = mask;
  std::size_t row_k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mask[i * n + j];
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("adjacency: mask entries must be 0 or 1");
      if (v == 1.0) {
        ++ones;
        a.pattern.emplace_back(i, j);
      }
    }
    if (mask[i * n + i] != 1.0) throw std::invalid_argument("adjacency: row " + std::to_string(i) + " lacks a self-loop");
    if (i == 0) row_k = ones;
    if (ones != row_k) throw std::invalid_argument("adjacency: rows have different neighbourhood sizes");
  }
  a.k = row_k - 1;
  return a;
}

nk::Tensor symmetric_normalize(const nk::Tensor& m) {
  require_square(m, "symmetric_normalize");
  const std::size_t n = m.dim(0);
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += m[i * n + j];
    if (!(d > 0.0)) throw std::invalid_argument("symmetric_normalize: row " + std::to_string(i) + " has zero degree");
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  nk::Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = inv_sqrt[i] * m[i * n + j] * inv_sqrt[j];
  return out;
}

SparseAdjacency build_adjacency(const std::vector<data::LandmarkSample>& train, std::size_t k) {
  return topk_sparsify(pearson(data::to_landmark_tensor(train)).c, k);
}

void write_matrix_csv(const std::filesystem::path& path, const nk::Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("write_matrix_csv: expected a matrix");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  char buf[64];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, m[i * cols + j]);
      if (j) out << ',';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
}

nk::Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw std::runtime_error(path.string() + ": line " + std::to_string(rows + 1) + ", field " +
                                 std::to_string(count + 1) + ": not a number");
      }
      values.push_back(v);
      ++count;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw std::runtime_error(path.string() + ": ragged matrix at line " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path.string() + ": empty matrix");
  return nk::Tensor({rows, cols}, std::move(values));
}

void write_adjacency(const std::filesystem::path& csv, const SparseAdjacency& a) {
  write_matrix_csv(csv, a.mask);
  std::ofstream side(csv.string() + ".k");
  if (!side) throw std::runtime_error("cannot write " + csv.string() + ".k");
  side << "k=" << a.k << '\n';
}

SparseAdjacency read_adjacency(const std::filesystem::path& csv) {
  SparseAdjacency a = from_mask(read_matrix_csv(csv));
  std::ifstream side(csv.string() + ".k");
  if (side) {
    std::string line;
    std::getline(side, line);
    if (line.rfind("k=", 0) != 0) throw std::runtime_error(csv.string() + ".k: expected 'k=<int>'");
    const std::size_t k = std::stoul(line.substr(2));
    if (k != a.k) {
      throw std::runtime_error(csv.string() + ".k declares k=" + std::to_string(k) + " but the matrix has k=" +
                               std::to_string(a.k));
    }
  }
  return a;
}

std::vector<std::size_t> in_degree_histogram(const SparseAdjacency& a) {
  const std::size_t n = a.nodes();
  std::vector<std::size_t> indeg(n, 0);
  for (const auto& [i, j] : a.pattern) ++indeg[j];
  std::vector<std::size_t> hist(n + 1, 0);
  for (std::size_t d : indeg) ++hist[d];
  return hist;
}

}  // namespace scca::adj
