#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scca/numkit/ops.hpp"

namespace scca::nk {

void PrintTo(const Tensor& t, std::ostream* os) {
  *os << shape_string(t.shape()) << " {";
  const std::size_t shown = std::min<std::size_t>(t.size(), 16);
  for (std::size_t i = 0; i < shown; ++i) *os << (i ? ", " : "") << t[i];
  if (shown < t.size()) *os << ", ...";
  *os << '}';
}

}  // namespace scca::nk

namespace scca::oracle {

nk::Tensor random_tensor(const nk::Shape& shape, Rng& rng, double lo, double hi) {
  nk::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

nk::Tensor random_away_from_zero(const nk::Shape& shape, Rng& rng, double lo, double hi) {
  nk::Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(lo, hi);
  return t;
}

double max_abs_diff(const nk::Tensor& a, const nk::Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

nk::Tensor matmul(const nk::Tensor& a, const nk::Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  nk::Tensor c({m, p});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      long double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a[i * k + t]) * b[t * p + j];
      c[i * p + j] = static_cast<double>(s);
    }
  return c;
}

nk::Tensor conv2d(const nk::Tensor& x, const nk::Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  nk::Tensor y({B, O, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          long double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += static_cast<long double>(x.at({b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)})) *
                     w.at({o, c, ky, kx});
              }
          y.at({b, o, oy, ox}) = static_cast<double>(s);
        }
  return y;
}

nk::Tensor masked_softmax(const nk::Tensor& x, const nk::Tensor& mask) {
  const std::size_t m = mask.dim(1), n = mask.dim(0);
  const std::size_t rows = x.size() / m;
  nk::Tensor y(x.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t mr = r % n;
    long double z = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (mask[mr * m + j] != 0) z += std::exp(static_cast<long double>(x[r * m + j]));
    for (std::size_t j = 0; j < m; ++j)
      if (mask[mr * m + j] != 0) y[r * m + j] = static_cast<double>(std::exp(static_cast<long double>(x[r * m + j])) / z);
  }
  return y;
}

nk::Tensor pearson(const std::vector<std::vector<double>>& columns) {
  const std::size_t n = columns.size(), m = columns.front().size();
  std::vector<long double> mean(n, 0), sd(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    for (double v : columns[j]) mean[j] += v;
    mean[j] /= m;
    for (double v : columns[j]) sd[j] += (v - mean[j]) * (v - mean[j]);
    sd[j] = std::sqrt(sd[j] / m);
  }
  nk::Tensor c({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double cov = 0;
      for (std::size_t r = 0; r < m; ++r) cov += (columns[i][r] - mean[i]) * (columns[j][r] - mean[j]);
      cov /= m;
      c[i * n + j] = static_cast<double>(cov / (sd[i] * sd[j]));
    }
  return c;
}

nk::Tensor topk_mask(const nk::Tensor& c, std::size_t k) {
  const std::size_t n = c.dim(0);
  nk::Tensor mask({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> entries;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) entries.emplace_back(c[i * n + j], j);
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    mask[i * n + i] = 1;
    for (std::size_t t = 0; t < k; ++t) mask[i * n + entries[t].second] = 1;
  }
  return mask;
}

nk::Tensor symmetric_normalize(const nk::Tensor& m) {
  const std::size_t n = m.dim(0);
  nk::Tensor out({n, n});
  std::vector<long double> d(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += m[i * n + j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<double>(m[i * n + j] / std::sqrt(d[i] * d[j]));
  return out;
}

nk::Tensor numeric_gradient(const std::function<double(const nk::Tensor&)>& f, const nk::Tensor& x, double h) {
  nk::Tensor g(x.shape());
  nk::Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double vjp_error(const std::function<nk::Var(nk::Tape&, const std::vector<nk::Var>&)>& op,
                 const std::vector<nk::Tensor>& inputs, std::uint64_t seed, double h) {
  nk::Tensor r;
  {
    nk::Tape tape;
    std::vector<nk::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    Rng rng(seed);
    r = random_tensor(op(tape, vars).shape(), rng);
  }
  auto readout = [&](const std::vector<nk::Tensor>& xs) {
    nk::Tape tape;
    std::vector<nk::Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    const nk::Tensor out = op(tape, vars).value();
    long double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<long double>(out[i]) * r[i];
    return static_cast<double>(s);
  };

  nk::Tape tape;
  std::vector<nk::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const nk::Var out = op(tape, leaves);
  const nk::Var loss = nk::sum(nk::mul(out, tape.constant(r)));
  tape.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<nk::Tensor> xs = inputs;
    const nk::Tensor numeric = numeric_gradient(
        [&](const nk::Tensor& probe) {
          xs[k] = probe;
          return readout(xs);
        },
        inputs[k], h);
    const nk::Tensor* analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double a = analytic ? (*analytic)[i] : 0.0, n = numeric[i];
      const double diff = std::fabs(a - n);
      if (diff <= 1e-8) continue;
      worst = std::max(worst, diff / std::max(std::fabs(a), std::fabs(n)));
    }
  }
  return worst;
}

long double softwing(long double x, long double w1, long double w2, long double eps) {
  const long double a = std::fabs(x);
  if (a < w1) return a;
  return w2 * std::log1p(a / eps) + (w1 - w2 * std::log1p(w1 / eps));
}

long double wing(long double x, long double w, long double eps) {
  const long double a = std::fabs(x);
  if (a < w) return w * std::log1p(a / eps);
  return a - (w - w * std::log1p(w / eps));
}

std::vector<data::LandmarkSample> tiny_corpus(std::size_t n_landmarks, std::size_t samples, std::size_t size,
                                              std::uint64_t seed) {
  data::SynthConfig cfg = data::default_synth_config(n_landmarks);
  cfg.samples = samples;
  cfg.image_size = size;
  cfg.seed = seed;
  return data::synth_generate(cfg);
}

}  // namespace scca::oracle
