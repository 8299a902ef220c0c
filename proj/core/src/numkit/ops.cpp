#include "scca/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gemm.hpp"
#include "scca/numkit/parallel.hpp"

namespace scca::nk {
namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *v.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(x.shape()));
  }
}

// Work is split into fixed-size blocks so the summation order of every
// output element is independent of the thread count.
constexpr std::size_t kColumnBlock = 512;
constexpr std::size_t kRowBlock = 16;

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow;

  // Output columns ox for which ix = ox*stride + kx - pad lies in [0, w).
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t extent, std::size_t out_extent) const {
    std::size_t lo = 0;
    if (k < pad) lo = (pad - k + stride - 1) / stride;
    // largest o with o*stride + k - pad <= extent - 1
    long long hi_num = static_cast<long long>(extent) - 1 + static_cast<long long>(pad) - static_cast<long long>(k);
    if (hi_num < 0) return {0, 0};
    std::size_t hi = static_cast<std::size_t>(hi_num) / stride + 1;
    hi = std::min(hi, out_extent);
    if (lo > hi) lo = hi;
    return {lo, hi};
  }
};

// Lowers x to a [cin*kh*kw, batch*oh*ow] matrix; column q = b*oh*ow + oy*ow + ox.
std::vector<double> im2col(const Tensor& xv, const ConvGeom& G) {
  const std::size_t P = G.oh * G.ow, Q = G.batch * P;
  std::vector<double> cols(G.cin * G.kh * G.kw * Q, 0.0);
  parallel_for(G.cin, [&](std::size_t c) {
    for (std::size_t ky = 0; ky < G.kh; ++ky) {
      auto [ylo, yhi] = G.valid_range(ky, G.h, G.oh);
      for (std::size_t kx = 0; kx < G.kw; ++kx) {
        auto [xlo, xhi] = G.valid_range(kx, G.w, G.ow);
        double* row = cols.data() + ((c * G.kh + ky) * G.kw + kx) * Q;
        for (std::size_t b = 0; b < G.batch; ++b) {
          const double* ip = xv.ptr() + (b * G.cin + c) * G.h * G.w;
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* irow = ip + (oy * G.stride + ky - G.pad) * G.w + kx - G.pad;
            double* crow = row + b * P + oy * G.ow;
            for (std::size_t ox = xlo; ox < xhi; ++ox) crow[ox] = irow[ox * G.stride];
          }
        }
      }
    }
  });
  return cols;
}

std::size_t column_blocks(std::size_t q) { return (q + kColumnBlock - 1) / kColumnBlock; }
std::size_t row_blocks(std::size_t r) { return (r + kRowBlock - 1) / kRowBlock; }

template <class F>
Var unary(const Var& x, const char* name, F forward_backward_derivative) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward_backward_derivative(xv[i]).first;
  return t.record(std::move(out), {x},
                  [x, forward_backward_derivative](Tape& tp, const Tensor& g) {
                    const Tensor& xv = tp.value(x);
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * forward_backward_derivative(xv[i]).second;
                  },
                  name);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out({m, p});
  parallel_for(row_blocks(m), [&](std::size_t blk) {
    const std::size_t r0 = blk * kRowBlock, rows = std::min(kRowBlock, m - r0);
    detail::gemm_acc(false, false, rows, p, k, av.ptr() + r0 * k, k, bv.ptr(), p, out.ptr() + r0 * p, p);
  });
  return t.record(std::move(out), {a, b},
                  [a, b, m, k, p](Tape& tp, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (a.requires_grad()) {
                      Tensor& ga = tp.grad_slot(a);
                      parallel_for(row_blocks(m), [&](std::size_t blk) {
                        const std::size_t r0 = blk * kRowBlock, rows = std::min(kRowBlock, m - r0);
                        detail::gemm_acc(false, true, rows, k, p, g.ptr() + r0 * p, p, bv.ptr(), p,
                                         ga.ptr() + r0 * k, k);
                      });
                    }
                    if (b.requires_grad()) {
                      Tensor& gb = tp.grad_slot(b);
                      parallel_for(row_blocks(k), [&](std::size_t blk) {
                        const std::size_t r0 = blk * kRowBlock, rows = std::min(kRowBlock, k - r0);
                        detail::gemm_acc(true, false, rows, p, m, av.ptr() + r0, k, g.ptr(), p, gb.ptr() + r0 * p, p);
                      });
                    }
                  },
                  "matmul");
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& tp, const Tensor& g) {
                    for (const Var& v : {a, b}) {
                      if (!v.requires_grad()) continue;
                      Tensor& gv = tp.grad_slot(v);
                      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                    }
                  },
                  "add");
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& tp, const Tensor& g) {
                    if (a.requires_grad()) {
                      Tensor& ga = tp.grad_slot(a);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (b.requires_grad()) {
                      Tensor& gb = tp.grad_slot(b);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    }
                  },
                  "sub");
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& tp, const Tensor& g) {
                    const Tensor& av = tp.value(a);
                    const Tensor& bv = tp.value(b);
                    if (a.requires_grad()) {
                      Tensor& ga = tp.grad_slot(a);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    }
                    if (b.requires_grad()) {
                      Tensor& gb = tp.grad_slot(b);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                    }
                  },
                  "mul");
}

Var scale(const Var& a, double s) {
  return unary(a, "scale", [s](double v) { return std::pair{v * s, s}; });
}

Var relu(const Var& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0}; });
}

Var sigmoid(const Var& x) {
  return unary(x, "sigmoid", [](double v) {
    double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return std::pair{s, s * (1.0 - s)};
  });
}

Var abs(const Var& x) {
  return unary(x, "abs", [](double v) {
    double d = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    return std::pair{std::fabs(v), d};
  });
}

Var log1p_scaled(const Var& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("log1p_scaled: eps must be positive");
  for (double v : x.value().data()) {
    if (!(v > -eps)) throw std::invalid_argument("log1p_scaled: argument must exceed -eps");
  }
  return unary(x, "log1p_scaled", [eps](double v) { return std::pair{std::log1p(v / eps), 1.0 / (eps + v)}; });
}

Var sum(const Var& x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return t.record(Tensor::scalar(s), {x},
                  [x](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                  },
                  "sum");
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  return t.record(std::move(out), {x},
                  [x](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  },
                  "reshape");
}

Var add_channel_bias(const Var& x, const Var& b) {
  Tape& t = common_tape(x, b);
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || b.value().rank() != 1 || b.dim(0) != xv.dim(1)) {
    throw std::invalid_argument("add_channel_bias: bias " + shape_string(b.shape()) + " does not match " +
                                shape_string(xv.shape()));
  }
  const std::size_t outer = xv.dim(0), c = xv.dim(1), inner = xv.size() / (outer * c);
  Tensor out = xv;
  const Tensor& bv = b.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.ptr() + (o * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[ch];
    }
  return t.record(std::move(out), {x, b},
                  [x, b, outer, c, inner](Tape& tp, const Tensor& g) {
                    if (x.requires_grad()) {
                      Tensor& gx = tp.grad_slot(x);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    }
                    if (b.requires_grad()) {
                      Tensor& gb = tp.grad_slot(b);
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        double s = 0.0;
                        for (std::size_t o = 0; o < outer; ++o) {
                          const double* p = g.ptr() + (o * c + ch) * inner;
                          for (std::size_t i = 0; i < inner; ++i) s += p[i];
                        }
                        gb[ch] += s;
                      }
                    }
                  },
                  "add_channel_bias");
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  Tape& t = common_tape(x, w);
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  ConvGeom G{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), stride, pad, 0, 0};
  if (wv.dim(1) != G.cin) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(wv.shape()) + " does not match input " +
                                shape_string(xv.shape()));
  }
  if (G.kh > G.h + 2 * pad || G.kw > G.w + 2 * pad) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(wv.shape()) + " larger than padded input " +
                                shape_string(xv.shape()));
  }
  G.oh = (G.h + 2 * pad - G.kh) / stride + 1;
  G.ow = (G.w + 2 * pad - G.kw) / stride + 1;

  const std::size_t R = G.cin * G.kh * G.kw, P = G.oh * G.ow, Q = G.batch * P;
  const std::vector<double> cols = im2col(xv, G);
  std::vector<double> oc(G.cout * Q, 0.0);
  parallel_for(column_blocks(Q), [&](std::size_t blk) {
    const std::size_t q0 = blk * kColumnBlock, len = std::min(kColumnBlock, Q - q0);
    detail::gemm_acc(false, false, G.cout, len, R, wv.ptr(), R, cols.data() + q0, Q, oc.data() + q0, Q);
  });
  Tensor out({G.batch, G.cout, G.oh, G.ow});
  for (std::size_t b = 0; b < G.batch; ++b)
    for (std::size_t o = 0; o < G.cout; ++o)
      std::copy_n(oc.data() + o * Q + b * P, P, out.ptr() + (b * G.cout + o) * P);

  return t.record(std::move(out), {x, w},
                  [x, w, G, R, P, Q](Tape& tp, const Tensor& g) {
                    const Tensor& wv = tp.value(w);
                    // Output gradient as a [cout, batch*oh*ow] matrix.
                    std::vector<double> gc(G.cout * Q);
                    for (std::size_t b = 0; b < G.batch; ++b)
                      for (std::size_t o = 0; o < G.cout; ++o)
                        std::copy_n(g.ptr() + (b * G.cout + o) * P, P, gc.data() + o * Q + b * P);

                    if (w.requires_grad()) {
                      const std::vector<double> cols = im2col(tp.value(x), G);
                      Tensor& gw = tp.grad_slot(w);
                      parallel_for(row_blocks(G.cout), [&](std::size_t blk) {
                        const std::size_t o0 = blk * kRowBlock, rows = std::min(kRowBlock, G.cout - o0);
                        detail::gemm_acc(false, true, rows, R, Q, gc.data() + o0 * Q, Q, cols.data(), Q,
                                         gw.ptr() + o0 * R, R);
                      });
                    }
                    if (x.requires_grad()) {
                      std::vector<double> gcols(R * Q, 0.0);
                      parallel_for(column_blocks(Q), [&](std::size_t blk) {
                        const std::size_t q0 = blk * kColumnBlock, len = std::min(kColumnBlock, Q - q0);
                        detail::gemm_acc(true, false, R, len, G.cout, wv.ptr(), R, gc.data() + q0, Q,
                                         gcols.data() + q0, Q);
                      });
                      Tensor& gx = tp.grad_slot(x);
                      parallel_for(G.batch * G.cin, [&](std::size_t task) {
                        const std::size_t b = task / G.cin, c = task % G.cin;
                        double* gp = gx.ptr() + task * G.h * G.w;
                        for (std::size_t ky = 0; ky < G.kh; ++ky) {
                          auto [ylo, yhi] = G.valid_range(ky, G.h, G.oh);
                          for (std::size_t kx = 0; kx < G.kw; ++kx) {
                            auto [xlo, xhi] = G.valid_range(kx, G.w, G.ow);
                            const double* row = gcols.data() + ((c * G.kh + ky) * G.kw + kx) * Q + b * P;
                            for (std::size_t oy = ylo; oy < yhi; ++oy) {
                              double* irow = gp + (oy * G.stride + ky - G.pad) * G.w + kx - G.pad;
                              const double* crow = row + oy * G.ow;
                              for (std::size_t ox = xlo; ox < xhi; ++ox) irow[ox * G.stride] += crow[ox];
                            }
                          }
                        }
                      });
                    }
                  },
                  "conv2d");
}

Var global_pool(const Var& x, PoolMode mode) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "global_pool");
  const Tensor& xv = x.value();
  const std::size_t bc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1)});
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? bc : 0);
  for (std::size_t i = 0; i < bc; ++i) {
    const double* p = xv.ptr() + i * hw;
    if (mode == PoolMode::Avg) {
      double s = 0.0;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
      out[i] = s / static_cast<double>(hw);
    } else {
      std::size_t best = 0;
      for (std::size_t j = 1; j < hw; ++j)
        if (p[j] > p[best]) best = j;
      argmax[i] = best;
      out[i] = p[best];
    }
  }
  return t.record(std::move(out), {x},
                  [x, mode, bc, hw, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t i = 0; i < bc; ++i) {
                      double* p = gx.ptr() + i * hw;
                      if (mode == PoolMode::Avg) {
                        const double share = g[i] / static_cast<double>(hw);
                        for (std::size_t j = 0; j < hw; ++j) p[j] += share;
                      } else {
                        p[argmax[i]] += g[i];
                      }
                    }
                  },
                  mode == PoolMode::Avg ? "global_avg_pool" : "global_max_pool");
}

Var channel_pool(const Var& x, PoolMode mode) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "channel_pool");
  const Tensor& xv = x.value();
  const std::size_t batch = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({batch, 1, xv.dim(2), xv.dim(3)});
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? batch * hw : 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* base = xv.ptr() + b * c * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      if (mode == PoolMode::Avg) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += base[ch * hw + j];
        out[b * hw + j] = s / static_cast<double>(c);
      } else {
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch)
          if (base[ch * hw + j] > base[best * hw + j]) best = ch;
        argmax[b * hw + j] = best;
        out[b * hw + j] = base[best * hw + j];
      }
    }
  }
  return t.record(std::move(out), {x},
                  [x, mode, batch, c, hw, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t b = 0; b < batch; ++b) {
                      double* base = gx.ptr() + b * c * hw;
                      for (std::size_t j = 0; j < hw; ++j) {
                        if (mode == PoolMode::Avg) {
                          const double share = g[b * hw + j] / static_cast<double>(c);
                          for (std::size_t ch = 0; ch < c; ++ch) base[ch * hw + j] += share;
                        } else {
                          base[argmax[b * hw + j] * hw + j] += g[b * hw + j];
                        }
                      }
                    }
                  },
                  mode == PoolMode::Avg ? "channel_avg_pool" : "channel_max_pool");
}

Var rowsoftmax(const Var& x, const Tensor& mask) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || mask.rank() != 2 || xv.dim(xv.rank() - 2) != mask.dim(0) ||
      xv.dim(xv.rank() - 1) != mask.dim(1)) {
    throw std::invalid_argument("rowsoftmax: mask " + shape_string(mask.shape()) + " does not match input " +
                                shape_string(xv.shape()));
  }
  const std::size_t n = mask.dim(0), m = mask.dim(1), mats = xv.size() / (n * m);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) any = any || mask[i * m + j] != 0.0;
    if (!any) throw std::invalid_argument("rowsoftmax: row " + std::to_string(i) + " is fully masked");
  }
  Tensor out(xv.shape(), 0.0);
  for (std::size_t b = 0; b < mats; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = xv.ptr() + (b * n + i) * m;
      const double* mrow = mask.ptr() + i * m;
      double* orow = out.ptr() + (b * n + i) * m;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j)
        if (mrow[j] != 0.0) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (mrow[j] == 0.0) continue;
        orow[j] = std::exp(row[j] - mx);
        z += orow[j];
      }
      for (std::size_t j = 0; j < m; ++j) orow[j] /= z;
    }
  }
  Tensor saved = out;
  return t.record(std::move(out), {x},
                  [x, yv = std::move(saved), n, m, mats](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t r = 0; r < mats * n; ++r) {
                      const double* yr = yv.ptr() + r * m;
                      const double* gr = g.ptr() + r * m;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < m; ++j) dot += yr[j] * gr[j];
                      double* gxr = gx.ptr() + r * m;
                      for (std::size_t j = 0; j < m; ++j) gxr[j] += yr[j] * (gr[j] - dot);
                    }
                  },
                  "rowsoftmax");
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, BnMode mode) {
  Tape& t = common_tape(x, gamma);
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw std::invalid_argument("batchnorm: input must have a channel axis");
  const std::size_t batch = xv.dim(0), c = xv.dim(1), inner = xv.size() / (batch * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw std::invalid_argument("batchnorm: scale/shift shape does not match channels of " + shape_string(xv.shape()));
  }
  if (!state.running_mean || !state.running_var || state.running_mean->shape() != Shape{c} ||
      state.running_var->shape() != Shape{c}) {
    throw std::invalid_argument("batchnorm: running statistics missing or mis-shaped");
  }
  if (mode == BnMode::Train && batch < 2) throw std::invalid_argument("batchnorm: train mode requires batch size >= 2");

  const double count = static_cast<double>(batch * inner);
  Tensor mu({c}), inv_std({c});
  if (mode == BnMode::Train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xv.ptr() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / count;
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = xv.ptr() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + state.eps);
      Tensor& rm = *state.running_mean;
      Tensor& rv = *state.running_var;
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * v * count / (count - 1.0);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = (*state.running_mean)[ch];
      inv_std[ch] = 1.0 / std::sqrt((*state.running_var)[ch] + state.eps);
    }
  }

  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[off + i] = (xv[off + i] - mu[ch]) * inv_std[ch];
        out[off + i] = gv[ch] * xhat[off + i] + bv[ch];
      }
    }

  const bool train = mode == BnMode::Train;
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, c, inner, count,
                   train](Tape& tp, const Tensor& g) {
                    const Tensor& gv = tp.value(gamma);
                    Tensor dgamma({c}), dbeta({c});
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      double sg = 0.0, sgx = 0.0;
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t off = (b * c + ch) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          sg += g[off + i];
                          sgx += g[off + i] * xhat[off + i];
                        }
                      }
                      dbeta[ch] = sg;
                      dgamma[ch] = sgx;
                    }
                    if (x.requires_grad()) {
                      Tensor& gx = tp.grad_slot(x);
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const double k = gv[ch] * inv_std[ch];
                        const double mg = dbeta[ch] / count, mgx = dgamma[ch] / count;
                        for (std::size_t b = 0; b < batch; ++b) {
                          const std::size_t off = (b * c + ch) * inner;
                          for (std::size_t i = 0; i < inner; ++i) {
                            if (train) {
                              gx[off + i] += k * (g[off + i] - mg - xhat[off + i] * mgx);
                            } else {
                              gx[off + i] += k * g[off + i];
                            }
                          }
                        }
                      }
                    }
                    if (gamma.requires_grad()) {
                      Tensor& gg = tp.grad_slot(gamma);
                      for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += dgamma[ch];
                    }
                    if (beta.requires_grad()) {
                      Tensor& gb = tp.grad_slot(beta);
                      for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += dbeta[ch];
                    }
                  },
                  "batchnorm");
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Tape& t = tape_of(xs.front());
  const Shape& s0 = xs.front().shape();
  if (s0.size() != 4) throw std::invalid_argument("concat_channels: expected [B, C, H, W] inputs");
  std::size_t total = 0;
  for (const Var& v : xs) {
    if (v.tape() != &t) throw std::invalid_argument("concat_channels: inputs on different tapes");
    const Shape& s = v.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(s0) + " and " +
                                  shape_string(s));
    }
    total += s[1];
  }
  const std::size_t batch = s0[0], hw = s0[2] * s0[3];
  Tensor out({batch, total, s0[2], s0[3]});
  std::size_t c0 = 0;
  for (const Var& v : xs) {
    const Tensor& xv = v.value();
    const std::size_t c = xv.dim(1);
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(xv.ptr() + b * c * hw, c * hw, out.ptr() + (b * total + c0) * hw);
    c0 += c;
  }
  return t.record(std::move(out), xs,
                  [xs, batch, total, hw](Tape& tp, const Tensor& g) {
                    std::size_t c0 = 0;
                    for (const Var& v : xs) {
                      const std::size_t c = v.dim(1);
                      if (v.requires_grad()) {
                        Tensor& gv = tp.grad_slot(v);
                        for (std::size_t b = 0; b < batch; ++b) {
                          const double* src = g.ptr() + (b * total + c0) * hw;
                          double* dst = gv.ptr() + b * c * hw;
                          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                        }
                      }
                      c0 += c;
                    }
                  },
                  "concat_channels");
}

Var upsample_nearest2x(const Var& x) {
  Tape& t = tape_of(x);
  require_rank(x, 4, "upsample_nearest2x");
  const Tensor& xv = x.value();
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = xv[(p * h + y / 2) * w + xx / 2];
  return t.record(std::move(out), {x},
                  [x, planes, h, w](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad_slot(x);
                    for (std::size_t p = 0; p < planes; ++p)
                      for (std::size_t y = 0; y < 2 * h; ++y)
                        for (std::size_t xx = 0; xx < 2 * w; ++xx)
                          gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
                  },
                  "upsample_nearest2x");
}

Var mul_channel(const Var& x, const Var& s) {
  Tape& t = common_tape(x, s);
  require_rank(x, 4, "mul_channel");
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  const std::size_t bc = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (sv.shape() != Shape{xv.dim(0), xv.dim(1)}) {
    throw std::invalid_argument("mul_channel: scale " + shape_string(sv.shape()) + " does not match " +
                                shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] *= sv[i];
  return t.record(std::move(out), {x, s},
                  [x, s, bc, hw](Tape& tp, const Tensor& g) {
                    const Tensor& xv = tp.value(x);
                    const Tensor& sv = tp.value(s);
                    if (x.requires_grad()) {
                      Tensor& gx = tp.grad_slot(x);
                      for (std::size_t i = 0; i < bc; ++i)
                        for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g[i * hw + j] * sv[i];
                    }
                    if (s.requires_grad()) {
                      Tensor& gs = tp.grad_slot(s);
                      for (std::size_t i = 0; i < bc; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < hw; ++j) acc += g[i * hw + j] * xv[i * hw + j];
                        gs[i] += acc;
                      }
                    }
                  },
                  "mul_channel");
}

Var mul_spatial(const Var& x, const Var& s) {
  Tape& t = common_tape(x, s);
  require_rank(x, 4, "mul_spatial");
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  const std::size_t batch = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (sv.shape() != Shape{batch, 1, xv.dim(2), xv.dim(3)}) {
    throw std::invalid_argument("mul_spatial: scale " + shape_string(sv.shape()) + " does not match " +
                                shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < hw; ++j) out[(b * c + ch) * hw + j] *= sv[b * hw + j];
  return t.record(std::move(out), {x, s},
                  [x, s, batch, c, hw](Tape& tp, const Tensor& g) {
                    const Tensor& xv = tp.value(x);
                    const Tensor& sv = tp.value(s);
                    if (x.requires_grad()) {
                      Tensor& gx = tp.grad_slot(x);
                      for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t j = 0; j < hw; ++j)
                            gx[(b * c + ch) * hw + j] += g[(b * c + ch) * hw + j] * sv[b * hw + j];
                    }
                    if (s.requires_grad()) {
                      Tensor& gs = tp.grad_slot(s);
                      for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t j = 0; j < hw; ++j) {
                          double acc = 0.0;
                          for (std::size_t ch = 0; ch < c; ++ch)
                            acc += g[(b * c + ch) * hw + j] * xv[(b * c + ch) * hw + j];
                          gs[b * hw + j] += acc;
                        }
                    }
                  },
                  "mul_spatial");
}

Var scatter_pattern(const Var& values, const Pattern& pattern, std::size_t n, double fill) {
  Tape& t = tape_of(values);
  require_rank(values, 2, "scatter_pattern");
  const std::size_t batch = values.dim(0), p = values.dim(1);
  if (p != pattern.size()) {
    throw std::invalid_argument("scatter_pattern: " + std::to_string(p) + " values for a pattern of " +
                                std::to_string(pattern.size()) + " entries");
  }
  for (const auto& [r, c] : pattern)
    if (r >= n || c >= n) throw std::invalid_argument("scatter_pattern: pattern index out of range");
  const Tensor& vv = values.value();
  Tensor out({batch, n, n}, fill);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t e = 0; e < p; ++e) out[(b * n + pattern[e].first) * n + pattern[e].second] = vv[b * p + e];
  return t.record(std::move(out), {values},
                  [values, pattern, n, batch, p](Tape& tp, const Tensor& g) {
                    Tensor& gv = tp.grad_slot(values);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t e = 0; e < p; ++e)
                        gv[b * p + e] += g[(b * n + pattern[e].first) * n + pattern[e].second];
                  },
                  "scatter_pattern");
}

Var pattern_aggregate(const Var& w, const Pattern& pattern, const Var& h) {
  Tape& t = common_tape(w, h);
  require_rank(w, 3, "pattern_aggregate");
  require_rank(h, 3, "pattern_aggregate");
  const std::size_t batch = h.dim(0), n = h.dim(1), d = h.dim(2);
  const std::size_t wb = w.dim(0);
  if (w.dim(1) != n || w.dim(2) != n || (wb != batch && wb != 1)) {
    throw std::invalid_argument("pattern_aggregate: weights " + shape_string(w.shape()) + " do not match features " +
                                shape_string(h.shape()));
  }
  for (const auto& [r, c] : pattern)
    if (r >= n || c >= n) throw std::invalid_argument("pattern_aggregate: pattern index out of range");
  const Tensor& wv = w.value();
  const Tensor& hv = h.value();
  Tensor out({batch, n, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t bw = wb == 1 ? 0 : b;
    for (const auto& [i, j] : pattern) {
      const double a = wv[(bw * n + i) * n + j];
      const double* src = hv.ptr() + (b * n + j) * d;
      double* dst = out.ptr() + (b * n + i) * d;
      for (std::size_t k = 0; k < d; ++k) dst[k] += a * src[k];
    }
  }
  return t.record(std::move(out), {w, h},
                  [w, h, pattern, batch, n, d, wb](Tape& tp, const Tensor& g) {
                    const Tensor& wv = tp.value(w);
                    const Tensor& hv = tp.value(h);
                    if (h.requires_grad()) {
                      Tensor& gh = tp.grad_slot(h);
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t bw = wb == 1 ? 0 : b;
                        for (const auto& [i, j] : pattern) {
                          const double a = wv[(bw * n + i) * n + j];
                          const double* src = g.ptr() + (b * n + i) * d;
                          double* dst = gh.ptr() + (b * n + j) * d;
                          for (std::size_t k = 0; k < d; ++k) dst[k] += a * src[k];
                        }
                      }
                    }
                    if (w.requires_grad()) {
                      Tensor& gw = tp.grad_slot(w);
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t bw = wb == 1 ? 0 : b;
                        for (const auto& [i, j] : pattern) {
                          const double* gi = g.ptr() + (b * n + i) * d;
                          const double* hj = hv.ptr() + (b * n + j) * d;
                          double acc = 0.0;
                          for (std::size_t k = 0; k < d; ++k) acc += gi[k] * hj[k];
                          gw[(bw * n + i) * n + j] += acc;
                        }
                      }
                    }
                  },
                  "pattern_aggregate");
}

}  // namespace scca::nk
