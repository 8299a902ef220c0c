#include <gtest/gtest.h>

#include <cmath>

#include "op_cases.hpp"
#include "oracles.hpp"
#include "scca/numkit/ops.hpp"
#include "scca/numkit/parallel.hpp"
#include "scca/numkit/tape.hpp"

namespace nk = scca::nk;
namespace oracle = scca::oracle;
using scca::Rng;

namespace {

nk::Tensor forward(const std::function<nk::Var(nk::Tape&)>& f) {
  nk::Tape tape;
  return f(tape).value();
}

}  // namespace

TEST(Tensor, ShapeAndDataStayConsistent) {
  nk::Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.at({1, 2}), 1.5);
  EXPECT_THROW(nk::Tensor({2, 0}), std::invalid_argument);
  EXPECT_THROW(nk::Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(t.at({2, 0}), std::out_of_range);
  EXPECT_THROW(t.reshaped({4}), std::invalid_argument);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (nk::Shape{3, 2}));
}

TEST(Tape, IdentityAndSquareGradients) {
  nk::Tape tape;
  nk::Var x = tape.leaf(nk::Tensor::scalar(3.0));
  tape.backward(x);
  EXPECT_EQ((*tape.grad(x))[0], 1.0);

  nk::Tape t2;
  nk::Var y = t2.leaf(nk::Tensor::scalar(3.0));
  t2.backward(nk::mul(y, y));
  EXPECT_EQ((*t2.grad(y))[0], 6.0);
}

TEST(Tape, GradientsAccumulateOverMultipleUses) {
  nk::Tape tape;
  nk::Var x = tape.leaf(nk::Tensor::from({2}, {1.0, -2.0}));
  nk::Var y = nk::sum(nk::add(nk::scale(x, 3.0), nk::mul(x, x)));
  tape.backward(y);
  const nk::Tensor& g = *tape.grad(x);
  EXPECT_DOUBLE_EQ(g[0], 3.0 + 2.0);
  EXPECT_DOUBLE_EQ(g[1], 3.0 - 4.0);
}

TEST(Tape, BackwardVisitsNodesInReverseOrder) {
  nk::Tape tape;
  nk::Var x = tape.leaf(nk::Tensor::from({3}, {0.5, 1.0, 2.0}));
  nk::Var a = nk::relu(x);
  nk::Var b = nk::sigmoid(a);
  nk::Var c = nk::sum(b);
  tape.backward(c);
  const auto& order = tape.last_backward_order();
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0], c.id());
  EXPECT_EQ(order[1], b.id());
  EXPECT_EQ(order[2], a.id());
}

TEST(Tape, RejectsNonScalarOutputsAndForeignValues) {
  nk::Tape tape, other;
  nk::Var x = tape.leaf(nk::Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
  nk::Var y = other.leaf(nk::Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
  EXPECT_THROW(nk::add(x, y), std::invalid_argument);
}

TEST(Tape, NonFiniteValuesAreErrors) {
  nk::Tape tape;
  EXPECT_THROW(tape.constant(nk::Tensor::scalar(std::nan(""))), std::runtime_error);
  nk::Var x = tape.leaf(nk::Tensor::scalar(-2.0));
  EXPECT_THROW(nk::log1p_scaled(x, 0.5), std::exception);
}

TEST(Tape, ParametersReceiveGradients) {
  nk::Parameter p{"w", nk::Tensor::from({2}, {1.0, 2.0}), {}, true};
  nk::Tape tape;
  nk::Var w = tape.param(p);
  tape.backward(nk::sum(nk::mul(w, w)));
  ASSERT_FALSE(p.grad.empty());
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 4.0);
}

TEST(Matmul, HandCases) {
  Rng rng(1);
  const nk::Tensor b = oracle::random_tensor({3, 3}, rng);
  nk::Tensor eye({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  EXPECT_EQ(forward([&](nk::Tape& t) { return nk::matmul(t.constant(eye), t.constant(b)); }), b);

  const nk::Tensor out = forward([](nk::Tape& t) {
    return nk::matmul(t.constant(nk::Tensor::from({2, 2}, {1, 2, 3, 4})), t.constant(nk::Tensor::from({2, 1}, {0, 1})));
  });
  EXPECT_EQ(out, nk::Tensor::from({2, 1}, {2, 4}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  for (auto [m, k, p] : {std::tuple{5, 4, 3}, {1, 7, 9}, {40, 33, 70}}) {
    const nk::Tensor a = oracle::random_tensor({std::size_t(m), std::size_t(k)}, rng);
    const nk::Tensor b = oracle::random_tensor({std::size_t(k), std::size_t(p)}, rng);
    const nk::Tensor c = forward([&](nk::Tape& t) { return nk::matmul(t.constant(a), t.constant(b)); });
    EXPECT_LT(oracle::max_abs_diff(c, oracle::matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeMismatch) {
  nk::Tape t;
  EXPECT_THROW(nk::matmul(t.constant(nk::Tensor({2, 3})), t.constant(nk::Tensor({2, 3}))), std::invalid_argument);
}

TEST(Conv2d, IdentityAndSummationKernels) {
  Rng rng(3);
  const nk::Tensor x = oracle::random_tensor({1, 1, 4, 5}, rng);
  EXPECT_EQ(forward([&](nk::Tape& t) { return nk::conv2d(t.constant(x), t.constant(nk::Tensor({1, 1, 1, 1}, 1.0)), 1, 0); }),
            x);
  const nk::Tensor ones = forward(
      [](nk::Tape& t) { return nk::conv2d(t.constant(nk::Tensor({1, 1, 3, 3}, 1.0)), t.constant(nk::Tensor({1, 1, 3, 3}, 1.0)), 1, 0); });
  ASSERT_EQ(ones.shape(), (nk::Shape{1, 1, 1, 1}));
  EXPECT_EQ(ones[0], 9.0);
}

TEST(Conv2d, MatchesNestedLoops) {
  Rng rng(4);
  struct Case {
    nk::Shape x, w;
    std::size_t stride, pad;
  };
  for (const Case& c : {Case{{1, 2, 5, 5}, {3, 2, 3, 3}, 1, 0}, Case{{2, 3, 8, 8}, {4, 3, 3, 3}, 2, 1},
                        Case{{2, 2, 7, 7}, {1, 2, 7, 7}, 1, 3}, Case{{3, 5, 6, 6}, {6, 5, 1, 1}, 1, 0}}) {
    const nk::Tensor x = oracle::random_tensor(c.x, rng), w = oracle::random_tensor(c.w, rng);
    const nk::Tensor y = forward([&](nk::Tape& t) { return nk::conv2d(t.constant(x), t.constant(w), c.stride, c.pad); });
    EXPECT_LT(oracle::max_abs_diff(y, oracle::conv2d(x, w, c.stride, c.pad)), 1e-12);
  }
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  nk::Tape t;
  EXPECT_THROW(nk::conv2d(t.constant(nk::Tensor({1, 1, 2, 2})), t.constant(nk::Tensor({1, 1, 5, 5})), 1, 1),
               std::invalid_argument);
  EXPECT_THROW(nk::conv2d(t.constant(nk::Tensor({1, 2, 4, 4})), t.constant(nk::Tensor({1, 3, 1, 1})), 1, 0),
               std::invalid_argument);
}

TEST(Conv2d, ThreadCountDoesNotChangeBits) {
  Rng rng(5);
  const nk::Tensor x = oracle::random_tensor({4, 8, 16, 16}, rng), w = oracle::random_tensor({16, 8, 3, 3}, rng);
  auto run = [&] {
    nk::Tape t;
    nk::Var xv = t.leaf(x), wv = t.leaf(w);
    nk::Var y = nk::conv2d(xv, wv, 1, 1);
    t.backward(nk::sum(nk::mul(y, y)));
    return std::tuple{y.value(), *t.grad(xv), *t.grad(wv)};
  };
  nk::set_num_threads(1);
  const auto serial = run();
  nk::set_num_threads(4);
  const auto threaded = run();
  nk::set_num_threads(1);
  EXPECT_TRUE(serial == threaded);
}

TEST(Pool, ConstantInputAndChannelMax) {
  const nk::Tensor c({2, 3, 4, 4}, 2.5);
  for (auto mode : {nk::PoolMode::Avg, nk::PoolMode::Max}) {
    const nk::Tensor g = forward([&](nk::Tape& t) { return nk::global_pool(t.constant(c), mode); });
    const nk::Tensor s = forward([&](nk::Tape& t) { return nk::channel_pool(t.constant(c), mode); });
    for (double v : g.data()) EXPECT_EQ(v, 2.5);
    for (double v : s.data()) EXPECT_EQ(v, 2.5);
  }
  const nk::Tensor two = nk::Tensor::from({1, 2, 1, 1}, {1, 5});
  EXPECT_EQ(forward([&](nk::Tape& t) { return nk::channel_pool(t.constant(two), nk::PoolMode::Max); })[0], 5.0);
  EXPECT_EQ(forward([&](nk::Tape& t) { return nk::channel_pool(t.constant(two), nk::PoolMode::Avg); })[0], 3.0);
}

TEST(Pool, GlobalAverageMatchesMeanOracle) {
  Rng rng(6);
  const nk::Tensor x = oracle::random_tensor({1, 4, 6, 6}, rng);
  const nk::Tensor g = forward([&](nk::Tape& t) { return nk::global_pool(t.constant(x), nk::PoolMode::Avg); });
  for (std::size_t c = 0; c < 4; ++c) {
    long double s = 0;
    for (std::size_t i = 0; i < 36; ++i) s += x[c * 36 + i];
    EXPECT_NEAR(g[c], static_cast<double>(s / 36), 1e-15);
  }
}

TEST(RowSoftmax, HandCases) {
  const nk::Tensor full({1, 4}, 1.0);
  const nk::Tensor u = forward([&](nk::Tape& t) { return nk::rowsoftmax(t.constant(nk::Tensor({1, 4}, 0.7)), full); });
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);

  const nk::Tensor m = nk::Tensor::from({1, 3}, {1, 0, 1});
  const nk::Tensor h = forward([&](nk::Tape& t) { return nk::rowsoftmax(t.constant(nk::Tensor::from({1, 3}, {2, 50, 2})), m); });
  EXPECT_EQ(h, nk::Tensor::from({1, 3}, {0.5, 0.0, 0.5}));

  const nk::Tensor x = nk::Tensor::from({1, 3}, {1, 2, 3});
  const nk::Tensor s = forward([&](nk::Tape& t) { return nk::rowsoftmax(t.constant(x), nk::Tensor({1, 3}, 1.0)); });
  EXPECT_LT(oracle::max_abs_diff(s, oracle::masked_softmax(x, nk::Tensor({1, 3}, 1.0))), 1e-12);
}

TEST(RowSoftmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(7);
  const std::size_t n = 9;
  nk::Tensor mask({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i * n + i] = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (rng.bernoulli(0.3)) mask[i * n + j] = 1;
  }
  const nk::Tensor x = oracle::random_tensor({3, n, n}, rng, -20, 20);
  nk::Tensor shifted = x;
  for (std::size_t r = 0; r < 3 * n; ++r)
    for (std::size_t j = 0; j < n; ++j) shifted[r * n + j] += 100.0 * static_cast<double>(r % 5);
  const nk::Tensor y = forward([&](nk::Tape& t) { return nk::rowsoftmax(t.constant(x), mask); });
  const nk::Tensor ys = forward([&](nk::Tape& t) { return nk::rowsoftmax(t.constant(shifted), mask); });
  EXPECT_LT(oracle::max_abs_diff(y, oracle::masked_softmax(x, mask)), 1e-12);
  EXPECT_LT(oracle::max_abs_diff(y, ys), 1e-10);
  for (std::size_t r = 0; r < 3 * n; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[(r % n) * n + j] == 0) EXPECT_EQ(y[r * n + j], 0.0);
      s += y[r * n + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(RowSoftmax, FullyMaskedRowIsAnError) {
  nk::Tape t;
  EXPECT_THROW(nk::rowsoftmax(t.constant(nk::Tensor({2, 2})), nk::Tensor::from({2, 2}, {1, 0, 0, 0})),
               std::invalid_argument);
}

TEST(Elementwise, HandCases) {
  const nk::Tensor r = forward([](nk::Tape& t) { return nk::relu(t.constant(nk::Tensor::from({2}, {-1, 2}))); });
  EXPECT_EQ(r, nk::Tensor::from({2}, {0, 2}));
  const nk::Tensor s = forward([](nk::Tape& t) { return nk::sigmoid(t.constant(nk::Tensor::from({2}, {0, 2}))); });
  EXPECT_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], static_cast<double>(1.0L / (1.0L + std::exp(-2.0L))), 1e-15);
  const nk::Tensor a = forward([](nk::Tape& t) { return nk::abs(t.constant(nk::Tensor::from({2}, {-3, 4}))); });
  EXPECT_EQ(a, nk::Tensor::from({2}, {3, 4}));
  const nk::Tensor l = forward([](nk::Tape& t) { return nk::log1p_scaled(t.constant(nk::Tensor::scalar(10.0)), 0.5); });
  EXPECT_NEAR(l[0], std::log(21.0), 1e-15);
  nk::Tape t;
  EXPECT_THROW(nk::add(t.constant(nk::Tensor({2})), t.constant(nk::Tensor({3}))), std::invalid_argument);
  EXPECT_THROW(nk::mul(t.constant(nk::Tensor({2, 1})), t.constant(nk::Tensor({1, 2}))), std::invalid_argument);
}

TEST(BatchNorm, TrainModeMomentsAndRunningStatistics) {
  Rng rng(8);
  const nk::Tensor x = oracle::random_tensor({6, 3, 4, 4}, rng, -3, 5);
  nk::Tensor rm({3}, 0.0), rv({3}, 1.0);
  nk::Tape t;
  const nk::Tensor y =
      nk::batchnorm(t.constant(x), t.constant(nk::Tensor({3}, 1.0)), t.constant(nk::Tensor({3}, 0.0)), {&rm, &rv},
                    nk::BnMode::Train)
          .value();
  const std::size_t per = 6 * 16;
  for (std::size_t c = 0; c < 3; ++c) {
    long double m = 0, v = 0, xm = 0, xv = 0;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t i = 0; i < 16; ++i) {
        m += y[(b * 3 + c) * 16 + i];
        xm += x[(b * 3 + c) * 16 + i];
      }
    m /= per;
    xm /= per;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t i = 0; i < 16; ++i) {
        v += (y[(b * 3 + c) * 16 + i] - m) * (y[(b * 3 + c) * 16 + i] - m);
        xv += (x[(b * 3 + c) * 16 + i] - xm) * (x[(b * 3 + c) * 16 + i] - xm);
      }
    EXPECT_NEAR(static_cast<double>(m), 0.0, 1e-10);
    EXPECT_NEAR(static_cast<double>(v / per), 1.0, 1e-6);
    EXPECT_NEAR(rm[c], 0.1 * static_cast<double>(xm), 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * static_cast<double>(xv / (per - 1)), 1e-12);
  }
}

TEST(BatchNorm, ConstantBatchGivesShiftAndEvalUsesRunningStats) {
  nk::Tensor rm({2}, 0.0), rv({2}, 1.0);
  nk::Tape t;
  const nk::Tensor y = nk::batchnorm(t.constant(nk::Tensor({4, 2, 3, 3}, 7.0)), t.constant(nk::Tensor({2}, 2.0)),
                                     t.constant(nk::Tensor::from({2}, {0.25, -1.5})), {&rm, &rv}, nk::BnMode::Train)
                           .value();
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], (i / 9) % 2 == 0 ? 0.25 : -1.5);

  nk::Tensor em = nk::Tensor::from({2}, {1.0, -1.0}), ev = nk::Tensor::from({2}, {4.0, 0.25});
  const nk::Tensor x = nk::Tensor::from({1, 2, 1, 1}, {3.0, 0.0});
  const nk::Tensor e = nk::batchnorm(t.constant(x), t.constant(nk::Tensor({2}, 1.0)), t.constant(nk::Tensor({2}, 0.0)),
                                     {&em, &ev}, nk::BnMode::Eval)
                           .value();
  EXPECT_NEAR(e[0], 2.0 / 2.0, 1e-6);
  EXPECT_NEAR(e[1], 1.0 / 0.5, 1e-6);
  EXPECT_EQ(em, nk::Tensor::from({2}, {1.0, -1.0}));
}

TEST(BatchNorm, TrainModeRequiresTwoSamples) {
  nk::Tensor rm({2}, 0.0), rv({2}, 1.0);
  nk::Tape t;
  EXPECT_THROW(nk::batchnorm(t.constant(nk::Tensor({1, 2, 1, 1})), t.constant(nk::Tensor({2}, 1.0)),
                             t.constant(nk::Tensor({2}, 0.0)), {&rm, &rv}, nk::BnMode::Train),
               std::invalid_argument);
}

TEST(Gradients, EveryOpMatchesCentralDifferences) {
  Rng rng(9);
  const auto cases = oracle::gradient_cases(rng);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    EXPECT_LT(oracle::vjp_error(cases[i].op, cases[i].inputs, 100 + i), 1e-5) << cases[i].name;
  }
}
