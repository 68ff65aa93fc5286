#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "accent_ssl/numerics/finite_diff.hpp"
#include "accent_ssl/numerics/ops.hpp"
#include "test_util.hpp"

using namespace accent_ssl;
using accent_ssl::testing::random_param;
using accent_ssl::testing::random_tensor;
using T64 = Tensor<double>;

namespace {

// Projects an op output onto fixed random weights so every output element
// contributes to the scalar loss.
Var<double> weighted_sum(Var<double> out, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor(rng, out.rows(), out.cols());
  w = T64(out.shape(), w.storage());
  return ops::sum_all(ops::mul(out, out.tape->constant(std::move(w))));
}

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
  Tape<double> tape(false);
  auto i2 = tape.constant(T64::from_rows({{1, 0}, {0, 1}}));
  auto v = tape.constant(T64::from_rows({{3}, {4}}));
  EXPECT_EQ(ops::matmul(i2, v).value(), T64::from_rows({{3}, {4}}));
  auto a = tape.constant(T64::from_rows({{1, 2}}));
  EXPECT_EQ(ops::matmul(a, v).value(), T64::from_rows({{11}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> tape(false);
  auto a = tape.constant(T64::matrix(2, 3));
  auto b = tape.constant(T64::matrix(4, 5));
  try {
    ops::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto a = random_param(rng, "a", 4, 5);
  auto b = random_param(rng, "b", 5, 3);
  auto report = finite_diff_check<double>(
      [&](Tape<double>& t) { return weighted_sum(ops::matmul(t.param(a), t.param(b)), 5); }, {&a, &b},
      1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(Softmax, ClosedForms) {
  Tape<double> tape(false);
  auto s0 = ops::softmax_rows(tape.constant(T64::from_rows({{0, 0}}))).value();
  EXPECT_DOUBLE_EQ(s0[0], 0.5);
  EXPECT_DOUBLE_EQ(s0[1], 0.5);
  auto s1 = ops::softmax_rows(tape.constant(T64::from_rows({{1000, 1000, 1000}}))).value();
  for (double v : s1.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto s2 = ops::softmax_rows(tape.constant(T64::from_rows({{0, std::log(3.0)}}))).value();
  EXPECT_NEAR(s2[0], 0.25, 1e-15);
  EXPECT_NEAR(s2[1], 0.75, 1e-15);
}

TEST(Softmax, NaNInputIsDomainError) {
  Tape<double> tape(false);
  auto x = tape.constant(T64::from_rows({{0, std::nan("")}}));
  EXPECT_THROW(ops::softmax_rows(x), NumericDomainError);
}

TEST(Softmax, SumsToOneAndIsPermutationEquivariant) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    auto x = random_tensor(rng, 1, n, 5.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    auto xp = x;
    for (std::size_t i = 0; i < n; ++i) xp[i] = x[perm[i]];
    Tape<double> tape(false);
    auto y = ops::softmax_rows(tape.constant(x)).value();
    auto yp = ops::softmax_rows(tape.constant(xp)).value();
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += y[i];
      EXPECT_GT(y[i], 0.0);
      EXPECT_LE(y[i], 1.0);
      EXPECT_DOUBLE_EQ(yp[i], y[perm[i]]);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ClosedForms) {
  Tape<double> tape(false);
  auto gain = tape.constant(T64({3}, 1.0));
  auto bias = tape.constant(T64({3}, 0.0));
  auto flat = ops::layer_norm(tape.constant(T64::from_rows({{1, 1, 1}})), gain, bias, 1e-5).value();
  for (double v : flat.values()) EXPECT_EQ(v, 0.0);

  auto g2 = tape.constant(T64({2}, 1.0));
  auto b2 = tape.constant(T64({2}, 0.0));
  auto y = ops::layer_norm(tape.constant(T64::from_rows({{1, 3}})), g2, b2, 1e-15).value();
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(LayerNorm, RandomRowsAreStandardized) {
  Rng rng(8);
  Tape<double> tape(false);
  const double eps = 1e-5;
  auto x = random_tensor(rng, 3, 8, 2.0);
  auto y = ops::layer_norm(tape.constant(x), tape.constant(T64({8}, 1.0)), tape.constant(T64({8}, 0.0)), eps)
               .value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var_x = 0, var_y = 0, mx = 0;
    for (double v : x.row(r)) mx += v / 8;
    for (double v : y.row(r)) mean += v / 8;
    for (double v : x.row(r)) var_x += (v - mx) * (v - mx) / 8;
    for (double v : y.row(r)) var_y += (v - mean) * (v - mean) / 8;
    EXPECT_LT(std::abs(mean), 1e-12);
    // Variance is exactly var / (var + eps) after normalization.
    EXPECT_NEAR(var_y, var_x / (var_x + eps), 1e-10);
    EXPECT_NEAR(var_y, 1.0, eps / var_x + 1e-10);
  }
}

TEST(FiniteDiff, SquareFunction) {
  Parameter<double> x{"x", T64({1, 1}, 3.0), true};
  auto report = finite_diff_check<double>(
      [&](Tape<double>& t) {
        auto v = t.param(x);
        return ops::sum_all(ops::mul(v, v));
      },
      {&x}, 1e-5, 1e-9);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(FiniteDiff, SignFlippedBackwardFailsWithErrorTwo) {
  Parameter<double> x{"x", T64({1, 1}, 3.0), true};
  auto broken_square = [](Var<double> v) {
    Tensor<double> out = v.value();
    out[0] *= out[0];
    return v.tape->push(std::move(out), v.requires_grad(), [v](Tape<double>& t, std::size_t self) {
      const double g = (*t.grad(self))[0];
      t.grad_buffer(v.id)[0] -= 2.0 * t.value(v.id)[0] * g;
    });
  };
  auto report = finite_diff_check<double>([&](Tape<double>& t) { return ops::sum_all(broken_square(t.param(x))); },
                                          {&x}, 1e-5, 1e-4);
  EXPECT_FALSE(report.pass);
  EXPECT_NEAR(report.max_rel_error, 2.0, 1e-6);
}

TEST(FiniteDiff, NonFiniteLossNamesParameterIndex) {
  Parameter<double> x{"x", T64::from_rows({{1.0, 0.0}}), true};
  // log(x) is finite at the base point only if the perturbation stays positive.
  auto log_op = [](Var<double> v) {
    Tensor<double> out = v.value();
    for (auto& e : out.values()) e = std::log(e + 1e-6);
    return v.tape->push(std::move(out), v.requires_grad(), [v](Tape<double>& t, std::size_t self) {
      const auto& g = *t.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) t.grad_buffer(v.id)[i] += g[i] / (t.value(v.id)[i] + 1e-6);
    });
  };
  try {
    finite_diff_check<double>([&](Tape<double>& t) { return ops::sum_all(log_op(t.param(x))); }, {&x}, 1e-5,
                              1e-4);
    FAIL() << "expected NumericDomainError";
  } catch (const NumericDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
}

// >= 50 randomized trials per differentiable primitive, relative 1e-5.
class PrimitiveGradients : public ::testing::Test {
 protected:
  // min_cols guards ops that degenerate at tiny widths (layer norm over two
  // entries saturates to +-1 and its gradient vanishes below FD resolution).
  template <class Build>
  void run(const char* what, Build&& build, std::size_t min_cols = 1) {
    Rng rng(std::hash<std::string>{}(what));
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = 1 + rng.below(4), n = min_cols + rng.below(5), k = 1 + rng.below(4);
      auto a = random_param(rng, "a", m, n);
      auto b = random_param(rng, "b", m, n);
      auto c = random_param(rng, "c", n, k);
      auto v = random_param(rng, "v", 1, n);
      const std::uint64_t wseed = rng.next();
      auto report = finite_diff_check<double>(
          [&](Tape<double>& t) { return weighted_sum(build(t, a, b, c, v, rng), wseed); }, {&a, &b, &c, &v},
          1e-5, 1e-5);
      ASSERT_TRUE(report.pass) << what << " trial " << trial << " err " << report.max_rel_error << " m=" << m << " n=" << n;
    }
  }
  using P = Parameter<double>;
};

TEST_F(PrimitiveGradients, Matmul) {
  run("matmul", [](Tape<double>& t, P& a, P&, P& c, P&, Rng&) { return ops::matmul(t.param(a), t.param(c)); });
}
TEST_F(PrimitiveGradients, MatmulNT) {
  run("matmul_nt", [](Tape<double>& t, P& a, P& b, P&, P&, Rng&) { return ops::matmul_nt(t.param(a), t.param(b)); });
}
TEST_F(PrimitiveGradients, Linear) {
  run("linear", [](Tape<double>& t, P& a, P&, P& c, P&, Rng&) {
    Tensor<double> bias({c.value.cols()}, 0.3);
    auto bv = t.input(bias);
    return ops::linear(t.param(a), t.param(c), bv);
  });
}
TEST_F(PrimitiveGradients, LinearBias) {
  run("linear_bias", [](Tape<double>& t, P& a, P& b, P&, P& v, Rng&) {
    // Square weights from b^T b keep the shapes aligned with the bias v.
    auto w = ops::matmul(ops::transpose(t.param(b)), t.param(b));
    return ops::linear(t.param(a), w, t.param(v));
  });
}
TEST_F(PrimitiveGradients, AddSubMul) {
  run("addsubmul", [](Tape<double>& t, P& a, P& b, P&, P&, Rng&) {
    auto x = t.param(a), y = t.param(b);
    return ops::mul(ops::add(x, y), ops::sub(x, ops::scale(y, 0.7)));
  });
}
TEST_F(PrimitiveGradients, Gelu) {
  run("gelu", [](Tape<double>& t, P& a, P&, P&, P&, Rng&) { return ops::gelu(t.param(a)); });
}
TEST_F(PrimitiveGradients, Softmax) {
  run("softmax", [](Tape<double>& t, P& a, P&, P&, P&, Rng&) { return ops::softmax_rows(t.param(a)); });
}
TEST_F(PrimitiveGradients, LogSoftmax) {
  run("log_softmax", [](Tape<double>& t, P& a, P&, P&, P&, Rng&) { return ops::log_softmax_rows(t.param(a)); });
}
TEST_F(PrimitiveGradients, LayerNorm) {
  run("layer_norm", [](Tape<double>& t, P& a, P& b, P&, P& v, Rng&) {
    auto gain = ops::slice_rows(t.param(b), 0, 1);
    return ops::layer_norm(t.param(a), gain, t.param(v), 1e-5);
  }, 3);
}
TEST_F(PrimitiveGradients, SlicesAndConcat) {
  run("slice_concat", [](Tape<double>& t, P& a, P& b, P&, P&, Rng&) {
    auto x = t.param(a);
    const std::size_t n = x.cols();
    auto left = ops::slice_cols(x, 0, n / 2);
    auto right = ops::slice_cols(x, n / 2, n - n / 2);
    auto swapped = ops::concat_cols<double>({right, left});
    return ops::add(swapped, ops::slice_rows(t.param(b), 0, x.rows()));
  });
}
TEST_F(PrimitiveGradients, Im2col) {
  run("im2col", [](Tape<double>& t, P& a, P&, P& c, P&, Rng&) {
    auto x = ops::transpose(ops::matmul(t.param(a), t.param(c)));  // k x m, length k
    const std::size_t kernel = std::min<std::size_t>(2, x.rows());
    return ops::im2col(x, kernel, 1);
  });
}
TEST_F(PrimitiveGradients, GatherReplacePick) {
  run("gather", [](Tape<double>& t, P& a, P&, P&, P& v, Rng& rng) {
    auto x = t.param(a);
    std::vector<std::size_t> idx{0, x.rows() - 1, 0};
    auto g = ops::gather_rows(x, idx);
    std::vector<bool> mask{true, false, true};
    auto r = ops::replace_rows(g, mask, t.param(v));
    std::vector<std::size_t> cols{0, r.cols() - 1, 0};
    auto p = ops::pick(ops::log_softmax_rows(r), cols);
    return ops::add(ops::mul(p, p), ops::row_mean(ops::matmul_nt(r, r)));
  });
}

TEST(Tape, GradientAccumulationIsOrderIndependent) {
  Rng rng(21);
  auto x = random_param(rng, "x", 3, 4);
  auto w1 = random_param(rng, "w1", 4, 4);
  auto w2 = random_param(rng, "w2", 4, 4);
  auto grads = [&](bool first_branch_first) {
    Tape<double> t;
    auto xv = t.param(x);
    Var<double> b1, b2;
    if (first_branch_first) {
      b1 = ops::gelu(ops::matmul(xv, t.param(w1)));
      b2 = ops::softmax_rows(ops::matmul(xv, t.param(w2)));
    } else {
      b2 = ops::softmax_rows(ops::matmul(xv, t.param(w2)));
      b1 = ops::gelu(ops::matmul(xv, t.param(w1)));
    }
    auto loss = ops::sum_all(ops::mul(b1, b2));
    t.backward(loss);
    return *t.grad(t.param(x));
  };
  const auto g1 = grads(true);
  const auto g2 = grads(false);
  EXPECT_LE(max_abs_diff(g1, g2), 1e-12);
}

TEST(Tape, NonRecordingTapeRejectsBackward) {
  Tape<double> t(false);
  auto v = t.input(T64({1, 1}, 2.0));
  EXPECT_FALSE(v.requires_grad());
  EXPECT_THROW(t.backward(ops::sum_all(v)), ContractError);
}
