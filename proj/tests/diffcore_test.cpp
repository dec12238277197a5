// Copyright 2026 The delsmm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "delsmm/diffcore/autodiff.hpp"
#include "delsmm/diffcore/kernels.hpp"
#include "delsmm/diffcore/tape.hpp"
#include "delsmm/errors.hpp"
#include "test_util.hpp"

namespace delsmm::ad {
namespace {

using delsmm::testing::fd_gradient;
using delsmm::testing::max_rel_err;
using delsmm::testing::random_tensor;

Tensor spd(std::mt19937_64& rng, std::size_t n) {
  const Tensor a = random_tensor(rng, n, n, -1.0, 1.0);
  Tensor m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = i == j ? static_cast<double>(n) * 0.5 : 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * a(j, k);
      m(i, j) = s;
    }
  }
  return m;
}

double eval_scalar(const TapeFunction& f, const Tensor& x) {
  Tape tape;
  return f(tape, tape.constant(x)).value().item();
}

TEST(Grad, Square) {
  const Tensor g = grad([](Tape&, Var x) { return mul(x, x); }, Tensor::scalar(3.0));
  EXPECT_DOUBLE_EQ(g.item(), 6.0);
}

TEST(Grad, ConstantFunctionHasZeroGradient) {
  const Tensor x = Tensor::row(std::vector<double>{1.0, -2.0, 0.5});
  const Tensor g = grad([](Tape& t, Var) { return t.scalar_constant(4.2); }, x);
  ASSERT_EQ(g.size(), 3u);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Grad, LogdetOfIdentityIsIdentity) {
  const TapeFunction f = [](Tape&, Var x) { return logdet(x); };
  const Tensor g = grad(f, Tensor::identity(2));
  const Tensor fd = fd_gradient([&](const Tensor& x) { return eval_scalar(f, x); },
                                Tensor::identity(2));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], Tensor::identity(2)[i], 1e-12);
  EXPECT_LT(max_rel_err(g, fd), 1e-8);
}

TEST(Grad, NonScalarOutputIsContractViolation) {
  EXPECT_THROW(grad([](Tape&, Var x) { return x; }, Tensor(2, 1, 1.0)), ContractViolation);
}

TEST(Jacobian, LinearMap) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor jac = jacobian([&](Tape& t, Var x) { return matmul(t.constant(a), x); },
                              Tensor(2, 1, 0.5));
  EXPECT_EQ(jac, a);
}

TEST(Jacobian, Identity) {
  const Tensor jac = jacobian([](Tape&, Var x) { return x; }, Tensor(3, 1, 0.1));
  EXPECT_EQ(jac, Tensor::identity(3));
}

TEST(Grad2, BilinearExample) {
  // d/dx(θ x²) = 2θx, d/dθ at x = 3 → 6
  const Tensor g = grad2([](Tape&, Var th, Var x) { return mul(th, mul(x, x)); },
                         Tensor::scalar(1.7), Tensor::scalar(3.0), Tensor::scalar(1.0));
  EXPECT_NEAR(g.item(), 6.0, 1e-14);
}

TEST(Grad2, IndependentOfThetaIsZero) {
  const Tensor g = grad2([](Tape&, Var, Var x) { return sum(tanh(x)); }, Tensor::scalar(0.3),
                         Tensor::scalar(0.2), Tensor::scalar(1.0));
  EXPECT_EQ(g.item(), 0.0);
}

TEST(Grad2, UnsupportedPrimitiveInInnerDerivative) {
  const auto g = [](Tape& t, Var th, Var x) {
    Var m = add(mul(x, t.constant(Tensor::identity(2))), th);
    return logdet(m);
  };
  EXPECT_THROW(grad2(g, Tensor(2, 2, 0.0), Tensor::scalar(2.0), Tensor::scalar(1.0)),
               NonDifferentiablePrimitive);
}

TEST(CholeskyLogdet, Values) {
  EXPECT_NEAR(cholesky_logdet(Tensor::from_rows({{2, 0}, {0, 3}})), std::log(6.0), 1e-14);
  EXPECT_NEAR(cholesky_logdet(Tensor::identity(4)), 0.0, 1e-15);
  EXPECT_NEAR(cholesky_logdet(Tensor::from_rows({{2, 1}, {1, 2}})), std::log(3.0), 1e-14);
  EXPECT_NEAR(cholesky_logdet(Tensor::from_rows({{2, 1}, {1, 2}})), 1.098612, 1e-6);
}

TEST(CholeskyLogdet, PdFailureCarriesPivot) {
  try {
    cholesky_logdet(Tensor::from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, -1}}));
    FAIL() << "expected PdFailure";
  } catch (const PdFailure& e) {
    EXPECT_EQ(e.pivot(), 2u);
  }
}

TEST(CholeskyLogdet, FailsExactlyWhenNotPositiveDefinite) {
  std::mt19937_64 rng(11);
  int failures = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = trial % 2 == 0 ? 2 : 3;
    Tensor a = random_tensor(rng, n, n);
    const double shift = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
    for (std::size_t i = 0; i < n; ++i) {
      a(i, i) += shift;
      for (std::size_t j = 0; j < i; ++j) a(j, i) = a(i, j);
    }
    Eigen::MatrixXd e(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) e(i, j) = a(i, j);
    }
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues()(0);
    bool threw = false;
    try {
      cholesky_logdet(a);
    } catch (const PdFailure&) {
      threw = true;
    }
    EXPECT_EQ(threw, min_eig <= 0.0) << "min eigenvalue " << min_eig;
    failures += threw ? 1 : 0;
  }
  EXPECT_GT(failures, 50);
  EXPECT_LT(failures, 350);
}

// ---------------------------------------------------------------------------
// Every primitive against central differences.

struct PrimitiveCase {
  std::string name;
  std::function<Tensor(std::mt19937_64&)> input;
  TapeFunction op;
};

std::vector<PrimitiveCase> primitive_cases() {
  auto dense = [](std::size_t r, std::size_t c) {
    return [=](std::mt19937_64& rng) { return random_tensor(rng, r, c); };
  };
  auto positive = [](std::size_t r, std::size_t c) {
    return [=](std::mt19937_64& rng) { return random_tensor(rng, r, c, 0.3, 2.0); };
  };
  auto spd_rows = [](std::size_t rows, std::size_t n) {
    return [=](std::mt19937_64& rng) {
      Tensor t(rows, n * n);
      for (std::size_t r = 0; r < rows; ++r) {
        const Tensor m = spd(rng, n);
        for (std::size_t i = 0; i < n * n; ++i) t(r, i) = m[i];
      }
      return t;
    };
  };
  return {
      {"add", dense(3, 4),
       [](Tape& t, Var x) { return add(x, t.constant(Tensor(1, 4, 0.7))); }},
      {"add_broadcast_self", dense(1, 4),
       [](Tape& t, Var x) { return add(t.constant(Tensor(3, 4, 0.2)), x); }},
      {"sub", dense(3, 4), [](Tape& t, Var x) { return sub(t.constant(Tensor(3, 1, 1.5)), x); }},
      {"mul", dense(3, 4), [](Tape&, Var x) { return mul(x, x); }},
      {"mul_column_broadcast", dense(3, 1),
       [](Tape& t, Var x) { return mul(t.constant(Tensor(3, 4, -0.4)), x); }},
      {"affine", dense(3, 4), [](Tape&, Var x) { return affine(x, -2.5, 0.25); }},
      {"matmul_left", dense(3, 4),
       [](Tape& t, Var x) {
         std::mt19937_64 r(5);
         return matmul(x, t.constant(random_tensor(r, 4, 2)));
       }},
      {"matmul_right", dense(4, 2),
       [](Tape& t, Var x) {
         std::mt19937_64 r(6);
         return matmul(t.constant(random_tensor(r, 3, 4)), x);
       }},
      {"matmul_nt_both", dense(3, 4), [](Tape&, Var x) { return matmul_nt(x, x); }},
      {"tanh", dense(3, 4), [](Tape&, Var x) { return tanh(x); }},
      {"softplus", dense(3, 4), [](Tape&, Var x) { return softplus(x); }},
      {"exp", dense(3, 4), [](Tape&, Var x) { return exp(x); }},
      {"log", positive(3, 4), [](Tape&, Var x) { return log(x); }},
      {"reciprocal", positive(3, 4), [](Tape&, Var x) { return reciprocal(x); }},
      {"sum", dense(3, 4), [](Tape&, Var x) { return sum(x); }},
      {"sum_rows", dense(3, 4), [](Tape&, Var x) { return sum_rows(x); }},
      {"sum_cols", dense(3, 4), [](Tape&, Var x) { return sum_cols(x); }},
      {"norm_sq", dense(3, 4), [](Tape&, Var x) { return norm_sq(x); }},
      {"slice_cols", dense(3, 4), [](Tape&, Var x) { return slice_cols(x, 1, 2); }},
      {"slice_rows", dense(3, 4), [](Tape&, Var x) { return slice_rows(x, 1, 2); }},
      {"concat_cols", dense(3, 4),
       [](Tape& t, Var x) {
         const Var parts[] = {x, t.constant(Tensor(3, 1, 2.0)), tanh(x)};
         return concat_cols(parts);
       }},
      {"concat_rows", dense(3, 4),
       [](Tape&, Var x) {
         const Var parts[] = {exp(x), x};
         return concat_rows(parts);
       }},
      {"transpose", dense(3, 4), [](Tape&, Var x) { return transpose(x); }},
      {"broadcast_to", dense(1, 4), [](Tape&, Var x) { return broadcast_to(x, 3, 4); }},
      {"batch_matvec_mats", dense(3, 4),
       [](Tape& t, Var x) {
         std::mt19937_64 r(7);
         return batch_matvec(x, t.constant(random_tensor(r, 3, 2)));
       }},
      {"batch_matvec_vecs", dense(3, 2),
       [](Tape& t, Var x) {
         std::mt19937_64 r(8);
         return batch_matvec(t.constant(random_tensor(r, 3, 4)), x);
       }},
      {"batch_solve_mats", spd_rows(3, 2),
       [](Tape& t, Var x) {
         std::mt19937_64 r(9);
         return batch_solve(x, t.constant(random_tensor(r, 3, 2)));
       }},
      {"batch_solve_rhs", dense(3, 3),
       [](Tape& t, Var x) {
         std::mt19937_64 r(10);
         Tensor m(3, 9);
         for (std::size_t row = 0; row < 3; ++row) {
           const Tensor s = spd(r, 3);
           for (std::size_t i = 0; i < 9; ++i) m(row, i) = s[i];
         }
         return batch_solve(t.constant(m), x);
       }},
      {"batch_logdet", spd_rows(4, 3), [](Tape&, Var x) { return batch_logdet(x); }},
      {"cholesky", [](std::mt19937_64& rng) { return spd(rng, 3); },
       [](Tape&, Var x) { return cholesky(x); }},
      {"logdet", [](std::mt19937_64& rng) { return spd(rng, 3); },
       [](Tape&, Var x) { return logdet(x); }},
  };
}

class PrimitiveGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const PrimitiveCase c = primitive_cases()[GetParam()];
  SCOPED_TRACE(c.name);
  std::mt19937_64 rng(1000 + GetParam());
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = c.input(rng);
    // Contract the output with fixed random weights to get a scalar.
    Tensor weights;
    {
      Tape probe;
      const Tensor y = c.op(probe, probe.constant(x)).value();
      weights = random_tensor(rng, y.rows(), y.cols());
    }
    const TapeFunction f = [&](Tape& t, Var in) {
      return sum(mul(c.op(t, in), t.constant(weights)));
    };
    const Tensor g = grad(f, x);
    const Tensor fd = fd_gradient([&](const Tensor& p) { return eval_scalar(f, p); }, x);
    EXPECT_LT(max_rel_err(g, fd, 1e-6), 1e-5) << "trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range<std::size_t>(0, primitive_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return primitive_cases()[info.param].name;
                         });

// ---------------------------------------------------------------------------
// Second order: reverse over the recorded forward-mode sweep.

TEST(Grad2, CompositeMatchesFiniteDifferencesOfGrad) {
  std::mt19937_64 rng(3);
  // A two-layer tanh/softplus network whose input-derivative is differentiated
  // with respect to its weights.
  const auto g = [](Tape& t, Var w, Var x) {
    Var w1 = slice_rows(w, 0, 3);
    Var w2 = slice_rows(w, 3, 1);
    Var h = tanh(matmul_nt(x, w1));
    Var y = softplus(matmul_nt(h, w2));
    Var r = reciprocal(affine(exp(mul(y, y)), 1.0, 0.0));
    Var m = batch_matvec(concat_cols(std::vector<Var>{y, slice_cols(h, 0, 2), y}), slice_cols(h, 1, 2));
    return add(sum(mul(y, r)), add(norm_sq(m), sum(log(affine(mul(y, y), 1.0, 1.0)))));
    (void)t;
  };
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = random_tensor(rng, 4, 3, -1.0, 1.0);
    const Tensor x = random_tensor(rng, 5, 3, -1.0, 1.0);
    const Tensor dir = random_tensor(rng, 5, 3, -1.0, 1.0);
    const Tensor exact = grad2(g, w, x, dir);
    const auto directional = [&](const Tensor& wp) {
      const Tensor gx = grad([&](Tape& t, Var xin) { return g(t, t.constant(wp), xin); }, x);
      double s = 0.0;
      for (std::size_t i = 0; i < gx.size(); ++i) s += gx[i] * dir[i];
      return s;
    };
    const Tensor fd = fd_gradient(directional, w);
    EXPECT_LT(max_rel_err(exact, fd, 1e-6), 1e-4) << "trial " << trial;
  }
}

TEST(Grad2, BatchSolveTangentIsDifferentiable) {
  std::mt19937_64 rng(4);
  const auto g = [](Tape& t, Var th, Var x) {
    Var m = add(t.constant(Tensor::row(std::vector<double>{2.0, 0.3, 0.3, 1.5})),
                mul(th, th));
    Var mm = concat_rows(std::vector<Var>{m, m});
    return norm_sq(batch_solve(mm, x));
  };
  const Tensor th = Tensor::row(std::vector<double>{0.4, 0.0, 0.0, 0.6});
  const Tensor x = random_tensor(rng, 2, 2);
  const Tensor dir = random_tensor(rng, 2, 2);
  const Tensor exact = grad2(g, th, x, dir);
  const auto directional = [&](const Tensor& tp) {
    const Tensor gx = grad([&](Tape& t, Var xin) { return g(t, t.constant(tp), xin); }, x);
    double s = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) s += gx[i] * dir[i];
    return s;
  };
  EXPECT_LT(max_rel_err(exact, fd_gradient(directional, th), 1e-6), 1e-4);
}

TEST(Tape, BackwardIsDeterministic) {
  std::mt19937_64 rng(21);
  const Tensor w = random_tensor(rng, 16, 8);
  const Tensor x = random_tensor(rng, 32, 8);
  auto run = [&] {
    Tape t;
    Var wv = t.variable(w);
    Var h = tanh(matmul_nt(t.constant(x), wv));
    Var out = norm_sq(softplus(h));
    return t.backward(out)[wv];
  };
  const Tensor a = run();
  const Tensor b = run();
  EXPECT_EQ(a, b);
}

TEST(Tape, NonFiniteValuesAreRejected) {
  Tape t;
  Var x = t.variable(Tensor::scalar(800.0));
  EXPECT_THROW(exp(x), NumericalError);
}

TEST(Tape, ShapeMismatchIsContractViolation) {
  Tape t;
  Var a = t.variable(Tensor(2, 3));
  Var b = t.variable(Tensor(3, 2));
  EXPECT_THROW(add(a, b), ContractViolation);
  EXPECT_THROW(matmul_nt(a, b), ContractViolation);
}

// ---------------------------------------------------------------------------
// SIMD variants against the scalar reference.

class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (simd::avx2_kernels() == nullptr || !simd::cpu_has_avx2()) {
      GTEST_SKIP() << "AVX2 kernels unavailable on this machine";
    }
  }
  const simd::KernelTable& ref = simd::scalar_kernels();
  const simd::KernelTable& vec = *simd::avx2_kernels();
};

TEST_F(KernelEquivalence, Gemm) {
  std::mt19937_64 rng(31);
  for (const auto [m, n, k] : {std::tuple{1, 1, 1}, {7, 5, 3}, {33, 32, 32}, {256, 32, 2},
                               {9, 17, 13}, {4, 1, 31}}) {
    const auto mm = static_cast<std::size_t>(m);
    const auto nn = static_cast<std::size_t>(n);
    const auto kk = static_cast<std::size_t>(k);
    const Tensor a = random_tensor(rng, mm, kk);
    const Tensor bt = random_tensor(rng, nn, kk);
    const Tensor b = random_tensor(rng, kk, nn);
    const Tensor at = random_tensor(rng, kk, mm);
    Tensor c1(mm, nn), c2(mm, nn);
    ref.gemm_nt(a.data(), bt.data(), c1.data(), mm, nn, kk);
    vec.gemm_nt(a.data(), bt.data(), c2.data(), mm, nn, kk);
    EXPECT_LT(max_rel_err(c1, c2, 1e-12), 1e-12);
    ref.gemm_nn(a.data(), b.data(), c1.data(), mm, nn, kk);
    vec.gemm_nn(a.data(), b.data(), c2.data(), mm, nn, kk);
    EXPECT_LT(max_rel_err(c1, c2, 1e-12), 1e-12);
    ref.gemm_tn(at.data(), b.data(), c1.data(), mm, nn, kk);
    vec.gemm_tn(at.data(), b.data(), c2.data(), mm, nn, kk);
    EXPECT_LT(max_rel_err(c1, c2, 1e-12), 1e-12);
  }
}

TEST_F(KernelEquivalence, ElementwiseAndAdam) {
  std::mt19937_64 rng(32);
  for (std::size_t len : {1u, 3u, 4u, 13u, 1024u, 2501u}) {
    const Tensor x = random_tensor(rng, 1, len);
    const Tensor y = random_tensor(rng, 1, len);
    Tensor h1(1, len), h2(1, len);
    ref.hadamard(x.data(), y.data(), h1.data(), len);
    vec.hadamard(x.data(), y.data(), h2.data(), len);
    EXPECT_EQ(h1, h2);

    Tensor a1 = y, a2 = y;
    ref.axpy(0.37, x.data(), a1.data(), len);
    vec.axpy(0.37, x.data(), a2.data(), len);
    EXPECT_LT(max_rel_err(a1, a2, 1e-12), 1e-12);

    Tensor p1 = x, p2 = x, m1(1, len), m2(1, len), v1(1, len), v2(1, len);
    for (int step = 1; step <= 5; ++step) {
      const Tensor g = random_tensor(rng, 1, len);
      const simd::AdamCoeffs c{0.9, 0.999, 1e-8, 1e-3, 1.0 - std::pow(0.9, step),
                               1.0 - std::pow(0.999, step)};
      ref.adam_update(p1.data(), m1.data(), v1.data(), g.data(), len, c);
      vec.adam_update(p2.data(), m2.data(), v2.data(), g.data(), len, c);
    }
    EXPECT_EQ(p1, p2);
    EXPECT_EQ(m1, m2);
    EXPECT_EQ(v1, v2);
  }
}

}  // namespace
}  // namespace delsmm::ad
