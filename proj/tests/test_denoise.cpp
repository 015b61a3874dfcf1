// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "finite_diff.hpp"
#include "macd/attention.hpp"

using namespace macd;

namespace {

Mask random_mask(Index n, std::mt19937_64& rng, bool at_least_one = true) {
  Mask m(n);
  for (Index i = 0; i < n; ++i) m(i) = (rng() % 3) != 0;
  if (at_least_one && !m.any()) m(static_cast<Index>(rng() % static_cast<std::uint64_t>(n))) = true;
  return m;
}

struct Module {
  ParameterStore<double> store;
  InterestAttention<double> attn;
  Module(int d, int heads, std::uint64_t seed = 1, const std::string& prefix = "iddm")
      : attn(store, prefix, d, heads) {
    std::mt19937_64 rng(seed);
    attn.initialize(rng);
  }
  Matrix<double> run(const Matrix<double>& q, const Mask& qm, const Matrix<double>& k, const Mask& km) const {
    Tape<double> t;
    return attn.attend(t, t.constant(q), qm, t.constant(k), km).value();
  }
};

}  // namespace

TEST(ScaledDotAttention, SingleKeyReturnsItsValue) {
  std::mt19937_64 rng(1);
  const auto q = fd::random_matrix(3, 2, rng);
  const auto k = fd::random_matrix(4, 2, rng);
  const auto v = fd::random_matrix(4, 2, rng);
  Mask m = Mask::Constant(4, false);
  m(2) = true;
  const auto r = scaled_dot_attention<double>(q, k, v, m);
  for (Index i = 0; i < 3; ++i) EXPECT_TRUE(r.output.row(i).isApprox(v.row(2), 1e-15));
}

TEST(ScaledDotAttention, OrthogonalQueryGivesUniformWeights) {
  Matrix<double> q(1, 2), k(4, 2);
  q << 1, 0;
  k << 0, 1, 0, -2, 0, 3, 0, 0.5;
  const auto r = scaled_dot_attention<double>(q, k, k, Mask::Constant(4, true));
  for (Index j = 0; j < 4; ++j) EXPECT_NEAR(r.weights(0, j), 0.25, 1e-15);
}

TEST(ScaledDotAttention, HandSoftmax) {
  Matrix<double> q(1, 1), k(2, 1), v(2, 2);
  q << std::log(3.0);
  k << 1, 0;
  v << 1, 2, -1, 4;
  const auto r = scaled_dot_attention<double>(q, k, v, Mask::Constant(2, true));
  EXPECT_NEAR(r.weights(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(r.weights(0, 1), 0.25, 1e-12);
  EXPECT_NEAR(r.output(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(r.output(0, 1), 2.5, 1e-12);
}

TEST(ScaledDotAttention, AllMaskedGivesZero) {
  std::mt19937_64 rng(2);
  const auto q = fd::random_matrix(2, 3, rng);
  const auto k = fd::random_matrix(3, 3, rng);
  const auto r = scaled_dot_attention<double>(q, k, k, Mask::Constant(3, false));
  EXPECT_TRUE(r.output.isZero(0));
  EXPECT_TRUE(r.weights.isZero(0));
}

TEST(MaskedSoftmax, RowStochasticWithExactZerosOnPadding) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 6), m = 1 + static_cast<Index>(rng() % 9);
    const auto logits = fd::random_matrix(n, m, rng, 8.0);
    const Mask keys = random_mask(m, rng);
    const bool causal = trial % 2 == 1;
    const auto w = masked_softmax<double>(logits, keys, causal);
    for (Index i = 0; i < n; ++i) {
      bool any = false;
      for (Index j = 0; j < m; ++j) {
        const bool allowed = keys(j) && (!causal || j <= i);
        any = any || allowed;
        if (!allowed) EXPECT_EQ(w(i, j), 0.0);
        EXPECT_GE(w(i, j), 0.0);
      }
      if (any) {
        EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-6);
      } else {
        EXPECT_TRUE(w.row(i).isZero(0));
      }
    }
  }
}

TEST(Iddm, SingleKeyWithOneHead) {
  Module mod(4, 1);
  std::mt19937_64 rng(4);
  const auto q = fd::random_matrix(3, 4, rng);
  const auto k = fd::random_matrix(5, 4, rng);
  Mask km = Mask::Constant(5, false);
  km(3) = true;
  const auto out = mod.run(q, Mask::Constant(3, true), k, km);
  const Matrix<double> expected =
      k.row(3) * mod.store.at("iddm.W_v").value * mod.store.at("iddm.W_o").value;
  for (Index i = 0; i < 3; ++i) EXPECT_TRUE(out.row(i).isApprox(expected, 1e-12));
}

TEST(Iddm, KeyPermutationInvariance) {
  Module mod(4, 2);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = fd::random_matrix(3, 4, rng);
    const auto k = fd::random_matrix(6, 4, rng);
    const Mask km = random_mask(6, rng);
    std::vector<Index> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix<double> kp(6, 4);
    Mask kmp(6);
    for (Index j = 0; j < 6; ++j) {
      kp.row(j) = k.row(perm[static_cast<std::size_t>(j)]);
      kmp(j) = km(perm[static_cast<std::size_t>(j)]);
    }
    const Mask qm = Mask::Constant(3, true);
    EXPECT_TRUE(mod.run(q, qm, k, km).isApprox(mod.run(q, qm, kp, kmp), 1e-12));
  }
}

TEST(Iddm, EmptyAuxiliaryStreamGivesZero) {
  Module mod(4, 2);
  std::mt19937_64 rng(6);
  const auto out = mod.run(fd::random_matrix(3, 4, rng), Mask::Constant(3, true), fd::random_matrix(5, 4, rng),
                           Mask::Constant(5, false));
  EXPECT_TRUE(out.isZero(0));
}

TEST(Cddm, MechanicsEqualIddmWithSameWeights) {
  ParameterStore<double> store;
  InterestAttention<double> a(store, "iddm", 8, 2), b(store, "cddm", 8, 2);
  std::mt19937_64 rng(7);
  a.initialize(rng);
  for (const char* w : {"W_q", "W_k", "W_v", "W_o"})
    store.at(std::string("cddm.") + w).value = store.at(std::string("iddm.") + w).value;
  const auto s = fd::random_matrix(4, 8, rng);
  const auto c = fd::random_matrix(7, 8, rng);
  const Mask sm = random_mask(4, rng), cm = random_mask(7, rng);
  Tape<double> t;
  const auto x = iddm(t, a, t.constant(s), sm, t.constant(c), cm).value();
  const auto y = cddm(t, b, t.constant(s), sm, t.constant(c), cm).value();
  EXPECT_EQ(x, y);
  EXPECT_TRUE(cddm(t, b, t.constant(s), sm, t.constant(c), Mask::Constant(7, false)).value().isZero(0));
}

TEST(Cddm, GradientOfPooledOutputWrtQueryWeights) {
  Module mod(4, 2, 8, "cddm");
  std::mt19937_64 rng(8);
  const auto s = fd::random_matrix(3, 4, rng);
  const auto c = fd::random_matrix(5, 4, rng);
  Mask sm(3), cm(5);
  sm << false, true, true;
  cm << true, false, true, true, true;
  const auto w = fd::random_matrix(1, 4, rng);
  auto build = [&](Tape<double>& t) {
    auto out = mod.attn.attend(t, t.constant(s), sm, t.constant(c), cm);
    return fd::weighted_sum(masked_mean_rows(out, sm), w);
  };
  EXPECT_LT(fd::max_relative_error(mod.store, build), 1e-4);
}

TEST(InterestAttention, PaddedKeysAndQueries) {
  std::mt19937_64 rng(9);
  for (int heads : {1, 2, 4, 8}) {
    Module mod(8, heads, 10 + static_cast<std::uint64_t>(heads));
    for (int trial = 0; trial < 100; ++trial) {
      const auto q = fd::random_matrix(5, 8, rng);
      Matrix<double> k = fd::random_matrix(9, 8, rng);
      const Mask qm = random_mask(5, rng), km = random_mask(9, rng);
      const auto before = mod.run(q, qm, k, km);
      ASSERT_EQ(before.rows(), 5);
      ASSERT_EQ(before.cols(), 8);
      for (Index i = 0; i < 5; ++i)
        if (!qm(i)) EXPECT_TRUE(before.row(i).isZero(0));
      for (Index j = 0; j < 9; ++j)
        if (!km(j)) k.row(j) = fd::random_matrix(1, 8, rng, 50.0);
      EXPECT_EQ(before, mod.run(q, qm, k, km));
    }
  }
}

TEST(InterestAttention, RejectsShapeMismatch) {
  Module mod(4, 2);
  std::mt19937_64 rng(10);
  EXPECT_THROW(mod.run(fd::random_matrix(3, 4, rng), Mask::Constant(3, true), fd::random_matrix(5, 3, rng),
                       Mask::Constant(5, true)),
               std::invalid_argument);
  EXPECT_THROW(mod.run(fd::random_matrix(3, 4, rng), Mask::Constant(2, true), fd::random_matrix(5, 4, rng),
                       Mask::Constant(5, true)),
               std::invalid_argument);
  ParameterStore<double> store;
  EXPECT_THROW(InterestAttention<double>(store, "x", 6, 4), std::invalid_argument);
}
