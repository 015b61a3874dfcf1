// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "finite_diff.hpp"
#include "macd/encoders.hpp"

using namespace macd;

namespace {

Mask mask_of(std::initializer_list<int> bits) {
  Mask m(static_cast<Index>(bits.size()));
  Index i = 0;
  for (int b : bits) m(i++) = b != 0;
  return m;
}

Matrix<double> run(const SequenceEncoder<double>& enc, const Matrix<double>& x, const Mask& m) {
  Tape<double> t;
  return enc.encode(t, t.constant(x), m).value();
}

struct Built {
  ParameterStore<double> store;
  std::unique_ptr<SequenceEncoder<double>> encoder;
  Built(EncoderKind kind, int d, int heads, std::uint64_t seed = 11) {
    std::mt19937_64 rng(seed);
    encoder = make_encoder(kind, store, "enc", d, heads, rng);
  }
};

class EveryEncoder : public ::testing::TestWithParam<EncoderKind> {};

}  // namespace

TEST(MeanPoolEncoder, SingleRealVectorAtEnd) {
  MeanPoolEncoder<double> enc;
  Matrix<double> x = Matrix<double>::Zero(3, 2);
  x.row(2) << 0.3, -1.2;
  const auto out = run(enc, x, mask_of({0, 0, 1}));
  EXPECT_EQ(out.row(2), x.row(2));
  EXPECT_TRUE(out.topRows(2).isZero(0));
}

TEST(MeanPoolEncoder, ConstantSequence) {
  MeanPoolEncoder<double> enc;
  RowVector<double> v(3);
  v << 1.0, -2.0, 0.5;
  Matrix<double> x = v.replicate(4, 1);
  const auto out = run(enc, x, mask_of({0, 1, 1, 1}));
  for (Index i = 1; i < 4; ++i) EXPECT_TRUE(out.row(i).isApprox(v, 1e-15));
}

TEST(MeanPoolEncoder, RunningMean) {
  MeanPoolEncoder<double> enc;
  Matrix<double> x(2, 2);
  x << 1, 2, 3, 6;
  const auto out = run(enc, x, mask_of({1, 1}));
  EXPECT_DOUBLE_EQ(out(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 1), 4.0);
  EXPECT_EQ(out.row(0), x.row(0));
}

TEST(RecurrentEncoder, EmptySequenceIsZero) {
  Built b(EncoderKind::Recurrent, 4, 1);
  const auto out = run(*b.encoder, Matrix<double>::Ones(3, 4), mask_of({0, 0, 0}));
  EXPECT_TRUE(out.isZero(0));
}

TEST(RecurrentEncoder, SaturatedUpdateGateCopiesCandidate) {
  Built b(EncoderKind::Recurrent, 4, 1);
  auto& rec = dynamic_cast<RecurrentEncoder<double>&>(*b.encoder);
  rec.bias(0).value.setConstant(60.0);  // z = σ(·) == 1 in double precision
  std::mt19937_64 rng(1);
  const Matrix<double> x = fd::random_matrix(3, 4, rng);
  const auto out = run(rec, x, mask_of({1, 1, 1}));
  const auto& s = b.store;
  Matrix<double> h = Matrix<double>::Zero(1, 4);
  for (Index i = 0; i < 3; ++i) {
    const Matrix<double> r =
        (x.row(i) * s.at("enc.W_r").value + h * s.at("enc.U_r").value + s.at("enc.b_r").value)
            .unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    h = (x.row(i) * s.at("enc.W_n").value + r.cwiseProduct(h) * s.at("enc.U_n").value + s.at("enc.b_n").value)
            .array()
            .tanh()
            .matrix();
    EXPECT_TRUE(out.row(i).isApprox(h, 1e-12)) << "step " << i;
  }
}

TEST(RecurrentEncoder, FinalStateGradientMatchesFiniteDifferences) {
  Built b(EncoderKind::Recurrent, 4, 1);
  std::mt19937_64 rng(7);
  auto& input = b.store.add("input", 3, 4);
  input.value = fd::random_matrix(3, 4, rng);
  for (std::size_t i = 0; i < b.store.size(); ++i)
    if (b.store[i].value.isZero(0)) b.store[i].value = fd::random_matrix(1, 4, rng, 0.2);
  const Matrix<double> w = fd::random_matrix(1, 4, rng);
  auto build = [&](Tape<double>& t) {
    auto out = b.encoder->encode(t, t.parameter(input), mask_of({1, 1, 1}));
    return fd::weighted_sum(slice_rows(out, 2, 1), w);
  };
  EXPECT_LT(fd::max_relative_error(b.store, build), 1e-4);
}

TEST(SelfAttentiveEncoder, SingleTokenAttendsToItself) {
  Built b(EncoderKind::SelfAttentive, 4, 2);
  auto& enc = dynamic_cast<SelfAttentiveEncoder<double>&>(*b.encoder);
  Matrix<double> x(1, 4);
  x << 0.2, -0.4, 1.0, 0.3;
  Tape<double> t;
  const auto att = enc.attention(t, t.constant(x), mask_of({1})).value();
  const Matrix<double> expected = x * enc.value_projection().value * enc.output_projection().value;
  EXPECT_TRUE(att.isApprox(expected, 1e-12));
}

TEST(SelfAttentiveEncoder, GradientMatchesFiniteDifferences) {
  Built b(EncoderKind::SelfAttentive, 4, 2);
  std::mt19937_64 rng(8);
  auto& input = b.store.add("input", 4, 4);
  input.value = fd::random_matrix(4, 4, rng);
  for (std::size_t i = 0; i < b.store.size(); ++i)
    if (b.store[i].value.isZero(0)) b.store[i].value = fd::random_matrix(1, 4, rng, 0.2);
  const Matrix<double> w = fd::random_matrix(4, 4, rng);
  auto build = [&](Tape<double>& t) {
    return fd::weighted_sum(b.encoder->encode(t, t.parameter(input), mask_of({0, 1, 1, 1})), w);
  };
  EXPECT_LT(fd::max_relative_error(b.store, build, 1e-5), 1e-4);
}

TEST_P(EveryEncoder, ShapePreservedAndPaddingZeroed) {
  Built b(GetParam(), 8, 2);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix<double> x = fd::random_matrix(6, 8, rng);
    Mask m(6);
    for (Index i = 0; i < 6; ++i) m(i) = (rng() % 3) != 0;
    const auto out = run(*b.encoder, x, m);
    ASSERT_EQ(out.rows(), 6);
    ASSERT_EQ(out.cols(), 8);
    for (Index i = 0; i < 6; ++i)
      if (!m(i)) EXPECT_TRUE(out.row(i).isZero(0));
  }
}

TEST_P(EveryEncoder, CausalPerturbation) {
  Built b(GetParam(), 8, 2);
  ASSERT_TRUE(b.encoder->causal());
  std::mt19937_64 rng(5);
  const Mask m = Mask::Constant(7, true);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix<double> x = fd::random_matrix(7, 8, rng);
    const Index cut = static_cast<Index>(rng() % 6);
    const auto before = run(*b.encoder, x, m);
    x.row(cut + 1) += fd::random_matrix(1, 8, rng, 5.0);
    const auto after = run(*b.encoder, x, m);
    EXPECT_EQ(before.topRows(cut + 1), after.topRows(cut + 1)) << "cut " << cut;
    EXPECT_NE(before.row(cut + 1), after.row(cut + 1));
  }
}

TEST_P(EveryEncoder, PaddingContentIsIgnored) {
  Built b(GetParam(), 8, 2);
  std::mt19937_64 rng(6);
  const Mask m = mask_of({0, 0, 1, 1, 1});
  Matrix<double> x = fd::random_matrix(5, 8, rng);
  const auto before = run(*b.encoder, x, m);
  x.topRows(2) = fd::random_matrix(2, 8, rng, 10.0);
  EXPECT_EQ(before, run(*b.encoder, x, m));
}

INSTANTIATE_TEST_SUITE_P(Kinds, EveryEncoder,
                         ::testing::Values(EncoderKind::MeanPool, EncoderKind::Recurrent, EncoderKind::SelfAttentive),
                         [](const auto& info) { return std::string(name(info.param)); });

TEST(EncoderKind, ParsesNames) {
  for (auto k : {EncoderKind::MeanPool, EncoderKind::Recurrent, EncoderKind::SelfAttentive})
    EXPECT_EQ(parse_encoder_kind(name(k)), k);
  EXPECT_THROW(parse_encoder_kind("bert"), std::invalid_argument);
}

TEST(SelfAttentiveEncoder, RejectsIndivisibleHeads) {
  ParameterStore<double> store;
  EXPECT_THROW(SelfAttentiveEncoder<double>(store, "enc", 6, 4), std::invalid_argument);
}
