#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fedta/numkit.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace fedta;

TEST(CosineSimilarity, IdenticalAndOrthogonal) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Vec{1, 0}, Vec{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vec{1, 0}, Vec{0, 1}), 0.0);
}

TEST(CosineSimilarity, MatchesScalarFormula) {
  // 32 / (sqrt(14) * sqrt(77))
  const double expected = 32.0 / (std::sqrt(14.0) * std::sqrt(77.0));
  EXPECT_NEAR(cosine_similarity(Vec{1, 2, 3}, Vec{4, 5, 6}), expected, 1e-15);
}

TEST(CosineSimilarity, RejectsZeroAndMismatchedInputs) {
  EXPECT_THROW(cosine_similarity(Vec{0, 0}, Vec{1, 0}), NumericError);
  EXPECT_THROW(cosine_similarity(Vec{1, 0}, Vec{0, 0}), NumericError);
  EXPECT_THROW(cosine_similarity(Vec{1, 0}, Vec{1, 0, 0}), NumericError);
}

TEST(CosineDistance, KnownValues) {
  EXPECT_DOUBLE_EQ(cosine_distance(Vec{1, 0}, Vec{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(cosine_distance(Vec{1, 0}, Vec{-1, 0}), 2.0);
  EXPECT_NEAR(cosine_distance(Vec{1, 1}, Vec{1, 0}), 1.0 - 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(CosineSimilarity, SelfSimilarityAndScaleInvariance) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = gen::uniform(rng, 1, 40);
    const Vec a = gen::vec(rng, d, gen::uniform_real(rng, 1e-3, 1e3));
    const Vec b = gen::vec(rng, d);
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
    const double s = cosine_similarity(a, b);
    EXPECT_NEAR(s, cosine_similarity(b, a), 1e-15);
    Vec scaled = a;
    scale(scaled, gen::uniform_real(rng, 1e-3, 1e3));
    EXPECT_NEAR(cosine_similarity(scaled, b), s, 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(CosineDistanceGrad, MatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec a = gen::vec(rng, 6);
    const Vec b = gen::vec(rng, 6);
    const auto f = [&](const Vec& x) { return cosine_distance(a, x); };
    EXPECT_LT(finite_difference_check(f, b, cosine_distance_grad(a, b), 1e-5), 1e-4);
  }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const auto r = softmax_cross_entropy(Vec{0, 0}, 0);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.grad[0], -0.5, 1e-15);
  EXPECT_NEAR(r.grad[1], 0.5, 1e-15);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrect) {
  EXPECT_LT(softmax_cross_entropy(Vec{10, -10}, 0).loss, 1e-8);
}

TEST(SoftmaxCrossEntropy, MatchesBruteForceSoftmax) {
  const Vec logits{1, 2, 3};
  const auto r = softmax_cross_entropy(logits, 1);
  const auto o = oracle::cross_entropy(logits, 1);
  EXPECT_NEAR(r.loss, o.loss, 1e-14);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.grad[i], o.grad[i], 1e-14);
}

TEST(SoftmaxCrossEntropy, StableForHugeLogits) {
  const auto r = softmax_cross_entropy(Vec{1000, 0, -1000}, 1);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, 1000.0, 1e-9);
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  EXPECT_THROW(softmax_cross_entropy(Vec{0, 0}, 2), NumericError);
}

TEST(SoftmaxCrossEntropy, GradientSumsToZero) {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = gen::uniform(rng, 2, 12);
    const Vec z = gen::vec(rng, k, 3.0);
    const auto r = softmax_cross_entropy(z, gen::uniform(rng, 0, k - 1));
    double s = 0.0;
    for (double g : r.grad) s += g;
    EXPECT_NEAR(s, 0.0, 1e-12);
    EXPECT_GE(r.loss, 0.0);
  }
}

TEST(FiniteDifferenceCheck, QuadraticIsExact) {
  const auto f = [](const Vec& x) { return dot(x, x); };
  EXPECT_LT(finite_difference_check(f, Vec{1, 2}, Vec{2, 4}, 1e-4), 1e-6);
}

TEST(FiniteDifferenceCheck, CrossEntropyAtRandomPoints) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = gen::vec(rng, 5);
    const auto f = [](const Vec& z) { return softmax_cross_entropy(z, 2).loss; };
    EXPECT_LT(finite_difference_check(f, x, softmax_cross_entropy(x, 2).grad, 1e-5), 1e-5);
  }
}

TEST(FiniteDifferenceCheck, DetectsDoubledGradient) {
  // |2g - g| / max(|2g|, |g|) = 0.5 for every component.
  const auto f = [](const Vec& x) { return dot(x, x); };
  const double err = finite_difference_check(f, Vec{1, 2}, Vec{4, 8}, 1e-4);
  EXPECT_NEAR(err, 0.5, 1e-6);
}

TEST(FiniteDifferenceCheck, RejectsNonFiniteValues) {
  const auto f = [](const Vec& x) { return x[0] > 0.5 ? std::numeric_limits<double>::infinity() : 0.0; };
  EXPECT_THROW(finite_difference_check(f, Vec{0.5}, Vec{0.0}, 1e-3), NumericError);
  EXPECT_THROW(finite_difference_check(f, Vec{0.0}, Vec{0.0}, 0.0), NumericError);
}

TEST(DeriveSeed, DistinctStreams) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}
