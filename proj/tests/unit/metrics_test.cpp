#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "fedta/metrics.hpp"
#include "generators.hpp"

using namespace fedta;
namespace fs = std::filesystem;

namespace {

// Two clients, two rounds; every value is a dyadic rational so ratios are exact.
AccuracyTable fixture() {
  AccuracyTable t;
  t.record({kLocalTag, 0, 0, 0}, 0.75);
  t.record({kLocalTag, 1, 0, 0}, 0.5);
  t.record({kGlobalTag, 0, 0, 0}, 0.375);
  t.record({kGlobalTag, 1, 0, 0}, 0.5);
  t.record({kLocalTag, 0, 0, 1}, 0.375);
  t.record({kLocalTag, 1, 0, 1}, 0.5);
  t.record({kLocalTag, 0, 1, 1}, 0.5);
  t.record({kLocalTag, 1, 1, 1}, 0.75);
  t.record({kGlobalTag, 0, 1, 1}, 0.25);
  t.record({kGlobalTag, 1, 1, 1}, 0.75);
  return t;
}

}  // namespace

TEST(AccuracyTable, RejectsDuplicatesAndOutOfRange) {
  AccuracyTable t;
  t.record({kLocalTag, 0, 0, 0}, 1.0);
  EXPECT_THROW(t.record({kLocalTag, 0, 0, 0}, 0.5), MetricError);
  EXPECT_THROW(t.record({kLocalTag, 1, 0, 0}, 1.5), MetricError);
  EXPECT_THROW(t.record({kLocalTag, 1, 0, 0}, -0.1), MetricError);
  EXPECT_THROW(t.at({kGlobalTag, 0, 0, 0}), MetricError);
  EXPECT_EQ(t.size(), 1u);
}

TEST(Retention, HandComputedFixture) {
  const AccuracyTable t = fixture();
  // (0.375 / 0.75 + 0.5 / 0.5) / 2
  EXPECT_EQ(kr_temporal(t, 1, 2), 0.75);
  // (0.25 / 0.5 + 0.75 / 0.75) / 2
  EXPECT_EQ(kr_spatial(t, 1, 2), 0.75);
  // (0.375 / 0.75 + 0.5 / 0.5) / 2
  EXPECT_EQ(kr_spatial(t, 0, 2), 0.75);
  EXPECT_EQ(kr_temporal(t, 0, 2), 1.0);
}

TEST(Retention, IdentitiesAtRoundZero) {
  Rng rng(91);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t a = gen::uniform(rng, 1, 8);
    AccuracyTable t;
    for (std::size_t i = 0; i < a; ++i) {
      const double acc = gen::uniform_real(rng, 0.01, 1.0);
      t.record({kLocalTag, i, 0, 0}, acc);
      t.record({kGlobalTag, i, 0, 0}, acc);
    }
    EXPECT_EQ(kr_temporal(t, 0, a), 1.0);
    EXPECT_EQ(kr_spatial(t, 0, a), 1.0);
  }
}

TEST(Retention, MatchesMeanOfRatios) {
  Rng rng(92);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t a = gen::uniform(rng, 1, 6);
    const std::size_t r = gen::uniform(rng, 1, 4);
    AccuracyTable t;
    double want_t = 0.0, want_s = 0.0;
    for (std::size_t i = 0; i < a; ++i) {
      const double base = gen::uniform_real(rng, 0.05, 1.0), later = gen::uniform_real(rng, 0.0, 1.0);
      const double loc = gen::uniform_real(rng, 0.05, 1.0), glob = gen::uniform_real(rng, 0.0, 1.0);
      t.record({kLocalTag, i, 0, 0}, base);
      t.record({kLocalTag, i, 0, r}, later);
      t.record({kLocalTag, i, r, r}, loc);
      t.record({kGlobalTag, i, r, r}, glob);
      want_t += later / base;
      want_s += glob / loc;
    }
    EXPECT_DOUBLE_EQ(kr_temporal(t, r, a), want_t / static_cast<double>(a));
    EXPECT_DOUBLE_EQ(kr_spatial(t, r, a), want_s / static_cast<double>(a));
  }
}

TEST(Retention, ZeroBaselineAndMissingRecordsAreErrors) {
  AccuracyTable t;
  t.record({kLocalTag, 0, 0, 0}, 0.0);
  t.record({kLocalTag, 0, 0, 1}, 0.5);
  EXPECT_THROW(kr_temporal(t, 1, 1), MetricError);
  EXPECT_THROW(kr_temporal(t, 1, 2), MetricError);
  EXPECT_THROW(kr_spatial(t, 1, 1), MetricError);
}

TEST(Evaluate, FractionCorrect) {
  Dataset test;
  for (int i = 0; i < 8; ++i) test.push_back({i, i % 2, Vec{static_cast<double>(i)}});
  EXPECT_EQ(evaluate([](const LabeledSample&) { return 0; }, test), 0.5);
  EXPECT_EQ(evaluate([](const LabeledSample& s) { return s.label; }, test), 1.0);
  EXPECT_EQ(evaluate([](const LabeledSample& s) { return s.features[0] < 2 ? s.label : -1; }, test), 0.25);
  EXPECT_THROW(evaluate([](const LabeledSample&) { return 0; }, Dataset{}), MetricError);
}

TEST(FeatureCsv, WriteAppendLoad) {
  const fs::path p = fs::temp_directory_path() / "fedta_metrics_features.csv";
  fs::remove(p);
  const std::vector<FeatureRow> a{{1, 0, 0, Vec{0.1, -2.5}}, {2, 1, 0, Vec{1e-300, 3.0}}};
  const std::vector<FeatureRow> b{{1, 0, 1, Vec{0.2, 1.0 / 3.0}}};
  write_feature_csv(p, a, true);
  write_feature_csv(p, b, true);
  std::vector<FeatureRow> both = a;
  both.insert(both.end(), b.begin(), b.end());
  EXPECT_EQ(load_feature_csv(p), both);
  std::ifstream in(p);
  const std::string text((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(text.rfind("sample_id,label,round,f_1,f_2\n", 0), 0u);
  EXPECT_EQ(text.find("sample_id", 1), std::string::npos);
  write_feature_csv(p, b);
  EXPECT_EQ(load_feature_csv(p), b);
}

TEST(FeatureRows, UseTheViewsFeature) {
  FrozenEncoderSpec spec;
  spec.raw_dim = 3;
  spec.embed_dim = 2;
  spec.hidden_dim = 3;
  spec.num_base_tokens = 1;
  const RandomFeatureEncoder enc(spec);
  ModelView view;
  view.encoder = &enc;
  const Dataset samples{{7, 1, Vec{1, 2, 3}}, {9, 0, Vec{0, 1, 0}}};
  const auto rows = feature_rows(samples, view, 4);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].sample_id, 9);
  EXPECT_EQ(rows[1].round, 4u);
  EXPECT_EQ(rows[0].feature, enc.encode(enc.embed(samples[0].features)));
}
