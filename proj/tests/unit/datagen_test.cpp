#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "fedta/datagen.hpp"
#include "partition_audit.hpp"

using namespace fedta;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fedta_datagen_test";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string data_error(const fs::path& p) {
  try {
    load_embedding_csv(p);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

PartitionParams cifar_style() {
  PartitionParams p;
  p.clients = 5;
  p.tasks_per_client = 5;
  p.private_per_client = 15;
  p.public_total = 25;
  p.classes_per_task = 8;
  p.test_per_class = 20;
  p.reserve_per_class = 20;
  p.seed = 3;
  return p;
}

}  // namespace

TEST(Synth, ShapeLabelsIdsAndSeeding) {
  const Dataset a = synth_gaussian_dataset(4, 3, 5, 0.1, 9);
  ASSERT_EQ(a.size(), 20u);
  std::map<int, int> counts;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sample_id, static_cast<std::int64_t>(i));
    EXPECT_EQ(a[i].features.size(), 3u);
    ++counts[a[i].label];
  }
  EXPECT_EQ(counts, (std::map<int, int>{{0, 5}, {1, 5}, {2, 5}, {3, 5}}));
  EXPECT_EQ(a, synth_gaussian_dataset(4, 3, 5, 0.1, 9));
  EXPECT_NE(a, synth_gaussian_dataset(4, 3, 5, 0.1, 10));
  EXPECT_THROW(synth_gaussian_dataset(0, 3, 5, 0.1, 9), DataError);
  EXPECT_THROW(synth_gaussian_dataset(2, 3, 5, -1.0, 9), DataError);
}

TEST(Synth, ZeroSpreadGivesUnitClassMeans) {
  const Dataset d = synth_gaussian_dataset(3, 8, 2, 0.0, 1);
  for (const auto& s : d) {
    double n = 0.0;
    for (double x : s.features) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
  for (const auto& a : d) {
    for (const auto& b : d) {
      if (a.label == b.label) EXPECT_EQ(a.features, b.features);
    }
  }
}

TEST(EmbeddingCsv, RoundTripsExactly) {
  const Dataset d = synth_gaussian_dataset(3, 4, 3, 0.3, 2);
  const fs::path p = scratch("roundtrip.csv");
  write_embedding_csv(p, d);
  EXPECT_EQ(load_embedding_csv(p), d);
}

TEST(EmbeddingCsv, HeaderOptionalAndErrorsNameTheLine) {
  const fs::path p = scratch("bad.csv");
  write_text(p, "0,1,0.5,0.25\n1,0,1,2\n");
  EXPECT_EQ(load_embedding_csv(p).size(), 2u);
  write_text(p, "sample_id,label,e_1\n0,1,0.5\n1,x,0.5\n");
  EXPECT_NE(data_error(p).find(":3:"), std::string::npos);
  write_text(p, "0,1,0.5,0.5\n1,1,0.5\n");
  EXPECT_NE(data_error(p).find(":2:"), std::string::npos);
  write_text(p, "0,1,0.5\n0,1,0.5\n");
  EXPECT_NE(data_error(p).find("duplicate"), std::string::npos);
  write_text(p, "0,-1,0.5\n");
  EXPECT_FALSE(data_error(p).empty());
  write_text(p, "0,1,abc\n");
  EXPECT_FALSE(data_error(p).empty());
  EXPECT_THROW(load_embedding_csv(scratch("missing.csv")), DataError);
}

TEST(Partition, CifarStyleCountsAndDisjointness) {
  const Dataset d = synth_gaussian_dataset(100, 4, 100, 0.1, 5);
  const PartitionParams params = cifar_style();
  const TaskPartition p = partition(d, params);
  EXPECT_NO_THROW(check_partition(p, d, params));
  EXPECT_TRUE(audit::partition_violations(p, d, params).empty());
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(audit::classes_of_client(p, c), 40u);
}

TEST(Partition, RandomisedParamsHoldInvariants) {
  fedta::Rng rng(81);
  for (int trial = 0; trial < 25; ++trial) {
    PartitionParams params;
    params.clients = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    params.tasks_per_client = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    params.classes_per_task = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const std::size_t per_client = params.tasks_per_client * params.classes_per_task;
    params.public_total = std::uniform_int_distribution<std::size_t>(0, per_client)(rng);
    params.private_per_client = per_client - params.public_total;
    params.test_per_class = 2;
    params.reserve_per_class = 1;
    params.dirichlet_alpha = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    params.seed = trial;
    const std::size_t classes = params.private_per_client * params.clients + params.public_total;
    const Dataset d = synth_gaussian_dataset(classes, 2, 3 + params.clients + 3, 0.1, trial);
    const TaskPartition p = partition(d, params);
    EXPECT_NO_THROW(check_partition(p, d, params));
    const auto bad = audit::partition_violations(p, d, params);
    EXPECT_TRUE(bad.empty()) << bad.front();
    EXPECT_EQ(p, partition(d, params)) << "partition must be a function of its seed";
  }
}

TEST(Partition, InfeasibleRequestsAreRejected) {
  const Dataset d = synth_gaussian_dataset(10, 2, 30, 0.1, 1);
  PartitionParams p;
  p.clients = 2;
  p.tasks_per_client = 2;
  p.classes_per_task = 2;
  p.private_per_client = 4;
  p.public_total = 3;  // 4 + 3 != 2 x 2
  EXPECT_THROW(partition(d, p), DataError);
  p.private_per_client = 6;
  p.public_total = 0;
  p.tasks_per_client = 3;  // needs 12 classes
  EXPECT_THROW(partition(d, p), DataError);
  p.private_per_client = 4;
  p.tasks_per_client = 2;
  p.test_per_class = 29;  // not enough samples left to train on
  EXPECT_THROW(partition(d, p), DataError);
}

TEST(Partition, CheckerCatchesTampering) {
  const Dataset d = synth_gaussian_dataset(8, 2, 20, 0.1, 1);
  PartitionParams params;
  params.clients = 2;
  params.tasks_per_client = 2;
  params.classes_per_task = 2;
  params.private_per_client = 2;
  params.public_total = 2;
  params.test_per_class = 3;
  params.reserve_per_class = 2;
  TaskPartition p = partition(d, params);
  TaskPartition leak = p;
  leak.clients[0].tasks[0].train.push_back(leak.clients[0].tasks[0].test.front());
  EXPECT_THROW(check_partition(leak, d, params), DataError);
  TaskPartition share = p;
  share.clients[1].tasks[0].train.push_back(share.clients[0].tasks[0].train.front());
  EXPECT_THROW(check_partition(share, d, params), DataError);
}

TEST(Surrogate, DrawsFromReserveOnly) {
  const Dataset d = synth_gaussian_dataset(100, 4, 100, 0.1, 5);
  const TaskPartition p = partition(d, cifar_style());
  const Dataset s = make_surrogate(d, 5, 77, p);
  EXPECT_EQ(s.size(), 500u);
  std::set<std::int64_t> train_ids;
  for (const auto& c : p.clients) {
    for (const auto& t : c.tasks) {
      for (std::size_t i : t.train) train_ids.insert(d[i].sample_id);
    }
  }
  for (const auto& x : s) EXPECT_FALSE(train_ids.count(x.sample_id));
  EXPECT_EQ(s, make_surrogate(d, 5, 77, p));
  EXPECT_THROW(make_surrogate(d, 21, 77, p), DataError);
}

TEST(Manifest, ListsClassesAndSampleIds) {
  const Dataset d = synth_gaussian_dataset(8, 2, 20, 0.1, 1);
  PartitionParams params;
  params.clients = 2;
  params.tasks_per_client = 2;
  params.classes_per_task = 2;
  params.private_per_client = 2;
  params.public_total = 2;
  params.test_per_class = 3;
  params.reserve_per_class = 2;
  const std::string m = partition_manifest_json(partition(d, params), d);
  EXPECT_NE(m.find("public_classes"), std::string::npos);
}
