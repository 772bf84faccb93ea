#pragma once

// Accuracy records and the two knowledge-retention ratios.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedta/federation.hpp"
#include "fedta/sample.hpp"

namespace fedta {

class MetricError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kLocalTag = "local";
inline constexpr const char* kGlobalTag = "global";

struct AccuracyKey {
  std::string model_tag;
  std::size_t client = 0;
  std::size_t task = 0;
  std::size_t round = 0;

  auto operator<=>(const AccuracyKey&) const = default;
};

/// Acc(model_tag, client, task, round). Keys are unique and values lie in [0, 1].
class AccuracyTable {
public:
  void record(const AccuracyKey& key, double accuracy);
  double at(const AccuracyKey& key) const;
  bool contains(const AccuracyKey& key) const { return values_.count(key) != 0; }
  std::size_t size() const { return values_.size(); }
  const std::map<AccuracyKey, double>& entries() const { return values_; }

private:
  std::map<AccuracyKey, double> values_;
};

using Predictor = std::function<int(const LabeledSample&)>;

double evaluate(const Predictor& predict, const Dataset& test);
double evaluate(const ModelView& view, const Dataset& test);

/// (1/a) sum_i Acc(local, i, task 0, round r) / Acc(local, i, task 0, round 0).
double kr_temporal(const AccuracyTable& records, std::size_t round, std::size_t clients);

/// (1/a) sum_i Acc(global, i, task r, round r) / Acc(local, i, task r, round r).
double kr_spatial(const AccuracyTable& records, std::size_t round, std::size_t clients);

struct FeatureRow {
  std::int64_t sample_id = 0;
  int label = 0;
  std::size_t round = 0;
  Vec feature;

  friend bool operator==(const FeatureRow&, const FeatureRow&) = default;
};

std::vector<FeatureRow> feature_rows(const Dataset& samples, const ModelView& view, std::size_t round);

/// CSV `sample_id,label,round,f_1..f_d`. A header is always written.
void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows,
                       bool append = false);
void export_features(const Dataset& samples, const ModelView& view, std::size_t round,
                     const std::filesystem::path& path);
std::vector<FeatureRow> load_feature_csv(const std::filesystem::path& path);

}  // namespace fedta
