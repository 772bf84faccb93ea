#include "fedta/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace fedta {

namespace {

std::string describe(const AccuracyKey& k) {
  return k.model_tag + "/client " + std::to_string(k.client) + "/task " + std::to_string(k.task) +
         "/round " + std::to_string(k.round);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_field(const std::string& s, const std::string& where) {
  T out{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (s.empty() || ec != std::errc() || ptr != end) throw MetricError(where + "bad field '" + s + "'");
  return out;
}

double ratio_mean(const AccuracyTable& records, std::size_t clients, const char* what,
                  const std::function<std::pair<AccuracyKey, AccuracyKey>(std::size_t)>& keys) {
  if (clients == 0) throw MetricError(std::string(what) + ": no clients");
  double sum = 0.0;
  for (std::size_t i = 0; i < clients; ++i) {
    const auto [num, den] = keys(i);
    const double d = records.at(den);
    if (!(d > 0.0)) throw MetricError(std::string(what) + ": zero baseline accuracy at " + describe(den));
    sum += records.at(num) / d;
  }
  return sum / static_cast<double>(clients);
}

}  // namespace

void AccuracyTable::record(const AccuracyKey& key, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw MetricError("accuracy outside [0, 1] at " + describe(key));
  }
  if (!values_.emplace(key, accuracy).second) throw MetricError("duplicate record " + describe(key));
}

double AccuracyTable::at(const AccuracyKey& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw MetricError("missing record " + describe(key));
  return it->second;
}

double evaluate(const Predictor& predict, const Dataset& test) {
  if (test.empty()) throw MetricError("evaluate: empty test set");
  std::size_t correct = 0;
  for (const auto& s : test) correct += predict(s) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double evaluate(const ModelView& view, const Dataset& test) {
  return evaluate([&](const LabeledSample& s) { return view.predict(s.features); }, test);
}

double kr_temporal(const AccuracyTable& records, std::size_t round, std::size_t clients) {
  return ratio_mean(records, clients, "kr_temporal", [&](std::size_t i) {
    return std::pair{AccuracyKey{kLocalTag, i, 0, round}, AccuracyKey{kLocalTag, i, 0, 0}};
  });
}

double kr_spatial(const AccuracyTable& records, std::size_t round, std::size_t clients) {
  return ratio_mean(records, clients, "kr_spatial", [&](std::size_t i) {
    return std::pair{AccuracyKey{kGlobalTag, i, round, round}, AccuracyKey{kLocalTag, i, round, round}};
  });
}

std::vector<FeatureRow> feature_rows(const Dataset& samples, const ModelView& view, std::size_t round) {
  std::vector<FeatureRow> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back({s.sample_id, s.label, round, view.feature(s.features)});
  return rows;
}

void write_feature_csv(const std::filesystem::path& path, const std::vector<FeatureRow>& rows, bool append) {
  const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw MetricError("cannot write feature file " + path.string());
  if (fresh) {
    out << "sample_id,label,round";
    const std::size_t d = rows.empty() ? 0 : rows.front().feature.size();
    for (std::size_t k = 1; k <= d; ++k) out << ",f_" << k;
    out << '\n';
  }
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.label << ',' << r.round;
    for (double v : r.feature) out << ',' << fmt_double(v);
    out << '\n';
  }
  if (!out) throw MetricError("write failed for " + path.string());
}

void export_features(const Dataset& samples, const ModelView& view, std::size_t round,
                     const std::filesystem::path& path) {
  write_feature_csv(path, feature_rows(samples, view, round));
}

std::vector<FeatureRow> load_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MetricError("cannot open feature file " + path.string());
  std::vector<FeatureRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("sample_id", 0) == 0) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (fields.size() < 3) throw MetricError(where + "expected sample_id,label,round,...");
    FeatureRow r;
    r.sample_id = parse_field<std::int64_t>(fields[0], where);
    r.label = parse_field<int>(fields[1], where);
    r.round = parse_field<std::size_t>(fields[2], where);
    for (std::size_t k = 3; k < fields.size(); ++k) r.feature.push_back(parse_field<double>(fields[k], where));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fedta
