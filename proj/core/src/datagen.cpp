#include "fedta/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fedta {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<double> dirichlet(Rng& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (!(total > 0.0)) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    return p;
  }
  for (double& v : p) v /= total;
  return p;
}

/// Every client gets at least one sample; the remainder follows the proportions
/// by largest remainder (ties to the lower client index).
std::vector<std::size_t> allocate_counts(std::size_t n, const std::vector<double>& p) {
  const std::size_t k = p.size();
  std::vector<std::size_t> counts(k, 1);
  const std::size_t spare = n - k;
  std::vector<double> rem(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = p[i] * static_cast<double>(spare);
    const auto whole = static_cast<std::size_t>(std::floor(exact));
    counts[i] += whole;
    used += whole;
    rem[i] = exact - static_cast<double>(whole);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < spare; ++i, ++used) ++counts[order[i % k]];
  return counts;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset synth_gaussian_dataset(std::size_t num_classes, std::size_t raw_dim, std::size_t per_class,
                               double spread, std::uint64_t seed) {
  if (num_classes == 0 || raw_dim == 0 || per_class == 0) {
    throw DataError("synth_gaussian_dataset: counts must be positive");
  }
  if (spread < 0.0) throw DataError("synth_gaussian_dataset: spread must be non-negative");
  Rng mean_rng(derive_seed(seed, 0xD47A, 1));
  Rng noise_rng(derive_seed(seed, 0xD47A, 2));
  std::vector<Vec> means;
  means.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) means.push_back(unit_gaussian_vec(mean_rng, raw_dim));

  Dataset data;
  data.reserve(num_classes * per_class);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::int64_t id = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      LabeledSample s;
      s.sample_id = id++;
      s.label = static_cast<int>(c);
      s.features = means[c];
      if (spread > 0.0) {
        for (double& v : s.features) v += spread * noise(noise_rng);
      }
      data.push_back(std::move(s));
    }
  }
  return data;
}

Dataset load_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  Dataset data;
  std::set<std::int64_t> ids;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    LabeledSample s;
    if (fields.empty() || !parse_number(fields[0], s.sample_id)) {
      if (data.empty() && line_no == 1) continue;  // header
      throw DataError(where + "bad sample_id");
    }
    if (fields.size() < 3) throw DataError(where + "expected sample_id,label,e_1..e_d");
    if (!parse_number(fields[1], s.label) || s.label < 0) throw DataError(where + "bad label");
    for (std::size_t k = 2; k < fields.size(); ++k) {
      double v = 0.0;
      if (!parse_number(fields[k], v) || !std::isfinite(v)) {
        throw DataError(where + "bad value in column " + std::to_string(k + 1));
      }
      s.features.push_back(v);
    }
    if (dim == 0) dim = s.features.size();
    if (s.features.size() != dim) {
      throw DataError(where + "expected " + std::to_string(dim) + " values, got " +
                      std::to_string(s.features.size()));
    }
    if (!ids.insert(s.sample_id).second) {
      throw DataError(where + "duplicate sample_id " + std::to_string(s.sample_id));
    }
    data.push_back(std::move(s));
  }
  return data;
}

void write_embedding_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding file " + path.string());
  const std::size_t dim = data.empty() ? 0 : data.front().features.size();
  out << "sample_id,label";
  for (std::size_t k = 1; k <= dim; ++k) out << ",e_" << k;
  out << '\n';
  for (const auto& s : data) {
    out << s.sample_id << ',' << s.label;
    for (double v : s.features) out << ',' << fmt_double(v);
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

TaskPartition partition(const Dataset& data, const PartitionParams& params) {
  const std::size_t a = params.clients;
  if (a == 0 || params.tasks_per_client == 0 || params.classes_per_task == 0) {
    throw DataError("partition: clients, tasks and classes per task must be positive");
  }
  if (!(params.dirichlet_alpha > 0.0)) throw DataError("partition: dirichlet alpha must be positive");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  const std::size_t total = by_class.size();

  const std::size_t needed = params.private_per_client * a + params.public_total;
  if (needed > total) {
    throw DataError("partition: " + std::to_string(a) + " clients x " +
                    std::to_string(params.private_per_client) + " private + " +
                    std::to_string(params.public_total) + " public classes needs " +
                    std::to_string(needed) + " classes, dataset has " + std::to_string(total));
  }
  const std::size_t per_client = params.private_per_client + params.public_total;
  if (per_client != params.tasks_per_client * params.classes_per_task) {
    throw DataError("partition: each client holds " + std::to_string(per_client) +
                    " classes, which does not split into " + std::to_string(params.tasks_per_client) +
                    " tasks of " + std::to_string(params.classes_per_task));
  }

  Rng rng(derive_seed(params.seed, 0x9A27));
  std::vector<int> classes;
  for (const auto& [label, idx] : by_class) classes.push_back(label);
  std::shuffle(classes.begin(), classes.end(), rng);

  TaskPartition out;
  out.clients.resize(a);
  std::size_t next = 0;
  for (std::size_t c = 0; c < a; ++c) {
    for (std::size_t k = 0; k < params.private_per_client; ++k) out.clients[c].private_classes.push_back(classes[next++]);
    std::sort(out.clients[c].private_classes.begin(), out.clients[c].private_classes.end());
  }
  for (std::size_t k = 0; k < params.public_total; ++k) out.public_classes.push_back(classes[next++]);
  std::sort(out.public_classes.begin(), out.public_classes.end());

  // Per class: test | reserve | train, from a shuffled index list.
  std::map<int, std::vector<std::size_t>> test_idx;
  std::vector<std::map<int, std::vector<std::size_t>>> train_idx(a);
  auto split_class = [&](int label, std::size_t min_train) {
    std::vector<std::size_t> idx = by_class.at(label);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t need = params.test_per_class + params.reserve_per_class + min_train;
    if (idx.size() < need) {
      throw DataError("partition: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " samples, needs at least " + std::to_string(need));
    }
    auto it = idx.begin();
    test_idx[label].assign(it, it + static_cast<std::ptrdiff_t>(params.test_per_class));
    it += static_cast<std::ptrdiff_t>(params.test_per_class);
    out.reserve[label].assign(it, it + static_cast<std::ptrdiff_t>(params.reserve_per_class));
    it += static_cast<std::ptrdiff_t>(params.reserve_per_class);
    return std::vector<std::size_t>(it, idx.end());
  };

  for (std::size_t c = 0; c < a; ++c) {
    for (int label : out.clients[c].private_classes) train_idx[c][label] = split_class(label, 1);
  }
  for (int label : out.public_classes) {
    const std::vector<std::size_t> pool = split_class(label, a);
    const auto counts = allocate_counts(pool.size(), dirichlet(rng, a, params.dirichlet_alpha));
    std::size_t pos = 0;
    for (std::size_t c = 0; c < a; ++c) {
      train_idx[c][label].assign(pool.begin() + static_cast<std::ptrdiff_t>(pos),
                                 pool.begin() + static_cast<std::ptrdiff_t>(pos + counts[c]));
      pos += counts[c];
    }
  }

  for (std::size_t c = 0; c < a; ++c) {
    auto& client = out.clients[c];
    std::vector<int> held = client.private_classes;
    held.insert(held.end(), out.public_classes.begin(), out.public_classes.end());
    std::sort(held.begin(), held.end());
    std::shuffle(held.begin(), held.end(), rng);
    for (std::size_t t = 0; t < params.tasks_per_client; ++t) {
      TaskSpec task;
      task.classes.assign(held.begin() + static_cast<std::ptrdiff_t>(t * params.classes_per_task),
                          held.begin() + static_cast<std::ptrdiff_t>((t + 1) * params.classes_per_task));
      std::sort(task.classes.begin(), task.classes.end());
      for (int label : task.classes) {
        const auto& tr = train_idx[c][label];
        task.train.insert(task.train.end(), tr.begin(), tr.end());
        const auto& te = test_idx[label];
        task.test.insert(task.test.end(), te.begin(), te.end());
      }
      client.tasks.push_back(std::move(task));
    }
  }
  return out;
}

void check_partition(const TaskPartition& p, const Dataset& data, const PartitionParams& params) {
  auto fail = [](const std::string& msg) { throw DataError("partition invariant: " + msg); };
  if (p.clients.size() != params.clients) fail("client count");

  std::set<std::size_t> all_train;
  std::set<std::size_t> all_test;
  std::map<int, std::size_t> private_owner;
  for (std::size_t c = 0; c < p.clients.size(); ++c) {
    const auto& client = p.clients[c];
    if (client.private_classes.size() != params.private_per_client) fail("private class count");
    for (int label : client.private_classes) {
      if (!private_owner.emplace(label, c).second) fail("private class shared across clients");
      if (std::binary_search(p.public_classes.begin(), p.public_classes.end(), label)) {
        fail("class both private and public");
      }
    }
    if (client.tasks.size() != params.tasks_per_client) fail("task count");
    std::set<int> seen;
    for (const auto& task : client.tasks) {
      if (task.classes.size() != params.classes_per_task) fail("classes per task");
      for (int label : task.classes) {
        if (!seen.insert(label).second) fail("class repeated across tasks of one client");
      }
      const std::set<int> task_classes(task.classes.begin(), task.classes.end());
      for (std::size_t idx : task.train) {
        if (idx >= data.size()) fail("train index out of range");
        if (!task_classes.count(data[idx].label)) fail("train sample outside task classes");
        if (!all_train.insert(idx).second) fail("train sample assigned twice");
      }
      for (std::size_t idx : task.test) {
        if (idx >= data.size() || !task_classes.count(data[idx].label)) fail("bad test sample");
        all_test.insert(idx);
      }
    }
    if (seen.size() != params.private_per_client + p.public_classes.size()) fail("per-client class count");
    for (int label : client.private_classes) {
      if (!seen.count(label)) fail("private class missing from task sequence");
    }
    for (int label : p.public_classes) {
      if (!seen.count(label)) fail("public class missing from task sequence");
    }
  }
  for (const auto& [label, idx] : p.reserve) {
    for (std::size_t i : idx) {
      if (all_train.count(i)) fail("reserved sample also used for training");
      if (all_test.count(i)) fail("reserved sample also used for testing");
    }
  }
  for (std::size_t i : all_test) {
    if (all_train.count(i)) fail("test sample also used for training");
  }
}

Dataset gather(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.at(i));
  return out;
}

Dataset make_surrogate(const Dataset& data, std::size_t per_class, std::uint64_t seed,
                       const TaskPartition& exclusion) {
  Dataset out;
  if (per_class == 0) return out;
  std::set<std::size_t> train;
  for (const auto& client : exclusion.clients) {
    for (const auto& task : client.tasks) train.insert(task.train.begin(), task.train.end());
  }
  Rng rng(derive_seed(seed, 0x5022));
  for (const auto& [label, reserved] : exclusion.reserve) {
    std::vector<std::size_t> pool;
    for (std::size_t i : reserved) {
      if (!train.count(i)) pool.push_back(i);
    }
    if (pool.size() < per_class) {
      throw DataError("make_surrogate: class " + std::to_string(label) + " has " +
                      std::to_string(pool.size()) + " spare samples, " + std::to_string(per_class) +
                      " requested");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < per_class; ++k) out.push_back(data.at(pool[k]));
  }
  return out;
}

std::string partition_manifest_json(const TaskPartition& p, const Dataset& data) {
  using nlohmann::json;
  auto ids = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::int64_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(data.at(i).sample_id);
    return out;
  };
  json clients = json::array();
  for (const auto& c : p.clients) {
    json tasks = json::array();
    for (const auto& t : c.tasks) {
      tasks.push_back({{"classes", t.classes}, {"train_ids", ids(t.train)}, {"test_ids", ids(t.test)}});
    }
    clients.push_back({{"private_classes", c.private_classes}, {"tasks", std::move(tasks)}});
  }
  json reserve = json::object();
  for (const auto& [label, idx] : p.reserve) reserve[std::to_string(label)] = ids(idx);
  return json{{"public_classes", p.public_classes}, {"clients", std::move(clients)}, {"reserve_ids", std::move(reserve)}}
      .dump(2);
}

}  // namespace fedta
