#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedta/sample.hpp"

namespace fedta {

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Class means on the unit sphere, samples = mean + N(0, spread^2 I).
/// Labels run 0..num_classes-1 and sample ids are consecutive from 0.
Dataset synth_gaussian_dataset(std::size_t num_classes, std::size_t raw_dim, std::size_t per_class,
                               double spread, std::uint64_t seed);

/// Rows `sample_id,label,e_1,...,e_d`; an optional header row is skipped.
/// Throws DataError naming the offending line.
Dataset load_embedding_csv(const std::filesystem::path& path);
void write_embedding_csv(const std::filesystem::path& path, const Dataset& data);

struct PartitionParams {
  std::size_t clients = 5;
  std::size_t tasks_per_client = 5;
  std::size_t private_per_client = 7;
  std::size_t public_total = 3;
  std::size_t classes_per_task = 2;
  double dirichlet_alpha = 0.5;
  /// Held-out test samples per class, shared by every client that holds the class.
  std::size_t test_per_class = 20;
  /// Samples per class kept out of all training sets (surrogate pool).
  std::size_t reserve_per_class = 10;
  std::uint64_t seed = 0;
};

struct TaskSpec {
  std::vector<int> classes;
  std::vector<std::size_t> train;  // dataset indices
  std::vector<std::size_t> test;   // dataset indices
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct ClientPartition {
  std::vector<int> private_classes;
  std::vector<TaskSpec> tasks;
  friend bool operator==(const ClientPartition&, const ClientPartition&) = default;
};

struct TaskPartition {
  std::vector<int> public_classes;
  std::vector<ClientPartition> clients;
  /// Per class: indices reserved for the surrogate pool.
  std::map<int, std::vector<std::size_t>> reserve;

  std::size_t num_clients() const { return clients.size(); }
  friend bool operator==(const TaskPartition&, const TaskPartition&) = default;
};

/// Splits the classes of `data` into private and public sets and slices each
/// client's classes into a task sequence. Public-class training samples are
/// divided among clients by a Dirichlet draw with no overlap.
TaskPartition partition(const Dataset& data, const PartitionParams& params);

/// Throws DataError when any partition invariant is violated.
void check_partition(const TaskPartition& p, const Dataset& data, const PartitionParams& params);

Dataset gather(const Dataset& data, const std::vector<std::size_t>& indices);

/// `per_class` reserved samples per class, drawn with `seed`; disjoint from
/// every client's training indices.
Dataset make_surrogate(const Dataset& data, std::size_t per_class, std::uint64_t seed,
                       const TaskPartition& exclusion);

/// JSON manifest of the partition (class sets and sample ids) for audits.
std::string partition_manifest_json(const TaskPartition& p, const Dataset& data);

}  // namespace fedta
