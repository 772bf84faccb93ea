#pragma once

// Experiment configuration, orchestration, comparisons and sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedta/datagen.hpp"
#include "fedta/federation.hpp"
#include "fedta/metrics.hpp"

namespace fedta {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string method = "fedta";
  std::vector<std::uint64_t> seeds{42, 1999, 2024};
  std::string output_dir = "runs";
  std::size_t threads = 1;
  bool export_features = false;
  std::string inference = "nearest-prototype";  // or "local-head"

  std::string dataset = "synthetic";  // or "embedding-csv"
  std::string dataset_path;
  std::size_t num_classes = 40;
  std::size_t raw_dim = 64;
  std::size_t per_class = 60;
  double spread = 0.03;

  std::size_t clients = 5;
  std::size_t tasks = 5;
  std::size_t private_per_client = 7;
  std::size_t public_total = 3;
  std::size_t classes_per_task = 2;
  double dirichlet_alpha = 0.5;
  std::size_t test_per_class = 20;
  std::size_t reserve_per_class = 10;

  std::uint64_t encoder_seed = 7;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t num_base_tokens = 4;

  double lambda1 = 0.5;
  std::size_t top_n = 2;
  std::size_t M = 10;
  std::size_t tokens_per_ie = 2;
  double stage1_lr = 0.75;
  std::size_t stage1_epochs = 3;
  std::size_t stage1_batch = 16;

  double lambda2 = 1.0;
  double lambda3 = 2.0;
  double tau = 0.1;
  double mix_alpha = 0.7;
  std::size_t m = 40;
  std::string mix_rule = "convex";  // or "random-mask"
  bool lock_fixed_anchors = true;
  double stage2_lr = 1.0;
  std::size_t stage2_epochs = 10;
  std::size_t stage2_batch = 16;

  double Thr = 0.3;
  /// Communication rounds per task; the server re-elects every round.
  std::size_t rounds_per_task = 1;
  std::size_t fusion_steps = 20;
  std::size_t fusion_batch = 16;
  double fusion_lr = 0.1;
  double fusion_key_weight = 0.5;
  std::size_t surrogate_k = 5;
};

/// Names of every accepted config key, in document order.
std::vector<std::string> config_keys();

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// `value` is parsed as JSON when possible, otherwise taken as a string.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// `assignment` has the form key=value.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Throws ConfigError describing the first problem found.
void validate(const ExperimentConfig& cfg);

/// Named presets: "desk", "cifar", "imagenet-r".
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct SweepPlan {
  ExperimentConfig base;
  std::string parameter;
  std::vector<std::string> values;
};

/// Named sweeps: "anchor-count" (m over 100, 500, 1000 at paper scale).
SweepPlan sweep_preset(const std::string& name);

PartitionParams partition_params(const ExperimentConfig& cfg, std::uint64_t seed);
RoundConfig round_config(const ExperimentConfig& cfg, std::uint64_t seed);

struct RoundLog {
  std::size_t round = 0;
  std::vector<double> local_acc;   // Acc(local_i^r; T_i^r)
  std::vector<double> global_acc;  // Acc(global^r; T_i^r), seen from client i
  double kr_t = 1.0;  // NaN when a baseline accuracy is zero
  double kr_s = 1.0;
  std::vector<int> fixed_classes;
};

struct SeedResult {
  std::uint64_t seed = 0;
  AccuracyTable records;
  std::vector<RoundLog> rounds;
  /// One JSON object per round, newline-terminated.
  std::string log_jsonl;
  double first_task_acc = 0.0;  // mean_i Acc(local_i^0; T_i^0)
};

struct Summary {
  std::string method;
  std::size_t seeds = 0;
  std::vector<double> global_acc_per_task;  // mean over seeds and clients
  double first_task_acc = 0.0;
  double mean_global_acc = 0.0;
  double final_global_acc = 0.0;
  double kr_t = 1.0;  // mean over rounds >= 1 (1 when there is a single task)
  double kr_s = 1.0;  // mean over all rounds; undefined (NaN) rounds are skipped
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  Summary summary;
};

/// Receives F_TA rows of the global model per (seed, client) after each round.
using FeatureSink = std::function<void(std::uint64_t seed, std::size_t client, const std::vector<FeatureRow>& rows)>;

/// Sees the client states and the broadcast global state after each round.
using RoundObserver = std::function<void(std::uint64_t seed, std::size_t round, const std::vector<ClientState>& clients,
                                         const RoundReport& report, const Encoder& encoder)>;

/// Runs every seed. Validates first; nothing is trained for an invalid config.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const FeatureSink& features = {},
                                const RoundObserver& observer = {});

std::string summary_json(const ExperimentResult& result);
std::string summary_csv_header(std::size_t tasks);
std::string summary_csv_row(const Summary& s);

/// Writes rounds logs, summary.json/csv and the resolved config under `dir`.
void write_result(const ExperimentResult& result, const std::filesystem::path& dir);

/// One run per method on identical partitions and seeds.
std::vector<ExperimentResult> compare(const ExperimentConfig& cfg, const std::vector<std::string>& methods);
/// CSV table ranked by final global accuracy (equal values share a rank).
std::string comparison_csv(const std::vector<ExperimentResult>& results);

/// Sweepable parameters: m, M, Thr, lambda2, tau, mix_alpha.
std::vector<std::string> sweep_parameters();
std::vector<ExperimentResult> sweep(const ExperimentConfig& cfg, const std::string& parameter,
                                    const std::vector<std::string>& values);
std::string sweep_csv(const std::string& parameter, const std::vector<std::string>& values,
                      const std::vector<ExperimentResult>& results);

/// Output root: FEDTA_OUT_ROOT joined with cfg.output_dir when set.
std::filesystem::path output_root(const ExperimentConfig& cfg);

}  // namespace fedta
