#include "fedta/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "fedta/encoder.hpp"

namespace fedta {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
T convert(const json& j, const std::string& key);

template <>
std::size_t convert<std::size_t>(const json& j, const std::string& key) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got " + j.dump());
  }
  return j.get<std::size_t>();
}

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

template <>
double convert<double>(const json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key '" + key + "' expects a number, got " + j.dump());
  return j.get<double>();
}

template <>
bool convert<bool>(const json& j, const std::string& key) {
  if (!j.is_boolean()) throw ConfigError("config key '" + key + "' expects true or false, got " + j.dump());
  return j.get<bool>();
}

template <>
std::string convert<std::string>(const json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("config key '" + key + "' expects a string, got " + j.dump());
  return j.get<std::string>();
}

template <>
std::vector<std::uint64_t> convert<std::vector<std::uint64_t>>(const json& j, const std::string& key) {
  std::vector<std::uint64_t> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(convert<std::uint64_t>(v, key));
  } else if (j.is_number_integer()) {
    out.push_back(convert<std::uint64_t>(j, key));
  } else if (j.is_string()) {
    std::stringstream ss(j.get<std::string>());
    for (std::string part; std::getline(ss, part, ',');) {
      json v;
      try {
        v = json::parse(part);
      } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "': bad seed '" + part + "'");
      }
      out.push_back(convert<std::uint64_t>(v, key));
    }
  } else {
    throw ConfigError("config key '" + key + "' expects a list of seeds, got " + j.dump());
  }
  return out;
}

struct Field {
  std::string name;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename T>
Field field(const char* name, T ExperimentConfig::*member) {
  const std::string key = name;
  return {key, [member](const ExperimentConfig& c) { return json(c.*member); },
          [member, key](ExperimentConfig& c, const json& j) { c.*member = convert<T>(j, key); }};
}

const std::vector<Field>& registry() {
  using C = ExperimentConfig;
  static const std::vector<Field> fields = {
      field("method", &C::method),
      field("seeds", &C::seeds),
      field("output_dir", &C::output_dir),
      field("threads", &C::threads),
      field("export_features", &C::export_features),
      field("inference", &C::inference),
      field("dataset", &C::dataset),
      field("dataset_path", &C::dataset_path),
      field("num_classes", &C::num_classes),
      field("raw_dim", &C::raw_dim),
      field("per_class", &C::per_class),
      field("spread", &C::spread),
      field("clients", &C::clients),
      field("tasks", &C::tasks),
      field("private_per_client", &C::private_per_client),
      field("public_total", &C::public_total),
      field("classes_per_task", &C::classes_per_task),
      field("dirichlet_alpha", &C::dirichlet_alpha),
      field("test_per_class", &C::test_per_class),
      field("reserve_per_class", &C::reserve_per_class),
      field("encoder_seed", &C::encoder_seed),
      field("embed_dim", &C::embed_dim),
      field("hidden_dim", &C::hidden_dim),
      field("num_base_tokens", &C::num_base_tokens),
      field("lambda1", &C::lambda1),
      field("top_n", &C::top_n),
      field("M", &C::M),
      field("tokens_per_ie", &C::tokens_per_ie),
      field("stage1_lr", &C::stage1_lr),
      field("stage1_epochs", &C::stage1_epochs),
      field("stage1_batch", &C::stage1_batch),
      field("lambda2", &C::lambda2),
      field("lambda3", &C::lambda3),
      field("tau", &C::tau),
      field("mix_alpha", &C::mix_alpha),
      field("m", &C::m),
      field("mix_rule", &C::mix_rule),
      field("lock_fixed_anchors", &C::lock_fixed_anchors),
      field("stage2_lr", &C::stage2_lr),
      field("stage2_epochs", &C::stage2_epochs),
      field("stage2_batch", &C::stage2_batch),
      field("Thr", &C::Thr),
      field("rounds_per_task", &C::rounds_per_task),
      field("fusion_steps", &C::fusion_steps),
      field("fusion_batch", &C::fusion_batch),
      field("fusion_lr", &C::fusion_lr),
      field("fusion_key_weight", &C::fusion_key_weight),
      field("surrogate_k", &C::surrogate_k),
  };
  return fields;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : registry()) {
    if (f.name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Mean over the defined (non-NaN) values; NaN when there are none.
double defined_mean(const std::vector<double>& v) {
  std::vector<double> ok;
  std::copy_if(v.begin(), v.end(), std::back_inserter(ok), [](double x) { return !std::isnan(x); });
  return ok.empty() ? std::nan("") : mean(ok);
}

/// KR is undefined when a baseline accuracy is zero; the log records null.
double retention_or_nan(const AccuracyTable& records, std::size_t round, std::size_t clients, bool temporal) {
  for (std::size_t i = 0; i < clients; ++i) {
    const AccuracyKey den = temporal ? AccuracyKey{kLocalTag, i, 0, 0} : AccuracyKey{kLocalTag, i, round, round};
    if (records.at(den) == 0.0) return std::nan("");
  }
  return temporal ? kr_temporal(records, round, clients) : kr_spatial(records, round, clients);
}

ordered_json number_or_null(double v) { return std::isnan(v) ? ordered_json() : ordered_json(v); }

std::unique_ptr<Encoder> make_encoder(const ExperimentConfig& cfg, const Dataset& data) {
  if (cfg.dataset == "embedding-csv") return std::make_unique<LookupEncoder>(data.front().features.size());
  FrozenEncoderSpec spec;
  spec.seed = cfg.encoder_seed;
  spec.raw_dim = cfg.raw_dim;
  spec.embed_dim = cfg.embed_dim;
  spec.hidden_dim = cfg.hidden_dim;
  spec.num_base_tokens = cfg.num_base_tokens;
  return std::make_unique<RandomFeatureEncoder>(spec);
}

std::size_t label_count(const Dataset& data) {
  int top = -1;
  for (const auto& s : data) top = std::max(top, s.label);
  return static_cast<std::size_t>(top + 1);
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const Dataset* csv_data,
                    const FeatureSink& features, const RoundObserver& observer) {
  const Dataset data = csv_data != nullptr
                           ? *csv_data
                           : synth_gaussian_dataset(cfg.num_classes, cfg.raw_dim, cfg.per_class, cfg.spread,
                                                    derive_seed(seed, 0xDA7A));
  const PartitionParams pp = partition_params(cfg, seed);
  const TaskPartition part = partition(data, pp);
  check_partition(part, data, pp);
  const Dataset surrogate = make_surrogate(data, cfg.surrogate_k, derive_seed(seed, 0x5077), part);
  const auto encoder = make_encoder(cfg, data);
  const RoundConfig rc = round_config(cfg, seed);
  const std::size_t classes = label_count(data);

  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    clients.push_back(ClientState::create(static_cast<int>(i), classes, encoder->embed_dim(), rc.client,
                                          derive_seed(seed, 0xC11E, i)));
  }

  auto test_set = [&](std::size_t client, std::size_t task) {
    return gather(data, part.clients[client].tasks[task].test);
  };

  SeedResult out;
  out.seed = seed;
  ServerState server;
  for (std::size_t r = 0; r < cfg.tasks; ++r) {
    std::vector<Dataset> task_data;
    for (std::size_t i = 0; i < cfg.clients; ++i) task_data.push_back(gather(data, part.clients[i].tasks[r].train));

    RoundLog log;
    log.round = r;
    log.local_acc.resize(cfg.clients);
    log.global_acc.resize(cfg.clients);
    const LocalHook hook = [&](std::size_t i, const ClientState& state) {
      const ModelView view = local_view(state, *encoder, rc.client);
      const double acc = evaluate(view, test_set(i, r));
      log.local_acc[i] = acc;
      out.records.record({kLocalTag, i, r, r}, acc);
      if (r > 0) out.records.record({kLocalTag, i, 0, r}, evaluate(view, test_set(i, 0)));
    };
    RoundConfig step = rc;
    step.completes_task = false;
    for (std::size_t k = 1; k < cfg.rounds_per_task; ++k) {
      run_round(clients, server, task_data, surrogate, *encoder, step);
    }
    const RoundReport report = run_round(clients, server, task_data, surrogate, *encoder, rc, hook);
    if (observer) observer(seed, r, clients, report, *encoder);

    for (std::size_t i = 0; i < cfg.clients; ++i) {
      const ModelView view = global_view(clients[i], report.global, *encoder, rc.client);
      log.global_acc[i] = evaluate(view, test_set(i, r));
      out.records.record({kGlobalTag, i, r, r}, log.global_acc[i]);
      if (features) {
        Dataset seen;
        for (std::size_t t = 0; t <= r; ++t) {
          const Dataset ts = test_set(i, t);
          seen.insert(seen.end(), ts.begin(), ts.end());
        }
        features(seed, i, feature_rows(seen, view, r));
      }
    }
    log.kr_t = retention_or_nan(out.records, r, cfg.clients, true);
    log.kr_s = retention_or_nan(out.records, r, cfg.clients, false);
    log.fixed_classes = fixed_classes(report.global.prototypes);

    ordered_json line;
    line["round"] = log.round;
    line["per_client_local_acc"] = log.local_acc;
    line["global_acc_per_client"] = log.global_acc;
    line["kr_t"] = number_or_null(log.kr_t);
    line["kr_s"] = number_or_null(log.kr_s);
    line["fixed_classes"] = log.fixed_classes;
    out.log_jsonl += line.dump() + "\n";
    out.rounds.push_back(std::move(log));
  }

  std::vector<double> first;
  for (std::size_t i = 0; i < cfg.clients; ++i) first.push_back(out.records.at({kLocalTag, i, 0, 0}));
  out.first_task_acc = mean(first);
  return out;
}

Summary summarize(const ExperimentConfig& cfg, const std::vector<SeedResult>& seeds) {
  Summary s;
  s.method = cfg.method;
  s.seeds = seeds.size();
  s.global_acc_per_task.assign(cfg.tasks, 0.0);
  std::vector<double> first, krt, krs;
  for (const auto& sr : seeds) {
    for (std::size_t r = 0; r < sr.rounds.size(); ++r) s.global_acc_per_task[r] += mean(sr.rounds[r].global_acc);
    first.push_back(sr.first_task_acc);
    std::vector<double> t, sp;
    for (const auto& log : sr.rounds) {
      if (log.round >= 1) t.push_back(log.kr_t);
      sp.push_back(log.kr_s);
    }
    krt.push_back(t.empty() ? 1.0 : defined_mean(t));
    krs.push_back(defined_mean(sp));
  }
  for (double& v : s.global_acc_per_task) v /= static_cast<double>(seeds.size());
  s.first_task_acc = mean(first);
  s.mean_global_acc = mean(s.global_acc_per_task);
  s.final_global_acc = s.global_acc_per_task.empty() ? 0.0 : s.global_acc_per_task.back();
  s.kr_t = defined_mean(krt);
  s.kr_s = defined_mean(krs);
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed for " + path.string());
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << v;
  return ss.str();
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : registry()) out.push_back(f.name);
  return out;
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object of key/value pairs");
  ExperimentConfig cfg;
  if (j.contains("preset")) {
    cfg = preset(convert<std::string>(j.at("preset"), "preset"));
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    find_field(key).set(cfg, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ordered_json out;
  for (const auto& f : registry()) out[f.name] = f.get(cfg);
  return out.dump(2);
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field& f = find_field(key);
  json j;
  try {
    j = json::parse(value);
  } catch (const json::exception&) {
    j = value;
  }
  // Strings keep their literal form even when they happen to parse as JSON.
  if (f.get(cfg).is_string() && !j.is_string()) j = value;
  f.set(cfg, j);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_override(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

void validate(const ExperimentConfig& cfg) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  try {
    method_from_string(cfg.method);
  } catch (const std::exception&) {
    throw ConfigError("unknown method '" + cfg.method + "'");
  }
  check(!cfg.seeds.empty(), "seeds must not be empty");
  check(cfg.inference == "nearest-prototype" || cfg.inference == "local-head",
        "inference must be nearest-prototype or local-head");
  check(cfg.dataset == "synthetic" || cfg.dataset == "embedding-csv", "dataset must be synthetic or embedding-csv");
  if (cfg.dataset == "embedding-csv") {
    check(!cfg.dataset_path.empty(), "dataset_path is required for embedding-csv");
    check(std::filesystem::exists(cfg.dataset_path), "dataset_path does not exist: " + cfg.dataset_path);
  } else {
    check(cfg.num_classes > 0 && cfg.raw_dim > 0 && cfg.per_class > 0, "synthetic dataset sizes must be positive");
    check(cfg.spread >= 0.0, "spread must be non-negative");
    check(cfg.embed_dim > 0 && cfg.hidden_dim > 0 && cfg.num_base_tokens > 0, "encoder sizes must be positive");
  }

  check(cfg.clients > 0 && cfg.tasks > 0 && cfg.classes_per_task > 0, "clients, tasks, classes_per_task must be positive");
  check(cfg.dirichlet_alpha > 0.0, "dirichlet_alpha must be positive");
  const std::size_t held = cfg.private_per_client + cfg.public_total;
  check(held == cfg.tasks * cfg.classes_per_task,
        "private_per_client + public_total (" + std::to_string(held) + ") must equal tasks x classes_per_task (" +
            std::to_string(cfg.tasks * cfg.classes_per_task) + ")");
  if (cfg.dataset == "synthetic") {
    const std::size_t needed = cfg.private_per_client * cfg.clients + cfg.public_total;
    check(needed <= cfg.num_classes, "partition needs " + std::to_string(needed) + " classes, num_classes is " +
                                         std::to_string(cfg.num_classes));
    const std::size_t min_train = cfg.public_total > 0 ? cfg.clients : 1;
    check(cfg.per_class >= cfg.test_per_class + cfg.reserve_per_class + min_train,
          "per_class too small for test_per_class + reserve_per_class + training samples");
  }
  check(cfg.test_per_class > 0, "test_per_class must be positive");
  check(cfg.surrogate_k <= cfg.reserve_per_class, "surrogate_k cannot exceed reserve_per_class");

  check(cfg.M > 0 && cfg.tokens_per_ie > 0, "M and tokens_per_ie must be positive");
  check(cfg.top_n >= 1 && cfg.top_n <= cfg.M, "top_n must satisfy 1 <= top_n <= M");
  check(cfg.lambda1 >= 0.0 && cfg.lambda2 >= 0.0 && cfg.lambda3 >= 0.0, "lambda weights must be non-negative");
  check(cfg.tau > 0.0, "tau must be positive");
  check(cfg.mix_alpha >= 0.0 && cfg.mix_alpha <= 1.0, "mix_alpha must lie in [0, 1]");
  check(cfg.m > 0, "m must be positive");
  check(cfg.mix_rule == "convex" || cfg.mix_rule == "random-mask", "mix_rule must be convex or random-mask");
  check(cfg.stage1_lr > 0.0 && cfg.stage2_lr > 0.0 && cfg.fusion_lr > 0.0, "learning rates must be positive");
  check(cfg.stage1_batch > 0 && cfg.stage2_batch > 0 && cfg.fusion_batch > 0, "batch sizes must be positive");
  check(cfg.fusion_key_weight >= 0.0, "fusion_key_weight must be non-negative");
  check(cfg.threads > 0, "threads must be positive");
  check(cfg.rounds_per_task > 0, "rounds_per_task must be positive");
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "desk") return cfg;
  if (name == "cifar") {
    cfg.num_classes = 100;
    cfg.per_class = 100;
    cfg.private_per_client = 15;
    cfg.public_total = 25;
    cfg.classes_per_task = 8;
    cfg.reserve_per_class = 20;
    cfg.surrogate_k = 20;
    cfg.M = 10;
    cfg.tokens_per_ie = 10;
    cfg.m = 100;
    return cfg;
  }
  if (name == "imagenet-r") {
    cfg.num_classes = 200;
    cfg.per_class = 60;
    cfg.private_per_client = 40;
    cfg.public_total = 0;
    cfg.classes_per_task = 8;
    cfg.reserve_per_class = 5;
    cfg.surrogate_k = 5;
    cfg.M = 10;
    cfg.tokens_per_ie = 10;
    cfg.m = 100;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"desk", "cifar", "imagenet-r"}; }

SweepPlan sweep_preset(const std::string& name) {
  if (name == "anchor-count") return {preset("cifar"), "m", {"100", "500", "1000"}};
  throw ConfigError("unknown sweep preset '" + name + "'");
}

PartitionParams partition_params(const ExperimentConfig& cfg, std::uint64_t seed) {
  PartitionParams p;
  p.clients = cfg.clients;
  p.tasks_per_client = cfg.tasks;
  p.private_per_client = cfg.private_per_client;
  p.public_total = cfg.public_total;
  p.classes_per_task = cfg.classes_per_task;
  p.dirichlet_alpha = cfg.dirichlet_alpha;
  p.test_per_class = cfg.test_per_class;
  p.reserve_per_class = cfg.reserve_per_class;
  p.seed = derive_seed(seed, 0x9A27);
  return p;
}

RoundConfig round_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  RoundConfig rc;
  rc.client.method = method_from_string(cfg.method);
  rc.client.stage1 = {cfg.lambda1, cfg.top_n, cfg.stage1_lr, cfg.stage1_epochs, cfg.stage1_batch};
  rc.client.stage2 = {cfg.lambda2,   cfg.lambda3,   cfg.tau,          cfg.mix_alpha,
                      cfg.stage2_lr, cfg.stage2_epochs, cfg.stage2_batch};
  rc.client.base_size = cfg.M;
  rc.client.tokens_per_ie = cfg.tokens_per_ie;
  rc.client.anchor_pool = cfg.m;
  rc.client.mix_rule = cfg.mix_rule == "random-mask" ? MixRule::kRandomMask : MixRule::kConvex;
  rc.client.lock_fixed_anchors = cfg.lock_fixed_anchors;
  rc.client.inference = cfg.inference == "local-head" ? InferenceRule::kLocalHead : InferenceRule::kNearestPrototype;
  rc.server.threshold = cfg.Thr;
  rc.server.fusion_steps = cfg.fusion_steps;
  rc.server.fusion_batch = cfg.fusion_batch;
  rc.server.fusion_lr = cfg.fusion_lr;
  rc.server.fusion_key_weight = cfg.fusion_key_weight;
  rc.server.top_n = cfg.top_n;
  rc.server.seed = derive_seed(seed, 0x5E7E);
  rc.threads = cfg.threads;
  return rc;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const FeatureSink& features,
                                const RoundObserver& observer) {
  validate(cfg);
  std::optional<Dataset> csv;
  if (cfg.dataset == "embedding-csv") {
    csv = load_embedding_csv(cfg.dataset_path);
    if (csv->empty()) throw ConfigError("embedding file has no rows: " + cfg.dataset_path);
  }
  ExperimentResult result;
  result.config = cfg;
  for (std::uint64_t seed : cfg.seeds) {
    result.seeds.push_back(run_seed(cfg, seed, csv ? &*csv : nullptr, features, observer));
  }
  result.summary = summarize(cfg, result.seeds);
  return result;
}

std::string summary_json(const ExperimentResult& result) {
  const Summary& s = result.summary;
  ordered_json out;
  out["method"] = s.method;
  out["seeds"] = result.config.seeds;
  out["first_task_acc"] = s.first_task_acc;
  out["global_acc_per_task"] = s.global_acc_per_task;
  out["mean_global_acc"] = s.mean_global_acc;
  out["final_global_acc"] = s.final_global_acc;
  out["kr_t"] = number_or_null(s.kr_t);
  out["kr_s"] = number_or_null(s.kr_s);
  ordered_json per_seed = ordered_json::array();
  for (const auto& sr : result.seeds) {
    ordered_json row;
    row["seed"] = sr.seed;
    row["first_task_acc"] = sr.first_task_acc;
    std::vector<double> krt, krs, acc;
    for (const auto& log : sr.rounds) {
      krt.push_back(log.kr_t);
      krs.push_back(log.kr_s);
      acc.push_back(mean(log.global_acc));
    }
    row["global_acc_per_task"] = acc;
    ordered_json jt = ordered_json::array(), js = ordered_json::array();
    for (double v : krt) jt.push_back(number_or_null(v));
    for (double v : krs) js.push_back(number_or_null(v));
    row["kr_t"] = std::move(jt);
    row["kr_s"] = std::move(js);
    per_seed.push_back(std::move(row));
  }
  out["per_seed"] = std::move(per_seed);
  return out.dump(2) + "\n";
}

std::string summary_csv_header(std::size_t tasks) {
  std::string h = "method,seeds,first_task_acc,mean_global_acc,final_global_acc,kr_t,kr_s";
  for (std::size_t t = 1; t <= tasks; ++t) h += ",acc_task_" + std::to_string(t);
  return h;
}

std::string summary_csv_row(const Summary& s) {
  std::string row = s.method + "," + std::to_string(s.seeds) + "," + fmt(s.first_task_acc) + "," +
                    fmt(s.mean_global_acc) + "," + fmt(s.final_global_acc) + "," + fmt(s.kr_t) + "," + fmt(s.kr_s);
  for (double a : s.global_acc_per_task) row += "," + fmt(a);
  return row;
}

void write_result(const ExperimentResult& result, const std::filesystem::path& dir) {
  write_text(dir / "config.json", config_to_json(result.config) + "\n");
  for (const auto& sr : result.seeds) {
    write_text(dir / ("seed_" + std::to_string(sr.seed)) / "rounds.jsonl", sr.log_jsonl);
  }
  write_text(dir / "summary.json", summary_json(result));
  write_text(dir / "summary.csv",
             summary_csv_header(result.config.tasks) + "\n" + summary_csv_row(result.summary) + "\n");
}

std::vector<ExperimentResult> compare(const ExperimentConfig& cfg, const std::vector<std::string>& methods) {
  if (methods.size() < 2) throw ConfigError("compare needs at least two methods");
  std::vector<ExperimentConfig> configs;
  for (const auto& m : methods) {
    ExperimentConfig c = cfg;
    c.method = m;
    validate(c);
    configs.push_back(std::move(c));
  }
  std::vector<ExperimentResult> out;
  for (const auto& c : configs) out.push_back(run_experiment(c));
  return out;
}

std::string comparison_csv(const std::vector<ExperimentResult>& results) {
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return results[a].summary.final_global_acc > results[b].summary.final_global_acc;
  });
  const std::size_t tasks = results.empty() ? 0 : results.front().config.tasks;
  std::string out = "rank," + summary_csv_header(tasks) + "\n";
  std::size_t rank = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Summary& s = results[order[k]].summary;
    if (k == 0 || s.final_global_acc != results[order[k - 1]].summary.final_global_acc) rank = k + 1;
    out += std::to_string(rank) + "," + summary_csv_row(s) + "\n";
  }
  return out;
}

std::vector<std::string> sweep_parameters() { return {"m", "M", "Thr", "lambda2", "tau", "mix_alpha"}; }

std::vector<ExperimentResult> sweep(const ExperimentConfig& cfg, const std::string& parameter,
                                    const std::vector<std::string>& values) {
  const auto allowed = sweep_parameters();
  if (std::find(allowed.begin(), allowed.end(), parameter) == allowed.end()) {
    throw ConfigError("cannot sweep '" + parameter + "'; choose one of m, M, Thr, lambda2, tau, mix_alpha");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) {
    ExperimentConfig c = cfg;
    apply_override(c, parameter, v);
    validate(c);
    configs.push_back(std::move(c));
  }
  std::vector<ExperimentResult> out;
  for (const auto& c : configs) out.push_back(run_experiment(c));
  return out;
}

std::string sweep_csv(const std::string& parameter, const std::vector<std::string>& values,
                      const std::vector<ExperimentResult>& results) {
  const std::size_t tasks = results.empty() ? 0 : results.front().config.tasks;
  std::string out = "parameter,value," + summary_csv_header(tasks) + "\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    out += parameter + "," + values.at(k) + "," + summary_csv_row(results[k].summary) + "\n";
  }
  return out;
}

std::filesystem::path output_root(const ExperimentConfig& cfg) {
  const char* env = std::getenv("FEDTA_OUT_ROOT");
  if (env != nullptr && *env != '\0') return std::filesystem::path(env) / cfg.output_dir;
  return cfg.output_dir;
}

}  // namespace fedta
