// fedta: run, compare and sweep federated continual-learning experiments.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedta/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "JSON config file (flat key/value)");
  cmd->add_option("-p,--preset", opts.preset_name, "start from a named preset (desk, cifar, imagenet-r)");
  cmd->add_option("-s,--set", opts.overrides, "override a config field, key=value (repeatable)");
  cmd->add_option("-o,--out", opts.out_dir, "output directory (overrides output_dir)");
}

fedta::ExperimentConfig resolve(const CommonOptions& opts) {
  fedta::ExperimentConfig cfg = opts.preset_name.empty() ? fedta::ExperimentConfig{} : fedta::preset(opts.preset_name);
  if (!opts.config_path.empty()) {
    if (!opts.preset_name.empty()) throw fedta::ConfigError("use either --config or --preset, not both");
    cfg = fedta::load_config(opts.config_path);
  }
  for (const auto& o : opts.overrides) fedta::apply_override(cfg, o);
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  fedta::validate(cfg);
  return cfg;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json err;
  err["error"] = {{"kind", kind}, {"message", message}};
  std::cerr << err.dump() << '\n';
  return code;
}

void print_summary(const fedta::Summary& s, double seconds) {
  std::cout << s.method << ": first-task acc " << s.first_task_acc << ", final global acc "
            << s.final_global_acc << ", KR_t " << s.kr_t << ", KR_s " << s.kr_s << " (" << seconds << " s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated continual learning with input enhancement and tail anchors"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "run one method over all configured seeds");
  add_common(run, run_opts);

  CommonOptions cmp_opts;
  std::string methods;
  auto* cmp = app.add_subcommand("compare", "run several methods on identical partitions and seeds");
  add_common(cmp, cmp_opts);
  cmp->add_option("-m,--methods", methods, "comma-separated methods")->required();

  CommonOptions sweep_opts;
  std::string param;
  std::string values;
  std::string plan;
  auto* swp = app.add_subcommand("sweep", "one run per parameter value on shared partitions");
  add_common(swp, sweep_opts);
  swp->add_option("--param", param, "m, M, Thr, lambda2, tau or mix_alpha");
  swp->add_option("--values", values, "comma-separated values");
  swp->add_option("--plan", plan, "named sweep (anchor-count)");

  CommonOptions feat_opts;
  auto* feat = app.add_subcommand("export-features", "run and dump global-model F_TA rows per round");
  add_common(feat, feat_opts);

  CommonOptions val_opts;
  auto* val = app.add_subcommand("validate-config", "check a config and print it fully resolved");
  add_common(val, val_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    if (*val) {
      const auto cfg = resolve(val_opts);
      std::cout << fedta::config_to_json(cfg) << '\n';
      return 0;
    }

    if (*run) {
      const auto cfg = resolve(run_opts);
      const auto result = fedta::run_experiment(cfg);
      const auto dir = fedta::output_root(cfg) / cfg.method;
      fedta::write_result(result, dir);
      print_summary(result.summary, elapsed());
      std::cout << "results in " << dir.string() << '\n';
      return 0;
    }

    if (*cmp) {
      const auto cfg = resolve(cmp_opts);
      const auto list = split_list(methods);
      const auto results = fedta::compare(cfg, list);
      const auto root = fedta::output_root(cfg) / "compare";
      for (std::size_t k = 0; k < results.size(); ++k) {
        fedta::write_result(results[k], root / (std::to_string(k) + "_" + list[k]));
        print_summary(results[k].summary, elapsed());
      }
      const std::string table = fedta::comparison_csv(results);
      write_file(root / "comparison.csv", table);
      std::cout << table;
      return 0;
    }

    if (*swp) {
      auto cfg = resolve(sweep_opts);
      std::vector<std::string> vals = split_list(values);
      if (!plan.empty()) {
        const auto p = fedta::sweep_preset(plan);
        cfg = p.base;
        for (const auto& o : sweep_opts.overrides) fedta::apply_override(cfg, o);
        if (!sweep_opts.out_dir.empty()) cfg.output_dir = sweep_opts.out_dir;
        param = p.parameter;
        if (vals.empty()) vals = p.values;
      }
      if (param.empty()) throw fedta::ConfigError("sweep needs --param or --plan");
      const auto results = fedta::sweep(cfg, param, vals);
      const auto root = fedta::output_root(cfg) / ("sweep_" + param);
      for (std::size_t k = 0; k < results.size(); ++k) {
        fedta::write_result(results[k], root / (param + "=" + vals[k]));
      }
      const std::string table = fedta::sweep_csv(param, vals, results);
      write_file(root / "sweep.csv", table);
      std::cout << table;
      return 0;
    }

    if (*feat) {
      auto cfg = resolve(feat_opts);
      cfg.export_features = true;
      const auto root = fedta::output_root(cfg) / cfg.method / "features";
      std::filesystem::remove_all(root);
      const auto sink = [&](std::uint64_t seed, std::size_t client, const std::vector<fedta::FeatureRow>& rows) {
        const auto dir = root / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(dir);
        fedta::write_feature_csv(dir / ("client_" + std::to_string(client) + ".csv"), rows, true);
      };
      const auto result = fedta::run_experiment(cfg, sink);
      fedta::write_result(result, fedta::output_root(cfg) / cfg.method);
      print_summary(result.summary, elapsed());
      std::cout << "features in " << root.string() << '\n';
      return 0;
    }
  } catch (const fedta::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const fedta::DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
