#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dcsim/config.hpp"
#include "dcsim/datasets.hpp"
#include "dcsim/errors.hpp"
#include "dcsim/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

std::vector<double> parse_r_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw dcsim::ConfigError("bad r value '" + item + "'");
    }
  }
  if (out.empty()) throw dcsim::ConfigError("empty r list");
  return out;
}

std::vector<dcsim::Method> parse_method_list(const std::string& s) {
  std::vector<dcsim::Method> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(dcsim::parse_method(item));
  if (out.empty()) throw dcsim::ConfigError("empty method list");
  return out;
}

nlohmann::json plan_json(const dcsim::PartitionPlan& plan, const dcsim::LabeledDataset& d) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(plan.hash()));
  nlohmann::json users = nlohmann::json::array();
  for (const auto& a : plan.assignments) {
    std::size_t c1 = 0;
    for (auto i : a) c1 += d.labels[i] == 1 ? 1 : 0;
    users.push_back({{"indices", a}, {"count_0", a.size() - c1}, {"count_1", c1}});
  }
  nlohmann::json j{{"n_users", plan.n_users}, {"seed", plan.seed}, {"hash", hash}, {"users", users}};
  j["r"] = plan.bias_r ? nlohmann::json(*plan.bias_r) : nlohmann::json(nullptr);
  return j;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcsim: data collaboration and federated averaging experiments"};
  app.require_subcommand(1);

  std::string out, data, config_path, mode = "iid", r_list, method_list = "fedavg,dc,dcpd";
  std::size_t n_per_class = 1000, dims = 64, users = 4;
  double flip = 0.15, density = 0.2, r = 0.0;
  std::uint64_t seed = 0;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic fingerprint dataset");
  gen->add_option("--out", out, "output dataset file")->required();
  gen->add_option("--n-per-class", n_per_class, "rows per label")->required();
  gen->add_option("--dims", dims, "bit width m")->required();
  gen->add_option("--flip", flip, "bit flip probability")->required();
  gen->add_option("--seed", seed, "seed")->required();
  gen->add_option("--density", density, "template bit density");

  auto* part = app.add_subcommand("partition", "write a partition plan as JSON");
  part->add_option("--data", data, "dataset file")->required();
  part->add_option("--mode", mode, "iid or bias")->required()->check(CLI::IsMember({"iid", "bias", "label_bias"}));
  part->add_option("--r", r, "label bias r in [0,1]");
  part->add_option("--users", users, "number of users");
  part->add_option("--seed", seed, "seed")->required();
  part->add_option("--out", out, "output JSON file")->required();

  auto* run = app.add_subcommand("run", "run one experiment config");
  run->add_option("--config", config_path, "config JSON")->required();
  run->add_option("--out", out, "output directory")->required();
  run->add_flag("--quiet", quiet, "no progress log");

  auto* sweep = app.add_subcommand("sweep-r", "sweep label bias r over methods");
  sweep->add_option("--config", config_path, "config JSON")->required();
  sweep->add_option("--r", r_list, "comma-separated r values (default: 0,0.2,...,1)");
  sweep->add_option("--methods", method_list, "comma-separated methods");
  sweep->add_option("--out", out, "output directory")->required();
  sweep->add_flag("--quiet", quiet, "no progress log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const dcsim::LogSink log = quiet ? dcsim::LogSink{} : dcsim::LogSink(log_line);
    if (*gen) {
      const auto d = dcsim::generate_synthetic_fingerprint_dataset(n_per_class, dims, density, flip, seed);
      dcsim::save_dataset(d, out);
    } else if (*part) {
      const auto d = dcsim::load_dataset(data);
      dcsim::PartitionPlan plan;
      if (mode == "iid") {
        plan = dcsim::partition_iid(d, users, seed);
      } else {
        if (users != 4) throw dcsim::ConfigError("label-bias partitioning is defined for 4 users");
        plan = dcsim::partition_label_bias(d, r, seed);
      }
      std::ofstream f(out, std::ios::binary | std::ios::trunc);
      if (!f) throw dcsim::IoError("cannot open " + out + " for writing");
      f << plan_json(plan, d).dump(2) << '\n';
    } else if (*run) {
      const auto config = dcsim::load_config(config_path);
      const auto report = dcsim::run_experiment(config, log);
      dcsim::emit_results(report, out, &config);
      std::printf("%s roc_auc %.4f +- %.4f  pr_auc %.4f +- %.4f\n", std::string(to_string(report.method)).c_str(),
                  report.roc_auc.mean, report.roc_auc.std_error, report.pr_auc.mean, report.pr_auc.std_error);
    } else if (*sweep) {
      const auto config = dcsim::load_config(config_path);
      const auto rs = r_list.empty() ? dcsim::default_r_grid() : parse_r_list(r_list);
      const auto result = dcsim::run_sweep(config, rs, parse_method_list(method_list), log);
      dcsim::emit_results(result, out, &config);
      for (const auto& c : result.cells) {
        std::printf("%-11s r=%.2f roc_auc %.4f +- %.4f  pr_auc %.4f +- %.4f\n",
                    std::string(to_string(c.method)).c_str(), *c.r, c.roc_auc.mean, c.roc_auc.std_error,
                    c.pr_auc.mean, c.pr_auc.std_error);
      }
    }
  } catch (const dcsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const dcsim::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const dcsim::UndefinedMetric& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
