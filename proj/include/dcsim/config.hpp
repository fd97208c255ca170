#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dcsim/collaboration.hpp"
#include "dcsim/datasets.hpp"
#include "dcsim/errors.hpp"
#include "dcsim/fedavg.hpp"
#include "dcsim/mlp.hpp"

namespace dcsim {

enum class Method { centralized, fedavg, dc, dcpd };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::centralized: return "centralized";
    case Method::fedavg: return "fedavg";
    case Method::dc: return "dc";
    case Method::dcpd: return "dcpd";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "centralized") return Method::centralized;
  if (s == "fedavg") return Method::fedavg;
  if (s == "dc") return Method::dc;
  if (s == "dcpd") return Method::dcpd;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

inline std::string_view to_string(AnchorStrategy s) {
  switch (s) {
    case AnchorStrategy::uniform01: return "uniform01";
    case AnchorStrategy::binary01: return "binary01";
    case AnchorStrategy::pool_sample: return "pool-sample";
  }
  return "?";
}

inline AnchorStrategy parse_anchor_strategy(std::string_view s) {
  if (s == "uniform01") return AnchorStrategy::uniform01;
  if (s == "binary01") return AnchorStrategy::binary01;
  if (s == "pool-sample") return AnchorStrategy::pool_sample;
  throw ConfigError("unknown anchor strategy '" + std::string(s) + "'");
}

enum class PartitionMode { iid, label_bias };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::iid;
  double r = 0.0;
};

struct SyntheticSource {
  std::size_t n_per_class = 1000;
  std::size_t dims = 64;
  double template_density = 0.2;
  double flip_prob = 0.15;
  std::uint64_t seed = 0;
  // Unlabeled rows drawn from the same templates with independent noise;
  // serves as the public pool for anchors and projection data.
  std::size_t pool_size = 4000;
};

struct Dims {
  std::optional<std::size_t> k;   // DC intermediate dimension
  std::optional<std::size_t> k1;  // DCPd, own-data block
  std::optional<std::size_t> k2;  // DCPd, projection-data block
  std::size_t k_collab = 100;
};

struct ExperimentConfig {
  Method method = Method::dc;
  std::optional<std::string> dataset_path;
  std::optional<SyntheticSource> synthetic;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::size_t n_users = 4;
  PartitionSpec partition;
  AnchorSpec anchor;  // seed is derived per repetition
  std::optional<std::string> projection_pool_path;
  std::size_t b = 20000;
  Dims dims;
  std::vector<std::size_t> hidden_layers{2000, 1000};
  TrainConfig train_config;
  FedConfig fed_config;
  std::size_t repetitions = 5;
  std::uint64_t base_seed = 0;
  std::optional<std::size_t> test_transform_user;  // nullopt = average over users
  IntermediateOptions intermediate;
  std::size_t threads = 1;

  // Throws ConfigError on the first problem found.
  void validate() const {
    if (dataset_path.has_value() == synthetic.has_value()) {
      throw ConfigError("exactly one of dataset_path and synthetic must be given");
    }
    if (n_users < 1 || repetitions < 1 || threads < 1) throw ConfigError("counts must be positive");
    if (partition.mode == PartitionMode::label_bias) {
      if (n_users != 4) throw ConfigError("label_bias partitioning requires n_users = 4");
      if (!(partition.r >= 0.0 && partition.r <= 1.0)) throw ConfigError("partition r must be in [0,1]");
    }
    if (method == Method::fedavg && n_users < 2) throw ConfigError("fedavg needs at least 2 users");
    if (hidden_layers.empty()) throw ConfigError("hidden_layers must not be empty");
    if (method == Method::dc && !dims.k) throw ConfigError("method dc requires dims.k");
    if (method == Method::dcpd && (!dims.k1 || !dims.k2)) throw ConfigError("method dcpd requires dims.k1 and dims.k2");
    if ((method == Method::dc || method == Method::dcpd) && anchor.count < 1) {
      throw ConfigError("anchor.count must be positive");
    }
    if (anchor.strategy == AnchorStrategy::pool_sample && !anchor.pool_path && !synthetic) {
      throw ConfigError("pool-sample anchors need anchor.pool_path");
    }
    if (anchor.strategy != AnchorStrategy::pool_sample && anchor.pool_path) {
      throw ConfigError("anchor.pool_path is only valid with strategy pool-sample");
    }
    if (method == Method::dcpd && !projection_pool_path && !synthetic) {
      throw ConfigError("method dcpd requires projection_pool_path");
    }
    if (test_transform_user && *test_transform_user >= n_users) {
      throw ConfigError("test_transform_user out of range");
    }
    try {
      train_config.validate();
      fed_config.validate(n_users);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping (snake_case, mirrors the struct fields).

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  const std::set<std::string_view> allowed(known);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + std::string(where));
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
  }
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v);
  out = v;
}

inline TrainConfig parse_train_config(const json& j) {
  reject_unknown(j, {"minibatch_size", "learning_rate", "max_epochs", "patience", "dropout_rates", "seed",
                     "optimizer", "beta1", "beta2", "epsilon"},
                 "train_config");
  TrainConfig c;
  read(j, "minibatch_size", c.minibatch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "max_epochs", c.max_epochs);
  read(j, "patience", c.patience);
  read(j, "dropout_rates", c.dropout_rates);
  read(j, "seed", c.seed);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
  std::string opt = "adam";
  read(j, "optimizer", opt);
  if (opt == "adam") c.optimizer = OptimizerKind::adam;
  else if (opt == "sgd") c.optimizer = OptimizerKind::sgd;
  else throw ConfigError("unknown optimizer '" + opt + "'");
  return c;
}

inline json train_config_json(const TrainConfig& c) {
  return json{{"minibatch_size", c.minibatch_size}, {"learning_rate", c.learning_rate},
              {"max_epochs", c.max_epochs},         {"patience", c.patience},
              {"dropout_rates", c.dropout_rates},   {"seed", c.seed},
              {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"beta1", c.beta1},                   {"beta2", c.beta2},
              {"epsilon", c.epsilon}};
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read;
  using detail::read_opt;
  detail::reject_unknown(j, {"method", "dataset_path", "synthetic", "split", "n_users", "partition", "anchor",
                             "projection_pool_path", "b", "dims", "hidden_layers", "train_config", "fed_config",
                             "repetitions", "base_seed", "test_transform_user", "centering",
                             "dcpd_first_projection", "threads"},
                         "config");
  ExperimentConfig c;
  std::string s;
  if (j.contains("method")) {
    read(j, "method", s);
    c.method = parse_method(s);
  }
  read_opt(j, "dataset_path", c.dataset_path);
  if (j.contains("synthetic")) {
    const auto& sj = j.at("synthetic");
    detail::reject_unknown(sj, {"n_per_class", "dims", "template_density", "flip_prob", "seed", "pool_size"},
                           "synthetic");
    SyntheticSource src;
    read(sj, "n_per_class", src.n_per_class);
    read(sj, "dims", src.dims);
    read(sj, "template_density", src.template_density);
    read(sj, "flip_prob", src.flip_prob);
    read(sj, "seed", src.seed);
    read(sj, "pool_size", src.pool_size);
    c.synthetic = src;
  }
  read(j, "split", c.split);
  read(j, "n_users", c.n_users);
  if (j.contains("partition")) {
    const auto& pj = j.at("partition");
    detail::reject_unknown(pj, {"mode", "r"}, "partition");
    std::string mode = "iid";
    read(pj, "mode", mode);
    if (mode == "iid") c.partition.mode = PartitionMode::iid;
    else if (mode == "label_bias" || mode == "bias") c.partition.mode = PartitionMode::label_bias;
    else throw ConfigError("unknown partition mode '" + mode + "'");
    read(pj, "r", c.partition.r);
  }
  if (j.contains("anchor")) {
    const auto& aj = j.at("anchor");
    detail::reject_unknown(aj, {"strategy", "count", "pool_path", "density"}, "anchor");
    if (aj.contains("strategy")) {
      read(aj, "strategy", s);
      c.anchor.strategy = parse_anchor_strategy(s);
    }
    read(aj, "count", c.anchor.count);
    read_opt(aj, "pool_path", c.anchor.pool_path);
    read(aj, "density", c.anchor.binary_density);
  }
  read_opt(j, "projection_pool_path", c.projection_pool_path);
  read(j, "b", c.b);
  if (j.contains("dims")) {
    const auto& dj = j.at("dims");
    detail::reject_unknown(dj, {"k", "k1", "k2", "k_collab"}, "dims");
    read_opt(dj, "k", c.dims.k);
    read_opt(dj, "k1", c.dims.k1);
    read_opt(dj, "k2", c.dims.k2);
    read(dj, "k_collab", c.dims.k_collab);
  }
  read(j, "hidden_layers", c.hidden_layers);
  if (j.contains("train_config")) c.train_config = detail::parse_train_config(j.at("train_config"));
  if (j.contains("fed_config")) {
    const auto& fj = j.at("fed_config");
    detail::reject_unknown(fj, {"epochs_per_round", "max_rounds", "patience", "participating_clients",
                                "reset_optimizer_each_round"},
                           "fed_config");
    read(fj, "epochs_per_round", c.fed_config.epochs_per_round);
    read(fj, "max_rounds", c.fed_config.max_rounds);
    read(fj, "patience", c.fed_config.patience);
    if (fj.contains("participating_clients") && !fj.at("participating_clients").is_string()) {
      read_opt(fj, "participating_clients", c.fed_config.participating_clients);
    } else if (fj.contains("participating_clients") && fj.at("participating_clients") != "all") {
      throw ConfigError("participating_clients must be a count or \"all\"");
    }
    read(fj, "reset_optimizer_each_round", c.fed_config.reset_optimizer_each_round);
  }
  c.fed_config.train_config = c.train_config;
  read(j, "repetitions", c.repetitions);
  read(j, "base_seed", c.base_seed);
  if (j.contains("test_transform_user")) {
    const auto& t = j.at("test_transform_user");
    if (t.is_string()) {
      if (t != "average") throw ConfigError("test_transform_user must be an index or \"average\"");
    } else {
      read_opt(j, "test_transform_user", c.test_transform_user);
    }
  }
  if (j.contains("centering")) {
    read(j, "centering", s);
    if (s == "anchor_reference") c.intermediate.centering = CenteringMode::anchor_reference;
    else if (s == "own_mean") c.intermediate.centering = CenteringMode::own_mean;
    else throw ConfigError("unknown centering '" + s + "'");
  }
  if (j.contains("dcpd_first_projection")) {
    read(j, "dcpd_first_projection", s);
    if (s == "user_data") c.intermediate.dcpd_first_projection = FirstProjectionSource::user_data;
    else if (s == "anchor_data") c.intermediate.dcpd_first_projection = FirstProjectionSource::anchor_data;
    else throw ConfigError("unknown dcpd_first_projection '" + s + "'");
  }
  read(j, "threads", c.threads);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json j;
  j["method"] = std::string(to_string(c.method));
  if (c.dataset_path) j["dataset_path"] = *c.dataset_path;
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"n_per_class", s.n_per_class}, {"dims", s.dims},
                      {"template_density", s.template_density}, {"flip_prob", s.flip_prob},
                      {"seed", s.seed}, {"pool_size", s.pool_size}};
  }
  j["split"] = c.split;
  j["n_users"] = c.n_users;
  j["partition"] = {{"mode", c.partition.mode == PartitionMode::iid ? "iid" : "label_bias"},
                    {"r", c.partition.r}};
  j["anchor"] = {{"strategy", std::string(to_string(c.anchor.strategy))},
                 {"count", c.anchor.count},
                 {"density", c.anchor.binary_density}};
  if (c.anchor.pool_path) j["anchor"]["pool_path"] = *c.anchor.pool_path;
  if (c.projection_pool_path) j["projection_pool_path"] = *c.projection_pool_path;
  j["b"] = c.b;
  json dims = {{"k_collab", c.dims.k_collab}};
  if (c.dims.k) dims["k"] = *c.dims.k;
  if (c.dims.k1) dims["k1"] = *c.dims.k1;
  if (c.dims.k2) dims["k2"] = *c.dims.k2;
  j["dims"] = dims;
  j["hidden_layers"] = c.hidden_layers;
  j["train_config"] = detail::train_config_json(c.train_config);
  j["fed_config"] = {{"epochs_per_round", c.fed_config.epochs_per_round},
                     {"max_rounds", c.fed_config.max_rounds},
                     {"patience", c.fed_config.patience},
                     {"reset_optimizer_each_round", c.fed_config.reset_optimizer_each_round}};
  if (c.fed_config.participating_clients) {
    j["fed_config"]["participating_clients"] = *c.fed_config.participating_clients;
  } else {
    j["fed_config"]["participating_clients"] = "all";
  }
  j["repetitions"] = c.repetitions;
  j["base_seed"] = c.base_seed;
  if (c.test_transform_user) j["test_transform_user"] = *c.test_transform_user;
  else j["test_transform_user"] = "average";
  j["centering"] = c.intermediate.centering == CenteringMode::anchor_reference ? "anchor_reference" : "own_mean";
  j["dcpd_first_projection"] =
      c.intermediate.dcpd_first_projection == FirstProjectionSource::user_data ? "user_data" : "anchor_data";
  j["threads"] = c.threads;
  return j;
}

}  // namespace dcsim
