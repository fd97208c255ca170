#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcsim/errors.hpp"
#include "dcsim/linalg.hpp"
#include "dcsim/mlp.hpp"
#include "dcsim/random.hpp"

namespace dcsim {

struct FedConfig {
  std::size_t epochs_per_round = 1;
  std::size_t max_rounds = 300;
  std::size_t patience = 10;
  std::optional<std::size_t> participating_clients;  // nullopt = all
  TrainConfig train_config;
  // Adam moments are local to a client and never sent to the server. When
  // false, each client keeps its moments across rounds.
  bool reset_optimizer_each_round = true;

  void validate(std::size_t n_clients) const {
    if (epochs_per_round < 1 || max_rounds < 1 || patience < 1) {
      throw InvalidArgument("FedConfig: counts must be positive");
    }
    if (participating_clients && (*participating_clients < 1 || *participating_clients > n_clients)) {
      throw InvalidArgument("FedConfig: participating_clients must be in [1, n]");
    }
  }
};

struct ClientData {
  DenseMatrix x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
};

struct FedRoundLog {
  std::size_t round = 0;                 // 0 = initial model
  std::vector<std::size_t> clients;      // participating client indices
  std::vector<std::size_t> sample_sizes; // s_k of those clients
  double val_loss = 0.0;
};

// E local epochs starting from the global parameters. No local early stopping.
inline MlpModel client_update(const MlpModel& global, const DenseMatrix& x, std::span<const int> y,
                              const FedConfig& config, std::uint64_t seed,
                              OptimizerState* persistent_state = nullptr) {
  if (x.rows() == 0 || y.empty()) throw InvalidArgument("client_update: empty local data");
  if (x.rows() != y.size()) throw InvalidArgument("client_update: label count mismatch");
  MlpModel local = global;
  set_dropout(local, config.train_config);
  Rng rng(seed);
  OptimizerState fresh;
  OptimizerState& state = persistent_state != nullptr ? *persistent_state : fresh;
  run_epochs(local, x, y, config.train_config, config.epochs_per_round, rng, state);
  return local;
}

namespace detail {

inline bool same_architecture(const MlpModel& a, const MlpModel& b) {
  return a.layer_dims == b.layer_dims && a.weights.size() == b.weights.size();
}

// Weighted mean of one scalar across clients. Contributions are put in a
// canonical (value, weight) order and accumulated as offsets from the
// smallest value, so the result does not depend on client order and equal
// inputs come back unchanged.
inline double weighted_mean(std::vector<std::pair<double, double>>& vw) {
  std::sort(vw.begin(), vw.end());
  const double base = vw.front().first;
  double acc = 0.0;
  for (const auto& [v, w] : vw) acc += w * (v - base);
  return base + acc;
}

}  // namespace detail

// theta = sum_k (s_k / s) theta_k
inline MlpModel aggregate(std::span<const MlpModel> models, std::span<const std::size_t> sample_sizes) {
  if (models.empty()) throw InvalidArgument("aggregate: no models");
  if (models.size() != sample_sizes.size()) throw InvalidArgument("aggregate: size list length mismatch");
  std::size_t total = 0;
  for (std::size_t s : sample_sizes) {
    if (s == 0) throw InvalidArgument("aggregate: sample sizes must be positive");
    total += s;
  }
  for (const auto& m : models) {
    if (!detail::same_architecture(m, models.front())) throw InvalidArgument("aggregate: architecture mismatch");
  }
  std::vector<double> weight(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    weight[k] = static_cast<double>(sample_sizes[k]) / static_cast<double>(total);
  }

  MlpModel out = models.front();
  std::vector<std::pair<double, double>> vw(models.size());
  for (std::size_t l = 0; l < out.weights.size(); ++l) {
    auto dst = out.weights[l].values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      for (std::size_t k = 0; k < models.size(); ++k) vw[k] = {models[k].weights[l].values()[i], weight[k]};
      dst[i] = detail::weighted_mean(vw);
    }
    auto& b = out.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i) {
      for (std::size_t k = 0; k < models.size(); ++k) vw[k] = {models[k].biases[l][i], weight[k]};
      b[i] = detail::weighted_mean(vw);
    }
  }
  return out;
}

struct FedResult {
  MlpModel model;       // best-validation round
  MlpModel last_model;  // after the final round
  std::size_t best_round = 0;
  std::vector<FedRoundLog> rounds;
};

inline FedResult fedavg_train(std::span<const ClientData> clients, const EvalSet& valid,
                              const MlpModel& initial, const FedConfig& config, std::uint64_t seed) {
  if (clients.empty()) throw InvalidArgument("fedavg_train: no clients");
  for (const auto& c : clients)
    if (c.size() == 0) throw InvalidArgument("fedavg_train: empty client");
  if (valid.labels.empty()) throw InvalidArgument("fedavg_train: empty validation set");
  config.validate(clients.size());
  config.train_config.validate();

  const std::size_t n = clients.size();
  const std::size_t d = config.participating_clients.value_or(n);
  std::vector<OptimizerState> persistent(n);

  MlpModel global = initial;
  set_dropout(global, config.train_config);
  FedResult out{global, global, 0, {}};
  double best = evaluation_loss(global, valid);
  out.rounds.push_back({0, {}, {}, best});
  Rng selector(derive_seed(seed, 0x5e1ec7));
  std::size_t since_best = 0;

  for (std::size_t round = 1; round <= config.max_rounds; ++round) {
    std::vector<std::size_t> chosen;
    if (d == n) {
      chosen.resize(n);
      std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    } else {
      chosen = selector.sample_without_replacement(n, d);
      std::sort(chosen.begin(), chosen.end());
    }
    std::vector<MlpModel> locals;
    std::vector<std::size_t> sizes;
    for (std::size_t k : chosen) {
      OptimizerState* state = config.reset_optimizer_each_round ? nullptr : &persistent[k];
      locals.push_back(client_update(global, clients[k].x, clients[k].y, config,
                                     derive_seed(seed, round, k), state));
      sizes.push_back(clients[k].size());
    }
    global = aggregate(locals, sizes);
    const double vl = evaluation_loss(global, valid);
    if (!std::isfinite(vl)) throw TrainingDiverged("fedavg: non-finite validation loss");
    out.rounds.push_back({round, chosen, sizes, vl});
    if (vl < best) {
      best = vl;
      out.model = global;
      out.best_round = round;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  out.last_model = global;
  return out;
}

// round,val_loss,size_0,...,size_{n-1}; non-participating clients get 0.
inline void write_round_log_csv(std::span<const FedRoundLog> rounds, std::size_t n_clients,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "round,val_loss";
  for (std::size_t k = 0; k < n_clients; ++k) out << ",size_" << k;
  out << '\n';
  for (const auto& r : rounds) {
    std::vector<std::size_t> sizes(n_clients, 0);
    for (std::size_t i = 0; i < r.clients.size(); ++i) sizes[r.clients[i]] = r.sample_sizes[i];
    out << r.round << ',' << detail::fmt17(r.val_loss);
    for (auto s : sizes) out << ',' << s;
    out << '\n';
  }
}

}  // namespace dcsim
