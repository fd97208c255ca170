#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dcsim/datasets.hpp"
#include "dcsim/fedavg.hpp"
#include "dcsim/metrics.hpp"

using namespace dcsim;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  DenseMatrix a(r, c);
  for (double& v : a.values()) v = rng.uniform(-1.0, 1.0);
  return a;
}

MlpModel filled(double value) {
  auto m = init_mlp({2, 2, 1}, 1);
  for (auto& w : m.weights) std::fill(w.values().begin(), w.values().end(), value);
  for (auto& b : m.biases) std::fill(b.begin(), b.end(), value);
  return m;
}

FedConfig sgd_full_batch(std::size_t batch) {
  FedConfig c;
  c.train_config.optimizer = OptimizerKind::sgd;
  c.train_config.learning_rate = 0.05;
  c.train_config.minibatch_size = batch;
  c.train_config.dropout_rates = {0.0, 0.0};
  return c;
}

}  // namespace

TEST(Aggregate, Examples) {
  const auto a = filled(0.0), b = filled(4.0);
  std::vector<MlpModel> models{a, b};
  std::vector<std::size_t> sizes{1, 3};
  const auto out = aggregate(models, sizes);
  for (const auto& w : out.weights)
    for (double v : w.values()) EXPECT_EQ(v, 3.0);

  std::vector<MlpModel> one{b};
  std::vector<std::size_t> one_size{7};
  EXPECT_EQ(aggregate(one, one_size), b);

  auto theta = init_mlp({3, 4, 1}, 2), neg = theta;
  for (auto& w : neg.weights)
    for (double& v : w.values()) v = -v;
  std::vector<MlpModel> sym{theta, neg};
  std::vector<std::size_t> eq{5, 5};
  for (const auto& w : aggregate(sym, eq).weights)
    for (double v : w.values()) EXPECT_EQ(v, 0.0);
}

TEST(Aggregate, EqualModelsReturnedExactly) {
  const auto m = init_mlp({6, 5, 3, 1}, 3);
  std::vector<MlpModel> models(4, m);
  std::vector<std::size_t> sizes{3, 7, 11, 13};
  EXPECT_EQ(aggregate(models, sizes), m);
}

TEST(Aggregate, PermutationInvariantBitwise) {
  std::vector<MlpModel> models;
  std::vector<std::size_t> sizes{17, 5, 9, 30, 2};
  for (std::uint64_t s = 0; s < sizes.size(); ++s) models.push_back(init_mlp({7, 6, 1}, 100 + s));
  const auto ref = aggregate(models, sizes);
  std::vector<std::size_t> perm{0, 1, 2, 3, 4};
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(perm);
    std::vector<MlpModel> pm;
    std::vector<std::size_t> ps;
    for (auto i : perm) {
      pm.push_back(models[i]);
      ps.push_back(sizes[i]);
    }
    EXPECT_EQ(aggregate(pm, ps), ref);
  }
}

TEST(Aggregate, Errors) {
  std::vector<MlpModel> models{init_mlp({2, 2, 1}, 1), init_mlp({2, 3, 1}, 1)};
  std::vector<std::size_t> sizes{1, 1};
  EXPECT_THROW(aggregate(models, sizes), InvalidArgument);
  EXPECT_THROW(aggregate(std::vector<MlpModel>{}, std::vector<std::size_t>{}), InvalidArgument);
  models.pop_back();
  std::vector<std::size_t> zero{0};
  EXPECT_THROW(aggregate(models, zero), InvalidArgument);
}

TEST(ClientUpdate, FullBatchSgdIsOneGradientStep) {
  const auto global = init_mlp({4, 3, 2, 1}, 5);
  const auto x = random_matrix(6, 4, 6);
  const std::vector<int> y{0, 1, 1, 0, 1, 0};
  const auto cfg = sgd_full_batch(6);
  const auto local = client_update(global, x, y, cfg, 9);
  Gradients g;
  loss_and_gradient(global, x, y, &g);
  auto expected = global;
  for_each_parameter(expected, g, [&](std::span<double> p, std::span<const double> gp, std::size_t) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.05 * gp[i];
  });
  EXPECT_EQ(local, expected);
  EXPECT_EQ(client_update(global, x, y, cfg, 9), local);
  EXPECT_THROW(client_update(global, DenseMatrix(0, 4), {}, cfg, 9), InvalidArgument);
}

TEST(FedavgTrain, IdenticalClientsEqualCentralizedStep) {
  const auto x = random_matrix(8, 4, 7);
  const std::vector<int> y{0, 1, 1, 0, 1, 0, 0, 1};
  auto cfg = sgd_full_batch(8);
  cfg.max_rounds = 1;
  cfg.patience = 1;
  std::vector<ClientData> clients(4, ClientData{x, y});
  const auto initial = init_mlp({4, 3, 2, 1}, 8);
  const auto res = fedavg_train(clients, EvalSet::single(x, y), initial, cfg, 1);

  auto central = initial;
  Rng rng(0);
  OptimizerState st;
  run_epochs(central, x, y, cfg.train_config, 1, rng, st);
  EXPECT_EQ(res.last_model, central);
}

TEST(FedavgTrain, NonIidReturnsNoWorseThanInitial) {
  const auto d = generate_synthetic_fingerprint_dataset(40, 16, 0.3, 0.1, 3);
  const auto plan = partition_label_bias(d, 1.0, 4);
  const auto users = apply_partition(d, plan);
  std::vector<ClientData> clients{{users[0].features, users[0].labels}, {users[2].features, users[2].labels}};
  FedConfig cfg;
  cfg.max_rounds = 15;
  cfg.patience = 3;
  cfg.train_config.learning_rate = 0.01;
  cfg.train_config.minibatch_size = 10;
  const auto valid = EvalSet::single(d.features, d.labels);
  const auto initial = init_mlp({16, 8, 4, 1}, 2);
  const auto res = fedavg_train(clients, valid, initial, cfg, 7);
  EXPECT_LE(evaluation_loss(res.model, valid), evaluation_loss(initial, valid));
  double best = res.rounds.front().val_loss;
  std::size_t best_round = 0;
  for (const auto& r : res.rounds)
    if (r.val_loss < best) best = r.val_loss, best_round = r.round;
  EXPECT_EQ(res.best_round, best_round);
  for (const auto& r : res.rounds) {
    if (r.round == 0) continue;
    std::size_t s = 0;
    for (auto v : r.sample_sizes) s += v;
    EXPECT_EQ(s, 40u);
  }
}

TEST(FedavgTrain, IidToyTaskLearns) {
  const auto all = generate_synthetic_fingerprint_dataset(200, 32, 0.2, 0.1, 5);
  const auto split = split_train_valid_test(all, {0.6, 0.2, 0.2}, 6);
  const auto users = apply_partition(split.train, partition_iid(split.train, 4, 7));
  std::vector<ClientData> clients;
  for (const auto& u : users) clients.push_back({u.features, u.labels});
  FedConfig cfg;
  cfg.max_rounds = 40;
  cfg.train_config.learning_rate = 0.003;
  cfg.train_config.minibatch_size = 10;
  const auto res = fedavg_train(clients, EvalSet::single(split.valid.features, split.valid.labels),
                                init_mlp({32, 16, 8, 1}, 8), cfg, 9);
  EXPECT_GT(roc_auc(predict(res.model, split.test.features), split.test.labels), 0.8);
}

TEST(FedavgTrain, ReproducibleAndPartialParticipation) {
  const auto d = generate_synthetic_fingerprint_dataset(30, 12, 0.3, 0.1, 3);
  const auto users = apply_partition(d, partition_iid(d, 4, 1));
  std::vector<ClientData> clients;
  for (const auto& u : users) clients.push_back({u.features, u.labels});
  FedConfig cfg;
  cfg.max_rounds = 5;
  cfg.participating_clients = 2;
  cfg.reset_optimizer_each_round = false;
  cfg.train_config.learning_rate = 0.01;
  const auto valid = EvalSet::single(d.features, d.labels);
  const auto a = fedavg_train(clients, valid, init_mlp({12, 4, 3, 1}, 1), cfg, 3);
  const auto b = fedavg_train(clients, valid, init_mlp({12, 4, 3, 1}, 1), cfg, 3);
  EXPECT_EQ(a.model, b.model);
  for (const auto& r : a.rounds)
    if (r.round > 0) {
      EXPECT_EQ(r.clients.size(), 2u);
    }
  cfg.participating_clients = 5;
  EXPECT_THROW(fedavg_train(clients, valid, init_mlp({12, 4, 3, 1}, 1), cfg, 3), InvalidArgument);
}

TEST(RoundLog, CsvLayout) {
  std::vector<FedRoundLog> rounds{{0, {}, {}, 0.7}, {1, {0, 2}, {5, 6}, 0.5}};
  const auto path = (std::filesystem::temp_directory_path() / "dcsim_rounds.csv").string();
  write_round_log_csv(rounds, 3, path);
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1, "round,val_loss,size_0,size_1,size_2");
  EXPECT_EQ(l2, "0,0.69999999999999996,0,0,0");
  EXPECT_EQ(l3, "1,0.5,5,0,6");
  std::filesystem::remove(path);
}
