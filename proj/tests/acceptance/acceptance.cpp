// Acceptance checks P1-P11. One PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails.
//
//   acceptance [--scratch DIR] [--only P7,P11]

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcsim/harness.hpp"

using namespace dcsim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix a(r, c);
  for (double& v : a.values()) v = rng.uniform(-1.0, 1.0);
  return a;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// P1

double brute_roc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

// Average precision by sweeping every distinct score as a threshold.
double brute_pr(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double pos = 0;
  for (int l : y) pos += l;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        n += 1;
        tp += y[i];
      }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / n);
    prev_recall = recall;
  }
  return ap;
}

Outcome p1() {
  Rng rng(101);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = t % 2 == 0;  // half the instances are tie-heavy
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.below(8)) / 8.0 : rng.uniform();
      y[i] = rng.bernoulli(0.3) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(roc_auc(s, y) - brute_roc(s, y)));
    worst = std::max(worst, std::abs(pr_auc(s, y) - brute_pr(s, y)));
  }
  return {worst <= 1e-12, fmt("max abs error %.2e over 200 instances", worst)};
}

// ---------------------------------------------------------------------------
// P2

Eigen::MatrixXd to_eigen(const DenseMatrix& a) {
  Eigen::MatrixXd e(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) e(i, j) = a(i, j);
  return e;
}

Outcome p2() {
  Rng rng(202);
  double worst_sv = 0, worst_res = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t r = 1 + rng.below(50), c = 1 + rng.below(50);
    const auto a = random_matrix(r, c, rng);
    const std::size_t k = std::min(r, c);
    const auto svd = truncated_svd(a, k);
    const Eigen::VectorXd ref = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(a)).singularValues();
    for (std::size_t i = 0; i < k; ++i) {
      worst_sv = std::max(worst_sv, std::abs(svd.singular_values[i] - ref(static_cast<Eigen::Index>(i))) / ref(0));
    }
    const auto b = random_matrix(r, 1 + rng.below(4), rng);
    const auto x = solve_least_squares(a, b);
    const auto normal = matmul_tn(a, subtract(matmul(a, x), b));
    worst_res = std::max(worst_res, frobenius_norm(normal));
  }
  return {worst_sv <= 1e-8 && worst_res <= 1e-9,
          fmt("max sv rel error %.2e, max |A^T(AX-B)| %.2e", worst_sv, worst_res)};
}

// ---------------------------------------------------------------------------
// P3

Outcome p3() {
  auto m = init_mlp({16, 8, 4, 1}, 303);
  for (auto& b : m.biases)
    for (double& v : b) v = 0.05;
  Rng rng(304);
  const auto x = random_matrix(6, 16, rng);
  const std::vector<int> y{1, 0, 0, 1, 1, 0};
  Gradients g;
  loss_and_gradient(m, x, y, &g);
  const Gradients analytic = g;
  const double eps = 1e-6;
  double worst = 0;
  std::size_t count = 0;
  for_each_parameter(m, analytic, [&](std::span<double> p, std::span<const double> gp, std::size_t) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double old = p[i];
      p[i] = old + eps;
      const double up = loss_and_gradient(m, x, y, nullptr);
      p[i] = old - eps;
      const double down = loss_and_gradient(m, x, y, nullptr);
      p[i] = old;
      const double fd = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(fd - gp[i]) / std::max({std::abs(fd), std::abs(gp[i]), 1e-8}));
      ++count;
    }
  });
  return {worst <= 1e-4, fmt("max relative error %.2e over %zu parameters", worst, count)};
}

// ---------------------------------------------------------------------------
// P4

Outcome p4() {
  // Full-rank bundles whose anchor intermediates span one common subspace:
  // X_anc_i = A W_i with A (a x k) and invertible W_i (k x k).
  Rng rng(404);
  const std::size_t a = 60, k = 6;
  const auto base = random_matrix(a, k, rng);
  std::vector<SharedIntermediate> users;
  for (std::size_t u = 0; u < 3; ++u) {
    const auto w = random_matrix(k, k, rng);
    users.push_back({u, random_matrix(25, k, rng), matmul(base, w), std::vector<int>(25, static_cast<int>(u % 2))});
  }
  const auto al = align_intermediates(users, k);
  double worst = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      const auto hi = matmul(users[i].x_anc_tilde, al.g[i]);
      const auto hj = matmul(users[j].x_anc_tilde, al.g[j]);
      worst = std::max(worst, frobenius_norm(subtract(hi, hj)) / frobenius_norm(hj));
    }
  return {worst <= 1e-6, fmt("max pairwise relative Frobenius gap %.2e", worst)};
}

// ---------------------------------------------------------------------------
// P5

Outcome p5() {
  Rng rng(505);
  const auto x = random_matrix(20, 8, rng);
  std::vector<int> y(20);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.bernoulli(0.5) ? 1 : 0;
  FedConfig cfg;
  cfg.max_rounds = 1;
  cfg.epochs_per_round = 1;
  cfg.train_config.optimizer = OptimizerKind::sgd;
  cfg.train_config.learning_rate = 0.1;
  cfg.train_config.minibatch_size = x.rows();
  cfg.train_config.dropout_rates = {0.0, 0.0};
  const auto initial = init_mlp({8, 6, 4, 1}, 506);
  std::vector<ClientData> clients(4, ClientData{x, y});
  const auto fed = fedavg_train(clients, EvalSet::single(x, y), initial, cfg, 507);

  // One full-batch gradient step on the client data.
  auto central = initial;
  Gradients g;
  loss_and_gradient(central, x, y, &g);
  for_each_parameter(central, g, [&](std::span<double> p, std::span<const double> gp, std::size_t) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.train_config.learning_rate * gp[i];
  });
  const bool moved = !(central == initial);
  const bool same = fed.last_model == central;
  return {same && moved, same ? "parameters bitwise equal" : "parameters differ"};
}

// ---------------------------------------------------------------------------
// P6

Outcome p6() {
  LabeledDataset d = make_empty_dataset(4);
  // Unbalanced, odd class sizes make the rounding visible.
  const std::size_t n0 = 1237, n1 = 411;
  d.features = DenseMatrix(n0 + n1, 4, 0.0);
  d.labels.assign(n0, 0);
  d.labels.insert(d.labels.end(), n1, 1);
  std::size_t checked = 0;
  for (double r : default_r_grid()) {
    const auto plan = partition_label_bias(d, r, 606);
    for (int label : {0, 1}) {
      const std::size_t total = label == 0 ? n0 : n1;
      const auto shares = label_bias_shares(r, label);
      std::size_t sum = 0;
      for (std::size_t u = 0; u < 4; ++u) {
        std::size_t c = 0;
        for (auto i : plan.assignments[u]) c += d.labels[i] == label ? 1 : 0;
        sum += c;
        const double exact = total * shares[u];
        if (std::abs(static_cast<double>(c) - exact) >= 1.0) {
          return {false, fmt("r=%.2f user %zu label %d: %zu vs %.3f", r, u, label, c, exact)};
        }
        ++checked;
      }
      if (sum != total) return {false, fmt("r=%.2f label %d total %zu != %zu", r, label, sum, total)};
    }
    std::set<std::size_t> seen;
    for (const auto& a : plan.assignments) seen.insert(a.begin(), a.end());
    if (seen.size() != d.size()) return {false, fmt("r=%.2f: rows lost or duplicated", r)};
  }
  return {true, fmt("%zu user/label counts over %zu r values", checked, default_r_grid().size())};
}

// ---------------------------------------------------------------------------
// P7-P11 share the desk configuration.

ExperimentConfig desk_config() { return load_config(std::string(DCSIM_CONFIG_DIR) + "/desk_label_bias.json"); }

double mean_roc(const SweepResult& s, double r, Method m) { return s.cell(r, m).roc_auc.mean; }

std::string slurp_without_timestamp(const fs::path& p) {
  std::ifstream in(p);
  auto j = nlohmann::json::parse(in);
  j.erase("generated_at");
  return j.dump();
}

struct Context {
  fs::path scratch;
  std::optional<SweepResult> p7;
};

Outcome p7(Context& ctx) {
  const auto cfg = desk_config();
  const auto s = run_sweep(cfg, {1.0}, {Method::fedavg, Method::dc, Method::dcpd});
  emit_results(s, ctx.scratch / "p7_a", &cfg);
  ctx.p7 = s;
  const double f = mean_roc(s, 1.0, Method::fedavg), dc = mean_roc(s, 1.0, Method::dc),
               dp = mean_roc(s, 1.0, Method::dcpd);
  const bool ok = dp >= dc && dc >= f && dp - f >= 0.10 && std::abs(f - 0.5) <= 0.15;
  return {ok, fmt("r=1 ROC-AUC dcpd %.4f dc %.4f fedavg %.4f", dp, dc, f)};
}

Outcome p8(Context&) {
  auto cfg = desk_config();
  const auto s = run_sweep(cfg, {0.0}, {Method::fedavg, Method::dc, Method::dcpd});
  cfg.method = Method::centralized;
  const double central = run_experiment(cfg).roc_auc.mean;
  const double f = mean_roc(s, 0.0, Method::fedavg), dc = mean_roc(s, 0.0, Method::dc),
               dp = mean_roc(s, 0.0, Method::dcpd);
  bool ok = std::abs(dp - dc) <= 0.05;
  for (double v : {f, dc, dp}) ok = ok && std::abs(v - central) <= 0.10;
  return {ok, fmt("r=0 ROC-AUC centralized %.4f fedavg %.4f dc %.4f dcpd %.4f", central, f, dc, dp)};
}

Outcome p9(Context& ctx) {
  const auto cfg = desk_config();
  const auto s = run_sweep(cfg, default_r_grid(), {Method::fedavg, Method::dcpd});
  emit_results(s, ctx.scratch / "p9", &cfg);
  const double dp_drop = mean_roc(s, 0.0, Method::dcpd) - mean_roc(s, 1.0, Method::dcpd);
  const double f_drop = mean_roc(s, 0.0, Method::fedavg) - mean_roc(s, 1.0, Method::fedavg);
  std::string curve;
  for (double r : default_r_grid())
    curve += fmt(" %.2f:%.3f/%.3f", r, mean_roc(s, r, Method::dcpd), mean_roc(s, r, Method::fedavg));
  return {dp_drop <= 0.05 && f_drop >= 0.20,
          fmt("drop dcpd %.4f fedavg %.4f; r:dcpd/fedavg%s", dp_drop, f_drop, curve.c_str())};
}

Outcome p10(Context&) {
  auto cfg = desk_config();
  cfg.method = Method::dc;
  cfg.partition = {PartitionMode::iid, 0.0};
  const double pool = run_experiment(cfg).roc_auc.mean;
  cfg.anchor.strategy = AnchorStrategy::binary01;
  const double binary = run_experiment(cfg).roc_auc.mean;
  return {pool >= binary - 0.01, fmt("dc iid ROC-AUC pool-sample %.4f binary01 %.4f", pool, binary)};
}

Outcome p11(Context& ctx) {
  if (!ctx.p7) p7(ctx);
  const auto cfg = desk_config();
  const auto s = run_sweep(cfg, {1.0}, {Method::fedavg, Method::dc, Method::dcpd});
  emit_results(s, ctx.scratch / "p7_b", &cfg);
  const bool same = slurp_without_timestamp(ctx.scratch / "p7_a" / "results.json") ==
                    slurp_without_timestamp(ctx.scratch / "p7_b" / "results.json");
  return {same, same ? "results.json identical apart from generated_at" : "results.json differs"};
}

struct Criterion {
  const char* id;
  double budget_s;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.scratch = fs::temp_directory_path() / "dcsim_acceptance";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--scratch" && i + 1 < argc) {
      ctx.scratch = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string id;
      while (std::getline(ss, id, ',')) only.insert(id);
    } else {
      std::fprintf(stderr, "usage: acceptance [--scratch DIR] [--only P1,P2,...]\n");
      return 2;
    }
  }
  fs::remove_all(ctx.scratch);
  fs::create_directories(ctx.scratch);

  // P11 reruns P7, so its budget matches P7's.
  const std::vector<Criterion> criteria{
      {"P1", 10, [](Context&) { return p1(); }},  {"P2", 30, [](Context&) { return p2(); }},
      {"P3", 10, [](Context&) { return p3(); }},  {"P4", 5, [](Context&) { return p4(); }},
      {"P5", 5, [](Context&) { return p5(); }},   {"P6", 5, [](Context&) { return p6(); }},
      {"P7", 300, p7},                             {"P8", 300, p8},
      {"P9", 900, p9},                             {"P10", 300, p10},
      {"P11", 300, p11},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt(" (over time budget %.0f s)", c.budget_s);
    }
    std::printf("%s %s %s [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
