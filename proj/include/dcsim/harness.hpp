#pragma once

#include <cstddef>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dcsim/collaboration.hpp"
#include "dcsim/config.hpp"
#include "dcsim/datasets.hpp"
#include "dcsim/errors.hpp"
#include "dcsim/fedavg.hpp"
#include "dcsim/metrics.hpp"
#include "dcsim/mlp.hpp"
#include "dcsim/random.hpp"

namespace dcsim {

// Tags for derive_seed. Each pipeline component draws from its own stream so
// that changing one component leaves the others untouched.
namespace seed_tag {
inline constexpr std::uint64_t split = 0x11;
inline constexpr std::uint64_t partition = 0x22;
inline constexpr std::uint64_t anchor = 0x33;
inline constexpr std::uint64_t projection = 0x44;
inline constexpr std::uint64_t init = 0x55;
inline constexpr std::uint64_t train = 0x66;
inline constexpr std::uint64_t pool = 0x77;
}  // namespace seed_tag

struct RunRecord {
  Method method = Method::dc;
  std::optional<double> r;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> plan_hash;  // absent for centralized
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  std::size_t best_epoch = 0;  // epoch (or FedAvg round) of the returned model
};

struct MetricsReport {
  Method method = Method::dc;
  std::optional<double> r;
  std::vector<RunRecord> runs;
  MeanStderr roc_auc;
  MeanStderr pr_auc;

  std::size_t run_count() const noexcept { return runs.size(); }
};

struct SweepResult {
  std::vector<double> r_values;
  std::vector<Method> methods;
  std::vector<MetricsReport> cells;  // r-major, methods in request order

  const MetricsReport& cell(double r, Method m) const {
    for (const auto& c : cells)
      if (c.method == m && c.r && *c.r == r) return c;
    throw InvalidArgument("SweepResult: no such cell");
  }
};

using LogSink = std::function<void(const std::string&)>;

// Everything a repetition needs that does not depend on the repetition.
struct PreparedData {
  SplitDatasets split;
  std::optional<LabeledDataset> synthetic_pool;
  std::optional<LabeledDataset> anchor_pool;
  std::optional<LabeledDataset> projection_pool;
  std::size_t feature_dim = 0;
};

inline PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData p;
  LabeledDataset full;
  if (config.dataset_path) {
    full = load_dataset(*config.dataset_path);
  } else {
    const auto& s = *config.synthetic;
    SyntheticSpec spec{s.n_per_class, s.dims, s.template_density, s.flip_prob, s.seed, s.seed};
    full = generate_synthetic(spec);
    if (s.pool_size > 0) {
      spec.n_per_class = (s.pool_size + 1) / 2;
      spec.sample_seed = derive_seed(s.seed, seed_tag::pool);
      auto pool = generate_synthetic(spec);
      std::vector<std::size_t> keep(s.pool_size);
      // Interleave classes so a truncated pool stays balanced.
      for (std::size_t i = 0; i < s.pool_size; ++i) keep[i] = (i % 2) * spec.n_per_class + i / 2;
      p.synthetic_pool = subset(pool, keep);
      std::fill(p.synthetic_pool->labels.begin(), p.synthetic_pool->labels.end(), kUnlabeled);
    }
  }
  p.feature_dim = full.feature_dim;
  p.split = split_train_valid_test(full, config.split, derive_seed(config.base_seed, seed_tag::split));
  if (!p.split.train.fully_labeled() || !p.split.valid.fully_labeled() || !p.split.test.fully_labeled()) {
    throw DataError("dataset contains unlabeled rows");
  }

  const bool needs_anchor = config.method == Method::dc || config.method == Method::dcpd;
  if (needs_anchor && config.anchor.strategy == AnchorStrategy::pool_sample) {
    if (config.anchor.pool_path) p.anchor_pool = load_dataset(*config.anchor.pool_path);
    else p.anchor_pool = p.synthetic_pool;
  }
  if (config.method == Method::dcpd) {
    if (config.projection_pool_path) p.projection_pool = load_dataset(*config.projection_pool_path);
    else p.projection_pool = p.synthetic_pool;
  }
  if (needs_anchor && config.anchor.strategy == AnchorStrategy::pool_sample && !p.anchor_pool) {
    throw ConfigError("pool-sample anchors need a pool (anchor.pool_path or synthetic.pool_size > 0)");
  }
  if (config.method == Method::dcpd && !p.projection_pool) {
    throw ConfigError("dcpd needs projection data (projection_pool_path or synthetic.pool_size > 0)");
  }
  for (const auto* pool : {&p.anchor_pool, &p.projection_pool}) {
    if (pool->has_value() && (*pool)->feature_dim != p.feature_dim) {
      throw DataError("pool feature dimension differs from dataset");
    }
  }
  return p;
}

inline PartitionPlan make_partition(const ExperimentConfig& config, const LabeledDataset& train,
                                    std::uint64_t seed) {
  if (config.partition.mode == PartitionMode::label_bias) {
    return partition_label_bias(train, config.partition.r, seed);
  }
  if (config.n_users == 1) {
    PartitionPlan plan{1, {std::vector<std::size_t>(train.size())}, std::nullopt, seed};
    std::iota(plan.assignments[0].begin(), plan.assignments[0].end(), std::size_t{0});
    return plan;
  }
  return partition_iid(train, config.n_users, seed);
}

namespace detail {

inline std::vector<std::size_t> layer_dims(std::size_t input, const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return dims;
}

inline EvalSet collaboration_views(const CollaborationModel& model, const LabeledDataset& d,
                                   std::optional<std::size_t> user) {
  EvalSet e;
  e.labels = d.labels;
  if (user) {
    e.views.push_back(transform_test(model, *user, d.features));
  } else {
    for (std::size_t u = 0; u < model.n_users(); ++u) e.views.push_back(transform_test(model, u, d.features));
  }
  return e;
}

inline RunRecord score(const MlpModel& model, const EvalSet& test, RunRecord rec) {
  const auto p = predict_averaged(model, test);
  rec.roc_auc = roc_auc(p, test.labels);
  rec.pr_auc = pr_auc(p, test.labels);
  return rec;
}

}  // namespace detail

// One repetition of one method, end to end.
inline RunRecord run_once(const ExperimentConfig& config, const PreparedData& data, std::size_t repetition,
                          const LogSink& log = {}) {
  const std::uint64_t rep_seed = config.base_seed + repetition;
  const auto& train_set = data.split.train;
  RunRecord rec;
  rec.method = config.method;
  if (config.partition.mode == PartitionMode::label_bias) rec.r = config.partition.r;
  rec.repetition = repetition;
  rec.seed = rep_seed;

  TrainConfig tc = config.train_config;
  tc.seed = derive_seed(rep_seed, seed_tag::train, config.train_config.seed);
  const std::uint64_t init_seed = derive_seed(rep_seed, seed_tag::init);

  if (config.method == Method::centralized) {
    auto model = init_mlp(detail::layer_dims(data.feature_dim, config.hidden_layers), init_seed);
    auto res = train(std::move(model), train_set.features, train_set.labels,
                     EvalSet::single(data.split.valid.features, data.split.valid.labels), tc);
    rec.best_epoch = res.history.best_epoch;
    return detail::score(res.model, EvalSet::single(data.split.test.features, data.split.test.labels), rec);
  }

  const auto plan = make_partition(config, train_set, derive_seed(rep_seed, seed_tag::partition));
  rec.plan_hash = plan.hash();
  if (log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "method=%s rep=%zu seed=%llu plan_hash=%016llx",
                  std::string(to_string(config.method)).c_str(), repetition,
                  static_cast<unsigned long long>(rep_seed), static_cast<unsigned long long>(*rec.plan_hash));
    log(buf);
  }
  const auto users = apply_partition(train_set, plan);

  if (config.method == Method::fedavg) {
    std::vector<ClientData> clients;
    for (const auto& u : users) clients.push_back({u.features, u.labels});
    FedConfig fc = config.fed_config;
    fc.train_config = tc;
    auto initial = init_mlp(detail::layer_dims(data.feature_dim, config.hidden_layers), init_seed);
    auto res = fedavg_train(clients, EvalSet::single(data.split.valid.features, data.split.valid.labels),
                            initial, fc, tc.seed);
    rec.best_epoch = res.best_round;
    return detail::score(res.model, EvalSet::single(data.split.test.features, data.split.test.labels), rec);
  }

  AnchorSpec aspec = config.anchor;
  aspec.seed = derive_seed(rep_seed, seed_tag::anchor);
  const auto anchor = generate_anchor(aspec, data.feature_dim,
                                      data.anchor_pool ? &*data.anchor_pool : nullptr);
  std::vector<IntermediateBundle> bundles;
  for (std::size_t u = 0; u < users.size(); ++u) {
    if (config.method == Method::dc) {
      bundles.push_back(dc_user_phase(u, users[u], anchor, *config.dims.k, config.intermediate));
    } else {
      const auto proj = sample_projection_data(*data.projection_pool, config.b,
                                               derive_seed(rep_seed, seed_tag::projection, u));
      bundles.push_back(dcpd_user_phase(u, users[u], anchor, proj, *config.dims.k1, *config.dims.k2,
                                        config.intermediate));
    }
  }
  const auto collab = server_collaboration(bundles, config.dims.k_collab);
  auto model = init_mlp(detail::layer_dims(collab.k_collab(), config.hidden_layers), init_seed);
  auto res = train(std::move(model), collab.x_hat, collab.y,
                   detail::collaboration_views(collab, data.split.valid, config.test_transform_user), tc);
  rec.best_epoch = res.history.best_epoch;
  return detail::score(res.model, detail::collaboration_views(collab, data.split.test, config.test_transform_user),
                       rec);
}

inline MetricsReport summarize(Method method, std::optional<double> r, std::vector<RunRecord> runs) {
  MetricsReport rep{method, r, std::move(runs), {}, {}};
  std::vector<double> roc, pr;
  for (const auto& x : rep.runs) {
    roc.push_back(x.roc_auc);
    pr.push_back(x.pr_auc);
  }
  rep.roc_auc = mean_stderr(roc);
  rep.pr_auc = mean_stderr(pr);
  return rep;
}

// Repetition i uses seed base_seed + i. Centralized training ignores the
// partition and runs once.
inline MetricsReport run_experiment(const ExperimentConfig& config, const LogSink& log = {}) {
  config.validate();
  const auto data = prepare_data(config);
  const std::size_t reps = config.method == Method::centralized ? 1 : config.repetitions;
  std::vector<RunRecord> runs(reps);

  if (config.threads <= 1 || reps == 1) {
    for (std::size_t i = 0; i < reps; ++i) runs[i] = run_once(config, data, i, log);
  } else {
    std::mutex log_mu;
    LogSink locked = log ? LogSink([&](const std::string& s) {
      std::lock_guard lk(log_mu);
      log(s);
    })
                         : LogSink{};
    std::vector<std::exception_ptr> errors(reps);
    std::size_t next = 0;
    std::mutex next_mu;
    auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lk(next_mu);
          if (next >= reps) return;
          i = next++;
        }
        try {
          runs[i] = run_once(config, data, i, locked);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(config.threads, reps); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::optional<double> r;
  if (config.partition.mode == PartitionMode::label_bias) r = config.partition.r;
  return summarize(config.method, r, std::move(runs));
}

// Default label-bias grid for sweeps.
inline const std::vector<double>& default_r_grid() {
  static const std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 0.85, 0.9, 0.95, 1.0};
  return grid;
}

// methods x r, all cells sharing base_seed so that each (r, repetition)
// partition is identical across methods.
inline SweepResult run_sweep(const ExperimentConfig& config, const std::vector<double>& r_values,
                             const std::vector<Method>& methods, const LogSink& log = {}) {
  for (double r : r_values)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep r values must lie in [0,1]");
  SweepResult out{r_values, methods, {}};
  for (double r : r_values) {
    for (Method m : methods) {
      ExperimentConfig c = config;
      c.method = m;
      c.partition = {PartitionMode::label_bias, r};
      if (log) log("sweep cell method=" + std::string(to_string(m)) + " r=" + std::to_string(r));
      out.cells.push_back(run_experiment(c, log));
    }
  }
  return out;
}

namespace detail {

inline nlohmann::json stat_json(const MeanStderr& s) { return {{"mean", s.mean}, {"stderr", s.std_error}}; }

inline nlohmann::json report_json(const MetricsReport& rep) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : rep.runs) {
    nlohmann::json j{{"repetition", x.repetition}, {"seed", x.seed},        {"roc_auc", x.roc_auc},
                     {"pr_auc", x.pr_auc},         {"best_epoch", x.best_epoch}};
    if (x.plan_hash) {
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(*x.plan_hash));
      j["plan_hash"] = buf;
    }
    runs.push_back(std::move(j));
  }
  nlohmann::json j{{"method", std::string(to_string(rep.method))},
                   {"roc_auc", stat_json(rep.roc_auc)},
                   {"pr_auc", stat_json(rep.pr_auc)},
                   {"runs", std::move(runs)}};
  j["r"] = rep.r ? nlohmann::json(*rep.r) : nlohmann::json(nullptr);
  return j;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  return out;
}

inline void write_csv(const std::vector<const MetricsReport*>& cells, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,r,repetition,seed,plan_hash,roc_auc,pr_auc\n";
  for (const auto* c : cells) {
    for (const auto& x : c->runs) {
      out << to_string(x.method) << ',' << (x.r ? fmt17(*x.r) : std::string()) << ',' << x.repetition << ','
          << x.seed << ',';
      if (x.plan_hash) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(*x.plan_hash));
        out << buf;
      }
      out << ',' << fmt17(x.roc_auc) << ',' << fmt17(x.pr_auc) << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(nlohmann::json j, const std::filesystem::path& path) {
  j["generated_at"] = utc_timestamp();
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

// Metric vs r, one polyline per method, stderr error bars.
inline std::string sweep_svg(const SweepResult& sweep, bool roc) {
  const double w = 640, h = 420, left = 60, right = 140, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double lo = 1.0, hi = 0.0;
  for (const auto& c : sweep.cells) {
    const auto& s = roc ? c.roc_auc : c.pr_auc;
    lo = std::min(lo, s.mean - s.std_error);
    hi = std::max(hi, s.mean + s.std_error);
  }
  lo = std::max(0.0, std::floor(lo * 10.0) / 10.0);
  hi = std::min(1.0, std::ceil(hi * 10.0) / 10.0);
  if (hi <= lo) hi = lo + 0.1;
  auto sx = [&](double r) { return left + r * pw; };
  auto sy = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  const char* metric = roc ? "ROC-AUC" : "PR-AUC";

  std::string s;
  char buf[256];
  auto add = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    s += buf;
  };
  add("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n",
      w, h);
  add("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#444\"/>\n", left, top, pw,
      ph);
  for (int i = 0; i <= 5; ++i) {
    const double r = i / 5.0, v = lo + (hi - lo) * i / 5.0;
    add("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.1f</text>\n", sx(r), top + ph + 16, r);
    add("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.2f</text>\n", left - 6, sy(v) + 4, v);
  }
  add("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">label bias r</text>\n", left + pw / 2, h - 12);
  add("<text x=\"14\" y=\"%.1f\" transform=\"rotate(-90 14 %.1f)\" text-anchor=\"middle\">%s</text>\n",
      top + ph / 2, top + ph / 2, metric);

  for (std::size_t mi = 0; mi < sweep.methods.size(); ++mi) {
    const char* color = colors[mi % 5];
    std::string pts;
    for (double r : sweep.r_values) {
      const auto& st = roc ? sweep.cell(r, sweep.methods[mi]).roc_auc : sweep.cell(r, sweep.methods[mi]).pr_auc;
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", pts.empty() ? "" : " ", sx(r), sy(st.mean));
      pts += buf;
      add("<line class=\"errorbar\" x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>\n", sx(r),
          sy(st.mean - st.std_error), sx(r), sy(st.mean + st.std_error), color);
    }
    s += "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" + std::string(color) + "\" points=\"" + pts +
         "\"/>\n";
    add("<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">%s</text>\n", left + pw + 12, top + 16 + 18.0 * mi, color,
        std::string(to_string(sweep.methods[mi])).c_str());
  }
  s += "</svg>\n";
  return s;
}

}  // namespace detail

inline void emit_results(const MetricsReport& report, const std::filesystem::path& out_dir,
                         const ExperimentConfig* config = nullptr) {
  if (report.runs.empty()) throw InvalidArgument("nothing to emit");
  std::filesystem::create_directories(out_dir);
  nlohmann::json j{{"kind", "report"}, {"cells", nlohmann::json::array({detail::report_json(report)})}};
  if (config) j["config"] = to_json(*config);
  detail::write_json(std::move(j), out_dir / "results.json");
  detail::write_csv({&report}, out_dir / "results.csv");
}

inline void emit_results(const SweepResult& sweep, const std::filesystem::path& out_dir,
                         const ExperimentConfig* config = nullptr) {
  if (sweep.cells.empty()) throw InvalidArgument("nothing to emit");
  std::filesystem::create_directories(out_dir);
  nlohmann::json cells = nlohmann::json::array();
  std::vector<const MetricsReport*> ptrs;
  for (const auto& c : sweep.cells) {
    cells.push_back(detail::report_json(c));
    ptrs.push_back(&c);
  }
  std::vector<std::string> methods;
  for (auto m : sweep.methods) methods.emplace_back(to_string(m));
  nlohmann::json j{{"kind", "sweep"}, {"r_values", sweep.r_values}, {"methods", methods}, {"cells", cells}};
  if (config) j["config"] = to_json(*config);
  detail::write_json(std::move(j), out_dir / "results.json");
  detail::write_csv(ptrs, out_dir / "results.csv");
  for (bool roc : {true, false}) {
    auto out = detail::open_out(out_dir / (roc ? "plot_roc.svg" : "plot_pr.svg"));
    out << detail::sweep_svg(sweep, roc);
  }
}

}  // namespace dcsim
