#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcsim/errors.hpp"
#include "dcsim/linalg.hpp"
#include "dcsim/random.hpp"

namespace dcsim {

// Label sentinel for rows of unlabeled pools (anchor / projection sources).
inline constexpr int kUnlabeled = -1;

struct LabeledDataset {
  DenseMatrix features;   // s x m
  std::vector<int> labels;  // 0, 1 or kUnlabeled
  std::size_t feature_dim = 2048;

  std::size_t size() const noexcept { return labels.size(); }

  bool fully_labeled() const {
    return std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnlabeled; });
  }

  std::array<std::size_t, 2> label_counts() const {
    std::array<std::size_t, 2> c{0, 0};
    for (int l : labels)
      if (l == 0 || l == 1) ++c[static_cast<std::size_t>(l)];
    return c;
  }

  bool operator==(const LabeledDataset&) const = default;
};

inline LabeledDataset make_empty_dataset(std::size_t m) {
  return LabeledDataset{DenseMatrix(0, m), {}, m};
}

inline LabeledDataset subset(const LabeledDataset& d, std::span<const std::size_t> indices) {
  LabeledDataset out{select_rows(d.features, indices), {}, d.feature_dim};
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(d.labels[i]);
  return out;
}

inline LabeledDataset concat(std::span<const LabeledDataset> parts) {
  if (parts.empty()) throw InvalidArgument("concat: no datasets");
  std::vector<DenseMatrix> blocks;
  LabeledDataset out{{}, {}, parts.front().feature_dim};
  for (const auto& p : parts) {
    if (p.feature_dim != out.feature_dim) throw InvalidArgument("concat: feature_dim differs");
    blocks.push_back(p.features);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.features = vconcat(blocks);
  if (out.features.cols() != out.feature_dim) out.features = DenseMatrix(0, out.feature_dim);
  return out;
}

// ---------------------------------------------------------------------------
// File format
//
//   #dcsim-dataset v1 m=<feature_dim>
//   <label>\t<comma-separated ascending set-bit indices>
//
// label is 0, 1 or '?'. Bits must be 0/1 for a dataset to be saved.

namespace detail {

inline std::size_t parse_count(std::string_view tok, std::size_t line, const char* what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size() || tok.empty()) {
    throw ParseError(line, std::string("invalid ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace detail

inline LabeledDataset parse_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  constexpr std::string_view prefix = "#dcsim-dataset v1 m=";
  if (line.rfind(prefix, 0) != 0) throw ParseError(1, "malformed header");
  const std::size_t m = detail::parse_count(std::string_view(line).substr(prefix.size()), 1,
                                            "feature dimension");
  if (m == 0) throw ParseError(1, "feature dimension must be positive");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') throw ParseError(lineno, "CR line ending");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(lineno, "missing tab separator");
    const std::string_view label_tok = std::string_view(line).substr(0, tab);
    int label;
    if (label_tok == "0") label = 0;
    else if (label_tok == "1") label = 1;
    else if (label_tok == "?") label = kUnlabeled;
    else throw ParseError(lineno, "non-binary label '" + std::string(label_tok) + "'");

    const std::size_t base = values.size();
    values.resize(base + m, 0.0);
    std::string_view bits = std::string_view(line).substr(tab + 1);
    std::optional<std::size_t> prev;
    while (!bits.empty()) {
      const auto comma = bits.find(',');
      const auto tok = bits.substr(0, comma);
      const std::size_t idx = detail::parse_count(tok, lineno, "bit index");
      if (idx >= m) throw ParseError(lineno, "bit index out of range");
      if (prev && idx <= *prev) throw ParseError(lineno, "bit indices not strictly ascending");
      values[base + idx] = 1.0;
      prev = idx;
      if (comma == std::string_view::npos) break;
      bits.remove_prefix(comma + 1);
      if (bits.empty()) throw ParseError(lineno, "trailing comma");
    }
    labels.push_back(label);
  }
  const std::size_t s = labels.size();
  return LabeledDataset{DenseMatrix(s, m, std::move(values)), std::move(labels), m};
}

inline LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path);
  return parse_dataset(in);
}

inline void write_dataset(const LabeledDataset& d, std::ostream& out) {
  if (d.features.rows() != d.labels.size() || d.features.cols() != d.feature_dim) {
    throw InvalidArgument("write_dataset: inconsistent dataset shape");
  }
  out << "#dcsim-dataset v1 m=" << d.feature_dim << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int l = d.labels[i];
    out << (l == kUnlabeled ? '?' : static_cast<char>('0' + l)) << '\t';
    bool first = true;
    auto row = d.features.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] == 0.0) continue;
      if (row[j] != 1.0) throw InvalidArgument("write_dataset: feature entries must be 0 or 1");
      if (!first) out << ',';
      out << j;
      first = false;
    }
    out << '\n';
  }
}

inline void save_dataset(const LabeledDataset& d, const std::string& path) {
  std::ostringstream buf;
  write_dataset(d, buf);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << buf.str();
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Splitting and partitioning

struct SplitDatasets {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

namespace detail {

// Sequential quota assignment: the next item goes to the bucket that is
// furthest behind its share. Every prefix stays within one item of its
// proportional allocation.
template <std::size_t N>
std::vector<std::size_t> quota_sequence(std::size_t n, const std::array<double, N>& fractions) {
  std::vector<std::size_t> out(n);
  std::array<std::size_t, N> count{};
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t best = 0;
    double best_deficit = -1e300;
    for (std::size_t c = 0; c < N; ++c) {
      const double deficit = static_cast<double>(t + 1) * fractions[c] - static_cast<double>(count[c]);
      if (deficit > best_deficit + 1e-12) {
        best_deficit = deficit;
        best = c;
      }
    }
    ++count[best];
    out[t] = best;
  }
  return out;
}

// Largest-remainder apportionment of `total` items by `shares` (summing to 1).
// Ties in the remainder go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> shares) {
  std::vector<std::size_t> out(shares.size());
  std::vector<double> rem(shares.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    const double exact = shares[i] * static_cast<double>(total);
    // Guard against 0.15*40 = 5.999... style representation error.
    const double fl = std::floor(exact + 1e-9);
    out[i] = static_cast<std::size_t>(fl);
    rem[i] = std::max(0.0, exact - fl);
    assigned += out[i];
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rem[a] > rem[b] + 1e-12;
  });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size(), ++assigned) {
    ++out[order[i]];
  }
  return out;
}

}  // namespace detail

// Label-stratified three-way split. Unlabeled rows are stratified as their
// own group.
inline SplitDatasets split_train_valid_test(const LabeledDataset& d,
                                            const std::array<double, 3>& fractions,
                                            std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::any_of(fractions.begin(), fractions.end(), [](double f) { return !(f > 0.0); }) ||
      std::abs(sum - 1.0) > 1e-9) {
    throw InvalidArgument("split: fractions must be positive and sum to 1");
  }

  Rng rng(seed);
  std::vector<std::size_t> order;
  order.reserve(d.size());
  for (int label : {0, 1, kUnlabeled}) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == label) group.push_back(i);
    rng.shuffle(group);
    order.insert(order.end(), group.begin(), group.end());
  }
  const auto bucket = detail::quota_sequence<3>(order.size(), fractions);
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t t = 0; t < order.size(); ++t) idx[bucket[t]].push_back(order[t]);
  for (auto& v : idx) {
    if (v.empty()) throw InvalidArgument("split: a split would be empty");
    std::sort(v.begin(), v.end());
  }
  return {subset(d, idx[0]), subset(d, idx[1]), subset(d, idx[2])};
}

struct PartitionPlan {
  std::size_t n_users = 0;
  std::vector<std::vector<std::size_t>> assignments;
  std::optional<double> bias_r;
  std::uint64_t seed = 0;

  // FNV-1a over the assignment lists, used to show that several methods saw
  // the same partition.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    };
    feed(n_users);
    for (const auto& a : assignments) {
      feed(a.size());
      for (std::size_t i : a) feed(i);
    }
    return h;
  }

  bool operator==(const PartitionPlan&) const = default;
};

inline PartitionPlan partition_iid(const LabeledDataset& d, std::size_t n_users, std::uint64_t seed) {
  if (n_users < 2) throw InvalidArgument("partition_iid: need at least 2 users");
  if (n_users > d.size()) throw InvalidArgument("partition_iid: more users than samples");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  PartitionPlan plan{n_users, std::vector<std::vector<std::size_t>>(n_users), std::nullopt, seed};
  for (std::size_t t = 0; t < idx.size(); ++t) plan.assignments[t % n_users].push_back(idx[t]);
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
  return plan;
}

// Per-user shares of label `label` under bias r: users 1-2 receive
// (25 +/- 25r)% and users 3-4 the complement.
inline std::array<double, 4> label_bias_shares(double r, int label) {
  const double hi = (25.0 + 25.0 * r) / 100.0;
  const double lo = (25.0 - 25.0 * r) / 100.0;
  return label == 0 ? std::array<double, 4>{hi, hi, lo, lo} : std::array<double, 4>{lo, lo, hi, hi};
}

inline PartitionPlan partition_label_bias(const LabeledDataset& d, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("partition_label_bias: r outside [0,1]");
  if (!d.fully_labeled()) throw InvalidArgument("partition_label_bias: dataset has unlabeled rows");
  const auto counts = d.label_counts();
  if (counts[0] == 0 || counts[1] == 0) {
    throw InvalidArgument("partition_label_bias: both classes must be present");
  }
  constexpr std::size_t n_users = 4;
  PartitionPlan plan{n_users, std::vector<std::vector<std::size_t>>(n_users), r, seed};
  Rng rng(seed);
  for (int label : {0, 1}) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == label) group.push_back(i);
    rng.shuffle(group);
    const auto shares = label_bias_shares(r, label);
    const auto sizes = detail::largest_remainder(group.size(), shares);
    std::size_t pos = 0;
    for (std::size_t u = 0; u < n_users; ++u) {
      plan.assignments[u].insert(plan.assignments[u].end(), group.begin() + static_cast<std::ptrdiff_t>(pos),
                                 group.begin() + static_cast<std::ptrdiff_t>(pos + sizes[u]));
      pos += sizes[u];
    }
  }
  for (auto& a : plan.assignments) std::sort(a.begin(), a.end());
  return plan;
}

inline std::vector<LabeledDataset> apply_partition(const LabeledDataset& d, const PartitionPlan& plan) {
  std::vector<LabeledDataset> out;
  out.reserve(plan.assignments.size());
  for (const auto& a : plan.assignments) out.push_back(subset(d, a));
  return out;
}

// ---------------------------------------------------------------------------
// Anchor and projection data

enum class AnchorStrategy { uniform01, binary01, pool_sample };

struct AnchorSpec {
  AnchorStrategy strategy = AnchorStrategy::pool_sample;
  std::size_t count = 3000;
  std::optional<std::string> pool_path;
  std::uint64_t seed = 0;
  double binary_density = 0.5;
};

inline LabeledDataset unlabeled(DenseMatrix features) {
  const std::size_t s = features.rows();
  const std::size_t m = features.cols();
  return LabeledDataset{std::move(features), std::vector<int>(s, kUnlabeled), m};
}

inline LabeledDataset sample_rows(const LabeledDataset& pool, std::size_t count, std::uint64_t seed) {
  if (count > pool.size()) throw InvalidArgument("pool smaller than requested sample");
  Rng rng(seed);
  const auto idx = rng.sample_without_replacement(pool.size(), count);
  auto out = subset(pool, idx);
  std::fill(out.labels.begin(), out.labels.end(), kUnlabeled);
  return out;
}

// `pool` is used by pool_sample; when null, spec.pool_path is loaded.
inline LabeledDataset generate_anchor(const AnchorSpec& spec, std::size_t m,
                                      const LabeledDataset* pool = nullptr) {
  if (spec.count < 1) throw InvalidArgument("generate_anchor: count must be >= 1");
  Rng rng(spec.seed);
  switch (spec.strategy) {
    case AnchorStrategy::uniform01: {
      DenseMatrix x(spec.count, m);
      for (double& v : x.values()) v = rng.uniform();
      return unlabeled(std::move(x));
    }
    case AnchorStrategy::binary01: {
      if (!(spec.binary_density > 0.0 && spec.binary_density < 1.0)) {
        throw InvalidArgument("generate_anchor: binary density must be in (0,1)");
      }
      DenseMatrix x(spec.count, m);
      for (double& v : x.values()) v = rng.bernoulli(spec.binary_density) ? 1.0 : 0.0;
      return unlabeled(std::move(x));
    }
    case AnchorStrategy::pool_sample: {
      LabeledDataset loaded;
      if (pool == nullptr) {
        if (!spec.pool_path) throw InvalidArgument("generate_anchor: pool-sample needs a pool");
        loaded = load_dataset(*spec.pool_path);
        pool = &loaded;
      }
      if (pool->feature_dim != m) throw InvalidArgument("generate_anchor: pool feature_dim differs");
      if (pool->size() < spec.count) throw InvalidArgument("generate_anchor: pool smaller than anchor count");
      return sample_rows(*pool, spec.count, spec.seed);
    }
  }
  throw InvalidArgument("generate_anchor: unknown strategy");
}

inline LabeledDataset sample_projection_data(const LabeledDataset& pool, std::size_t b,
                                             std::uint64_t user_seed) {
  if (b > pool.size()) throw InvalidArgument("sample_projection_data: b exceeds pool size");
  return sample_rows(pool, b, user_seed);
}

// ---------------------------------------------------------------------------
// Synthetic fingerprints

struct SyntheticSpec {
  std::size_t n_per_class = 1000;
  std::size_t m = 64;
  double template_density = 0.2;
  double flip_prob = 0.15;
  std::uint64_t template_seed = 0;  // fixes the two class templates
  std::uint64_t sample_seed = 0;    // fixes the per-sample noise
};

inline std::array<std::vector<double>, 2> synthetic_templates(const SyntheticSpec& spec) {
  Rng rng(derive_seed(spec.template_seed, 0x7e3a));
  std::array<std::vector<double>, 2> t{std::vector<double>(spec.m), std::vector<double>(spec.m)};
  for (auto& v : t)
    for (double& b : v) b = rng.bernoulli(spec.template_density) ? 1.0 : 0.0;
  return t;
}

// Two class templates; each sample is its template with independent bit
// flips. Rows are class 0 first, then class 1.
inline LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.m < 8) throw InvalidArgument("synthetic: m must be >= 8");
  if (!(spec.template_density > 0.0 && spec.template_density < 1.0)) {
    throw InvalidArgument("synthetic: template_density must be in (0,1)");
  }
  if (!(spec.flip_prob >= 0.0 && spec.flip_prob < 0.5)) {
    throw InvalidArgument("synthetic: flip_prob must be in [0,0.5)");
  }
  const auto templates = synthetic_templates(spec);
  Rng rng(derive_seed(spec.sample_seed, 0x5a3b));
  LabeledDataset d{DenseMatrix(2 * spec.n_per_class, spec.m), {}, spec.m};
  d.labels.reserve(2 * spec.n_per_class);
  for (int label : {0, 1}) {
    const auto& t = templates[static_cast<std::size_t>(label)];
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      auto row = d.features.row(d.labels.size());
      for (std::size_t j = 0; j < spec.m; ++j) {
        const bool flip = rng.bernoulli(spec.flip_prob);
        row[j] = flip ? 1.0 - t[j] : t[j];
      }
      d.labels.push_back(label);
    }
  }
  return d;
}

inline LabeledDataset generate_synthetic_fingerprint_dataset(std::size_t n_per_class, std::size_t m,
                                                             double template_density, double flip_prob,
                                                             std::uint64_t seed) {
  return generate_synthetic({n_per_class, m, template_density, flip_prob, seed, seed});
}

}  // namespace dcsim
