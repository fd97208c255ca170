#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcsim/errors.hpp"
#include "dcsim/linalg.hpp"
#include "dcsim/random.hpp"

namespace dcsim {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  std::size_t minibatch_size = 25;
  double learning_rate = 0.00002;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  std::vector<double> dropout_rates{0.4, 0.4};
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (minibatch_size == 0 || max_epochs == 0 || patience == 0 || !(learning_rate > 0.0)) {
      throw InvalidArgument("TrainConfig: counts and learning rate must be positive");
    }
    if (patience > max_epochs) throw InvalidArgument("TrainConfig: patience exceeds max_epochs");
    for (double p : dropout_rates)
      if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("TrainConfig: dropout rate outside [0,1)");
  }
};

// Feed-forward binary classifier: ReLU hidden layers, logistic output.
struct MlpModel {
  std::vector<std::size_t> layer_dims;           // [in, h1, ..., 1]
  std::vector<DenseMatrix> weights;              // layer_dims[l] x layer_dims[l+1]
  std::vector<std::vector<double>> biases;       // layer_dims[l+1]
  std::vector<double> dropout_rates;             // one per hidden layer

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t hidden_layers() const { return layer_dims.size() - 2; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  bool operator==(const MlpModel&) const = default;
};

// Glorot-uniform weights, zero biases.
inline MlpModel init_mlp(std::span<const std::size_t> layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 3) throw InvalidArgument("init_mlp: need at least one hidden layer");
  if (layer_dims.back() != 1) throw InvalidArgument("init_mlp: output dimension must be 1");
  if (std::any_of(layer_dims.begin(), layer_dims.end(), [](std::size_t d) { return d == 0; })) {
    throw InvalidArgument("init_mlp: zero-width layer");
  }
  MlpModel model;
  model.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  model.dropout_rates.assign(layer_dims.size() - 2, 0.0);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer_dims[l] + layer_dims[l + 1]));
    DenseMatrix w(layer_dims[l], layer_dims[l + 1]);
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(layer_dims[l + 1], 0.0);
  }
  return model;
}

inline MlpModel init_mlp(std::initializer_list<std::size_t> layer_dims, std::uint64_t seed) {
  return init_mlp(std::span<const std::size_t>(layer_dims.begin(), layer_dims.size()), seed);
}

// Same shapes as the model's parameters.
struct Gradients {
  std::vector<DenseMatrix> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const MlpModel& m) {
    Gradients g;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      g.weights.emplace_back(m.weights[l].rows(), m.weights[l].cols());
      g.biases.emplace_back(m.biases[l].size(), 0.0);
    }
    return g;
  }
};

inline constexpr double kLogitClamp = 30.0;

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Binary cross-entropy of a logit, computed as softplus(z) - y*z.
inline double bce_from_logit(double z, int y) {
  const double zc = std::clamp(z, -kLogitClamp, kLogitClamp);
  const double softplus = zc > 0 ? zc + std::log1p(std::exp(-zc)) : std::log1p(std::exp(zc));
  return softplus - static_cast<double>(y) * zc;
}

inline double bce_from_probability(double p, int y) {
  const double lo = sigmoid(-kLogitClamp);
  const double pc = std::clamp(p, lo, 1.0 - lo);
  return y == 1 ? -std::log(pc) : -std::log1p(-pc);
}

namespace detail {

// a * bᵀ
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

inline void add_bias(DenseMatrix& z, std::span<const double> b) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto r = z.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
}

struct ForwardTrace {
  std::vector<DenseMatrix> inputs;     // input to each layer (post-activation, post-dropout)
  std::vector<DenseMatrix> pre;        // hidden pre-activations
  std::vector<DenseMatrix> masks;      // scaled dropout masks (empty when inactive)
  std::vector<double> logits;
};

inline ForwardTrace forward_trace(const MlpModel& model, const DenseMatrix& x, Rng* dropout_rng) {
  if (x.cols() != model.input_dim()) throw InvalidArgument("forward: input dimension mismatch");
  ForwardTrace tr;
  DenseMatrix a = x;
  const std::size_t n_layers = model.weights.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    DenseMatrix z = matmul(a, model.weights[l]);
    add_bias(z, model.biases[l]);
    tr.inputs.push_back(std::move(a));
    if (l + 1 == n_layers) {
      tr.logits.assign(z.values().begin(), z.values().end());
      break;
    }
    DenseMatrix h = z;
    for (double& v : h.values()) v = v > 0.0 ? v : 0.0;
    const double rate = l < model.dropout_rates.size() ? model.dropout_rates[l] : 0.0;
    DenseMatrix mask;
    if (dropout_rng != nullptr && rate > 0.0) {
      mask = DenseMatrix(h.rows(), h.cols());
      const double keep_scale = 1.0 / (1.0 - rate);
      auto mv = mask.values();
      auto hv = h.values();
      for (std::size_t i = 0; i < mv.size(); ++i) {
        mv[i] = dropout_rng->bernoulli(rate) ? 0.0 : keep_scale;
        hv[i] *= mv[i];
      }
    }
    tr.pre.push_back(std::move(z));
    tr.masks.push_back(std::move(mask));
    a = std::move(h);
  }
  return tr;
}

}  // namespace detail

// Output probabilities. In train mode, inverted dropout is applied with
// masks drawn from `seed`.
inline std::vector<double> forward(const MlpModel& model, const DenseMatrix& x, bool train_mode,
                                   std::uint64_t seed = 0) {
  Rng rng(seed);
  const auto tr = detail::forward_trace(model, x, train_mode ? &rng : nullptr);
  std::vector<double> p(tr.logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(std::clamp(tr.logits[i], -kLogitClamp, kLogitClamp));
  return p;
}

inline std::vector<double> predict(const MlpModel& model, const DenseMatrix& x) {
  return forward(model, x, false);
}

// Mean BCE over the batch and, if `grad` is non-null, its gradient. Dropout is
// active iff `dropout_rng` is non-null.
inline double loss_and_gradient(const MlpModel& model, const DenseMatrix& x, std::span<const int> y,
                                Gradients* grad, Rng* dropout_rng = nullptr) {
  if (y.size() != x.rows()) throw InvalidArgument("loss_and_gradient: label count mismatch");
  if (x.rows() == 0) throw InvalidArgument("loss_and_gradient: empty batch");
  auto tr = detail::forward_trace(model, x, dropout_rng);
  const std::size_t n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  DenseMatrix delta(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    loss += bce_from_logit(tr.logits[i], y[i]);
    const double zc = std::clamp(tr.logits[i], -kLogitClamp, kLogitClamp);
    delta(i, 0) = (sigmoid(zc) - static_cast<double>(y[i])) * inv_n;
  }
  loss *= inv_n;
  if (grad == nullptr) return loss;

  *grad = Gradients::zeros_like(model);
  for (std::size_t l = model.weights.size(); l-- > 0;) {
    grad->weights[l] = matmul_tn(tr.inputs[l], delta);
    auto& gb = grad->biases[l];
    for (std::size_t i = 0; i < delta.rows(); ++i) {
      auto r = delta.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) gb[j] += r[j];
    }
    if (l == 0) break;
    DenseMatrix back = detail::matmul_nt(delta, model.weights[l]);
    const auto& pre = tr.pre[l - 1];
    const auto& mask = tr.masks[l - 1];
    auto bv = back.values();
    auto pv = pre.values();
    for (std::size_t i = 0; i < bv.size(); ++i) {
      double d = pv[i] > 0.0 ? bv[i] : 0.0;
      if (!mask.empty()) d *= mask.values()[i];
      bv[i] = d;
    }
    delta = std::move(back);
  }
  return loss;
}

// Visits (parameter, gradient) spans in a fixed order.
template <typename Fn>
void for_each_parameter(MlpModel& model, const Gradients& grad, Fn&& fn) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    fn(model.weights[l].values(), grad.weights[l].values(), offset);
    offset += model.weights[l].size();
    fn(std::span<double>(model.biases[l]), std::span<const double>(grad.biases[l]), offset);
    offset += model.biases[l].size();
  }
}

// Per-parameter optimizer state. A default-constructed state is "fresh".
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

inline void apply_update(MlpModel& model, const Gradients& grad, const TrainConfig& cfg,
                         OptimizerState& state) {
  if (cfg.optimizer == OptimizerKind::sgd) {
    for_each_parameter(model, grad, [&](std::span<double> p, std::span<const double> g, std::size_t) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * g[i];
    });
    return;
  }
  if (state.m.size() != model.parameter_count()) {
    state.m.assign(model.parameter_count(), 0.0);
    state.v.assign(model.parameter_count(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for_each_parameter(model, grad, [&](std::span<double> p, std::span<const double> g, std::size_t off) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      double& m = state.m[off + i];
      double& v = state.v[off + i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.epsilon);
    }
  });
}

inline void set_dropout(MlpModel& model, const TrainConfig& cfg) {
  if (cfg.dropout_rates.empty()) {
    model.dropout_rates.assign(model.hidden_layers(), 0.0);
    return;
  }
  if (cfg.dropout_rates.size() != model.hidden_layers()) {
    throw InvalidArgument("dropout_rates must have one entry per hidden layer");
  }
  model.dropout_rates = cfg.dropout_rates;
}

inline bool parameters_finite(const MlpModel& model) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    if (!all_finite(model.weights[l])) return false;
    for (double b : model.biases[l])
      if (!std::isfinite(b)) return false;
  }
  return true;
}

// Runs `epochs` passes of minibatch updates; returns the mean training loss
// of the last epoch. Minibatch order is reshuffled every epoch unless the
// batch covers the whole set, in which case the natural order is used.
inline double run_epochs(MlpModel& model, const DenseMatrix& x, std::span<const int> y,
                         const TrainConfig& cfg, std::size_t epochs, Rng& rng, OptimizerState& state) {
  const std::size_t n = x.rows();
  if (n == 0) throw InvalidArgument("run_epochs: empty training set");
  std::vector<std::size_t> order(n);
  double epoch_loss = 0.0;
  Gradients grad;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.minibatch_size < n) rng.shuffle(order);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.minibatch_size) {
      const std::size_t stop = std::min(n, start + cfg.minibatch_size);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      DenseMatrix xb = select_rows(x, idx);
      std::vector<int> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = y[idx[i]];
      const double loss = loss_and_gradient(model, xb, yb, &grad, &rng);
      if (!std::isfinite(loss)) throw TrainingDiverged("training diverged: non-finite loss");
      epoch_loss += loss * static_cast<double>(idx.size());
      apply_update(model, grad, cfg, state);
      // The logit clamp keeps the loss finite even when parameters overflow.
      if (!parameters_finite(model)) throw TrainingDiverged("training diverged: non-finite parameters");
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) throw TrainingDiverged("training diverged: non-finite loss");
  }
  return epoch_loss;
}

// Evaluation data, possibly seen through several feature views whose
// predicted probabilities are averaged (DC score averaging across users).
struct EvalSet {
  std::vector<DenseMatrix> views;
  std::vector<int> labels;

  static EvalSet single(DenseMatrix x, std::vector<int> y) {
    EvalSet e;
    e.views.push_back(std::move(x));
    e.labels = std::move(y);
    return e;
  }
};

inline std::vector<double> predict_averaged(const MlpModel& model, const EvalSet& set) {
  if (set.views.empty()) throw InvalidArgument("predict_averaged: no views");
  std::vector<double> avg(set.labels.size(), 0.0);
  for (const auto& v : set.views) {
    const auto p = predict(model, v);
    if (p.size() != avg.size()) throw InvalidArgument("predict_averaged: view row count mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) avg[i] += p[i];
  }
  for (double& p : avg) p /= static_cast<double>(set.views.size());
  return avg;
}

inline double evaluation_loss(const MlpModel& model, const EvalSet& set) {
  if (set.labels.empty()) throw InvalidArgument("evaluation_loss: empty set");
  if (set.views.size() == 1) return loss_and_gradient(model, set.views.front(), set.labels, nullptr);
  const auto p = predict_averaged(model, set);
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += bce_from_probability(p[i], set.labels[i]);
  return loss / static_cast<double>(p.size());
}

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> valid_loss;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

// Minibatch training with validation-loss early stopping. Returns the
// parameters of the epoch with the strictly lowest validation loss.
inline TrainResult train(MlpModel model, const DenseMatrix& x, std::span<const int> y,
                         const EvalSet& valid, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() != y.size()) throw InvalidArgument("train: label count mismatch");
  if (x.rows() == 0) throw InvalidArgument("train: empty training set");
  if (valid.labels.empty()) throw InvalidArgument("train: empty validation set");
  set_dropout(model, cfg);

  Rng rng(cfg.seed);
  OptimizerState state;
  TrainResult out{model, {}};
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double tl = run_epochs(model, x, y, cfg, 1, rng, state);
    const double vl = evaluation_loss(model, valid);
    if (!std::isfinite(vl)) throw TrainingDiverged("training diverged: non-finite validation loss");
    out.history.train_loss.push_back(tl);
    out.history.valid_loss.push_back(vl);
    out.history.stopped_epoch = epoch;
    if (vl < best) {
      best = vl;
      out.model = model;
      out.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   #dcsim-mlp v1
//   layers <d0> <d1> ... <dL>
//   dropout <p1> ... <pH>
//   weight <l> <rows> <cols>
//   <row values>
//   bias <l> <len>
//   <values>

namespace detail {
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline void write_checkpoint(const MlpModel& model, std::ostream& out) {
  out << "#dcsim-mlp v1\nlayers";
  for (auto d : model.layer_dims) out << ' ' << d;
  out << "\ndropout";
  for (double p : model.dropout_rates) out << ' ' << detail::fmt17(p);
  out << '\n';
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    const auto& w = model.weights[l];
    out << "weight " << l << ' ' << w.rows() << ' ' << w.cols() << '\n';
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) out << (j ? " " : "") << detail::fmt17(w(i, j));
      out << '\n';
    }
    out << "bias " << l << ' ' << model.biases[l].size() << '\n';
    for (std::size_t j = 0; j < model.biases[l].size(); ++j) {
      out << (j ? " " : "") << detail::fmt17(model.biases[l][j]);
    }
    out << '\n';
  }
}

inline MlpModel read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "#dcsim-mlp v1") throw DataError("checkpoint: bad header");
  auto expect = [&in](const std::string& word) {
    std::string w;
    if (!(in >> w) || w != word) throw DataError("checkpoint: expected '" + word + "'");
  };
  MlpModel model;
  expect("layers");
  std::getline(in, line);
  {
    std::istringstream ls(line);
    std::size_t d;
    while (ls >> d) model.layer_dims.push_back(d);
  }
  if (model.layer_dims.size() < 3) throw DataError("checkpoint: too few layers");
  expect("dropout");
  std::getline(in, line);
  {
    std::istringstream ls(line);
    double p;
    while (ls >> p) model.dropout_rates.push_back(p);
  }
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    std::size_t idx, r, c;
    expect("weight");
    if (!(in >> idx >> r >> c) || idx != l || r != model.layer_dims[l] || c != model.layer_dims[l + 1]) {
      throw DataError("checkpoint: weight header mismatch");
    }
    DenseMatrix w(r, c);
    for (double& v : w.values())
      if (!(in >> v)) throw DataError("checkpoint: truncated weights");
    std::size_t len;
    expect("bias");
    if (!(in >> idx >> len) || idx != l || len != c) throw DataError("checkpoint: bias header mismatch");
    std::vector<double> b(len);
    for (double& v : b)
      if (!(in >> v)) throw DataError("checkpoint: truncated bias");
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

inline void save_checkpoint(const MlpModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(model, out);
  if (!out) throw IoError("write failed: " + path);
}

inline MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace dcsim
