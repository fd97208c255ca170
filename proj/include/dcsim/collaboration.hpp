#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcsim/datasets.hpp"
#include "dcsim/errors.hpp"
#include "dcsim/linalg.hpp"

namespace dcsim {

// Linear dimensionality reduction x -> (x - mean) * weights.
struct Projection {
  std::vector<double> mean;  // length m
  DenseMatrix weights;       // m x k

  std::size_t input_dim() const noexcept { return weights.rows(); }
  std::size_t output_dim() const noexcept { return weights.cols(); }

  DenseMatrix apply(const DenseMatrix& x) const {
    if (x.cols() != input_dim()) throw InvalidArgument("Projection::apply: column count mismatch");
    return matmul(subtract_row_vector(x, mean), weights);
  }
};

// Truncated-SVD (PCA) projection onto the top-k right singular vectors of the
// column-centred data.
inline Projection fit_projection(const DenseMatrix& x, std::size_t k) {
  if (k < 1 || k > std::min(x.rows(), x.cols()) || k >= x.cols()) {
    throw InvalidArgument("fit_projection: k out of range");
  }
  auto [centered, mean] = center_columns(x);
  double max_abs = 0.0;
  for (double v : centered.values()) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) throw InvalidArgument("fit_projection: zero-variance input");
  auto svd = truncated_svd(centered, k);
  return Projection{std::move(mean), std::move(svd.v)};
}

// How intermediate representations are centred before leaving the user.
//   anchor_reference: both X̃_i and X̃_i^anc are shifted by the column means of
//     X̃_i^anc, so every user's collaboration space shares the anchor origin.
//   own_mean: each matrix is shifted by its own column means.
enum class CenteringMode { anchor_reference, own_mean };

// Data used to fit the first DCPd projection f_i.
enum class FirstProjectionSource { user_data, anchor_data };

struct IntermediateOptions {
  CenteringMode centering = CenteringMode::anchor_reference;
  FirstProjectionSource dcpd_first_projection = FirstProjectionSource::user_data;
};

// The only user-derived data the server receives.
struct SharedIntermediate {
  std::size_t user_id = 0;
  DenseMatrix x_tilde;      // s_i x k_total
  DenseMatrix x_anc_tilde;  // a x k_total
  std::vector<int> labels;
};

// Private to the user; reproduces the intermediate transform on new data.
struct UserTransform {
  std::vector<Projection> projections;  // one (DC) or two (DCPd), concatenated
  std::vector<double> offset;           // subtracted after concatenation

  std::size_t input_dim() const { return projections.front().input_dim(); }

  std::size_t output_dim() const {
    std::size_t k = 0;
    for (const auto& p : projections) k += p.output_dim();
    return k;
  }

  DenseMatrix apply(const DenseMatrix& x) const {
    std::vector<DenseMatrix> blocks;
    blocks.reserve(projections.size());
    for (const auto& p : projections) blocks.push_back(p.apply(x));
    return subtract_row_vector(hconcat(blocks), offset);
  }
};

struct IntermediateBundle {
  SharedIntermediate shared;
  UserTransform transform;
};

namespace detail {

inline IntermediateBundle build_bundle(std::size_t user_id, const LabeledDataset& x,
                                       const LabeledDataset& x_anc, std::vector<Projection> projections,
                                       CenteringMode centering) {
  UserTransform t{std::move(projections), {}};
  std::vector<DenseMatrix> xb, ab;
  for (const auto& p : t.projections) {
    xb.push_back(p.apply(x.features));
    ab.push_back(p.apply(x_anc.features));
  }
  DenseMatrix x_raw = hconcat(xb);
  DenseMatrix anc_raw = hconcat(ab);

  auto anc_centered = center_columns(anc_raw);
  SharedIntermediate shared{user_id, {}, std::move(anc_centered.centered), x.labels};
  if (centering == CenteringMode::anchor_reference || x_raw.rows() == 0) {
    t.offset = std::move(anc_centered.mean);
    shared.x_tilde = subtract_row_vector(x_raw, t.offset);
  } else {
    auto own = center_columns(x_raw);
    t.offset = std::move(own.mean);
    shared.x_tilde = std::move(own.centered);
  }
  return {std::move(shared), std::move(t)};
}

inline void check_same_dim(const LabeledDataset& a, const LabeledDataset& b, const char* what) {
  if (a.feature_dim != b.feature_dim || a.features.cols() != b.features.cols()) {
    throw InvalidArgument(std::string(what) + ": feature dimensions differ");
  }
}

}  // namespace detail

// DC user side: f_i fitted on the user's own data.
inline IntermediateBundle dc_user_phase(std::size_t user_id, const LabeledDataset& x,
                                        const LabeledDataset& x_anc, std::size_t k,
                                        const IntermediateOptions& options = {}) {
  detail::check_same_dim(x, x_anc, "dc_user_phase");
  if (x_anc.size() == 0) throw InvalidArgument("dc_user_phase: empty anchor");
  std::vector<Projection> proj{fit_projection(x.features, k)};
  return detail::build_bundle(user_id, x, x_anc, std::move(proj), options.centering);
}

// DCPd user side: [f_i | f_i^p], with f_i^p fitted on the user's projection data.
inline IntermediateBundle dcpd_user_phase(std::size_t user_id, const LabeledDataset& x,
                                          const LabeledDataset& x_anc, const LabeledDataset& x_proj,
                                          std::size_t k1, std::size_t k2,
                                          const IntermediateOptions& options = {}) {
  detail::check_same_dim(x, x_anc, "dcpd_user_phase");
  detail::check_same_dim(x, x_proj, "dcpd_user_phase");
  if (x_anc.size() == 0) throw InvalidArgument("dcpd_user_phase: empty anchor");
  if (k1 + k2 >= x.feature_dim) throw InvalidArgument("dcpd_user_phase: k1 + k2 must be < m");
  const auto& first_source = options.dcpd_first_projection == FirstProjectionSource::user_data
                                 ? x.features
                                 : x_anc.features;
  std::vector<Projection> proj{fit_projection(first_source, k1), fit_projection(x_proj.features, k2)};
  return detail::build_bundle(user_id, x, x_anc, std::move(proj), options.centering);
}

// Server-side result. Computed from SharedIntermediate only.
struct Alignment {
  std::vector<DenseMatrix> g;  // per user, k_total_i x k_collab
  DenseMatrix u1;              // a x k_collab
  DenseMatrix x_hat;           // sum s_i x k_collab, user blocks in order
  std::vector<int> y;
  std::vector<std::size_t> block_start;  // first x_hat row of each user
};

inline Alignment align_intermediates(std::span<const SharedIntermediate> users, std::size_t k_collab) {
  if (users.empty()) throw InvalidArgument("server_collaboration: no users");
  const std::size_t a = users.front().x_anc_tilde.rows();
  std::size_t k_sum = 0;
  std::vector<DenseMatrix> anchor_blocks;
  for (const auto& u : users) {
    if (u.x_anc_tilde.rows() != a) throw InvalidArgument("server_collaboration: inconsistent anchor rows");
    if (u.x_tilde.cols() != u.x_anc_tilde.cols()) {
      throw InvalidArgument("server_collaboration: intermediate widths differ");
    }
    if (u.labels.size() != u.x_tilde.rows()) throw InvalidArgument("server_collaboration: label count");
    k_sum += u.x_anc_tilde.cols();
    anchor_blocks.push_back(u.x_anc_tilde);
  }
  if (k_collab < 1 || k_collab > std::min(a, k_sum)) {
    throw InvalidArgument("server_collaboration: k_collab out of range");
  }

  Alignment out;
  out.u1 = truncated_svd(hconcat(anchor_blocks), k_collab).u;
  std::vector<DenseMatrix> hat_blocks;
  std::size_t row = 0;
  for (const auto& u : users) {
    out.g.push_back(solve_least_squares(u.x_anc_tilde, out.u1));
    hat_blocks.push_back(matmul(u.x_tilde, out.g.back()));
    out.y.insert(out.y.end(), u.labels.begin(), u.labels.end());
    out.block_start.push_back(row);
    row += u.x_tilde.rows();
  }
  out.x_hat = vconcat(hat_blocks);
  if (out.x_hat.cols() != k_collab) out.x_hat = DenseMatrix(0, k_collab);
  return out;
}

struct CollaborationModel {
  std::vector<DenseMatrix> g;
  DenseMatrix u1;
  DenseMatrix x_hat;
  std::vector<int> y;
  std::vector<std::size_t> block_start;
  std::vector<UserTransform> transforms;

  std::size_t n_users() const noexcept { return g.size(); }
  std::size_t k_collab() const noexcept { return u1.cols(); }
};

inline CollaborationModel server_collaboration(std::span<const IntermediateBundle> bundles,
                                               std::size_t k_collab) {
  std::vector<SharedIntermediate> shared;
  shared.reserve(bundles.size());
  for (const auto& b : bundles) shared.push_back(b.shared);
  auto al = align_intermediates(shared, k_collab);
  CollaborationModel model{std::move(al.g), std::move(al.u1), std::move(al.x_hat),
                           std::move(al.y), std::move(al.block_start), {}};
  for (const auto& b : bundles) model.transforms.push_back(b.transform);
  return model;
}

// Maps raw test features into the collaboration space through user `user`'s
// private transform and alignment matrix.
inline DenseMatrix transform_test(const CollaborationModel& model, std::size_t user,
                                  const DenseMatrix& x_test) {
  if (user >= model.n_users()) throw InvalidArgument("transform_test: unknown user id");
  const auto& t = model.transforms[user];
  if (x_test.cols() != t.input_dim()) throw InvalidArgument("transform_test: feature dimension mismatch");
  return matmul(t.apply(x_test), model.g[user]);
}

}  // namespace dcsim
