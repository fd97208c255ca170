#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcsim/errors.hpp"

namespace dcsim {

// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      throw InvalidArgument("DenseMatrix: value count does not match shape");
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw InvalidArgument("DenseMatrix: ragged initializer");
      v.insert(v.end(), row.begin(), row.end());
    }
    return DenseMatrix(r, c, std::move(v));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {values_.data() + r * cols_, cols_};
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline bool all_finite(const DenseMatrix& a) {
  return std::all_of(a.values().begin(), a.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// a * b
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimensions differ");
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// aᵀ * b
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("matmul_tn: row counts differ");
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ak = a.row(k);
    auto bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

inline DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument("subtract: shape mismatch");
  }
  DenseMatrix c = a;
  auto cv = c.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] -= bv[i];
  return c;
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

// Subtracts `offset` from every row.
inline DenseMatrix subtract_row_vector(const DenseMatrix& a, std::span<const double> offset) {
  if (offset.size() != a.cols()) throw InvalidArgument("subtract_row_vector: length mismatch");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    auto r = c.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] -= offset[j];
  }
  return c;
}

inline DenseMatrix hconcat(std::span<const DenseMatrix> blocks) {
  if (blocks.empty()) return {};
  const std::size_t rows = blocks.front().rows();
  std::size_t cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != rows) throw InvalidArgument("hconcat: row counts differ");
    cols += b.cols();
  }
  DenseMatrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    auto dst = out.row(i).begin();
    for (const auto& b : blocks) dst = std::copy(b.row(i).begin(), b.row(i).end(), dst);
  }
  return out;
}

inline DenseMatrix vconcat(std::span<const DenseMatrix> blocks) {
  if (blocks.empty()) return {};
  const std::size_t cols = blocks.front().cols();
  std::size_t rows = 0;
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw InvalidArgument("vconcat: column counts differ");
    rows += b.rows();
  }
  std::vector<double> v;
  v.reserve(rows * cols);
  for (const auto& b : blocks) v.insert(v.end(), b.values().begin(), b.values().end());
  return DenseMatrix(rows, cols, std::move(v));
}

inline DenseMatrix select_rows(const DenseMatrix& a, std::span<const std::size_t> indices) {
  DenseMatrix out(indices.size(), a.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.rows()) throw InvalidArgument("select_rows: index out of range");
    std::copy(a.row(indices[i]).begin(), a.row(indices[i]).end(), out.row(i).begin());
  }
  return out;
}

inline DenseMatrix first_columns(const DenseMatrix& a, std::size_t k) {
  DenseMatrix out(a.rows(), k);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy_n(a.row(i).begin(), k, out.row(i).begin());
  return out;
}

struct TruncatedSvdResult {
  DenseMatrix u;                       // n x k, orthonormal columns
  std::vector<double> singular_values; // length k, non-increasing
  DenseMatrix v;                       // m x k, orthonormal columns
};

namespace detail {

// Thin Householder QR of a tall matrix (rows >= cols). Returns Q (rows x cols)
// and the upper-triangular R (cols x cols).
inline std::pair<DenseMatrix, DenseMatrix> householder_qr(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  DenseMatrix r = a;
  std::vector<std::vector<double>> reflectors(n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = j; i < m; ++i) norm += r(i, j) * r(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    const double alpha = r(j, j) > 0 ? -norm : norm;
    std::vector<double> v(m - j);
    for (std::size_t i = j; i < m; ++i) v[i - j] = r(i, j);
    v[0] -= alpha;
    double vnorm = 0.0;
    for (double x : v) vnorm += x * x;
    vnorm = std::sqrt(vnorm);
    if (vnorm == 0.0) continue;
    for (double& x : v) x /= vnorm;
    for (std::size_t c = j; c < n; ++c) {
      double dot = 0.0;
      for (std::size_t i = j; i < m; ++i) dot += v[i - j] * r(i, c);
      dot *= 2.0;
      for (std::size_t i = j; i < m; ++i) r(i, c) -= dot * v[i - j];
    }
    reflectors[j] = std::move(v);
  }

  DenseMatrix q(m, n);
  for (std::size_t i = 0; i < n; ++i) q(i, i) = 1.0;
  for (std::size_t jj = n; jj-- > 0;) {
    const auto& v = reflectors[jj];
    if (v.empty()) continue;
    for (std::size_t c = 0; c < n; ++c) {
      double dot = 0.0;
      for (std::size_t i = jj; i < m; ++i) dot += v[i - jj] * q(i, c);
      dot *= 2.0;
      for (std::size_t i = jj; i < m; ++i) q(i, c) -= dot * v[i - jj];
    }
  }

  DenseMatrix rtop(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = i; c < n; ++c) rtop(i, c) = r(i, c);
  return {std::move(q), std::move(rtop)};
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One-sided (Hestenes) Jacobi on a square matrix. On return the rows of
// `cols` hold the mutually orthogonal columns B*V and the rows of `vt` hold
// the columns of V.
inline void one_sided_jacobi(DenseMatrix& cols, DenseMatrix& vt) {
  const std::size_t n = cols.rows();
  constexpr double tol = 1e-15;
  constexpr int max_sweeps = 80;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto wp = cols.row(p);
        auto wq = cols.row(q);
        const double alpha = dot(wp, wp);
        const double beta = dot(wq, wq);
        const double gamma = dot(wp, wq);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < wp.size(); ++i) {
          const double x = wp[i];
          const double y = wq[i];
          wp[i] = c * x - s * y;
          wq[i] = s * x + c * y;
        }
        auto vp = vt.row(p);
        auto vq = vt.row(q);
        for (std::size_t i = 0; i < vp.size(); ++i) {
          const double x = vp[i];
          const double y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) return;
  }
}

// Thin SVD of a tall matrix (rows >= cols >= 1), unsorted and unsigned.
inline TruncatedSvdResult thin_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  auto [q, r] = householder_qr(a);
  DenseMatrix cols = transpose(r);  // row j = column j of R
  DenseMatrix vt = DenseMatrix::identity(n);
  one_sided_jacobi(cols, vt);

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(dot(cols.row(j), cols.row(j)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  TruncatedSvdResult out{DenseMatrix(m, n), std::vector<double>(n), DenseMatrix(n, n)};
  const double smax = sigma[order[0]];
  std::vector<bool> null_column(n, false);
  DenseMatrix ur(n, n);  // left vectors in R-space, column-wise
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    out.singular_values[jj] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, jj) = vt(j, i);
    if (sigma[j] <= smax * 1e-15 || sigma[j] == 0.0) {
      null_column[jj] = true;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) ur(i, jj) = cols(j, i) / sigma[j];
  }

  // Null directions get an arbitrary orthonormal completion so that u keeps
  // orthonormal columns for rank-deficient input.
  for (std::size_t jj = 0; jj < n; ++jj) {
    if (!null_column[jj]) continue;
    for (std::size_t e = 0; e < n; ++e) {
      std::vector<double> cand(n, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t other = 0; other < n; ++other) {
          if (other == jj || (null_column[other] && other > jj)) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < n; ++i) d += ur(i, other) * cand[i];
          for (std::size_t i = 0; i < n; ++i) cand[i] -= d * ur(i, other);
        }
      }
      const double nrm = std::sqrt(dot(cand, cand));
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < n; ++i) ur(i, jj) = cand[i] / nrm;
        break;
      }
    }
  }
  out.u = matmul(q, ur);
  return out;
}

}  // namespace detail

// Top-k singular triplets. Sign convention: the first entry of each column of
// v whose magnitude exceeds 1e-12 is positive.
inline TruncatedSvdResult truncated_svd(const DenseMatrix& a, std::size_t k) {
  const std::size_t r = std::min(a.rows(), a.cols());
  if (k < 1 || k > r) throw InvalidArgument("truncated_svd: k out of range");
  if (!all_finite(a)) throw InvalidArgument("truncated_svd: non-finite input");

  TruncatedSvdResult full;
  if (a.rows() >= a.cols()) {
    full = detail::thin_svd_tall(a);
  } else {
    auto t = detail::thin_svd_tall(transpose(a));
    full.u = std::move(t.v);
    full.v = std::move(t.u);
    full.singular_values = std::move(t.singular_values);
  }

  TruncatedSvdResult out{first_columns(full.u, k),
                         std::vector<double>(full.singular_values.begin(),
                                             full.singular_values.begin() + static_cast<std::ptrdiff_t>(k)),
                         first_columns(full.v, k)};
  for (std::size_t j = 0; j < k; ++j) {
    double lead = 0.0;
    for (std::size_t i = 0; i < out.v.rows(); ++i) {
      if (std::abs(out.v(i, j)) > 1e-12) {
        lead = out.v(i, j);
        break;
      }
    }
    if (lead < 0) {
      for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, j) = -out.v(i, j);
      for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, j) = -out.u(i, j);
    }
  }
  return out;
}

// Minimum-norm least-squares solution X = A⁺B. Singular values below
// 1e-12 * sigma_max are treated as zero.
inline DenseMatrix solve_least_squares(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("solve_least_squares: row counts differ");
  if (!all_finite(a) || !all_finite(b)) {
    throw InvalidArgument("solve_least_squares: non-finite input");
  }
  const std::size_t r = std::min(a.rows(), a.cols());
  if (r == 0) return DenseMatrix(a.cols(), b.cols());

  const auto svd = truncated_svd(a, r);
  const double cutoff = 1e-12 * svd.singular_values.front();
  DenseMatrix utb = matmul_tn(svd.u, b);  // r x b.cols
  for (std::size_t i = 0; i < r; ++i) {
    const double s = svd.singular_values[i];
    const double inv = (s > cutoff && s > 0.0) ? 1.0 / s : 0.0;
    for (double& x : utb.row(i)) x *= inv;
  }
  return matmul(svd.v, utb);
}

struct CenteredColumns {
  DenseMatrix centered;
  std::vector<double> mean;
};

inline std::vector<double> column_means(const DenseMatrix& a) {
  if (a.rows() == 0) throw InvalidArgument("column_means: empty matrix");
  std::vector<double> mean(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(a.rows());
  return mean;
}

inline CenteredColumns center_columns(const DenseMatrix& a) {
  if (a.rows() == 0) throw InvalidArgument("center_columns: empty matrix");
  auto mean = column_means(a);
  return {subtract_row_vector(a, mean), std::move(mean)};
}

// CSV, one row per line, 17 significant digits.
inline void write_matrix_csv(const DenseMatrix& a, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char buf[32];
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", a(i, j));
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace dcsim
