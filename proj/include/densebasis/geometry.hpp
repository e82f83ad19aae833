#pragma once

// Second-order geometry of embedding matrices: covariance, spectra, effective
// rank, conditioning, principal subspaces and distances between subspaces.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "densebasis/matrix.hpp"

namespace densebasis {

/// Uncentered covariance (1/N) Z^T Z, symmetric to the last bit.
inline Matrix covariance(const Matrix& z) {
  require(z.rows() >= 1 && z.cols() >= 1, "covariance: empty matrix");
  require_finite(z, "covariance");
  Matrix s = (z.transpose() * z) / static_cast<double>(z.rows());
  return 0.5 * (s + s.transpose());
}

inline Matrix covariance(const EmbeddingMatrix& z) { return covariance(z.data()); }

/// Subtracts the column means, so rows are centered around the origin.
inline EmbeddingMatrix center_rows(const EmbeddingMatrix& z) {
  const Eigen::RowVectorXd mean = z.data().colwise().mean();
  return EmbeddingMatrix(z.data().rowwise() - mean);
}

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
  int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline EigenDecomposition jacobi_eigen(const Matrix& s, int max_sweeps = 100) {
  require(s.rows() == s.cols() && s.rows() >= 1, "jacobi_eigen: matrix must be square, got " + shape_str(s));
  require_finite(s, "jacobi_eigen");
  require(is_symmetric(s, 1e-9), "jacobi_eigen: matrix is not symmetric");

  const Index d = s.rows();
  Matrix a = 0.5 * (s + s.transpose());
  Matrix v = Matrix::Identity(d, d);
  const double norm = a.norm();

  auto off_norm = [&]() {
    double acc = 0.0;
    for (Index i = 0; i < d; ++i)
      for (Index j = i + 1; j < d; ++j) acc += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(acc);
  };

  int sweep = 0;
  if (norm > 0.0) {
    const double target = 1e-15 * norm;
    while (off_norm() > target) {
      if (sweep == max_sweeps)
        throw NumericalFailure("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) + " sweeps",
                               static_cast<std::size_t>(sweep));
      ++sweep;
      for (Index p = 0; p < d - 1; ++p) {
        for (Index q = p + 1; q < d; ++q) {
          const double apq = a(p, q);
          if (apq == 0.0) continue;
          const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
          const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double sn = t * c;
          for (Index k = 0; k < d; ++k) {
            const double tp = a(k, p), tq = a(k, q);
            a(k, p) = c * tp - sn * tq;
            a(k, q) = sn * tp + c * tq;
          }
          for (Index k = 0; k < d; ++k) {
            const double tp = a(p, k), tq = a(q, k);
            a(p, k) = c * tp - sn * tq;
            a(q, k) = sn * tp + c * tq;
          }
          a(p, q) = a(q, p) = 0.0;
          for (Index k = 0; k < d; ++k) {
            const double tp = v(k, p), tq = v(k, q);
            v(k, p) = c * tp - sn * tq;
            v(k, q) = sn * tp + c * tq;
          }
        }
      }
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) > a(j, j); });

  EigenDecomposition out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Index i = 0; i < d; ++i) {
    out.values[i] = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  out.sweeps = sweep;
  return out;
}

/// Eigenvalues of a covariance matrix with their normalized distribution.
class CovarianceSpectrum {
 public:
  CovarianceSpectrum() = default;

  /// Takes eigenvalues in any order; sorts, clamps values below
  /// 1e-10 * trace to zero and rejects clearly negative values.
  explicit CovarianceSpectrum(std::vector<double> eigenvalues) : eigenvalues_(std::move(eigenvalues)) {
    require(!eigenvalues_.empty(), "spectrum: no eigenvalues");
    for (double x : eigenvalues_)
      if (!std::isfinite(x)) throw NonFiniteInput("spectrum: non-finite eigenvalue");
    std::sort(eigenvalues_.begin(), eigenvalues_.end(), std::greater<>());
    double raw_trace = 0.0;
    for (double x : eigenvalues_) raw_trace += std::max(x, 0.0);
    const double tol = 1e-10 * raw_trace;
    const double scale = std::max(raw_trace, std::abs(eigenvalues_.back()));
    if (eigenvalues_.back() < -std::max(tol, 1e-9 * scale))
      throw InvalidInput("spectrum: matrix is not positive semidefinite (eigenvalue " +
                         std::to_string(eigenvalues_.back()) + ")");
    for (double& x : eigenvalues_)
      if (x < tol) x = 0.0;
    trace_ = 0.0;
    for (double x : eigenvalues_) trace_ += x;
    probs_.assign(eigenvalues_.size(), 0.0);
    if (trace_ > 0.0)
      for (std::size_t i = 0; i < eigenvalues_.size(); ++i) probs_[i] = eigenvalues_[i] / trace_;
  }

  const std::vector<double>& eigenvalues() const noexcept { return eigenvalues_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  double trace() const noexcept { return trace_; }
  std::size_t size() const noexcept { return eigenvalues_.size(); }

 private:
  std::vector<double> eigenvalues_;
  std::vector<double> probs_;
  double trace_ = 0.0;
};

inline CovarianceSpectrum spectrum(const Matrix& s) {
  const EigenDecomposition eig = jacobi_eigen(s);
  return CovarianceSpectrum(std::vector<double>(eig.values.data(), eig.values.data() + eig.values.size()));
}

/// Shannon entropy (nats) of the normalized spectrum, with 0 log 0 = 0.
inline double spectral_entropy(const CovarianceSpectrum& spec) {
  if (!(spec.trace() > 0.0)) throw DegenerateSpectrum("spectral entropy of a zero-trace spectrum");
  double h = 0.0;
  for (double p : spec.probs())
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline double effective_rank(const CovarianceSpectrum& spec) {
  const double r = std::exp(spectral_entropy(spec));
  return std::clamp(r, 1.0, static_cast<double>(spec.size()));
}

/// lambda_max / max(lambda_min, floor). The default floor is 1e-12 * lambda_max.
inline double condition_number(const CovarianceSpectrum& spec, std::optional<double> floor = std::nullopt) {
  const double top = spec.eigenvalues().front();
  if (!(top > 0.0)) throw DegenerateSpectrum("condition number of an all-zero spectrum");
  const double f = floor.value_or(1e-12 * top);
  require(f > 0.0, "condition_number: floor must be positive");
  return std::max(1.0, top / std::max(spec.eigenvalues().back(), f));
}

namespace detail {

// Modified Gram-Schmidt in place. When a column collapses, substitutes the
// first canonical axis with a usable residual if `fallback` is set.
inline bool orthonormalize_inplace(Matrix& u, bool fallback) {
  const Index d = u.rows();
  const Index k = u.cols();
  const double scale = std::max(u.norm(), std::numeric_limits<double>::min());
  Index next_axis = 0;
  for (Index j = 0; j < k; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (Index i = 0; i < j; ++i) u.col(j) -= u.col(i).dot(u.col(j)) * u.col(i);
    double n = u.col(j).norm();
    while (n <= 1e-12 * scale) {
      if (!fallback || next_axis >= d) return false;
      u.col(j) = Vector::Unit(d, next_axis++);
      for (int pass = 0; pass < 2; ++pass)
        for (Index i = 0; i < j; ++i) u.col(j) -= u.col(i).dot(u.col(j)) * u.col(i);
      n = u.col(j).norm();
      if (n <= 0.5) n = 0.0;
    }
    u.col(j) /= n;
  }
  return true;
}

}  // namespace detail

/// d x k matrix with orthonormal columns.
class SubspaceBasis {
 public:
  explicit SubspaceBasis(Matrix basis) : basis_(std::move(basis)) {
    require(basis_.cols() >= 1 && basis_.cols() <= basis_.rows(),
            "subspace basis must satisfy 1 <= k <= d, got " + shape_str(basis_));
    require_finite(basis_, "subspace basis");
    const Matrix gram = basis_.transpose() * basis_;
    require((gram - Matrix::Identity(k(), k())).norm() <= 1e-8, "subspace basis columns are not orthonormal");
  }

  /// Orthonormal basis for the column span of `columns`.
  static SubspaceBasis span_of(Matrix columns) {
    require(columns.cols() >= 1 && columns.cols() <= columns.rows(), "span_of: need 1 <= k <= d");
    require_finite(columns, "span_of");
    if (!detail::orthonormalize_inplace(columns, false))
      throw InvalidInput("span_of: columns are linearly dependent");
    return SubspaceBasis(std::move(columns));
  }

  const Matrix& basis() const noexcept { return basis_; }
  Index dim() const noexcept { return basis_.rows(); }
  Index k() const noexcept { return basis_.cols(); }

 private:
  Matrix basis_;
};

/// ||P_A - P_B||_F^2 through 2k - 2 ||A^T B||_F^2, clamped to [0, 2k].
inline double projection_distance(const SubspaceBasis& a, const SubspaceBasis& b) {
  require(a.dim() == b.dim() && a.k() == b.k(), "projection_distance: subspaces differ in d or k");
  const double k = static_cast<double>(a.k());
  const double overlap = (a.basis().transpose() * b.basis()).squaredNorm();
  return std::clamp(2.0 * k - 2.0 * overlap, 0.0, 2.0 * k);
}

/// Principal angles in ascending order, from the singular values of A^T B.
inline std::vector<double> principal_angles(const SubspaceBasis& a, const SubspaceBasis& b) {
  require(a.dim() == b.dim() && a.k() == b.k(), "principal_angles: subspaces differ in d or k");
  const Matrix m = a.basis().transpose() * b.basis();
  const EigenDecomposition eig = jacobi_eigen(m.transpose() * m);
  std::vector<double> angles;
  angles.reserve(static_cast<std::size_t>(eig.values.size()));
  for (Index i = 0; i < eig.values.size(); ++i) {
    const double cosine = std::clamp(std::sqrt(std::max(eig.values[i], 0.0)), 0.0, 1.0);
    angles.push_back(std::acos(cosine));
  }
  std::sort(angles.begin(), angles.end());
  return angles;
}

struct PrincipalSubspace {
  SubspaceBasis basis;
  bool degenerate_gap = false;  // lambda_k - lambda_{k+1} below tolerance
  bool converged = false;
  std::size_t iterations = 0;
};

struct PowerIterationOptions {
  std::size_t max_iters = 1000;
  double tol = 1e-9;           // on successive projection distance
  double gap_rel_tol = 1e-6;   // relative to trace
  std::uint64_t start_seed = 0x5eed5eedULL;
};

/// Top-k eigenspace of a covariance matrix by orthogonal iteration.
inline PrincipalSubspace principal_subspace_of_covariance(const Matrix& s, Index k,
                                                          const PowerIterationOptions& opts = {}) {
  const Index d = s.rows();
  require(s.cols() == d, "principal_subspace: covariance must be square");
  require(k >= 1 && k <= d, "principal_subspace: need 1 <= k <= d, got k=" + std::to_string(k));

  const CovarianceSpectrum spec = spectrum(s);
  const auto& lam = spec.eigenvalues();
  bool degenerate = !(spec.trace() > 0.0);
  if (k < d) degenerate = degenerate || (lam[k - 1] - lam[k] <= opts.gap_rel_tol * spec.trace());

  std::mt19937_64 rng(opts.start_seed);
  std::normal_distribution<double> normal;
  Matrix u(d, k);
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < d; ++i) u(i, j) = normal(rng);
  detail::orthonormalize_inplace(u, true);

  std::size_t it = 0;
  bool converged = false;
  while (it < opts.max_iters) {
    ++it;
    Matrix next = s * u;
    detail::orthonormalize_inplace(next, true);
    const double overlap = (u.transpose() * next).squaredNorm();
    const double step = std::max(0.0, 2.0 * static_cast<double>(k) - 2.0 * overlap);
    u = std::move(next);
    if (step < opts.tol) {
      converged = true;
      break;
    }
  }
  if (!converged && !degenerate)
    throw NumericalFailure("principal_subspace: orthogonal iteration did not converge after " +
                               std::to_string(it) + " iterations",
                           it);
  return PrincipalSubspace{SubspaceBasis(std::move(u)), degenerate, converged, it};
}

inline PrincipalSubspace principal_subspace(const EmbeddingMatrix& z, Index k, const PowerIterationOptions& opts = {}) {
  require(k >= 1 && k <= z.n_cols(), "principal_subspace: need 1 <= k <= d, got k=" + std::to_string(k));
  return principal_subspace_of_covariance(covariance(z), k, opts);
}

struct StandardizedColumns {
  Matrix values;
  Eigen::RowVectorXd means;
  Eigen::RowVectorXd stds;
  std::vector<Index> constant_columns;
};

namespace detail {

inline StandardizedColumns standardize(const Matrix& zb, double eps) {
  require(zb.rows() >= 2, "standardize_columns: need at least 2 rows, got " + std::to_string(zb.rows()));
  require_finite(zb, "standardize_columns");
  StandardizedColumns out;
  const double b = static_cast<double>(zb.rows());
  out.means = zb.colwise().mean();
  out.values = zb.rowwise() - out.means;
  out.stds = (out.values.colwise().squaredNorm() / b).cwiseSqrt();
  for (Index j = 0; j < zb.cols(); ++j) {
    if (out.stds[j] < eps) {
      out.values.col(j).setZero();
      out.constant_columns.push_back(j);
    } else {
      out.values.col(j) /= out.stds[j];
    }
  }
  return out;
}

}  // namespace detail

/// Zero mean, unit population variance per column. Columns with std < eps
/// become all zeros and are listed in `constant_columns`.
inline StandardizedColumns standardize_columns(const EmbeddingMatrix& zb, double eps = 1e-8) {
  return detail::standardize(zb.data(), eps);
}

}  // namespace densebasis
