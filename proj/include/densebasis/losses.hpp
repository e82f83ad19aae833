#pragma once

// Dense-feature losses on embedding matrices and their exact gradients.
//
//   spectral    ||Sigma/tr(Sigma) - I/d||_F^2,       Sigma = Z^T Z / N
//   subspace    ||U_a U_a^T - U_b U_b^T||_F^2       (top-k bases of Z_a, Z_b)
//   orthogonal  ||Zs^T Zs / B - I||_F^2,            Zs = column-standardized batch
//
// The subspace bases come from a fixed number of orthogonal-iteration steps
// with a deterministic start, so the subspace term is an ordinary smooth
// function of Z and its gradient is the derivative of that unrolled loop.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "densebasis/geometry.hpp"

namespace densebasis {

struct LossWeights {
  double lambda_sub = 1.0;
  double lambda_orth = 1.0;
  // 1 for the standard objective; 0 drops the spectral term (ablation).
  double lambda_spec = 1.0;

  void validate() const {
    for (double w : {lambda_sub, lambda_orth, lambda_spec})
      require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
  }
};

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

struct CovarianceGrad {
  double value = 0.0;
  Matrix d_cov;  // dL/dSigma, symmetric
};

inline CovarianceGrad spec_loss_on_covariance(const Matrix& cov) {
  const double d = static_cast<double>(cov.rows());
  const double t = cov.trace();
  if (!(t > 0.0)) throw DegenerateInput("spectral loss: covariance has zero trace");
  Matrix a = cov / t;
  a.diagonal().array() -= 1.0 / d;
  const double inner = (a.array() * cov.array()).sum();
  CovarianceGrad out;
  out.value = a.squaredNorm();
  out.d_cov = (2.0 / t) * a;
  out.d_cov.diagonal().array() -= 2.0 * inner / (t * t);
  return out;
}

// Pulls dL/dSigma back to Z for Sigma = Z^T Z / N.
inline Matrix covariance_pullback(const Matrix& z, const Matrix& d_cov) {
  return (z * (d_cov + d_cov.transpose())) / static_cast<double>(z.rows());
}

}  // namespace detail

inline LossValue spec_loss(const Matrix& z) {
  const Matrix cov = covariance(z);
  const auto cg = detail::spec_loss_on_covariance(cov);
  return {cg.value, detail::covariance_pullback(z, cg.d_cov)};
}

inline LossValue spec_loss(const EmbeddingMatrix& z) { return spec_loss(z.data()); }

inline LossValue orth_loss(const Matrix& zb) {
  const auto st = detail::standardize(zb, 1e-8);
  const double b = static_cast<double>(zb.rows());
  const Index d = zb.cols();
  Matrix dev = (st.values.transpose() * st.values) / b;
  dev.diagonal().array() -= 1.0;
  dev = 0.5 * (dev + dev.transpose());

  LossValue out;
  out.value = dev.squaredNorm();
  const Matrix d_std = (4.0 / b) * st.values * dev;
  out.grad = Matrix::Zero(zb.rows(), d);
  std::vector<bool> constant(static_cast<std::size_t>(d), false);
  for (Index j : st.constant_columns) constant[static_cast<std::size_t>(j)] = true;
  for (Index j = 0; j < d; ++j) {
    if (constant[static_cast<std::size_t>(j)]) continue;
    const auto g = d_std.col(j).array();
    const auto zs = st.values.col(j).array();
    out.grad.col(j) = ((g - g.mean()) - zs * (g * zs).mean()) / st.stds[j];
  }
  return out;
}

inline LossValue orth_loss(const EmbeddingMatrix& zb) { return orth_loss(zb.data()); }

struct SubspaceLossOptions {
  Index k = 2;
  int unroll_iters = 30;
  double gap_rel_tol = 1e-6;  // relative to the covariance trace
};

namespace detail {

// Record of one modified Gram-Schmidt pass, enough to run it backwards.
struct GramSchmidtTape {
  Matrix q;
  std::vector<std::vector<Vector>> partial;  // partial[j][i]: column j after i projections
  std::vector<std::vector<double>> coeff;     // coeff[j][i] = q_i . partial[j][i]
  std::vector<double> norms;
};

// Returns false if a column collapses to (numerically) zero.
inline bool gram_schmidt_forward(const Matrix& y, GramSchmidtTape& tape) {
  const Index k = y.cols();
  tape.q.resize(y.rows(), k);
  tape.partial.assign(static_cast<std::size_t>(k), {});
  tape.coeff.assign(static_cast<std::size_t>(k), {});
  tape.norms.assign(static_cast<std::size_t>(k), 0.0);
  const double scale = y.norm();
  for (Index j = 0; j < k; ++j) {
    auto& steps = tape.partial[static_cast<std::size_t>(j)];
    auto& coeffs = tape.coeff[static_cast<std::size_t>(j)];
    Vector v = y.col(j);
    steps.push_back(v);
    for (Index i = 0; i < j; ++i) {
      const double r = tape.q.col(i).dot(v);
      v -= r * tape.q.col(i);
      coeffs.push_back(r);
      steps.push_back(v);
    }
    const double n = v.norm();
    if (!(n > 1e-13 * scale) || !(scale > 0.0)) return false;
    tape.norms[static_cast<std::size_t>(j)] = n;
    tape.q.col(j) = v / n;
  }
  return true;
}

inline Matrix gram_schmidt_backward(const GramSchmidtTape& tape, Matrix q_bar) {
  const Index k = tape.q.cols();
  Matrix y_bar(tape.q.rows(), k);
  for (Index j = k - 1; j >= 0; --j) {
    const auto js = static_cast<std::size_t>(j);
    const auto q = tape.q.col(j);
    Vector v_bar = (q_bar.col(j) - q * q.dot(q_bar.col(j))) / tape.norms[js];
    for (Index i = j - 1; i >= 0; --i) {
      const auto is = static_cast<std::size_t>(i);
      const double r = tape.coeff[js][is];
      const double r_bar = -tape.q.col(i).dot(v_bar);
      q_bar.col(i) += -r * v_bar + r_bar * tape.partial[js][is];
      v_bar += r_bar * tape.q.col(i);
    }
    y_bar.col(j) = v_bar;
  }
  return y_bar;
}

// Identity columns ordered by descending covariance diagonal (stable), so the
// start never picks a null axis while a non-null one is available.
inline Matrix subspace_seed(const Matrix& cov, Index k) {
  const Index d = cov.rows();
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return cov(a, a) > cov(b, b); });
  Matrix u = Matrix::Zero(d, k);
  for (Index j = 0; j < k; ++j) u(order[static_cast<std::size_t>(j)], j) = 1.0;
  return u;
}

struct UnrolledSubspace {
  Matrix z;
  Matrix cov;
  std::vector<Matrix> iterates;  // U_0 .. U_T
  std::vector<GramSchmidtTape> tapes;
  bool collapsed = false;
  bool degenerate_gap = false;
};

inline UnrolledSubspace unrolled_subspace(const Matrix& z, const SubspaceLossOptions& opts) {
  UnrolledSubspace run;
  run.z = z;
  run.cov = covariance(z);
  const Index d = z.cols();
  const Index k = opts.k;

  const CovarianceSpectrum spec = spectrum(run.cov);
  const auto& lam = spec.eigenvalues();
  if (!(spec.trace() > 0.0))
    run.degenerate_gap = true;
  else if (k < d)
    run.degenerate_gap = lam[static_cast<std::size_t>(k - 1)] - lam[static_cast<std::size_t>(k)] <=
                         opts.gap_rel_tol * spec.trace();

  run.iterates.push_back(subspace_seed(run.cov, k));
  for (int t = 0; t < opts.unroll_iters; ++t) {
    GramSchmidtTape tape;
    const Matrix y = run.cov * run.iterates.back();
    if (!gram_schmidt_forward(y, tape)) {
      // Rank below k: finish with a robust basis for the value only.
      Matrix u = y;
      detail::orthonormalize_inplace(u, true);
      run.iterates.push_back(std::move(u));
      run.collapsed = true;
      run.degenerate_gap = true;
      break;
    }
    run.iterates.push_back(tape.q);
    run.tapes.push_back(std::move(tape));
  }
  return run;
}

// dL/dZ given dL/dU_T for an unrolled run.
inline Matrix unrolled_subspace_backward(const UnrolledSubspace& run, Matrix u_bar) {
  Matrix cov_bar = Matrix::Zero(run.cov.rows(), run.cov.cols());
  for (std::size_t t = run.tapes.size(); t-- > 0;) {
    const Matrix y_bar = gram_schmidt_backward(run.tapes[t], std::move(u_bar));
    cov_bar += y_bar * run.iterates[t].transpose();
    u_bar = run.cov * y_bar;
  }
  return covariance_pullback(run.z, cov_bar);
}

}  // namespace detail

struct SubspaceLossValue {
  double value = 0.0;
  Matrix grad_a;
  Matrix grad_b;
  // Set when either covariance has lambda_k - lambda_{k+1} <= gap_rel_tol * trace
  // (or rank below k). The value is still meaningful; the gradient is not.
  bool gradient_unreliable = false;
};

/// Leading-k basis exactly as the subspace loss computes it.
inline SubspaceBasis unrolled_principal_basis(const Matrix& z, const SubspaceLossOptions& opts) {
  require(opts.k >= 1 && opts.k <= z.cols(), "unrolled basis: need 1 <= k <= d");
  require(opts.unroll_iters >= 1, "unrolled basis: unroll_iters must be >= 1");
  require_finite(z, "unrolled basis");
  return SubspaceBasis(detail::unrolled_subspace(z, opts).iterates.back());
}

inline SubspaceLossValue sub_loss(const Matrix& za, const Matrix& zb, const SubspaceLossOptions& opts = {}) {
  require(za.cols() == zb.cols(), "sub_loss: views must share d (" + shape_str(za) + " vs " + shape_str(zb) + ")");
  require(opts.k >= 1 && opts.k <= za.cols(), "sub_loss: need 1 <= k <= d, got k=" + std::to_string(opts.k));
  require(opts.unroll_iters >= 1, "sub_loss: unroll_iters must be >= 1");
  require_finite(za, "sub_loss view a");
  require_finite(zb, "sub_loss view b");

  const auto run_a = detail::unrolled_subspace(za, opts);
  const auto run_b = detail::unrolled_subspace(zb, opts);
  const Matrix& ua = run_a.iterates.back();
  const Matrix& ub = run_b.iterates.back();
  const Matrix overlap = ua.transpose() * ub;
  const double k = static_cast<double>(opts.k);

  SubspaceLossValue out;
  out.value = std::clamp(2.0 * k - 2.0 * overlap.squaredNorm(), 0.0, 2.0 * k);
  out.gradient_unreliable = run_a.degenerate_gap || run_b.degenerate_gap;
  if (run_a.collapsed || run_b.collapsed) {
    out.grad_a = Matrix::Zero(za.rows(), za.cols());
    out.grad_b = Matrix::Zero(zb.rows(), zb.cols());
    return out;
  }
  out.grad_a = detail::unrolled_subspace_backward(run_a, -4.0 * ub * overlap.transpose());
  out.grad_b = detail::unrolled_subspace_backward(run_b, -4.0 * ua * overlap);
  return out;
}

inline SubspaceLossValue sub_loss(const EmbeddingMatrix& za, const EmbeddingMatrix& zb,
                                  const SubspaceLossOptions& opts = {}) {
  return sub_loss(za.data(), zb.data(), opts);
}

struct LossReport {
  double total = 0.0;
  double spec_term = 0.0;
  double sub_term = 0.0;
  double orth_term = 0.0;
  Matrix grad_a;      // view a (spectral + subspace)
  Matrix grad_b;      // view b (subspace)
  Matrix grad_batch;  // orthogonality batch
  bool sub_gradient_unreliable = false;
};

/// Weighted objective. The spectral term reads `za`, the subspace term the
/// pair (za, zb) and the orthogonality term `batch`.
inline LossReport total_loss(const Matrix& za, const Matrix& zb, const Matrix& batch, const LossWeights& w,
                             const SubspaceLossOptions& opts = {}) {
  w.validate();
  const LossValue spec = spec_loss(za);
  const SubspaceLossValue sub = sub_loss(za, zb, opts);
  const LossValue orth = orth_loss(batch);

  LossReport r;
  r.spec_term = spec.value;
  r.sub_term = sub.value;
  r.orth_term = orth.value;
  r.total = w.lambda_spec * r.spec_term + w.lambda_sub * r.sub_term + w.lambda_orth * r.orth_term;
  r.sub_gradient_unreliable = sub.gradient_unreliable;
  r.grad_a = w.lambda_spec * spec.grad + w.lambda_sub * sub.grad_a;
  r.grad_b = w.lambda_sub * sub.grad_b;
  r.grad_batch = w.lambda_orth * orth.grad;
  return r;
}

inline LossReport total_loss(const EmbeddingMatrix& za, const EmbeddingMatrix& zb, const EmbeddingMatrix& batch,
                             const LossWeights& w, const SubspaceLossOptions& opts = {}) {
  return total_loss(za.data(), zb.data(), batch.data(), w, opts);
}

/// Same as above with the orthogonality batch being view a; its gradient is
/// folded into grad_a and grad_batch is left empty.
inline LossReport total_loss(const Matrix& za, const Matrix& zb, const LossWeights& w,
                             const SubspaceLossOptions& opts = {}) {
  LossReport r = total_loss(za, zb, za, w, opts);
  r.grad_a += r.grad_batch;
  r.grad_batch.resize(0, 0);
  return r;
}

enum class LossId { spec, sub, orth };

inline LossId parse_loss_id(const std::string& name) {
  if (name == "spec") return LossId::spec;
  if (name == "sub") return LossId::sub;
  if (name == "orth") return LossId::orth;
  throw InvalidInput("unknown loss '" + name + "' (expected spec, sub or orth)");
}

inline const char* loss_name(LossId id) {
  switch (id) {
    case LossId::spec: return "spec";
    case LossId::sub: return "sub";
    case LossId::orth: return "orth";
  }
  return "?";
}

struct GradcheckResult {
  double max_rel_error = 0.0;
  bool excluded = false;  // degenerate spectral gap: not a pass/fail case
  std::size_t entries_checked = 0;
};

/// Central differences against the analytic gradient; the error per entry is
/// |analytic - numeric| / max(1, |numeric|). `inputs` holds one matrix for
/// spec/orth and the pair (a, b) for sub.
inline GradcheckResult gradcheck(LossId id, const std::vector<Matrix>& inputs, double step,
                                 const SubspaceLossOptions& opts = {}) {
  require(step > 0.0, "gradcheck: step must be positive");
  require(inputs.size() == (id == LossId::sub ? 2u : 1u), "gradcheck: wrong number of inputs");

  auto value_of = [&](const std::vector<Matrix>& xs) {
    switch (id) {
      case LossId::spec: return spec_loss(xs[0]).value;
      case LossId::orth: return orth_loss(xs[0]).value;
      case LossId::sub: return sub_loss(xs[0], xs[1], opts).value;
    }
    return 0.0;
  };

  std::vector<Matrix> analytic;
  GradcheckResult result;
  switch (id) {
    case LossId::spec: analytic.push_back(spec_loss(inputs[0]).grad); break;
    case LossId::orth: analytic.push_back(orth_loss(inputs[0]).grad); break;
    case LossId::sub: {
      auto s = sub_loss(inputs[0], inputs[1], opts);
      if (s.gradient_unreliable) {
        result.excluded = true;
        return result;
      }
      analytic.push_back(std::move(s.grad_a));
      analytic.push_back(std::move(s.grad_b));
      break;
    }
  }

  std::vector<Matrix> probe = inputs;
  for (std::size_t m = 0; m < probe.size(); ++m) {
    for (Index i = 0; i < probe[m].rows(); ++i) {
      for (Index j = 0; j < probe[m].cols(); ++j) {
        const double orig = probe[m](i, j);
        probe[m](i, j) = orig + step;
        const double up = value_of(probe);
        probe[m](i, j) = orig - step;
        const double down = value_of(probe);
        probe[m](i, j) = orig;
        const double numeric = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[m](i, j) - numeric) / std::max(1.0, std::abs(numeric));
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.entries_checked;
      }
    }
  }
  return result;
}

}  // namespace densebasis
