#pragma once

// Linear probes and metrics for frozen representations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "densebasis/cohort.hpp"
#include "densebasis/encoder.hpp"

namespace densebasis {

struct LinearModel {
  Vector weights;
  double intercept = 0.0;
  Vector predict(const Matrix& z) const { return (z * weights).array() + intercept; }
};

/// Minimizes ||Z w + b - y||^2 + lambda ||w||^2 (intercept unpenalized) by
/// Cholesky on the centered normal equations.
inline LinearModel ridge_fit(const Matrix& z, const Vector& y, double lambda) {
  require(z.rows() >= 2, "ridge_fit: need at least 2 rows");
  require(y.size() == z.rows(), "ridge_fit: target length does not match rows");
  require(lambda > 0.0, "ridge_fit: lambda must be positive");
  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  const double y_mean = y.mean();
  const Matrix zc = z.rowwise() - z_mean;
  const Vector yc = y.array() - y_mean;
  Matrix normal = zc.transpose() * zc;
  normal.diagonal().array() += lambda;
  const Eigen::LLT<Matrix> chol(normal);
  if (chol.info() != Eigen::Success) throw NumericalFailure("ridge_fit: Cholesky factorization failed");
  LinearModel m;
  m.weights = chol.solve(zc.transpose() * yc);
  m.intercept = y_mean - z_mean.dot(m.weights);
  if (!m.weights.allFinite() || !std::isfinite(m.intercept)) throw NumericalFailure("ridge_fit: non-finite solution");
  return m;
}

struct LogisticModel : LinearModel {
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;  // objective after each accepted step, starting at the initial point
};

namespace detail {

inline double softplus(double s) { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

inline void require_both_classes(std::span<const int> y, const char* who) {
  bool pos = false, neg = false;
  for (int v : y) {
    require(v == 0 || v == 1, std::string(who) + ": labels must be 0 or 1");
    (v ? pos : neg) = true;
  }
  require(pos && neg, std::string(who) + ": both classes must be present");
}

}  // namespace detail

/// Mean log-loss plus (l2 / 2) ||w||^2.
inline double logistic_objective(const Matrix& z, std::span<const int> y, double l2, const LinearModel& m) {
  const Vector s = m.predict(z);
  double acc = 0.0;
  for (Index i = 0; i < s.size(); ++i) acc += detail::softplus(s[i]) - (y[static_cast<std::size_t>(i)] ? s[i] : 0.0);
  return acc / static_cast<double>(s.size()) + 0.5 * l2 * m.weights.squaredNorm();
}

/// Damped Newton on the L2-regularized log-loss; stops at gradient norm < tol.
inline LogisticModel logistic_fit(const Matrix& z, std::span<const int> y, double l2, int max_iters = 200,
                                  double tol = 1e-7) {
  require(static_cast<Index>(y.size()) == z.rows(), "logistic_fit: label length does not match rows");
  require(l2 >= 0.0, "logistic_fit: l2 must be >= 0");
  detail::require_both_classes(y, "logistic_fit");
  const Index n = z.rows(), d = z.cols();
  Matrix design(n, d + 1);
  design.leftCols(d) = z;
  design.col(d).setOnes();

  LogisticModel m;
  m.weights = Vector::Zero(d);
  Vector theta = Vector::Zero(d + 1);
  auto unpack = [&](const Vector& t) {
    LinearModel lm;
    lm.weights = t.head(d);
    lm.intercept = t[d];
    return lm;
  };
  double obj = logistic_objective(z, y, l2, unpack(theta));
  m.objective_trace.push_back(obj);

  for (int it = 0; it < max_iters; ++it) {
    const Vector s = design * theta;
    Vector resid(n), curv(n);
    for (Index i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-s[i]));
      resid[i] = p - y[static_cast<std::size_t>(i)];
      curv[i] = p * (1.0 - p);
    }
    Vector grad = design.transpose() * resid / static_cast<double>(n);
    grad.head(d) += l2 * theta.head(d);
    m.gradient_norm = grad.norm();
    m.iterations = it;
    if (m.gradient_norm < tol) {
      m.converged = true;
      break;
    }
    Matrix hess = design.transpose() * curv.asDiagonal() * design / static_cast<double>(n);
    hess.diagonal().head(d).array() += l2;
    hess.diagonal().array() += 1e-12;
    Vector dir = -Eigen::LDLT<Matrix>(hess).solve(grad);
    if (!dir.allFinite() || grad.dot(dir) >= 0.0) dir = -grad;

    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector trial = theta + step * dir;
      const double trial_obj = logistic_objective(z, y, l2, unpack(trial));
      if (trial_obj <= obj + 1e-4 * step * grad.dot(dir)) {
        theta = trial;
        obj = trial_obj;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    m.objective_trace.push_back(obj);
    if (!accepted) break;
  }
  const LinearModel fit = unpack(theta);
  m.weights = fit.weights;
  m.intercept = fit.intercept;
  return m;
}

/// Mann-Whitney AUROC with half credit for ties, via midranks.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auroc: scores and labels differ in length");
  detail::require_both_classes(labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) {
        rank_sum_pos += midrank;
        n_pos += 1.0;
      }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "rmse: length mismatch");
  require(!pred.empty(), "rmse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - target[i]) * (pred[i] - target[i]);
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

/// Pair-counting adjusted Rand index from the contingency table.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  require(a.size() == b.size(), "adjusted_rand_index: partitions differ in length");
  require(a.size() >= 2, "adjusted_rand_index: need at least 2 items");
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cells[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, c] : cells) index += pairs(c);
  for (const auto& [_, c] : rows) sum_a += pairs(c);
  for (const auto& [_, c] : cols) sum_b += pairs(c);
  const double expected = sum_a * sum_b / pairs(static_cast<double>(a.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

struct KMeansResult {
  std::vector<int> assignments;
  Matrix centers;  // k x d
  double wcss = 0.0;
};

namespace detail {

inline KMeansResult lloyd(const Matrix& z, Matrix centers, int max_iters) {
  const Index n = z.rows(), k = centers.rows();
  KMeansResult r;
  r.assignments.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double dd = (z.row(i) - centers.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = static_cast<int>(c);
        }
      }
      dist[static_cast<std::size_t>(i)] = best_d;
      if (r.assignments[static_cast<std::size_t>(i)] != best) {
        r.assignments[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, z.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(r.assignments[static_cast<std::size_t>(i)]) += z.row(i);
      ++counts[static_cast<std::size_t>(r.assignments[static_cast<std::size_t>(i)])];
    }
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Empty cluster: move it onto the point worst served by its center.
        const auto far = static_cast<Index>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        centers.row(c) = z.row(far);
        dist[static_cast<std::size_t>(far)] = 0.0;
        changed = true;
      }
    }
    if (!changed) break;
  }
  r.wcss = 0.0;
  for (Index i = 0; i < n; ++i) r.wcss += (z.row(i) - centers.row(r.assignments[static_cast<std::size_t>(i)])).squaredNorm();
  r.centers = std::move(centers);
  return r;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ starts; best of `restarts` by WCSS.
inline KMeansResult kmeans(const Matrix& z, Index n_clusters, std::uint64_t seed, int restarts = 10,
                           int max_iters = 300) {
  require(n_clusters >= 1 && n_clusters <= z.rows(), "kmeans: need 1 <= n_clusters <= N");
  require(restarts >= 1, "kmeans: restarts must be >= 1");
  require_finite(z, "kmeans");
  const Index n = z.rows();
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < restarts; ++rep) {
    Matrix centers(n_clusters, z.cols());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);
    std::uniform_int_distribution<Index> first(0, n - 1);
    Index pick = first(rng);
    centers.row(0) = z.row(pick);
    chosen[static_cast<std::size_t>(pick)] = true;
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (z.row(i) - centers.row(0)).squaredNorm();
    for (Index c = 1; c < n_clusters; ++c) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        pick = n - 1;
        for (Index i = 0; i < n; ++i) {
          target -= d2[static_cast<std::size_t>(i)];
          if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = 0;
        while (chosen[static_cast<std::size_t>(pick)]) ++pick;
      }
      chosen[static_cast<std::size_t>(pick)] = true;
      centers.row(c) = z.row(pick);
      for (Index i = 0; i < n; ++i)
        d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (z.row(i) - centers.row(c)).squaredNorm());
    }
    KMeansResult r = detail::lloyd(z, std::move(centers), max_iters);
    if (r.wcss < best.wcss) best = std::move(r);
  }
  return best;
}

/// Patient-level embeddings: the encoder output averaged over each patient's windows.
inline Matrix patient_embeddings(const Encoder& enc, const CohortDataset& ds) {
  const Matrix z = forward(enc, ds.observations);
  Matrix out = Matrix::Zero(ds.n_patients(), z.cols());
  for (Index p = 0; p < ds.n_patients(); ++p)
    out.row(p) = z.middleRows(ds.row_of(p, 0), ds.windows()).colwise().mean();
  return out;
}

struct ProbeOptions {
  std::vector<double> lambda_grid{1e-4, 1e-2, 1.0};
  double train_fraction = 0.7;
  double validation_fraction = 0.2;  // of the training part, for picking lambda
  int kmeans_restarts = 10;
  bool shuffle_labels = false;
};

struct ProbeResult {
  double auroc = 0.0;
  double ari = 0.0;
  double rmse = 0.0;
  std::uint64_t split_seed = 0;
  double logistic_l2 = 0.0;
  double ridge_lambda = 0.0;
  Index n_train = 0;
  Index n_test = 0;
  Index n_clusters = 0;
  bool shuffled_labels = false;
};

namespace detail {

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const Index> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const Index> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(idx[i]);
  return out;
}

inline Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

constexpr std::uint64_t kLabelShuffleStream = 0x94d049bb133111ebULL;

}  // namespace detail

/// Logistic (AUROC), k-means + ARI and ridge (RMSE) probes on mean-pooled
/// patient embeddings with a seeded train/test split. Features are
/// standardized with training statistics. The encoder is checked to be
/// bit-identical before and after.
inline ProbeResult probe_suite(const Encoder& enc, const CohortDataset& ds, std::uint64_t split_seed,
                               const ProbeOptions& opts = {}) {
  const auto n = static_cast<std::size_t>(ds.n_patients());
  require(ds.labels_binary.size() == n && ds.labels_cluster.size() == n && ds.labels_continuous.size() == n,
          "probe_suite: dataset must carry binary, cluster and continuous labels");
  require(ds.ambient_dim() == enc.input_dim(), "probe_suite: encoder input_dim does not match the dataset");
  require(!opts.lambda_grid.empty(), "probe_suite: empty lambda grid");
  const std::uint64_t checksum = parameter_checksum(enc);

  std::vector<int> y_bin = ds.labels_binary, y_cluster = ds.labels_cluster;
  std::vector<double> y_cont = ds.labels_continuous;
  if (opts.shuffle_labels) {
    std::mt19937_64 shuffle_rng(split_seed ^ detail::kLabelShuffleStream);
    std::shuffle(y_bin.begin(), y_bin.end(), shuffle_rng);
    std::shuffle(y_cluster.begin(), y_cluster.end(), shuffle_rng);
    std::shuffle(y_cont.begin(), y_cont.end(), shuffle_rng);
  }

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 split_rng(split_seed);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_train = static_cast<std::size_t>(std::llround(opts.train_fraction * static_cast<double>(n)));
  require(n_train >= 4 && n_train < n, "probe_suite: split leaves too few patients on one side");
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opts.validation_fraction * static_cast<double>(n_train))));
  const std::span<const Index> all(order);
  const auto train_idx = all.first(n_train);
  const auto test_idx = all.subspan(n_train);
  const auto fit_idx = train_idx.first(n_train - n_val);
  const auto val_idx = train_idx.subspan(n_train - n_val);

  Matrix z = patient_embeddings(enc, ds);
  {
    const Matrix train_z = detail::gather_rows(z, train_idx);
    const Eigen::RowVectorXd mean = train_z.colwise().mean();
    Eigen::RowVectorXd sd = ((train_z.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(n_train)).cwiseSqrt();
    for (Index j = 0; j < sd.size(); ++j)
      if (!(sd[j] > 1e-12)) sd[j] = 1.0;
    z = (z.rowwise() - mean).array().rowwise() / sd.array();
  }

  ProbeResult result;
  result.split_seed = split_seed;
  result.n_train = static_cast<Index>(n_train);
  result.n_test = static_cast<Index>(n - n_train);
  result.shuffled_labels = opts.shuffle_labels;

  // Logistic probe, l2 chosen by validation log-loss.
  {
    const Matrix z_fit = detail::gather_rows(z, fit_idx), z_val = detail::gather_rows(z, val_idx);
    const auto y_fit = detail::gather(y_bin, fit_idx), y_val = detail::gather(y_bin, val_idx);
    double best = std::numeric_limits<double>::infinity();
    for (double l2 : opts.lambda_grid) {
      const auto m = logistic_fit(z_fit, y_fit, l2);
      const double val_loss = logistic_objective(z_val, y_val, 0.0, m);
      if (val_loss < best) {
        best = val_loss;
        result.logistic_l2 = l2;
      }
    }
    const auto m = logistic_fit(detail::gather_rows(z, train_idx), detail::gather(y_bin, train_idx), result.logistic_l2);
    const Vector scores = m.predict(detail::gather_rows(z, test_idx));
    const auto y_test = detail::gather(y_bin, test_idx);
    result.auroc = auroc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), y_test);
  }

  // Ridge probe on the continuous target, lambda chosen by validation MSE.
  {
    const Vector y_fit = detail::to_vector(detail::gather(y_cont, fit_idx));
    const Vector y_val = detail::to_vector(detail::gather(y_cont, val_idx));
    const Matrix z_fit = detail::gather_rows(z, fit_idx), z_val = detail::gather_rows(z, val_idx);
    double best = std::numeric_limits<double>::infinity();
    for (double lambda : opts.lambda_grid) {
      const double mse = (ridge_fit(z_fit, y_fit, lambda).predict(z_val) - y_val).squaredNorm();
      if (mse < best) {
        best = mse;
        result.ridge_lambda = lambda;
      }
    }
    const auto m = ridge_fit(detail::gather_rows(z, train_idx), detail::to_vector(detail::gather(y_cont, train_idx)),
                             result.ridge_lambda);
    const Vector pred = m.predict(detail::gather_rows(z, test_idx));
    const auto target = detail::gather(y_cont, test_idx);
    result.rmse = rmse(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())), target);
  }

  // Clustering over all patients with k = number of ground-truth clusters.
  {
    const int k = *std::max_element(y_cluster.begin(), y_cluster.end()) + 1;
    result.n_clusters = k;
    const auto km = kmeans(z, std::min<Index>(k, z.rows()), split_seed, opts.kmeans_restarts);
    result.ari = adjusted_rand_index(km.assignments, y_cluster);
  }

  if (parameter_checksum(enc) != checksum) throw Error("probe_suite: encoder parameters changed during probing");
  return result;
}

}  // namespace densebasis
