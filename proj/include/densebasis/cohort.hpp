#pragma once

// Synthetic longitudinal cohorts. Each cluster owns an orthonormal r-frame in
// ambient space that rotates by `drift_rate` radians per window; patients
// follow latent random walks around their cluster's latent mean, and labels
// are fixed linear functionals of each patient's window-averaged latent (the
// binary one thresholded at the cohort's latent centroid).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "densebasis/geometry.hpp"

namespace densebasis {

struct CohortConfig {
  Index n_patients = 200;
  Index windows_per_patient = 8;
  Index ambient_dim = 32;
  Index latent_dim = 6;
  Index n_clusters = 3;
  double drift_rate = 0.05;
  double noise_sigma = 0.3;
  double missing_rate = 0.0;
  double cluster_separation = 1.0;  // std of cluster latent means
  // Ratio between the spreads of consecutive latent coordinates around the
  // cluster mean; 1 is isotropic. Spreads are scaled to average variance 1.
  double latent_decay = 0.5;
  std::uint64_t seed = 1;

  void validate() const {
    require(n_patients >= 1, "cohort: n_patients must be >= 1");
    require(windows_per_patient >= 2, "cohort: need at least 2 windows per patient");
    require(ambient_dim >= 1 && latent_dim >= 1, "cohort: dims must be >= 1");
    require(latent_dim <= ambient_dim, "cohort: latent_dim (" + std::to_string(latent_dim) +
                                           ") exceeds ambient_dim (" + std::to_string(ambient_dim) + ")");
    require(n_clusters >= 1, "cohort: n_clusters must be >= 1");
    require(std::isfinite(drift_rate) && drift_rate >= 0.0, "cohort: drift_rate must be >= 0");
    require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, "cohort: noise_sigma must be >= 0");
    require(missing_rate >= 0.0 && missing_rate < 1.0, "cohort: missing_rate must lie in [0, 1)");
    require(std::isfinite(cluster_separation) && cluster_separation >= 0.0,
            "cohort: cluster_separation must be >= 0");
    require(std::isfinite(latent_decay) && latent_decay > 0.0 && latent_decay <= 1.0,
            "cohort: latent_decay must lie in (0, 1]");
  }
};

struct CohortTruth {
  std::vector<Matrix> frames;         // per cluster, ambient x r, at window 0
  std::vector<Matrix> drift_partner;  // per cluster, ambient x min(r, ambient-r)
  Matrix latent;                      // row p*W + w, r columns
  Vector binary_functional;
  double binary_threshold = 0.0;  // functional at the mean of the cluster latent means
  Vector continuous_functional;
};

struct CohortDataset {
  CohortConfig config;
  Matrix observations;  // row p*W + w, ambient columns; missing entries are 0
  Matrix missing_mask;  // same shape, 1 where missing
  std::vector<int> labels_binary;
  std::vector<int> labels_cluster;
  std::vector<double> labels_continuous;
  CohortTruth truth;  // empty when loaded from disk

  Index n_patients() const { return config.n_patients; }
  Index windows() const { return config.windows_per_patient; }
  Index ambient_dim() const { return observations.cols(); }
  Index row_of(Index patient, Index window) const { return patient * windows() + window; }

  /// Observations of every patient at one window, one row per patient.
  Matrix window_rows(Index window) const {
    Matrix out(n_patients(), ambient_dim());
    for (Index p = 0; p < n_patients(); ++p) out.row(p) = observations.row(row_of(p, window));
    return out;
  }
};

/// The cluster frame after `window` drift steps.
inline Matrix drifted_frame(const CohortTruth& truth, Index cluster, Index window, double drift_rate) {
  Matrix f = truth.frames[static_cast<std::size_t>(cluster)];
  const Matrix& g = truth.drift_partner[static_cast<std::size_t>(cluster)];
  const double angle = drift_rate * static_cast<double>(window);
  for (Index j = 0; j < g.cols(); ++j) f.col(j) = std::cos(angle) * f.col(j) + std::sin(angle) * g.col(j);
  return f;
}

inline CohortDataset generate(const CohortConfig& cfg) {
  cfg.validate();
  constexpr double kTrendScale = 0.05;
  constexpr double kStepSigma = 0.2;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  auto gaussian = [&](Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
  };

  const Index d = cfg.ambient_dim, r = cfg.latent_dim, w_count = cfg.windows_per_patient;
  const Index partners = std::min(r, d - r);

  CohortDataset ds;
  ds.config = cfg;
  CohortTruth& truth = ds.truth;

  std::vector<Vector> cluster_mean, cluster_trend;
  for (Index c = 0; c < cfg.n_clusters; ++c) {
    Matrix both = gaussian(d, r + partners);
    detail::orthonormalize_inplace(both, true);
    truth.frames.push_back(both.leftCols(r));
    truth.drift_partner.push_back(both.rightCols(partners));
    cluster_mean.push_back(cfg.cluster_separation * gaussian(r, 1).col(0));
    cluster_trend.push_back(kTrendScale * gaussian(r, 1).col(0));
  }
  truth.binary_functional = gaussian(r, 1).col(0).normalized();
  truth.continuous_functional = gaussian(r, 1).col(0).normalized();
  {
    Vector centroid = Vector::Zero(r);
    for (const auto& m : cluster_mean) centroid += m / static_cast<double>(cfg.n_clusters);
    truth.binary_threshold = truth.binary_functional.dot(centroid);
  }

  Vector spread(r);
  for (Index j = 0; j < r; ++j) spread[j] = std::pow(cfg.latent_decay, static_cast<double>(j));
  spread *= std::sqrt(static_cast<double>(r)) / spread.norm();

  const Index rows = cfg.n_patients * w_count;
  ds.observations.resize(rows, d);
  ds.missing_mask = Matrix::Zero(rows, d);
  truth.latent.resize(rows, r);

  std::vector<std::vector<Matrix>> frames_at(static_cast<std::size_t>(cfg.n_clusters));
  for (Index c = 0; c < cfg.n_clusters; ++c)
    for (Index w = 0; w < w_count; ++w) frames_at[static_cast<std::size_t>(c)].push_back(drifted_frame(truth, c, w, cfg.drift_rate));

  std::bernoulli_distribution missing(cfg.missing_rate);
  for (Index p = 0; p < cfg.n_patients; ++p) {
    const Index c = p % cfg.n_clusters;
    const auto cs = static_cast<std::size_t>(c);
    ds.labels_cluster.push_back(static_cast<int>(c));
    Vector latent = cluster_mean[cs] + spread.cwiseProduct(gaussian(r, 1).col(0));
    Vector latent_sum = Vector::Zero(r);
    for (Index w = 0; w < w_count; ++w) {
      if (w > 0) latent += cluster_trend[cs] + kStepSigma * gaussian(r, 1).col(0);
      latent_sum += latent;
      const Index row = ds.row_of(p, w);
      truth.latent.row(row) = latent.transpose();
      Vector x = frames_at[cs][static_cast<std::size_t>(w)] * latent;
      if (cfg.noise_sigma > 0.0) x += cfg.noise_sigma * gaussian(d, 1).col(0);
      for (Index j = 0; j < d; ++j) {
        if (cfg.missing_rate > 0.0 && missing(rng)) {
          x[j] = 0.0;
          ds.missing_mask(row, j) = 1.0;
        }
      }
      ds.observations.row(row) = x.transpose();
    }
    const Vector mean_latent = latent_sum / static_cast<double>(w_count);
    ds.labels_binary.push_back(truth.binary_functional.dot(mean_latent) > truth.binary_threshold ? 1 : 0);
    ds.labels_continuous.push_back(truth.continuous_functional.dot(mean_latent));
  }
  return ds;
}

struct ViewPair {
  Index patient = 0;
  Index block = 0;  // view_a is block `block`, view_b is block `block + 1`
  Matrix view_a;    // window_len x ambient
  Matrix view_b;
};

/// Consecutive non-overlapping window blocks of each patient, paired with
/// the block that follows. Ordered by patient, then block.
inline std::vector<ViewPair> adjacent_pairs(const CohortDataset& ds, Index window_len) {
  require(window_len >= 1, "adjacent_pairs: window_len must be >= 1");
  require(ds.windows() >= 2 * window_len, "adjacent_pairs: " + std::to_string(ds.windows()) +
                                              " windows per patient cannot hold two blocks of " +
                                              std::to_string(window_len));
  const Index blocks = ds.windows() / window_len;
  std::vector<ViewPair> pairs;
  pairs.reserve(static_cast<std::size_t>(ds.n_patients() * (blocks - 1)));
  for (Index p = 0; p < ds.n_patients(); ++p) {
    for (Index b = 0; b + 1 < blocks; ++b) {
      ViewPair vp;
      vp.patient = p;
      vp.block = b;
      vp.view_a = ds.observations.middleRows(ds.row_of(p, b * window_len), window_len);
      vp.view_b = ds.observations.middleRows(ds.row_of(p, (b + 1) * window_len), window_len);
      pairs.push_back(std::move(vp));
    }
  }
  return pairs;
}

}  // namespace densebasis
