#pragma once

// End-to-end runs: generate a cohort, train an encoder, measure geometry and
// probe metrics. Used by the CLI and by the acceptance suite.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densebasis/probes.hpp"
#include "densebasis/trainer.hpp"

namespace densebasis {

struct GeometrySummary {
  Index n_rows = 0;
  Index n_cols = 0;
  double effective_rank = 0.0;
  double condition_number = 0.0;
  double spectral_entropy = 0.0;
  std::vector<double> eigenvalues;  // descending
};

inline GeometrySummary geometry_summary(const EmbeddingMatrix& z, std::optional<double> floor = std::nullopt) {
  const CovarianceSpectrum spec = spectrum(covariance(z));
  GeometrySummary g;
  g.n_rows = z.n_rows();
  g.n_cols = z.n_cols();
  g.effective_rank = effective_rank(spec);
  g.condition_number = condition_number(spec, floor);
  g.spectral_entropy = spectral_entropy(spec);
  g.eigenvalues = spec.eigenvalues();
  return g;
}

/// Exact top-k eigenspace of the covariance of `z` (Jacobi), for evaluation.
inline SubspaceBasis top_eigenspace(const Matrix& z, Index k) {
  require(k >= 1 && k <= z.cols(), "top_eigenspace: need 1 <= k <= d");
  const EigenDecomposition eig = jacobi_eigen(covariance(z));
  Matrix u = eig.vectors.leftCols(k);
  detail::orthonormalize_inplace(u, true);
  return SubspaceBasis(std::move(u));
}

/// Mean over consecutive block pairs of the projection distance between the
/// top-k subspaces of block b and block b+1 (rows pooled over patients),
/// divided by 2k so the result lies in [0, 1].
inline double adjacent_window_distance(const Encoder& enc, const CohortDataset& ds, Index k, Index window_len = 1) {
  const auto pairs = adjacent_pairs(ds, window_len);
  const Index blocks = ds.windows() / window_len;
  const Matrix z = forward(enc, ds.observations);
  double acc = 0.0;
  for (Index b = 0; b + 1 < blocks; ++b) {
    Matrix za(ds.n_patients() * window_len, z.cols()), zb(ds.n_patients() * window_len, z.cols());
    for (Index p = 0; p < ds.n_patients(); ++p) {
      za.middleRows(p * window_len, window_len) = z.middleRows(ds.row_of(p, b * window_len), window_len);
      zb.middleRows(p * window_len, window_len) = z.middleRows(ds.row_of(p, (b + 1) * window_len), window_len);
    }
    acc += projection_distance(top_eigenspace(za, k), top_eigenspace(zb, k)) / (2.0 * static_cast<double>(k));
  }
  return acc / static_cast<double>(blocks - 1);
}

struct ExperimentConfig {
  CohortConfig cohort;
  EncoderKind encoder_kind = EncoderKind::tanh_mlp;
  Index hidden_dim = 32;
  Index embedding_dim = 16;
  TrainConfig train;
  ProbeOptions probe;
  Index eval_k = 8;

  EncoderShape encoder_shape() const {
    return {encoder_kind, cohort.ambient_dim, encoder_kind == EncoderKind::linear ? 0 : hidden_dim, embedding_dim};
  }

  void validate() const {
    cohort.validate();
    train.validate();
    require(embedding_dim >= 1, "experiment: embedding_dim must be >= 1");
    require(eval_k >= 1 && eval_k <= embedding_dim, "experiment: eval_k must lie in [1, embedding_dim]");
    require(train.k_sub <= embedding_dim, "experiment: k_sub exceeds embedding_dim");
  }

  /// Copy with every seed derived from `seed`.
  ExperimentConfig with_seed(std::uint64_t seed) const {
    ExperimentConfig c = *this;
    c.cohort.seed = seed;
    c.train.seed = seed;
    return c;
  }

  std::uint64_t init_seed() const { return train.seed * 0x2545F4914F6CDD1DULL + 1; }
  std::uint64_t split_seed() const { return train.seed + 7919; }
};

/// Evaluation of one frozen encoder on a cohort.
struct EncoderEvaluation {
  GeometrySummary geometry;  // patient-level (mean-pooled) embeddings
  double adjacent_distance = 0.0;
  ProbeResult probe;
};

inline EncoderEvaluation evaluate_encoder(const Encoder& enc, const CohortDataset& ds, const ExperimentConfig& cfg) {
  EncoderEvaluation e;
  e.geometry = geometry_summary(EmbeddingMatrix(patient_embeddings(enc, ds)));
  e.adjacent_distance = adjacent_window_distance(enc, ds, cfg.eval_k);
  e.probe = probe_suite(enc, ds, cfg.split_seed(), cfg.probe);
  return e;
}

enum class Variant { full, no_spectral, no_subspace, no_orthogonality };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::full, Variant::no_spectral, Variant::no_subspace,
                                                        Variant::no_orthogonality};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_spectral: return "w/o spectral";
    case Variant::no_subspace: return "w/o subspace";
    case Variant::no_orthogonality: return "w/o orthogonality";
  }
  return "?";
}

inline LossWeights variant_weights(Variant v, LossWeights base) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_spectral: base.lambda_spec = 0.0; break;
    case Variant::no_subspace: base.lambda_sub = 0.0; break;
    case Variant::no_orthogonality: base.lambda_orth = 0.0; break;
  }
  return base;
}

struct VariantRun {
  Variant variant = Variant::full;
  TrainResult training;
  EncoderEvaluation eval;
};

inline VariantRun run_variant(const ExperimentConfig& cfg, const CohortDataset& ds, Variant v) {
  cfg.validate();
  TrainConfig tc = cfg.train;
  tc.weights = variant_weights(v, cfg.train.weights);
  VariantRun run;
  run.variant = v;
  run.training = train(Encoder::initialized(cfg.encoder_shape(), cfg.init_seed()), ds, tc);
  run.eval = evaluate_encoder(run.training.encoder, ds, cfg);
  return run;
}

/// The four objective variants on identical data and initialization.
inline std::vector<VariantRun> run_ablation(const ExperimentConfig& cfg) {
  cfg.validate();
  const CohortDataset ds = generate(cfg.cohort);
  std::vector<VariantRun> runs;
  for (Variant v : kAllVariants) runs.push_back(run_variant(cfg, ds, v));
  return runs;
}

}  // namespace densebasis
