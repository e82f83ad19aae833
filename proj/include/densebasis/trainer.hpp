#pragma once

// Mini-batch training of an encoder on the dense-feature objective, plus a
// supervised cross-entropy baseline used for geometry comparisons.
//
// A training batch is a set of patients. Each patient contributes one window
// w (drawn per epoch) to view a and window w + 1 to view b, so every row of
// view a has its temporally adjacent partner at the same row of view b.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "densebasis/cohort.hpp"
#include "densebasis/encoder.hpp"
#include "densebasis/optimizer.hpp"
#include "densebasis/running_covariance.hpp"

namespace densebasis {

struct TrainConfig {
  LossWeights weights{0.1, 1.0, 1.0};  // sub, orth, spec
  Index k_sub = 8;
  Index batch_size = 64;
  int epochs = 60;
  double learning_rate = 0.01;
  MomentDecays moment_decays;
  double running_cov_decay = 0.5;  // 0 uses the batch covariance alone
  std::uint64_t seed = 1;
  int unroll_iters = 30;

  void validate() const {
    weights.validate();
    require(k_sub >= 1, "train: k_sub must be >= 1");
    require(batch_size >= 2, "train: batch_size must be >= 2");
    require(epochs >= 0, "train: epochs must be >= 0");
    require(std::isfinite(learning_rate) && learning_rate >= 0.0, "train: learning_rate must be >= 0");
    require(moment_decays.first >= 0.0 && moment_decays.first < 1.0 && moment_decays.second >= 0.0 &&
                moment_decays.second < 1.0,
            "train: moment decays must lie in [0, 1)");
    require(running_cov_decay >= 0.0 && running_cov_decay < 1.0, "train: running_cov_decay must lie in [0, 1)");
    require(unroll_iters >= 1, "train: unroll_iters must be >= 1");
  }
};

/// Batch-averaged loss terms for one epoch.
struct EpochLoss {
  double total = 0.0;
  double spec_term = 0.0;
  double sub_term = 0.0;
  double orth_term = 0.0;
  int batches = 0;
  int unreliable_sub_batches = 0;
};

struct TrainResult {
  Encoder encoder;
  std::vector<EpochLoss> history;
};

namespace detail {

// Patient order for one epoch, cut into batches; the last batch absorbs the
// remainder so no batch is smaller than batch_size (unless the cohort is).
inline std::vector<std::vector<Index>> patient_batches(Index n_patients, Index batch_size, std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n_patients));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const Index n_batches = std::max<Index>(1, n_patients / batch_size);
  std::vector<std::vector<Index>> batches(static_cast<std::size_t>(n_batches));
  for (Index i = 0; i < n_patients; ++i) {
    const Index b = std::min(i / batch_size, n_batches - 1);
    batches[static_cast<std::size_t>(b)].push_back(order[static_cast<std::size_t>(i)]);
  }
  return batches;
}

constexpr std::uint64_t kShuffleStream = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kHeadStream = 0xbf58476d1ce4e5b9ULL;

}  // namespace detail

inline TrainResult train(Encoder enc, const CohortDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(ds.ambient_dim() == enc.input_dim(), "train: encoder input_dim does not match the dataset");
  require(ds.windows() >= 2, "train: adjacent-window pairs need at least 2 windows per patient");
  require(ds.n_patients() >= 2, "train: need at least 2 patients");
  require(cfg.k_sub <= enc.output_dim(), "train: k_sub exceeds the embedding dimension");

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.epochs));
  std::mt19937_64 rng(cfg.seed ^ detail::kShuffleStream);
  std::uniform_int_distribution<Index> window_pick(0, ds.windows() - 2);

  AdamState adam(enc.parameter_count());
  RunningCovariance running(enc.output_dim(), cfg.running_cov_decay);
  const SubspaceLossOptions sub_opts{cfg.k_sub, cfg.unroll_iters};
  const LossWeights& w = cfg.weights;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLoss record;
    const auto batches = detail::patient_batches(ds.n_patients(), cfg.batch_size, rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& patients = batches[bi];
      const auto n = static_cast<Index>(patients.size());
      Matrix xa(n, ds.ambient_dim()), xb(n, ds.ambient_dim());
      for (Index i = 0; i < n; ++i) {
        const Index win = window_pick(rng);
        xa.row(i) = ds.observations.row(ds.row_of(patients[static_cast<std::size_t>(i)], win));
        xb.row(i) = ds.observations.row(ds.row_of(patients[static_cast<std::size_t>(i)], win + 1));
      }
      const Matrix za = forward(enc, xa);
      const Matrix zb = forward(enc, xb);

      Vector theta = enc.parameters();
      try {
        require_finite(za, "embedding");
        require_finite(zb, "embedding");
        const LossValue spec = spec_loss_running(za, running);
        const SubspaceLossValue sub = sub_loss(za, zb, sub_opts);
        const LossValue orth = orth_loss(za);

        record.spec_term += spec.value;
        record.sub_term += sub.value;
        record.orth_term += orth.value;
        record.total += w.lambda_spec * spec.value + w.lambda_sub * sub.value + w.lambda_orth * orth.value;
        ++record.batches;

        Matrix grad_a = w.lambda_spec * spec.grad + w.lambda_orth * orth.grad;
        Vector grad = Vector::Zero(theta.size());
        if (sub.gradient_unreliable) {
          ++record.unreliable_sub_batches;
        } else if (w.lambda_sub > 0.0) {
          grad_a += w.lambda_sub * sub.grad_a;
          grad += backward(enc, xb, w.lambda_sub * sub.grad_b);
        }
        grad += backward(enc, xa, grad_a);

        running.update(covariance(za));
        optimizer_step(theta, grad, adam, cfg.learning_rate, cfg.moment_decays);
      } catch (const Error& e) {
        throw AbortStep(std::string("training aborted at epoch ") + std::to_string(epoch) + ", batch " +
                            std::to_string(bi) + ": " + e.what(),
                        epoch, static_cast<long>(bi));
      }
      enc.set_parameters(theta);
    }
    const double nb = std::max(1, record.batches);
    record.total /= nb;
    record.spec_term /= nb;
    record.sub_term /= nb;
    record.orth_term /= nb;
    result.history.push_back(record);
  }
  result.encoder = std::move(enc);
  return result;
}

struct BaselineResult {
  Encoder encoder;  // head discarded
  std::vector<double> loss_history;
  double train_accuracy = 0.0;
};

/// Encoder plus a linear logistic head trained with cross-entropy on the
/// patient binary label, one row per (patient, window).
inline BaselineResult train_supervised_baseline(Encoder enc, const CohortDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(ds.ambient_dim() == enc.input_dim(), "baseline: encoder input_dim does not match the dataset");
  require(static_cast<Index>(ds.labels_binary.size()) == ds.n_patients(), "baseline: dataset has no binary labels");

  const Index d = enc.output_dim();
  const Index n_theta = enc.parameter_count();
  Vector params(n_theta + d + 1);
  params.head(n_theta) = enc.parameters();
  {
    std::mt19937_64 head_rng(cfg.seed ^ detail::kHeadStream);
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> u(-a, a);
    for (Index i = 0; i < d + 1; ++i) params[n_theta + i] = u(head_rng);
  }

  auto bce = [](double logit, int y) {
    const double softplus = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
    return softplus - (y ? logit : 0.0);
  };

  BaselineResult result;
  std::mt19937_64 rng(cfg.seed ^ detail::kShuffleStream);
  AdamState adam(params.size());
  const Index wins = ds.windows();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    Index epoch_rows = 0;
    const auto batches = detail::patient_batches(ds.n_patients(), cfg.batch_size, rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& patients = batches[bi];
      const Index n = static_cast<Index>(patients.size()) * wins;
      Matrix x(n, ds.ambient_dim());
      std::vector<int> y(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < patients.size(); ++i)
        for (Index w = 0; w < wins; ++w) {
          const Index row = static_cast<Index>(i) * wins + w;
          x.row(row) = ds.observations.row(ds.row_of(patients[i], w));
          y[static_cast<std::size_t>(row)] = ds.labels_binary[static_cast<std::size_t>(patients[i])];
        }
      const Matrix z = forward(enc, x);
      const Vector head_w = params.segment(n_theta, d);
      const double head_b = params[n_theta + d];
      const Vector logits = (z * head_w).array() + head_b;
      Vector d_logit(n);
      for (Index i = 0; i < n; ++i) {
        const int yi = y[static_cast<std::size_t>(i)];
        epoch_loss += bce(logits[i], yi);
        d_logit[i] = (1.0 / (1.0 + std::exp(-logits[i])) - yi) / static_cast<double>(n);
      }
      epoch_rows += n;
      Vector grad(params.size());
      grad.head(n_theta) = backward(enc, x, d_logit * head_w.transpose());
      grad.segment(n_theta, d) = z.transpose() * d_logit;
      grad[n_theta + d] = d_logit.sum();
      try {
        optimizer_step(params, grad, adam, cfg.learning_rate, cfg.moment_decays);
      } catch (const AbortStep& e) {
        throw AbortStep(std::string("baseline aborted at epoch ") + std::to_string(epoch) + ": " + e.what(), epoch,
                        static_cast<long>(bi));
      }
      enc.set_parameters(params.head(n_theta));
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(std::max<Index>(1, epoch_rows)));
  }

  const Matrix z = forward(enc, ds.observations);
  const Vector logits = (z * params.segment(n_theta, d)).array() + params[n_theta + d];
  Index correct = 0;
  for (Index r = 0; r < z.rows(); ++r)
    correct += (logits[r] > 0.0) == (ds.labels_binary[static_cast<std::size_t>(r / wins)] == 1);
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(z.rows());
  result.encoder = std::move(enc);
  return result;
}

}  // namespace densebasis
