#pragma once

#include "densebasis/losses.hpp"

namespace densebasis {

/// Exponential moving average of batch covariances:
///   accum <- decay * accum + (1 - decay) * batch_cov.
class RunningCovariance {
 public:
  RunningCovariance(Index dim, double decay) : accum_(Matrix::Zero(dim, dim)), decay_(decay) {
    require(dim >= 1, "running covariance: dim must be >= 1");
    require(decay >= 0.0 && decay < 1.0, "running covariance: decay must lie in [0, 1)");
  }

  const Matrix& accum() const noexcept { return accum_; }
  double decay() const noexcept { return decay_; }
  long steps() const noexcept { return steps_; }

  /// The estimate an update with `batch_cov` would produce, without storing it.
  Matrix blended(const Matrix& batch_cov) const {
    require(batch_cov.rows() == accum_.rows() && batch_cov.cols() == accum_.cols(),
            "running covariance: shape mismatch");
    require_finite(batch_cov, "running covariance");
    require(is_symmetric(batch_cov, 1e-9), "running covariance: batch covariance is not symmetric");
    return decay_ * accum_ + (1.0 - decay_) * batch_cov;
  }

  void update(const Matrix& batch_cov) {
    accum_ = blended(batch_cov);
    ++steps_;
  }

 private:
  Matrix accum_;
  double decay_;
  long steps_ = 0;
};

inline RunningCovariance update_running_cov(RunningCovariance rc, const Matrix& batch_cov) {
  rc.update(batch_cov);
  return rc;
}

/// Spectral loss on the blended covariance. Only the current batch's share
/// (1 - decay) carries gradient; the history is treated as a constant.
inline LossValue spec_loss_running(const Matrix& z, const RunningCovariance& rc) {
  const Matrix blended = rc.blended(covariance(z));
  const auto cg = detail::spec_loss_on_covariance(blended);
  return {cg.value, (1.0 - rc.decay()) * detail::covariance_pullback(z, cg.d_cov)};
}

}  // namespace densebasis
