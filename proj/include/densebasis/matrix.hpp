#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "densebasis/errors.hpp"

namespace densebasis {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NonFiniteInput(what + ": non-finite entries");
}

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// N x d matrix whose rows are representations. Always non-empty and finite.
class EmbeddingMatrix {
 public:
  explicit EmbeddingMatrix(Matrix data) : data_(std::move(data)) {
    require(data_.rows() >= 1 && data_.cols() >= 1,
            "embedding matrix must be at least 1x1, got " + shape_str(data_));
    require_finite(data_, "embedding matrix");
  }

  const Matrix& data() const noexcept { return data_; }
  Index n_rows() const noexcept { return data_.rows(); }
  Index n_cols() const noexcept { return data_.cols(); }
  double operator()(Index i, Index j) const { return data_(i, j); }

 private:
  Matrix data_;
};

inline bool is_symmetric(const Matrix& s, double tol) {
  if (s.rows() != s.cols()) return false;
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  for (Index i = 0; i < s.rows(); ++i)
    for (Index j = i + 1; j < s.cols(); ++j)
      if (std::abs(s(i, j) - s(j, i)) > tol * scale) return false;
  return true;
}

}  // namespace densebasis
