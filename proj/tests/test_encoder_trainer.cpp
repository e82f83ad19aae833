#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "densebasis/running_covariance.hpp"
#include "densebasis/trainer.hpp"
#include "test_support.hpp"

using namespace densebasis;
using testsupport::gaussian;

namespace {

Encoder linear_identity(Index d) {
  Encoder e(EncoderShape{EncoderKind::linear, d, 0, d});
  e.layers()[0].weight = Matrix::Identity(d, d);
  return e;
}

std::string checkpoint_bytes(const Encoder& e) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, e);
  return out.str();
}

Encoder read_bytes(const std::string& b) {
  std::istringstream in(b, std::ios::binary);
  return read_checkpoint(in);
}

// A small hand-built cohort: 2 windows per patient, labels from a fixed
// linear rule with margin, or random.
CohortDataset toy_dataset(Index patients, bool random_labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CohortDataset ds;
  ds.config.n_patients = patients;
  ds.config.windows_per_patient = 2;
  ds.config.ambient_dim = 4;
  ds.observations.resize(patients * 2, 4);
  ds.missing_mask = Matrix::Zero(patients * 2, 4);
  std::bernoulli_distribution coin(0.5);
  for (Index p = 0; p < patients; ++p) {
    Matrix base = gaussian(1, 4, rng);
    int y = coin(rng) ? 1 : 0;
    if (!random_labels) {
      // label by the side of x0 + x1 = 0, then move away from it by 0.5
      y = base(0, 0) + base(0, 1) > 0.0 ? 1 : 0;
      base(0, 0) += y ? 0.5 : -0.5;
      base(0, 1) += y ? 0.5 : -0.5;
    }
    for (Index w = 0; w < 2; ++w) ds.observations.row(2 * p + w) = base + 0.05 * gaussian(1, 4, rng);
    ds.labels_binary.push_back(y);
    ds.labels_cluster.push_back(0);
    ds.labels_continuous.push_back(0.0);
  }
  return ds;
}

TrainConfig quick_config(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.k_sub = 4;
  return c;
}

}  // namespace

// ---- forward / backward -----------------------------------------------------

TEST(Forward, LinearIdentityIsIdentity) {
  std::mt19937_64 rng(1);
  const Matrix x = gaussian(5, 3, rng);
  EXPECT_EQ(forward(linear_identity(3), x), x);
}

TEST(Forward, ZeroWeightGivesBiasRows) {
  Encoder e(EncoderShape{EncoderKind::linear, 3, 0, 2});
  e.layers()[0].bias << 1.5, -2.0;
  const Matrix z = forward(e, Matrix::Ones(4, 3));
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(z.row(i), e.layers()[0].bias.transpose());
}

TEST(Forward, HandComputedTanhLayer) {
  Encoder e(EncoderShape{EncoderKind::tanh_mlp, 2, 2, 2});
  e.layers()[0].weight << 1.0, 0.5, -1.0, 2.0;  // W1[i][j]: input i -> hidden j
  e.layers()[0].bias << 0.1, -0.2;
  e.layers()[1].weight << 1.0, 0.0, 1.0, -1.0;
  e.layers()[1].bias << 0.0, 0.3;
  Matrix x(1, 2);
  x << 0.5, 0.25;
  // hidden pre: [0.5*1 + 0.25*(-1) + 0.1, 0.5*0.5 + 0.25*2 - 0.2] = [0.35, 0.55]
  const double h0 = std::tanh(0.35), h1 = std::tanh(0.55);
  const Matrix z = forward(e, x);
  EXPECT_NEAR(z(0, 0), h0 + h1, 1e-15);
  EXPECT_NEAR(z(0, 1), -h1 + 0.3, 1e-15);
}

TEST(Forward, ShapeMismatch) {
  EXPECT_THROW(forward(linear_identity(3), Matrix::Ones(2, 4)), InvalidInput);
  EXPECT_THROW(backward(linear_identity(3), Matrix::Ones(2, 3), Matrix::Ones(2, 2)), InvalidInput);
}

TEST(Backward, ZeroUpstreamGivesZero) {
  std::mt19937_64 rng(2);
  const Encoder e = Encoder::initialized({EncoderKind::tanh_mlp, 4, 5, 3}, 7);
  EXPECT_EQ(backward(e, gaussian(6, 4, rng), Matrix::Zero(6, 3)), Vector::Zero(e.parameter_count()));
}

TEST(Backward, LinearWithIdentityDesign) {
  std::mt19937_64 rng(3);
  const Encoder e = Encoder::initialized({EncoderKind::linear, 3, 0, 2}, 1);
  const Matrix up = gaussian(3, 2, rng);
  const Vector g = backward(e, Matrix::Identity(3, 3), up);
  EXPECT_EQ(Matrix(g.head(6).reshaped(3, 2)), up);
  EXPECT_EQ(Vector(g.tail(2)), Vector(up.colwise().sum().transpose()));
}

class EndToEndGradient : public ::testing::TestWithParam<EncoderKind> {};

TEST_P(EndToEndGradient, ThetaGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const EncoderShape shape{GetParam(), 4, GetParam() == EncoderKind::linear ? 0 : 5, 3};
  SubspaceLossOptions opts;
  opts.k = 1;
  const LossWeights w{0.5, 0.7, 1.0};
  for (int trial = 0; trial < 3; ++trial) {
    const Encoder enc = Encoder::initialized(shape, 100 + static_cast<std::uint64_t>(trial));
    const Matrix xa = gaussian(6, 4, rng) * Vector::LinSpaced(4, 2.0, 0.5).asDiagonal();
    const Matrix xb = xa + 0.3 * gaussian(6, 4, rng);
    auto objective = [&](const Vector& theta) {
      Encoder e = enc;
      e.set_parameters(theta);
      return total_loss(forward(e, xa), forward(e, xb), w, opts).total;
    };
    const auto r = total_loss(forward(enc, xa), forward(enc, xb), w, opts);
    ASSERT_FALSE(r.sub_gradient_unreliable);
    const Vector analytic = backward(enc, xa, r.grad_a) + backward(enc, xb, r.grad_b);
    Vector theta = enc.parameters();
    double worst = 0.0;
    for (Index i = 0; i < theta.size(); ++i) {
      const double o = theta[i];
      theta[i] = o + 1e-6;
      const double up = objective(theta);
      theta[i] = o - 1e-6;
      const double down = objective(theta);
      theta[i] = o;
      const double num = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(num - analytic[i]) / std::max(1.0, std::abs(num)));
    }
    EXPECT_LT(worst, 1e-5);
  }
}

INSTANTIATE_TEST_SUITE_P(BothKinds, EndToEndGradient, ::testing::Values(EncoderKind::linear, EncoderKind::tanh_mlp));

// ---- parameters and checkpoints ------------------------------------------------

TEST(Encoder, ParameterRoundTripAndChecksum) {
  const Encoder e = Encoder::initialized({EncoderKind::tanh_mlp, 5, 4, 3}, 9);
  EXPECT_EQ(e.parameter_count(), 5 * 4 + 4 + 4 * 3 + 3);
  Encoder f(e.shape());
  f.set_parameters(e.parameters());
  EXPECT_EQ(parameter_checksum(f), parameter_checksum(e));
  Vector t = e.parameters();
  t[3] = std::nextafter(t[3], 1.0);
  f.set_parameters(t);
  EXPECT_NE(parameter_checksum(f), parameter_checksum(e));
  EXPECT_THROW(f.set_parameters(Vector::Zero(3)), InvalidInput);
}

TEST(Encoder, InitializationWithinFanInBound) {
  const Encoder e = Encoder::initialized({EncoderKind::tanh_mlp, 16, 9, 3}, 2);
  EXPECT_LE(e.layers()[0].weight.cwiseAbs().maxCoeff(), 0.25);
  EXPECT_LE(e.layers()[1].weight.cwiseAbs().maxCoeff(), 1.0 / 3.0);
  EXPECT_EQ(parameter_checksum(Encoder::initialized({EncoderKind::tanh_mlp, 16, 9, 3}, 2)), parameter_checksum(e));
}

TEST(Checkpoint, RoundTripBitExact) {
  for (EncoderKind k : {EncoderKind::linear, EncoderKind::tanh_mlp}) {
    const Encoder e = Encoder::initialized({k, 6, k == EncoderKind::linear ? 0 : 4, 3}, 5);
    const Encoder back = read_bytes(checkpoint_bytes(e));
    EXPECT_EQ(back.kind(), k);
    EXPECT_EQ(parameter_checksum(back), parameter_checksum(e));
    EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(e));
  }
}

TEST(Checkpoint, RejectsCorruption) {
  const std::string b = checkpoint_bytes(Encoder::initialized({EncoderKind::tanh_mlp, 3, 2, 2}, 1));
  std::string bad = b;
  bad[0] = 'Z';
  EXPECT_THROW(read_bytes(bad), FormatError);
  bad = b;
  bad[4] = 9;  // version
  EXPECT_THROW(read_bytes(bad), FormatError);
  bad = b;
  bad[6] = 7;  // kind tag
  EXPECT_THROW(read_bytes(bad), FormatError);
  bad = b;
  bad[7] = 5;  // input dim no longer matches the blobs
  EXPECT_THROW(read_bytes(bad), FormatError);
  EXPECT_THROW(read_bytes(b.substr(0, b.size() - 3)), FormatError);
  EXPECT_THROW(read_bytes(b.substr(0, 10)), FormatError);
}

// ---- optimizer -------------------------------------------------------------------

TEST(Optimizer, ZeroGradientLeavesParameters) {
  Vector p = Vector::LinSpaced(4, -1.0, 1.0);
  const Vector orig = p;
  AdamState s(4);
  optimizer_step(p, Vector::Zero(4), s, 0.1, {});
  EXPECT_EQ(p, orig);
}

TEST(Optimizer, BothDecaysZeroIsNormalizedStep) {
  Vector p(2);
  p << 1.0, 1.0;
  Vector g(2);
  g << 0.3, -2.0;
  AdamState s(2);
  optimizer_step(p, g, s, 0.1, {0.0, 0.0});
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], 1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Optimizer, RepeatedGradientStepBelowLrTimesGradient) {
  // scalar trace: g = 2, b1 = 0.9, b2 = 0.999; after two steps m_hat = 2, v_hat = 4
  Vector p = Vector::Zero(1);
  AdamState s(1);
  const Vector g = Vector::Constant(1, 2.0);
  optimizer_step(p, g, s, 0.1, {});
  const double before = p[0];
  optimizer_step(p, g, s, 0.1, {});
  const double step = std::abs(p[0] - before);
  EXPECT_NEAR(step, 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_LT(step, 0.1 * 2.0);
}

TEST(Optimizer, NonFiniteGradientAborts) {
  Vector p = Vector::Ones(3);
  AdamState s(3);
  Vector g = Vector::Ones(3);
  g[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(optimizer_step(p, g, s, 0.1, {}), AbortStep);
  EXPECT_EQ(p, Vector::Ones(3));
  EXPECT_EQ(s.step, 0);
}

// ---- running covariance ------------------------------------------------------------

TEST(RunningCov, ZeroDecayEqualsBatch) {
  std::mt19937_64 rng(6);
  const Matrix c = covariance(gaussian(8, 3, rng));
  const auto rc = update_running_cov(RunningCovariance(3, 0.0), c);
  EXPECT_EQ(rc.accum(), c);
}

TEST(RunningCov, GeometricSeries) {
  const Matrix c = Matrix::Identity(2, 2) * 2.0 + Matrix::Ones(2, 2);
  RunningCovariance rc(2, 0.9);
  for (int t = 1; t <= 12; ++t) {
    rc.update(c);
    EXPECT_LT((rc.accum() - (1.0 - std::pow(0.9, t)) * c).norm(), 1e-12);
  }
  EXPECT_EQ(rc.steps(), 12);
}

TEST(RunningCov, HalfDecayHandValue) {
  RunningCovariance rc(2, 0.5);
  rc.update(2.0 * Matrix::Identity(2, 2));  // accum = I
  ASSERT_EQ(rc.accum(), Matrix::Identity(2, 2));
  rc.update(3.0 * Matrix::Identity(2, 2));
  EXPECT_EQ(rc.accum(), 2.0 * Matrix::Identity(2, 2));
}

TEST(RunningCov, RejectsAsymmetricAndBadDecay) {
  RunningCovariance rc(2, 0.5);
  Matrix a(2, 2);
  a << 1, 2, 0, 1;
  EXPECT_THROW(rc.update(a), InvalidInput);
  EXPECT_THROW(RunningCovariance(2, 1.0), InvalidInput);
}

TEST(RunningCov, ZeroDecayReproducesBatchSpecLoss) {
  std::mt19937_64 rng(7);
  const Matrix z = gaussian(9, 4, rng);
  const auto a = spec_loss_running(z, RunningCovariance(4, 0.0));
  const auto b = spec_loss(z);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(RunningCov, StraightThroughGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  RunningCovariance rc(3, 0.6);
  rc.update(covariance(gaussian(10, 3, rng)));
  const Matrix z = gaussian(7, 3, rng);
  const Matrix num = testsupport::numeric_gradient([&](const Matrix& x) { return spec_loss_running(x, rc).value; }, z, 1e-6);
  EXPECT_LT(testsupport::max_rel_error(spec_loss_running(z, rc).grad, num), 1e-7);
}

TEST(RunningCov, StaysSymmetricPsd) {
  std::mt19937_64 rng(9);
  RunningCovariance rc(5, 0.8);
  for (int t = 0; t < 20; ++t) rc.update(covariance(gaussian(6, 5, rng)));
  EXPECT_TRUE(is_symmetric(rc.accum(), 1e-9));
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(rc.accum()).eigenvalues().minCoeff(), -1e-10);
}

// ---- training ----------------------------------------------------------------------

TEST(Train, ZeroEpochsLeavesEncoder) {
  CohortConfig cc;
  cc.n_patients = 40;
  const auto ds = generate(cc);
  const Encoder init = Encoder::initialized({EncoderKind::tanh_mlp, 32, 8, 6}, 3);
  const auto r = train(init, ds, quick_config(0));
  EXPECT_EQ(parameter_checksum(r.encoder), parameter_checksum(init));
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, ZeroLearningRateLeavesEncoder) {
  CohortConfig cc;
  cc.n_patients = 40;
  const auto ds = generate(cc);
  const Encoder init = Encoder::initialized({EncoderKind::tanh_mlp, 32, 8, 6}, 3);
  TrainConfig c = quick_config(3);
  c.learning_rate = 0.0;
  const auto r = train(init, ds, c);
  EXPECT_EQ(r.encoder.parameters(), init.parameters());
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Train, BitwiseDeterministic) {
  CohortConfig cc;
  cc.n_patients = 60;
  const auto ds = generate(cc);
  const Encoder init = Encoder::initialized({EncoderKind::tanh_mlp, 32, 8, 6}, 3);
  const auto a = train(init, ds, quick_config(5));
  const auto b = train(init, ds, quick_config(5));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.history[i].total), std::bit_cast<std::uint64_t>(b.history[i].total));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.history[i].sub_term), std::bit_cast<std::uint64_t>(b.history[i].sub_term));
  }
  EXPECT_EQ(parameter_checksum(a.encoder), parameter_checksum(b.encoder));
}

TEST(Train, HistoryRecordsEveryTermConsistently) {
  CohortConfig cc;
  cc.n_patients = 130;
  const auto ds = generate(cc);
  TrainConfig c = quick_config(4);
  c.weights = {0.3, 0.6, 1.0};
  const auto r = train(Encoder::initialized({EncoderKind::linear, 32, 0, 6}, 1), ds, c);
  for (const auto& h : r.history) {
    EXPECT_EQ(h.batches, 2);  // 130 / 64, remainder folded into the last batch
    EXPECT_NEAR(h.total, h.spec_term + 0.3 * h.sub_term + 0.6 * h.orth_term, 1e-9);
    EXPECT_GE(h.spec_term, 0.0);
    EXPECT_GE(h.sub_term, 0.0);
    EXPECT_GE(h.orth_term, 0.0);
  }
  EXPECT_TRUE(r.encoder.parameters().allFinite());
}

TEST(Train, DefaultConfigLossDecreasesOnNineOfTenSeeds) {
  int decreased = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CohortConfig cc;
    cc.seed = seed;
    TrainConfig tc;
    tc.seed = seed;
    const auto ds = generate(cc);
    const auto r = train(Encoder::initialized({EncoderKind::tanh_mlp, 32, 32, 16}, seed * 31 + 1), ds, tc);
    decreased += r.history.back().total < r.history.front().total;
  }
  EXPECT_GE(decreased, 9);
}

TEST(Train, HugeLearningRateAbortsWithPosition) {
  CohortConfig cc;
  cc.n_patients = 128;
  const auto ds = generate(cc);
  TrainConfig c = quick_config(3);
  c.learning_rate = 1e300;
  try {
    train(Encoder::initialized({EncoderKind::tanh_mlp, 32, 8, 6}, 3), ds, c);
    FAIL() << "expected AbortStep";
  } catch (const AbortStep& e) {
    EXPECT_GE(e.epoch(), 0);
    EXPECT_GE(e.batch(), 0);
  }
}

TEST(Train, RejectsBadConfig) {
  CohortConfig cc;
  cc.n_patients = 20;
  const auto ds = generate(cc);
  TrainConfig c = quick_config(1);
  c.k_sub = 9;
  EXPECT_THROW(train(Encoder::initialized({EncoderKind::linear, 32, 0, 6}, 1), ds, c), InvalidInput);
  c = quick_config(1);
  c.running_cov_decay = 1.0;
  EXPECT_THROW(train(Encoder::initialized({EncoderKind::linear, 32, 0, 6}, 1), ds, c), InvalidInput);
  EXPECT_THROW(train(Encoder::initialized({EncoderKind::linear, 31, 0, 6}, 1), ds, quick_config(1)), InvalidInput);
}

// ---- supervised baseline --------------------------------------------------------------

TEST(Baseline, SeparableToyDataIsLearned) {
  const auto ds = toy_dataset(200, false, 3);
  TrainConfig c;
  c.epochs = 150;
  c.learning_rate = 0.02;
  const auto r = train_supervised_baseline(Encoder::initialized({EncoderKind::tanh_mlp, 4, 8, 3}, 2), ds, c);
  EXPECT_GT(r.train_accuracy, 0.95);
}

TEST(Baseline, ZeroLearningRateLeavesEncoder) {
  const auto ds = toy_dataset(50, false, 4);
  TrainConfig c;
  c.epochs = 3;
  c.learning_rate = 0.0;
  const Encoder init = Encoder::initialized({EncoderKind::tanh_mlp, 4, 8, 3}, 2);
  EXPECT_EQ(train_supervised_baseline(init, ds, c).encoder.parameters(), init.parameters());
}

TEST(Baseline, RandomLabelsPlateauNearLogTwo) {
  const auto ds = toy_dataset(600, true, 5);
  TrainConfig c;
  c.epochs = 40;
  const auto r = train_supervised_baseline(Encoder::initialized({EncoderKind::tanh_mlp, 4, 8, 3}, 2), ds, c);
  EXPECT_NEAR(r.loss_history.back(), std::numbers::ln2, 0.05);
}
