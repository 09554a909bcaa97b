#include <gtest/gtest.h>

#include <cmath>

#include "ifno/training.hpp"
#include "oracles.hpp"

using namespace ifno;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.nx = 5;
  c.ny = 5;
  c.extent = Extent{1.0, 1.0};
  c.width = 2;
  c.proj_width = 4;
  c.modes_x = 2;
  c.modes_y = 2;
  c.depth = 2;
  c.activation = Activation::softplus;
  return c;
}

std::vector<Sample> random_samples(const ModelConfig& c, int n, Rng& rng) {
  std::vector<Sample> out;
  for (int k = 0; k < n; ++k) {
    Sample s;
    s.boundary = BoundaryLoading(c.nx, c.ny, c.extent,
                                 oracle::random_vector(boundary_size(c.nx, c.ny) * 2, rng, -0.5, 0.5));
    s.field = GridField(c.nx, c.ny, 2, c.extent,
                        oracle::random_vector(static_cast<std::size_t>(c.nx) * c.ny * 2, rng, -0.5, 0.5));
    out.push_back(std::move(s));
  }
  return out;
}

/// Samples whose targets are the model's own predictions.
std::vector<Sample> self_consistent_samples(const IfnoParams& p, int n, Rng& rng) {
  auto s = random_samples(p.config, n, rng);
  for (auto& x : s) x.field = forward(x.boundary, p);
  return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

TEST(Losses, DataLossZeroAtReproduction) {
  const IfnoParams p = init_params(tiny_config(), 1);
  Rng rng(1);
  const auto s = self_consistent_samples(p, 3, rng);
  EXPECT_EQ(data_loss(p, s), 0.0);
  EXPECT_THROW(data_loss(p, std::span<const Sample>{}), ConfigError);
}

TEST(Losses, DataLossIsAdditive) {
  const IfnoParams p = init_params(tiny_config(), 2);
  Rng rng(2);
  const auto s = random_samples(p.config, 6, rng);
  const std::span<const Sample> all(s);
  EXPECT_NEAR(data_loss(p, all), data_loss(p, all.first(2)) + data_loss(p, all.subspan(2)), 1e-13);
}

TEST(Losses, DataLossUnitResidualQuadrature) {
  // prediction identically 1 on the unit square, truth zero: 2 channels * area 1.
  IfnoParams p = init_params(tiny_config(), 3);
  for (SubNetParams* s : {&p.sub_x, &p.sub_y}) {
    s->proj2_weight.setZero();
    s->proj2_bias(0) = 1.0;
  }
  Sample s;
  s.boundary = BoundaryLoading(5, 5, p.config.extent);
  s.field = GridField(5, 5, 2, p.config.extent);
  EXPECT_NEAR(data_loss(p, std::span<const Sample>(&s, 1)), 2.0, 1e-14);
}

TEST(Losses, PhysicsLossIdentities) {
  IfnoParams p = init_params(tiny_config(), 4);
  Sample zero;
  zero.boundary = BoundaryLoading(5, 5, p.config.extent);
  zero.field = GridField(5, 5, 2, p.config.extent);
  EXPECT_EQ(physics_loss(p), data_loss(p, std::span<const Sample>(&zero, 1)));
  EXPECT_GT(physics_loss(p), 0.0);
  for (SubNetParams* s : {&p.sub_x, &p.sub_y}) {
    s->proj2_weight.setZero();
    s->proj2_bias.setZero();
  }
  EXPECT_EQ(physics_loss(p), 0.0);
}

TEST(Losses, HybridLoss) {
  const IfnoParams p = init_params(tiny_config(), 5);
  Rng rng(5);
  const auto s = random_samples(p.config, 4, rng);
  EXPECT_EQ(hybrid_loss(p, s, 0.0), data_loss(p, s));
  const double d = data_loss(p, s), ph = physics_loss(p);
  EXPECT_DOUBLE_EQ(hybrid_loss(p, s, 1.0), d + ph);
  double prev = -1.0;
  for (double g : {0.0, 0.1, 1.0, 10.0}) {
    const double h = hybrid_loss(p, s, g);
    EXPECT_GE(h, prev);
    prev = h;
  }
  EXPECT_THROW(hybrid_loss(p, s, -1.0), ConfigError);
}

TEST(Gradient, ZeroAtGlobalMinimum) {
  ModelConfig c = tiny_config();
  c.activation = Activation::relu;
  const IfnoParams p = init_params(c, 6);
  Rng rng(6);
  const auto s = self_consistent_samples(p, 3, rng);
  const LossAndGradient lg = grad(p, s, 0.0);
  EXPECT_EQ(lg.data_loss, 0.0);
  for (double v : flatten(lg.gradient)) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, LossValueAgreesWithForwardPath) {
  const IfnoParams p = init_params(tiny_config(), 7);
  Rng rng(7);
  const auto s = random_samples(p.config, 5, rng);
  const LossAndGradient lg = grad(p, s, 1.0);
  EXPECT_NEAR(lg.data_loss, data_loss(p, s), 1e-12 * data_loss(p, s));
  EXPECT_NEAR(lg.physics_loss, physics_loss(p), 1e-12 * physics_loss(p));
  EXPECT_NEAR(lg.total, hybrid_loss(p, s, 1.0), 1e-12 * lg.total);
}

TEST(Gradient, DirectionalDerivativeMatchesFiniteDifference) {
  for (std::uint64_t seed : {8u, 9u, 10u}) {
    const IfnoParams p = init_params(tiny_config(), seed);
    Rng rng(seed);
    const auto s = random_samples(p.config, 3, rng);
    const auto g = flatten(grad(p, s, 1.0).gradient);
    const auto v = oracle::random_vector(g.size(), rng);
    const double eps = 1e-6;
    auto shifted = [&](double t) {
      auto x = flatten(p);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += t * v[k];
      IfnoParams q = p;
      unflatten(x, q);
      return hybrid_loss(q, s, 1.0);
    };
    const double fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
    const double an = dot(g, v);
    EXPECT_LT(std::abs(fd - an) / std::abs(an), 1e-6) << "seed " << seed;
  }
}

TEST(Gradient, CentralDifferencePerBlock) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const IfnoParams p = init_params(tiny_config(), seed);
    Rng rng(seed);
    const auto s = random_samples(p.config, 3, rng);
    const GradientCheckReport r = fd_gradient_check(p, s, 1.0, 1e-6, 64, 3);
    ASSERT_EQ(r.blocks.size(), 2u * kBlocksPerSubNet);
    for (const auto& b : r.blocks) {
      EXPECT_GT(b.checked, 0u);
      EXPECT_LT(b.max_rel, 1e-4) << b.name << " seed " << seed;
    }
  }
}

TEST(Gradient, CentralDifferenceAgainstIndependentOracle) {
  const IfnoParams p = init_params(tiny_config(), 21);
  Rng rng(21);
  const auto s = random_samples(p.config, 3, rng);
  const Gradient g = grad(p, s, 1.0).gradient;
  const GradientCheckReport r = fd_gradient_check(
      p, g, [&](const IfnoParams& q) { return oracle::hybrid_loss_ld(q, s, 1.0); }, 1e-6, 1000, 5);
  for (const auto& b : r.blocks) EXPECT_LT(b.max_rel, 1e-4) << b.name;
}

TEST(Gradient, ReferenceLossAgreesWithForwardPath) {
  for (Activation a : {Activation::relu, Activation::softplus}) {
    ModelConfig c = tiny_config();
    c.activation = a;
    c.depth = 3;
    const IfnoParams p = init_params(c, 22);
    Rng rng(22);
    const auto s = random_samples(c, 2, rng);
    const double fast = hybrid_loss(p, s, 0.7);
    EXPECT_NEAR(static_cast<double>(reference_hybrid_loss(p, s, 0.7)), fast, 1e-13 * fast);
    EXPECT_NEAR(static_cast<double>(oracle::hybrid_loss_ld(p, s, 0.7)), fast, 1e-13 * fast);
  }
}

TEST(Gradient, QuadraticToyIsExact) {
  const IfnoParams p = init_params(tiny_config(), 12);
  Gradient g = p;
  auto x = flatten(p);
  for (auto& v : x) v *= 2.0;
  unflatten(x, g);
  const auto sq = [](const IfnoParams& q) {
    double s = 0.0;
    for (double v : flatten(q)) s += v * v;
    return s;
  };
  const GradientCheckReport r = fd_gradient_check(p, g, sq, 1e-3, 1000, 1);
  EXPECT_LT(r.max_rel(), 1e-10);
}

TEST(Gradient, CheckRequiresSmoothActivation) {
  ModelConfig c = tiny_config();
  c.activation = Activation::relu;
  const IfnoParams p = init_params(c, 13);
  Rng rng(13);
  const auto s = random_samples(c, 2, rng);
  EXPECT_THROW(fd_gradient_check(p, s, 0.0), ConfigError);
}

TEST(Gradient, ThreadCountDoesNotChangeResult) {
  const IfnoParams p = init_params(tiny_config(), 14);
  Rng rng(14);
  const auto s = random_samples(p.config, 11, rng);
  const LossAndGradient a = grad(p, s, 1.0, 1);
  const LossAndGradient b = grad(p, s, 1.0, 3);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(flatten(a.gradient), flatten(b.gradient));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  IfnoParams p = init_params(tiny_config(), 15);
  const IfnoParams before = p;
  AdamState st;
  adam_step(p, zero_gradient(p), st, 0.1);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepFormula) {
  IfnoParams p = IfnoParams::zeros(tiny_config());
  Gradient g = zero_gradient(p);
  g.sub_x.proj2_bias(0) = 2.0;
  AdamState st;
  adam_step(p, g, st, 0.1);
  EXPECT_NEAR(p.sub_x.proj2_bias(0), -0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepRecurrence) {
  IfnoParams p = IfnoParams::zeros(tiny_config());
  p.sub_y.layer_bias(1) = 0.7;
  Gradient g = zero_gradient(p);
  g.sub_y.layer_bias(1) = -1.3;
  AdamState st;
  adam_step(p, g, st, 0.05);
  adam_step(p, g, st, 0.05);
  // scalar reference recurrence
  double th = 0.7, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * -1.3;
    v = 0.999 * v + 0.001 * 1.69;
    th -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.sub_y.layer_bias(1), th, 1e-12);
}

TEST(Adam, ZeroLearningRateFreezesTraining) {
  const ModelConfig c = tiny_config();
  Rng rng(16);
  const auto s = random_samples(c, 4, rng);
  TrainConfig tc;
  tc.learning_rate = 1e-300;  // validated > 0; effectively frozen
  tc.epochs_per_depth = 3;
  tc.depth_schedule = {2};
  const IfnoParams init = init_params(c, tc.seed);
  IfnoParams p = init;
  AdamState st;
  adam_step(p, grad(p, s, 0.0).gradient, st, 0.0);
  EXPECT_EQ(p, init);
  const TrainResult r = train(s, c, tc);
  for (const auto& e : r.history.epochs) EXPECT_EQ(e.data_loss, r.history.epochs.front().data_loss);
}

TEST(Schedule, HalvesEveryHundredEpochs) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0), 3e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 99), 3e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 100), 1.5e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 199), 1.5e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 200), 7.5e-4);
}

TEST(Schedule, AfterReading) {
  TrainConfig c;
  c.decay_mode = DecayMode::after;
  c.epochs_per_depth = 1000;
  c.post_decay_epochs = 300;
  EXPECT_EQ(c.epochs_per_stage(), 1300);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 999), 3e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 1000), 1.5e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 1100), 7.5e-4);
}

TEST(Train, ConfigValidation) {
  const ModelConfig c = tiny_config();
  Rng rng(17);
  const auto s = random_samples(c, 2, rng);
  TrainConfig tc;
  tc.depth_schedule = {};
  EXPECT_THROW(train(s, c, tc), ConfigError);
  tc.depth_schedule = {4, 2};
  EXPECT_THROW(train(s, c, tc), ConfigError);
  tc = TrainConfig{};
  tc.learning_rate = 0.0;
  EXPECT_THROW(train(s, c, tc), ConfigError);
  EXPECT_THROW(train(std::span<const Sample>{}, c, TrainConfig{}), ConfigError);
}

TEST(Train, DeterministicHistoryAndStages) {
  ModelConfig c = tiny_config();
  c.activation = Activation::relu;
  Rng rng(18);
  const auto s = random_samples(c, 9, rng);
  TrainConfig tc;
  tc.epochs_per_depth = 15;
  tc.depth_schedule = {1, 2, 4};
  tc.gamma = 1.0;
  tc.batch_size = 4;
  tc.seed = 5;
  const TrainResult a = train(s, c, tc);
  const TrainResult b = train(s, c, tc);
  EXPECT_TRUE(a.history.same_trajectory(b.history));
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.epochs.size(), 45u);
  EXPECT_EQ(a.history.epochs[14].depth, 1);
  EXPECT_EQ(a.history.epochs[15].depth, 2);
  EXPECT_EQ(a.history.epochs[44].depth, 4);
  EXPECT_EQ(a.params.depth(), 4);
  EXPECT_GE(a.history.best_epoch, 30);
}

TEST(Train, FullBatchBestCheckpointMatchesRecordedLoss) {
  ModelConfig c = tiny_config();
  c.activation = Activation::relu;
  Rng rng(19);
  const auto s = random_samples(c, 6, rng);
  TrainConfig tc;
  tc.epochs_per_depth = 40;
  tc.depth_schedule = {2};
  tc.gamma = 0.5;
  const TrainResult r = train(s, c, tc);
  const auto& e = r.history.epochs[static_cast<std::size_t>(r.history.best_epoch)];
  EXPECT_DOUBLE_EQ(r.history.best_loss, e.data_loss + 0.5 * e.physics_loss);
  EXPECT_NEAR(hybrid_loss(r.params, s, 0.5), r.history.best_loss, 1e-12 * r.history.best_loss);
  for (const auto& x : r.history.epochs) EXPECT_GE(x.data_loss + 0.5 * x.physics_loss, r.history.best_loss);
}

TEST(Train, NonFiniteLossAborts) {
  ModelConfig c = tiny_config();
  Rng rng(20);
  const auto s = random_samples(c, 3, rng);
  TrainConfig tc;
  tc.learning_rate = 1e300;
  tc.decay_ratio = 1.0;
  tc.epochs_per_depth = 20;
  tc.depth_schedule = {2};
  EXPECT_THROW(train(s, c, tc), NumericalError);
}

TEST(Train, HistoryCsvHasHeaderAndRows) {
  TrainHistory h;
  h.epochs.push_back({0, 2, 3e-3, 1.0, 0.5, 0.1});
  const std::string csv = history_csv(h);
  EXPECT_EQ(csv.rfind("epoch,lr,data_loss,physics_loss,seconds", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}
