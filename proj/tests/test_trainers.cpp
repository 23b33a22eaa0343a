#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"

using namespace poisonlab;
using testutil::random_dataset;
using testutil::random_model;

namespace {

// Two-class set where token 1 means class 1 and token 2 means class 0.
Dataset separable(std::size_t n, std::uint64_t seed) {
  Dataset ds = random_dataset(n, 12, 2, seed, 2, 5);
  for (auto& ex : ds.examples) {
    for (auto& t : ex.token_ids) {
      if (t <= 2) t = 3;
    }
    ex.token_ids.push_back(ex.label == 1 ? 1 : 2);
  }
  return ds;
}

double train_accuracy(const ModelParams& p, const Dataset& ds) {
  std::size_t ok = 0;
  for (const auto& ex : ds.examples) ok += predict(p, ex.token_ids) == ex.label;
  return static_cast<double>(ok) / static_cast<double>(ds.size());
}

TrainConfig quick(double lr, std::size_t steps, std::uint64_t seed) {
  TrainConfig c;
  c.lr = lr;
  c.duration = steps;
  c.batch_size = 8;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Optimizer, SgdStepDefinition) {
  ModelParams p({2, 1, 1, 2});
  for (double& x : p.values()) x = 1.0;
  FlatVector g(p.shape().param_count(), 1.0);
  sgd_step(p, g, 0.1, 0.0, 0);
  for (double x : p.values()) EXPECT_DOUBLE_EQ(x, 0.9);
}

TEST(Optimizer, AdamMatchesHandEvaluatedRecurrence) {
  ModelParams p({2, 1, 1, 2});
  const std::size_t n = p.shape().param_count();
  std::vector<double> theta(n);
  for (std::size_t i = 0; i < n; ++i) theta[i] = p.values()[i] = 0.1 * static_cast<double>(i) - 0.2;
  FlatVector g1(n), g2(n);
  for (std::size_t i = 0; i < n; ++i) {
    g1[i] = 0.5 - 0.3 * static_cast<double>(i);
    g2[i] = -0.25 + 0.1 * static_cast<double>(i);
  }
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  OptimizerState st;
  adam_step(p, g1, st, lr, 0.0, 0);
  // Step 1: bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
  for (std::size_t i = 0; i < n; ++i) {
    theta[i] -= lr * g1[i] / (std::abs(g1[i]) + eps);
    EXPECT_NEAR(p.values()[i], theta[i], 1e-15);
  }
  adam_step(p, g2, st, lr, 0.0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = b1 * (1 - b1) * g1[i] + (1 - b1) * g2[i];
    const double v = b2 * (1 - b2) * g1[i] * g1[i] + (1 - b2) * g2[i] * g2[i];
    const double mhat = m / (1 - b1 * b1), vhat = v / (1 - b2 * b2);
    theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    EXPECT_NEAR(p.values()[i], theta[i], 1e-14);
  }
}

TEST(Optimizer, DecoupledWeightDecay) {
  ModelParams p({2, 1, 1, 2});
  for (double& x : p.values()) x = 2.0;
  OptimizerState st;
  adam_step(p, FlatVector(p.shape().param_count()), st, 0.1, 0.5, 0);
  for (double x : p.values()) EXPECT_NEAR(x, 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Optimizer, ZeroGradientNoDecayLeavesParams) {
  auto p = random_model(5, 2, 2, 2, 1);
  auto q = p;
  OptimizerState st;
  adam_step(q, FlatVector(p.shape().param_count()), st, 0.1, 0.0, 0);
  EXPECT_EQ(p, q);
  sgd_step(q, FlatVector(p.shape().param_count()), 0.1, 0.0, 0);
  EXPECT_EQ(p, q);
}

TEST(Optimizer, NonFiniteGradientIsDivergence) {
  auto p = random_model(5, 2, 2, 2, 1);
  FlatVector g(p.shape().param_count());
  g[3] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState st;
  EXPECT_THROW(adam_step(p, g, st, 0.1, 0.0, 7), DivergenceError);
}

TEST(BatchSampler, EachEpochCoversEveryExampleOnce) {
  auto ds = random_dataset(10, 50, 2, 3);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.examples[i].token_ids = {static_cast<TokenId>(i + 1)};
  BatchSampler s(ds, 4, 9);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::multiset<TokenId> seen;
    std::vector<std::size_t> sizes;
    while (seen.size() < ds.size()) {
      const auto& b = s.next();
      sizes.push_back(b.size());
      for (const auto& ex : b) seen.insert(ex.token_ids[0]);
    }
    EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 4, 2}));
    EXPECT_EQ(std::set<TokenId>(seen.begin(), seen.end()).size(), ds.size());
  }
}

TEST(BadnetTrain, ConvergesOnSeparablePoisonSet) {
  auto ds = separable(64, 1);
  auto cfg = quick(0.05, 400, 2);
  auto res = badnet_train(init_params(12, 4, 6, 2, 3), ds, cfg);
  EXPECT_LT(loss(res.params, ds.examples), 0.1);
  EXPECT_EQ(res.trace.size(), 400u);
}

TEST(BadnetTrain, ZeroStepsIsIdentity) {
  auto p = init_params(12, 4, 6, 2, 3);
  auto res = badnet_train(p, separable(16, 1), quick(0.05, 0, 2));
  EXPECT_EQ(res.params, p);
}

TEST(BadnetTrain, Deterministic) {
  auto ds = separable(40, 4);
  auto p = init_params(12, 4, 6, 2, 3);
  auto a = badnet_train(p, ds, quick(0.01, 50, 5));
  auto b = badnet_train(p, ds, quick(0.01, 50, 5));
  EXPECT_EQ(serialize_checkpoint(a.params), serialize_checkpoint(b.params));
}

TEST(RippleLoss, AlignedBatchesLeavePenaltyOff) {
  auto p = random_model(12, 3, 4, 2, 21);
  auto ds = random_dataset(6, 12, 2, 22);
  // Same batch for both losses: the inner product is |g|^2 > 0.
  auto rs = ripple_loss_and_grad(p, ds.examples, ds.examples, 0.7, false);
  auto plain = loss_and_grad(p, ds.examples);
  EXPECT_GT(rs.inner_product, 0.0);
  EXPECT_FALSE(rs.penalty_active);
  EXPECT_EQ(rs.loss, plain.loss);
  EXPECT_EQ(rs.grad, plain.grad);
}

TEST(RippleLoss, LambdaZeroReducesToPoisonLoss) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto p = random_model(12, 3, 4, 2, 30 + s);
    auto pb = random_dataset(5, 12, 2, 40 + s), fb = random_dataset(5, 12, 2, 50 + s);
    auto rs = ripple_loss_and_grad(p, pb.examples, fb.examples, 0.0, false);
    auto plain = loss_and_grad(p, pb.examples);
    EXPECT_EQ(rs.loss, plain.loss);
    EXPECT_EQ(rs.grad, plain.grad);
  }
}

TEST(RippleLoss, PenaltyZeroExactlyWhenInnerProductNonNegative) {
  std::size_t active = 0, inactive = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto p = random_model(10, 2, 3, 2, 1000 + s);
    auto pb = random_dataset(4, 10, 2, 2000 + s), fb = random_dataset(4, 10, 2, 3000 + s);
    const double lambda = 0.5;
    auto rs = ripple_loss_and_grad(p, pb.examples, fb.examples, lambda, false);
    const double penalty = rs.loss - rs.poison_loss;
    if (rs.inner_product >= 0.0) {
      ++inactive;
      EXPECT_EQ(penalty, 0.0);
      EXPECT_FALSE(rs.penalty_active);
    } else {
      ++active;
      EXPECT_GT(penalty, 0.0);
      EXPECT_NEAR(penalty, -lambda * rs.inner_product, 1e-12 * std::max(1.0, penalty));
    }
  }
  EXPECT_GT(active, 0u);
  EXPECT_GT(inactive, 0u);
}

TEST(RippleLoss, FullGradientMatchesFiniteDifferencesOnTwentyParameters) {
  // V=4, d=2, h=2, c=2: 8 + 4 + 2 + 4 + 2 = 20 parameters.
  const double lambda = 2.0;
  std::size_t checked = 0;
  for (std::uint64_t s = 0; checked < 3 && s < 500; ++s) {
    auto p = random_model(4, 2, 2, 2, 500 + s, 1.2);
    ASSERT_EQ(p.shape().param_count(), 20u);
    auto pb = random_dataset(3, 4, 2, 600 + s, 1, 3), fb = random_dataset(3, 4, 2, 700 + s, 1, 3);
    const FlatVector g_ft = grad(p, fb.examples);
    auto objective = [&](const ModelParams& q) {
      auto gp = loss_and_grad(q, pb.examples);
      return gp.loss + lambda * std::max(0.0, -dot(gp.grad, g_ft));
    };
    auto rs = ripple_loss_and_grad(p, pb.examples, fb.examples, lambda, false);
    if (rs.inner_product > -0.05) continue;  // stay clear of the kink
    ++checked;
    EXPECT_NEAR(rs.loss, objective(p), 1e-12);
    FlatVector fd(20);
    for (std::size_t i = 0; i < 20; ++i) {
      ModelParams plus = p, minus = p;
      plus.values()[i] += 1e-5;
      minus.values()[i] -= 1e-5;
      fd[i] = (objective(plus) - objective(minus)) / 2e-5;
    }
    EXPECT_LE(testutil::vec_rel_err(rs.grad, fd), 1e-2) << "seed " << s;
    // The first-order variant drops the Hessian term and misses.
    auto fo = ripple_loss_and_grad(p, pb.examples, fb.examples, lambda, true);
    EXPECT_EQ(fo.grad, grad(p, pb.examples));
  }
  EXPECT_EQ(checked, 3u);
}

TEST(RippleTrain, LambdaZeroIsCheckpointIdenticalToBadnet) {
  auto poison = random_dataset(50, 20, 2, 1);
  auto proxy = random_dataset(40, 20, 2, 2);
  auto init = init_params(20, 4, 5, 2, 3);
  auto cfg = quick(0.01, 60, 9);
  cfg.lambda = 0.0;
  auto a = ripple_train(init, poison, proxy, cfg);
  auto b = badnet_train(init, poison, cfg);
  EXPECT_EQ(serialize_checkpoint(a.params), serialize_checkpoint(b.params));
}

TEST(RippleTrain, TraceRecordsEveryStep) {
  auto poison = random_dataset(30, 20, 2, 1);
  auto proxy = random_dataset(30, 20, 2, 2);
  auto cfg = quick(0.01, 25, 1);
  cfg.lambda = 1.0;
  auto res = ripple_train(init_params(20, 4, 5, 2, 3), poison, proxy, cfg);
  ASSERT_EQ(res.trace.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    const auto& r = res.trace.records[i];
    EXPECT_EQ(r.step, i);
    EXPECT_TRUE(std::isfinite(r.poison_loss) && std::isfinite(r.ft_loss) && std::isfinite(r.inner_product));
    EXPECT_EQ(r.penalty_active, r.inner_product < 0.0);
  }
  testutil::TempDir dir("trace");
  res.trace.write_csv(dir.file("t.csv"));
  auto text = testutil::read_file(dir.file("t.csv"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "step,poison_loss,ft_loss,inner_product,penalty_active");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 26);
}

TEST(RippleTrain, DivergenceReportsStep) {
  auto poison = random_dataset(30, 20, 2, 1);
  auto cfg = quick(1e6, 50, 1);
  cfg.optimizer = OptimizerKind::sgd;
  try {
    badnet_train(init_params(20, 4, 5, 2, 3), poison, cfg);
    SUCCEED();  // tanh saturation can keep the loss finite; nothing to check then
  } catch (const DivergenceError& e) {
    EXPECT_LT(e.step(), 50u);
  }
}

TEST(Finetune, ReachesHighTrainingAccuracyOnSeparableSet) {
  auto ds = separable(200, 7);
  TrainConfig cfg = victim_defaults();
  cfg.lr = 2e-2;
  cfg.duration = 20;
  cfg.seed = 1;
  auto res = finetune(init_params(12, 4, 6, 2, 2), ds, cfg);
  EXPECT_GE(train_accuracy(res.params, ds), 0.95);
  EXPECT_EQ(res.trace.size(), 20u * ((200 + 31) / 32));
}

TEST(Finetune, ZeroLearningRateIsIdentity) {
  auto ds = separable(40, 7);
  TrainConfig cfg = victim_defaults();
  cfg.lr = 0.0;
  auto p = init_params(12, 4, 6, 2, 2);
  EXPECT_EQ(finetune(p, ds, cfg).params, p);
}

TEST(Finetune, LinearDecayClosedForm) {
  const double lr0 = 0.3;
  const std::size_t K = 17;
  for (std::size_t k = 0; k < K; ++k) {
    EXPECT_DOUBLE_EQ(linear_decay_lr(lr0, k, K), lr0 * (1.0 - static_cast<double>(k) / 17.0));
  }
  EXPECT_DOUBLE_EQ(linear_decay_lr(lr0, 0, K), lr0);
}

TEST(TrainConfig, ValidationAndDefaults) {
  EXPECT_EQ(ripple_defaults().duration, 5000u);
  EXPECT_DOUBLE_EQ(ripple_defaults().lambda, 0.1);
  EXPECT_DOUBLE_EQ(ripple_defaults().lr, 2e-5);
  EXPECT_EQ(ripple_defaults().batch_size, 32u);
  EXPECT_EQ(badnet_defaults().duration, 1250u);
  EXPECT_EQ(victim_defaults().duration, 3u);
  EXPECT_EQ(victim_defaults().unit, DurationUnit::epochs);
  TrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.lr = -1;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(parse_optimizer("rmsprop"), ValidationError);
}

TEST(FirstOrderExpansion, RatioStaysBounded) {
  // [L_P(θ - η g_FT) - L_P(θ) + η g_P·g_FT] / η² tends to ½ g_FTᵀ H_P g_FT.
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto p = random_model(15, 3, 4, 2, 800 + s);
    auto pb = random_dataset(6, 15, 2, 900 + s), fb = random_dataset(6, 15, 2, 950 + s);
    const auto gp = loss_and_grad(p, pb.examples);
    const auto g_ft = grad(p, fb.examples);
    const double limit = 0.5 * dot(g_ft, hvp(p, pb.examples, g_ft));
    double worst = 0.0;
    for (double eta = 1e-2; eta >= 1e-5; eta /= 2.0) {
      FlatVector moved = flatten(p);
      axpy(-eta, g_ft, moved);
      const double lp = loss(unflatten(p.shape(), moved), pb.examples);
      const double ratio = (lp - gp.loss + eta * dot(gp.grad, g_ft)) / (eta * eta);
      worst = std::max(worst, std::abs(ratio));
      if (eta < 1e-3) EXPECT_NEAR(ratio, limit, 0.05 * std::abs(limit) + 1e-3) << "eta " << eta;
    }
    EXPECT_LT(worst, 10.0 * std::abs(limit) + 1.0);
  }
}
