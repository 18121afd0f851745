#include "tdpfed/simulator.hpp"

#include <gtest/gtest.h>

#include "tdpfed/errors.hpp"
#include "test_util.hpp"

namespace tdpfed {
namespace {

// Four tight clusters at the corners of a square; linearly separable.
Dataset corners(std::uint64_t seed, std::size_t per_class) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  const double cx[4] = {3, -3, -3, 3}, cy[4] = {3, 3, -3, -3};
  Dataset d{Matrix(4 * per_class, 2), {}, 4};
  for (std::size_t i = 0; i < 4 * per_class; ++i) {
    const std::size_t c = i % 4;
    d.features(i, 0) = cx[c] + noise(rng);
    d.features(i, 1) = cy[c] + noise(rng);
    d.labels.push_back(c);
  }
  return d;
}

SimConfig toy_config() {
  SimConfig c;
  c.clients = 4;
  c.sampled = 4;
  c.rounds = 30;
  c.eval_every = 10;
  c.model = ModelSpec{{LayerSpec::linear(2, 4, 2, Activation::softmax)}};
  c.data.classes_per_client = 2;
  c.hyper.tau = 5;
  c.hyper.s = 5;
  c.hyper.s_prime = 5;
  c.hyper.batch_size = 20;
  c.hyper.eta = 0.01;
  c.threads = 1;
  return c;
}

TEST(InitGlobal, SeededBoundedNonzero) {
  const ModelSpec spec = dnn_spec(44, 5);
  const TensorizedModel a = init_global(spec, 3);
  EXPECT_EQ(a, init_global(spec, 3));
  EXPECT_NE(a.layers[0].factors, init_global(spec, 4).layers[0].factors);
  const double bound = 0.5 / std::sqrt(44.0);
  for (const auto& f : a.layers[0].factors.factors)
    for (double v : f.data()) EXPECT_LE(std::abs(v), bound);
  const double n = frobenius_norm(kruskal_reconstruct(a.layers[0].factors));
  EXPECT_TRUE(std::isfinite(n));
  EXPECT_GT(n, 0.0);
  EXPECT_EQ(a.layers[1].bias, std::vector<double>(10, 0.0));
}

TEST(SampleClients, FullAndFrequency) {
  for (std::size_t t = 1; t < 5; ++t)
    EXPECT_EQ(sample_clients(5, 5, t, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  int zero = 0;
  for (std::size_t t = 1; t <= 1000; ++t) zero += sample_clients(2, 1, t, 9)[0] == 0;
  EXPECT_NEAR(zero, 500, 50);
  EXPECT_EQ(sample_clients(20, 7, 12, 3), sample_clients(20, 7, 12, 3));
  const auto s = sample_clients(20, 7, 12, 3);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 7u);
  EXPECT_THROW(sample_clients(2, 3, 1, 1), std::invalid_argument);
}

TEST(Evaluate, ConstantLogitsAndHandCount) {
  const ModelSpec spec{{LayerSpec::linear(2, 3, 1, Activation::softmax)}};
  Dataset test{Matrix{{1, 0}, {0, 1}, {1, 1}, {-1, 0}, {0, 0}}, {0, 1, 2, 0, 1}, 3};
  // Zero weights: constant logits, prediction is always class 0.
  PersonalizedModel zero{{{DenseTensor({3, 2}), {0, 0, 0}}}};
  // Identity-ish: class 0 for x0 > x1, class 1 for x1 > x0, ties go to 0.
  PersonalizedModel ident{{{DenseTensor({3, 2}, {1, 0, 0, 1, 0, 0}), {0, 0, -0.5}}}};
  TensorizedModel global;
  global.layers.push_back({LayerKind::linear, KruskalFactors({Matrix(3, 1), Matrix(2, 1)}),
                           {0, 0, 0}});
  const std::vector<std::vector<std::size_t>> shards{{0, 1, 2}, {3, 4}};
  const Evaluation ev = evaluate(spec, {&zero, &ident}, global, test, shards);
  EXPECT_DOUBLE_EQ(ev.personalized[0], 1.0 / 3.0);
  // ident on {(-1,0) -> 0? logits (-1,0,-0.5) -> 1, wrong; (0,0) -> 0, wrong}
  EXPECT_DOUBLE_EQ(ev.personalized[1], 0.0);
  // Global predicts class 0 everywhere: 1 of 3 and 1 of 2, weighted 2/5.
  EXPECT_DOUBLE_EQ(ev.global, 0.4);
  EXPECT_THROW(evaluate(spec, {&zero, &ident}, global, test, {{0}, {}}), std::invalid_argument);
}

TEST(Evaluate, MemorizerOnSingletonShards) {
  const ModelSpec spec{{LayerSpec::linear(2, 2, 1, Activation::softmax)}};
  Dataset test{Matrix{{1, 0}, {0, 1}}, {0, 1}, 2};
  PersonalizedModel m{{{DenseTensor({2, 2}, {1, 0, 0, 1}), {0, 0}}}};
  TensorizedModel global;
  global.layers.push_back({LayerKind::linear, KruskalFactors({Matrix(2, 1), Matrix(2, 1)}),
                           {0, 0}});
  const Evaluation ev = evaluate(spec, {&m, &m}, global, test, {{0}, {1}});
  EXPECT_EQ(ev.personalized, (std::vector<double>{1.0, 1.0}));
}

TEST(Run, SingleRoundSingleClient) {
  SimConfig c = toy_config();
  c.clients = c.sampled = 1;
  c.rounds = 1;
  c.data.classes_per_client = 4;
  c.hyper.lambda = 0.3;
  const Dataset train = corners(1, 10), test = corners(2, 5);
  const SimResult r = run(c, train, test);
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_EQ(r.metrics[0].round, 1u);
  EXPECT_EQ(r.metrics[0].uplink_bytes, uplink_reals(r.global) * kBytesPerReal);
  EXPECT_EQ(r.metrics[0].uplink_bytes, (2 * (4 + 2) + 4) * 8u);
  EXPECT_EQ(r.metrics[0].wall_s, 0.0);
}

TEST(Run, ToyReachesHighPersonalizedAccuracy) {
  const SimConfig c = toy_config();
  const SimResult r = run(c, corners(1, 40), corners(2, 20));
  ASSERT_EQ(r.metrics.size(), 3u);
  EXPECT_GE(r.metrics.back().acc_personalized_mean, 0.95);
  for (const auto& m : r.metrics) {
    EXPECT_GE(m.acc_global, 0.0);
    EXPECT_LE(m.acc_global, 1.0);
    EXPECT_GE(m.prox_gap_mean, 0.0);
  }
}

TEST(Run, IndependentOfWorkerCount) {
  SimConfig c = toy_config();
  c.rounds = 6;
  c.eval_every = 2;
  c.sampled = 3;
  const Dataset train = corners(1, 40), test = corners(2, 20);
  c.threads = 1;
  const SimResult a = run(c, train, test);
  c.threads = 4;
  const SimResult b = run(c, train, test);
  EXPECT_EQ(a.global, b.global);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i)
    EXPECT_EQ(metrics_csv_row(a.metrics[i]), metrics_csv_row(b.metrics[i]));
}

TEST(Run, ActStrategyRuns) {
  SimConfig c = toy_config();
  c.rounds = 5;
  c.eval_every = 5;
  c.strategy = Strategy::act;
  const SimResult r = run(c, corners(1, 40), corners(2, 20));
  ASSERT_EQ(r.metrics.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.metrics[0].loss_train_mean));
}

TEST(Run, ByteAccountingScalesWithSampledClients) {
  SimConfig c = toy_config();
  c.rounds = 1;
  c.sampled = 3;
  const SimResult r = run(c, corners(1, 40), corners(2, 20));
  const std::size_t per_client = uplink_reals(r.global) * kBytesPerReal;
  EXPECT_EQ(r.metrics[0].uplink_bytes, 3 * per_client);
  EXPECT_EQ(r.metrics[0].downlink_bytes, 4 * downlink_reals(r.global) * kBytesPerReal);

  SimConfig half = c;
  half.model.layers[0].rank = 1;
  const SimResult h = run(half, corners(1, 40), corners(2, 20));
  EXPECT_LT(h.metrics[0].uplink_bytes, r.metrics[0].uplink_bytes);
}

TEST(Run, ConfigErrors) {
  const Dataset train = corners(1, 40), test = corners(2, 20);
  SimConfig c = toy_config();
  c.sampled = 5;
  EXPECT_THROW(run(c, train, test), ConfigError);
  c = toy_config();
  c.hyper.lambda = 0.0;
  try {
    run(c, train, test);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("[opt].lambda"), std::string::npos);
  }
  c = toy_config();
  c.clients = c.sampled = 3;  // 3 x 2 not divisible by 4 classes
  EXPECT_THROW(run(c, train, test), ConfigError);
  c = toy_config();
  c.model = ModelSpec{{LayerSpec::linear(3, 4, 2, Activation::softmax)}};
  EXPECT_THROW(run(c, train, test), ConfigError);
}

TEST(Run, DivergenceReportsNumericError) {
  SimConfig c = toy_config();
  c.hyper.personalized_optimizer = OptimizerKind::sgd;
  c.hyper.eta_p = 50.0;
  c.hyper.lambda = 50.0;
  EXPECT_THROW(run(c, corners(1, 40), corners(2, 20)), NumericError);
}

TEST(Metrics, CsvFormat) {
  EXPECT_EQ(metrics_csv_header(),
            "round,acc_personalized_mean,acc_personalized_std,acc_global,loss_train_mean,"
            "prox_gap_mean,uplink_bytes,downlink_bytes,wall_s");
  RoundMetrics m;
  m.round = 5;
  m.acc_personalized_mean = 0.5;
  m.acc_global = 0.1;
  m.uplink_bytes = 64;
  EXPECT_EQ(metrics_csv_row(m), "5,0.5,0,0.10000000000000001,0,0,64,0,0");
}

}  // namespace
}  // namespace tdpfed
