#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "spillover/estimator.hpp"
#include "spillover/synth.hpp"
#include "toy.hpp"

namespace spill {
namespace {

using testing::random_point;
using testing::randomize_theta;
using testing::toy_params;

TEST(SamplingProbabilities, FullFractionIsOne) {
  const std::vector<double> d{0.0, 3.0, 50.0};
  for (auto mode : {Weighting::kUniform, Weighting::kInverseDistance}) {
    const auto s = sampling_probabilities(d, 1.0, mode);
    for (double x : d) EXPECT_EQ(s.probability(x), 1.0);
  }
}

TEST(SamplingProbabilities, ClampAndRedistribute) {
  const std::vector<double> d{0.0, 1.0};
  const auto s = sampling_probabilities(d, 0.75, Weighting::kInverseDistance);
  EXPECT_NEAR(s.probability(0.0), 1.0, 1e-12);
  EXPECT_NEAR(s.probability(1.0), 0.5, 1e-12);
}

TEST(SamplingProbabilities, UniformIsProportional) {
  const std::vector<double> d(8, 4.0);
  const auto s = sampling_probabilities(d, 0.25, Weighting::kUniform);
  double total = 0;
  for (double x : d) {
    EXPECT_EQ(s.probability(x), 0.25);
    total += s.probability(x);
  }
  EXPECT_EQ(total, 2.0);
}

TEST(SamplingProbabilities, ExpectedSizeMatchesFraction) {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> dist(0.05);
  std::vector<double> d(5000);
  for (auto& x : d) x = dist(rng);
  const auto s = sampling_probabilities(d, 0.02, Weighting::kInverseDistance);
  double total = 0;
  for (double x : d) {
    const double p = s.probability(x);
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
    total += p;
  }
  EXPECT_NEAR(total, 100.0, 1e-4);
}

TEST(SamplingProbabilities, RejectsBadFraction) {
  const std::vector<double> d{1.0};
  EXPECT_THROW(sampling_probabilities(d, 0.0, Weighting::kUniform), ValidationError);
  EXPECT_THROW(sampling_probabilities(d, 1.5, Weighting::kUniform), ValidationError);
}

TEST(DrawInclusions, CertainAndDeterministic) {
  std::vector<std::uint64_t> ids(1000);
  std::iota(ids.begin(), ids.end(), 0);
  const std::vector<double> ones(ids.size(), 1.0);
  EXPECT_EQ(draw_inclusions(ones, ids, 1).size(), ids.size());
  EXPECT_EQ(draw_inclusions(ones, ids, 99).size(), ids.size());
  const std::vector<double> half(ids.size(), 0.5);
  EXPECT_EQ(draw_inclusions(half, ids, 3), draw_inclusions(half, ids, 3));
  EXPECT_NE(draw_inclusions(half, ids, 3), draw_inclusions(half, ids, 4));
}

TEST(DrawInclusions, BinomialConcentration) {
  std::vector<std::uint64_t> ids(100000);
  std::iota(ids.begin(), ids.end(), 0);
  const std::vector<double> half(ids.size(), 0.5);
  const double n = static_cast<double>(draw_inclusions(half, ids, 8).size());
  EXPECT_NEAR(n, 50000.0, 4 * std::sqrt(100000 * 0.25));
}

struct LossFixture {
  ModelParams params = toy_params({"a", "b"});
  PointTable nonzeros{params.covariates.size()};
  std::vector<PointTable> zeros;  // one single-point table per zero
  std::vector<double> probabilities;
  std::vector<std::vector<double>> storage;

  explicit LossFixture(int n_zeros, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    randomize_theta(params, rng);
    std::vector<double> x;
    for (int k = 0; k < 5; ++k) nonzeros.add(params, random_point(params, rng, x, 1 + k % 3), 1.0);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int k = 0; k < n_zeros; ++k) {
      PointTable t(params.covariates.size());
      t.add(params, random_point(params, rng, x, 0), 1.0);
      zeros.push_back(std::move(t));
      probabilities.push_back(u(rng));
    }
  }

  std::vector<double> gradient_for(std::uint32_t mask, bool corrected) const {
    PointTable sampled(params.covariates.size());
    for (std::size_t k = 0; k < zeros.size(); ++k) {
      if (mask >> k & 1u) {
        const double w = corrected ? 1.0 / probabilities[k] : 1.0;
        sampled.add(params, zeros[k].view(0), w);
      }
    }
    return corrected_loss_and_gradient(params, nonzeros, sampled).gradient;
  }
};

TEST(CorrectedLoss, FullSampleEqualsFullData) {
  LossFixture f(4, 1);
  PointTable all(f.params.covariates.size());
  double expected = 0;
  for (std::size_t k = 0; k < f.nonzeros.size(); ++k) expected -= log_likelihood(f.params, f.nonzeros.view(k));
  for (const auto& z : f.zeros) {
    all.add(f.params, z.view(0), 1.0);
    expected -= log_likelihood(f.params, z.view(0));
  }
  const auto lg = corrected_loss_and_gradient(f.params, f.nonzeros, all);
  EXPECT_NEAR(lg.loss, expected, 1e-12 * std::abs(expected));
}

TEST(CorrectedLoss, ExactExpectationIsUnbiased) {
  LossFixture f(3, 2);
  const std::size_t p = f.params.size();
  std::vector<double> mean(p, 0.0);
  for (std::uint32_t mask = 0; mask < 8; ++mask) {
    double prob = 1.0;
    for (std::size_t k = 0; k < 3; ++k) prob *= (mask >> k & 1u) ? f.probabilities[k] : 1.0 - f.probabilities[k];
    const auto g = f.gradient_for(mask, true);
    for (std::size_t j = 0; j < p; ++j) mean[j] += prob * g[j];
  }
  const auto full = f.gradient_for(0b111, false);
  for (std::size_t j = 0; j < p; ++j) EXPECT_NEAR(mean[j], full[j], 1e-12 * (1 + std::abs(full[j]))) << j;
}

TEST(CorrectedLoss, ChunkedReductionIgnoresWorkerCount) {
  auto params = toy_params({"a", "b", "c"});
  std::mt19937_64 rng(3);
  randomize_theta(params, rng);
  PointTable table(params.covariates.size()), empty(params.covariates.size());
  std::vector<double> x;
  for (int k = 0; k < 20000; ++k) table.add(params, random_point(params, rng, x, k % 3), 1.0);
  const auto one = corrected_loss_and_gradient(params, table, empty, 1);
  const auto four = corrected_loss_and_gradient(params, table, empty, 4);
  EXPECT_EQ(one.loss, four.loss);
  EXPECT_EQ(one.gradient, four.gradient);
}

TEST(Summarize, MeanSdAndInterval) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_NEAR(s.lo, 2.5 - 1.96 * s.sd, 1e-15);
  EXPECT_NEAR(s.hi, 2.5 + 1.96 * s.sd, 1e-15);
  const std::vector<double> same(5, 0.7);
  const auto z = summarize(same);
  EXPECT_EQ(z.lo, z.hi);
}

BootstrapResult two_trial_result(double pp, std::vector<double> pr) {
  BootstrapResult r;
  r.layout = toy_params({"a"});
  for (double v : pr) {
    auto theta = r.layout.theta;
    theta[r.layout.beta_tt_index(0, Condition::kPP)] = pp;
    theta[r.layout.beta_tt_index(0, Condition::kPR)] = pp + v;
    r.trials.push_back(theta);
  }
  return r;
}

TEST(SpilloverEffects, MeanOfExponentiatedDifferences) {
  const auto effects = spillover_effects(two_trial_result(-0.2, {0.1, 0.3}));
  ASSERT_EQ(effects.size(), 3u);
  const auto& pr = effects[0];
  EXPECT_EQ(pr.condition, Condition::kPR);
  ASSERT_EQ(pr.trial_values.size(), 2u);
  EXPECT_NEAR(pr.trial_values[0], std::exp(0.1), 1e-12);
  EXPECT_NEAR(pr.trial_values[1], std::exp(0.3), 1e-12);
  EXPECT_NEAR(pr.summary.mean, 0.5 * (std::exp(0.1) + std::exp(0.3)), 1e-12);
  EXPECT_NEAR(pr.summary.mean, 1.2275, 1e-4);
}

TEST(SpilloverEffects, EqualCoefficientsGiveUnitEffect) {
  const auto effects = spillover_effects(two_trial_result(0.4, {0.0, 0.0, 0.0}));
  const auto& pr = effects[0];
  EXPECT_EQ(pr.summary.mean, 1.0);
  EXPECT_EQ(pr.summary.lo, 1.0);
  EXPECT_EQ(pr.summary.hi, 1.0);
  EXPECT_FALSE(pr.significant);
}

TEST(SpilloverEffects, UnidentifiedCellIsUnavailable) {
  auto r = two_trial_result(0.0, {0.1, 0.2});
  r.layout.identified[static_cast<int>(Condition::kRR)] = 0;
  const auto effects = spillover_effects(r);
  EXPECT_TRUE(effects[0].available);
  EXPECT_FALSE(effects[1].available);  // RR
}

// Small synthetic world shared by the fitting tests.
struct SmallWorld {
  SyntheticWorld world;
  FilteredDataset filtered;
  ModelParams init;
  std::unique_ptr<TrainingData> training;

  SmallWorld() {
    WorldConfig wc;
    wc.n_counties = 8;
    wc.cbgs_per_county = {4, 6};
    wc.pois_per_county = {8, 12};
    wc.n_weeks = 3;
    wc.seed = 3;
    world = synthesize(wc);
    FilterConfig fc;
    filtered = filter_dataset(world.data, world.assignments, fc);
    init = make_model(world.data, world.schedule.size(), ModelKind::kPairwise);
    fit_standardization(world.data, filtered, init.covariates);
    training = std::make_unique<TrainingData>(TrainingData::build(world.data, filtered, init));
  }

  static const SmallWorld& get() {
    static const SmallWorld w;
    return w;
  }
};

FitConfig quick_config() {
  FitConfig c;
  c.epochs = 8;
  c.steps_per_epoch = 5;
  c.sample_fraction = 0.1;
  c.seed = 17;
  return c;
}

TEST(TrainingData, PartitionsTheFilteredSpace) {
  const auto& w = SmallWorld::get();
  EXPECT_EQ(static_cast<std::int64_t>(w.training->nonzeros().size()), w.filtered.nonzero_size());
  EXPECT_EQ(static_cast<std::int64_t>(w.training->zeros().size()), w.filtered.dense_size() - w.filtered.nonzero_size());
  std::int64_t support = 0;
  for (auto s : w.training->cell_support()) support += s;
  EXPECT_EQ(support, w.filtered.nonzero_size());
}

TEST(Fit, ZeroEpochsReturnsInit) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  c.epochs = 0;
  const auto r = fit(*w.training, w.init, c);
  EXPECT_EQ(r.params.theta, w.init.theta);
}

TEST(Fit, DeterministicAndWorkerIndependent) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  const auto a = fit(*w.training, w.init, c);
  const auto b = fit(*w.training, w.init, c);
  EXPECT_EQ(a.params.theta, b.params.theta);
  c.workers = 3;
  const auto m = fit(*w.training, w.init, c);
  for (std::size_t k = 0; k < a.params.size(); ++k) {
    EXPECT_NEAR(m.params.theta[k], a.params.theta[k], 1e-9 * (1 + std::abs(a.params.theta[k])));
  }
}

TEST(Fit, LossDecreasesAndTraceIsRecorded) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  c.sample_fraction = 1.0;
  const auto r = fit(*w.training, w.init, c);
  ASSERT_EQ(r.trace.size(), static_cast<std::size_t>(c.epochs));
  EXPECT_LT(r.trace.back().loss, r.trace.front().loss);
  EXPECT_EQ(r.trace.front().sampled_zeros, w.training->zeros().size());
}

TEST(Fit, DivergenceCarriesTrace) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  c.optimizer = Optimizer::kGradientDescent;
  c.learning_rate = 1e7;
  c.divergence_threshold = 50.0;
  try {
    fit(*w.training, w.init, c);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_FALSE(e.trace().empty());
  }
}

TEST(Fit, PerTrialRedrawKeepsOneSample) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  c.redraw = NegativeRedraw::kPerTrial;
  const auto r = fit(*w.training, w.init, c);
  for (const auto& e : r.trace) EXPECT_EQ(e.sampled_zeros, r.trace.front().sampled_zeros);
}

TEST(Bootstrap, ShapesAndSamplingOnlyIsNarrower) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  const auto full = bootstrap(*w.training, w.init, c, 6);
  ASSERT_EQ(full.trial_count(), 6u);
  ASSERT_EQ(full.parameters.size(), w.init.size());
  for (const auto& s : full.parameters) EXPECT_LE(s.lo, s.hi);
  const auto sampling = bootstrap(*w.training, w.init, c, 6, BootstrapMode::kSamplingOnly);
  double full_width = 0, sampling_width = 0;
  for (int g = 0; g < static_cast<int>(w.init.groups.size()); ++g) {
    const auto k = w.init.beta_tt_index(g, Condition::kPR);
    full_width += full.parameters[k].sd;
    sampling_width += sampling.parameters[k].sd;
  }
  EXPECT_LT(sampling_width, full_width);
}

TEST(Bootstrap, ParallelTrialsMatchSerial) {
  const auto& w = SmallWorld::get();
  auto c = quick_config();
  const auto serial = bootstrap(*w.training, w.init, c, 3);
  c.workers = 3;
  const auto parallel = bootstrap(*w.training, w.init, c, 3);
  EXPECT_EQ(serial.trials, parallel.trials);
}

}  // namespace
}  // namespace spill
