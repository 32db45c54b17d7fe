// Acceptance checks on synthetic worlds and small exact instances. Prints one
// PASS/FAIL line per criterion and exits non-zero when any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "spillover/counterfactual.hpp"
#include "spillover/dataset_io.hpp"
#include "spillover/estimator.hpp"
#include "spillover/partition.hpp"
#include "spillover/synth.hpp"
#include "toy.hpp"

namespace {

using namespace spill;
using testing::make_toy;
using testing::random_point;
using testing::randomize_theta;
using testing::toy_params;
using testing::ToySpec;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------------ 1

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  auto p = toy_params({"a", "b", "c", "d"}, 2);
  std::vector<double> x;
  double worst = 0;
  int zeros = 0, positives = 0;
  for (int draw = 0; draw < 200; ++draw) {
    randomize_theta(p, rng, 0.5);
    const int y = draw % 2 == 0 ? 0 : 1 + static_cast<int>(rng() % 6);
    (y == 0 ? zeros : positives)++;
    const auto dp = random_point(p, rng, x, y);
    const auto g = gradient(p, dp);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto hi = p, lo = p;
      const double h = 1e-6 * std::max(1.0, std::abs(p.theta[k]));
      hi.theta[k] += h;
      lo.theta[k] -= h;
      const double fd = (log_likelihood(hi, dp) - log_likelihood(lo, dp)) / (2 * h);
      num += (g[k] - fd) * (g[k] - fd);
      den += fd * fd;
    }
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0 && zeros > 0 && positives > 0,
          fmt::format("200 draws ({} with y=0), worst relative error {:.2e}, {:.2f}s", zeros, worst, secs)};
}

// ------------------------------------------------------------------ 2 and 3

// Zero points at heterogeneous distances plus a few non-zeros.
struct ZeroSet {
  ModelParams params = toy_params({"a", "b"});
  PointTable nonzeros{params.covariates.size()};
  std::vector<PointTable> zeros;
  std::vector<double> distances;
  std::vector<std::vector<double>> per_point_grad;  // gradient of -logL per zero

  ZeroSet(int n_zeros, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    randomize_theta(params, rng);
    params.theta[params.log_alpha1_index()] = std::log(0.2);
    params.theta[params.log_alpha2_index()] = 0.0;
    std::vector<double> x;
    for (int k = 0; k < 6; ++k) nonzeros.add(params, random_point(params, rng, x, 1 + k % 3), 1.0);
    std::uniform_real_distribution<double> logd(std::log(0.5), std::log(300.0));
    for (int k = 0; k < n_zeros; ++k) {
      auto dp = random_point(params, rng, x, 0);
      dp.distance_km = std::exp(logd(rng));
      PointTable t(params.covariates.size());
      t.add(params, dp, 1.0);
      distances.push_back(dp.distance_km);
      auto g = gradient(params, t.view(0));
      for (auto& v : g) v = -v;
      per_point_grad.push_back(std::move(g));
      zeros.push_back(std::move(t));
    }
  }

  std::vector<double> probabilities(double fraction, Weighting mode) const {
    const auto scheme = sampling_probabilities(distances, fraction, mode);
    std::vector<double> s;
    for (double d : distances) s.push_back(scheme.probability(d));
    return s;
  }

  std::vector<double> corrected_gradient(const std::vector<std::size_t>& included,
                                         const std::vector<double>& s) const {
    PointTable sampled(params.covariates.size());
    for (std::size_t k : included) sampled.add(params, zeros[k].view(0), 1.0 / s[k]);
    return corrected_loss_and_gradient(params, nonzeros, sampled).gradient;
  }

  std::vector<double> formula_variance(const std::vector<double>& s) const {
    std::vector<double> v(params.size(), 0.0);
    for (std::size_t k = 0; k < zeros.size(); ++k) {
      for (std::size_t j = 0; j < v.size(); ++j) v[j] += (1.0 / s[k] - 1.0) * per_point_grad[k][j] * per_point_grad[k][j];
    }
    return v;
  }
};

Outcome sampling_unbiasedness() {
  const auto t0 = std::chrono::steady_clock::now();
  const ZeroSet set(12, 5);
  std::vector<std::size_t> all(12);
  for (std::size_t k = 0; k < 12; ++k) all[k] = k;
  const auto full = set.corrected_gradient(all, std::vector<double>(12, 1.0));
  double worst = 0;
  for (Weighting mode : {Weighting::kUniform, Weighting::kInverseDistance}) {
    const auto s = set.probabilities(0.4, mode);
    std::vector<double> mean(set.params.size(), 0.0);
    for (std::uint32_t mask = 0; mask < (1u << 12); ++mask) {
      double prob = 1.0;
      std::vector<std::size_t> included;
      for (std::size_t k = 0; k < 12; ++k) {
        if (mask >> k & 1u) {
          prob *= s[k];
          included.push_back(k);
        } else {
          prob *= 1.0 - s[k];
        }
      }
      if (prob == 0.0) continue;
      const auto g = set.corrected_gradient(included, s);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += prob * g[j];
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
      worst = std::max(worst, std::abs(mean[j] - full[j]) / std::max(1.0, std::abs(full[j])));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 30.0,
          fmt::format("12 zeros, 4096 outcomes x 2 modes, max deviation {:.2e}, {:.2f}s", worst, secs)};
}

Outcome variance_formula() {
  const ZeroSet set(200, 8);
  const auto s = set.probabilities(0.4, Weighting::kInverseDistance);
  std::vector<std::uint64_t> ids(200);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
  const std::size_t p = set.params.size();
  std::vector<double> sum(p, 0.0), sum2(p, 0.0);
  const int redraws = 10000;
  for (int r = 0; r < redraws; ++r) {
    const auto g = set.corrected_gradient(draw_inclusions(s, ids, 1000 + r), s);
    for (std::size_t j = 0; j < p; ++j) {
      sum[j] += g[j];
      sum2[j] += g[j] * g[j];
    }
  }
  const auto expected = set.formula_variance(s);
  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t j = 0; j < p; ++j) {
    const double mean = sum[j] / redraws;
    const double var = (sum2[j] - redraws * mean * mean) / (redraws - 1);
    if (expected[j] == 0.0) {
      worst = std::max(worst, var > 1e-20 ? 1.0 : 0.0);
      continue;
    }
    worst = std::max(worst, std::abs(var / expected[j] - 1.0));
    ++checked;
  }

  // s = 1 draws every zero, so every redraw gives the same gradient.
  const std::vector<double> ones(200, 1.0);
  const auto first = set.corrected_gradient(draw_inclusions(ones, ids, 1), ones);
  bool zero_var = true;
  for (int r = 2; r < 50; ++r) zero_var &= set.corrected_gradient(draw_inclusions(ones, ids, r), ones) == first;

  double uniform = 0, inverse = 0;
  for (double v : set.formula_variance(set.probabilities(0.4, Weighting::kUniform))) uniform += v;
  for (double v : expected) inverse += v;
  return {worst < 0.05 && zero_var && inverse < uniform,
          fmt::format("{} coordinates, worst relative gap {:.2f}%; s=1 zero variance: {}; total variance "
                      "inverse-distance {:.4g} vs uniform {:.4g}",
                      checked, 100 * worst, zero_var ? "yes" : "no", inverse, uniform)};
}

// ------------------------------------------------------------------ synthetic world shared by 4, 9, 10

struct World {
  SyntheticWorld world;
  FilterConfig filter;
  FilteredDataset pairwise_filtered, within_filtered;
  ModelParams pairwise_init, within_init;
  std::unique_ptr<TrainingData> pairwise_training, within_training;
  FitConfig fit;

  World() {
    WorldConfig wc;
    wc.seed = 1;
    world = synthesize(wc);
    fit.seed = 11;
    pairwise_filtered = filter_dataset(world.data, world.assignments, filter);
    pairwise_init = make_model(world.data, world.schedule.size(), ModelKind::kPairwise);
    fit_standardization(world.data, pairwise_filtered, pairwise_init.covariates);
    pairwise_training =
        std::make_unique<TrainingData>(TrainingData::build(world.data, pairwise_filtered, pairwise_init));
    auto within_filter = filter;
    within_filter.scope = FilterScope::kWithinCounty;
    within_filtered = filter_dataset(world.data, world.assignments, within_filter);
    within_init = make_model(world.data, world.schedule.size(), ModelKind::kWithin);
    fit_standardization(world.data, within_filtered, within_init.covariates);
    within_training = std::make_unique<TrainingData>(TrainingData::build(world.data, within_filtered, within_init));
  }
};

Outcome parameter_recovery(const World& w, const BootstrapResult& boot, double secs) {
  const auto& planted = w.world.planted;
  int covered = 0, cells = 0;
  double tau_lo = 1e300, tau_hi = 0;
  std::string misses;
  for (int g = 0; g < static_cast<int>(planted.groups.size()); ++g) {
    tau_lo = std::min(tau_lo, std::exp(planted.beta_tt(g, Condition::kPR) - planted.beta_tt(g, Condition::kPP)));
    tau_hi = std::max(tau_hi, std::exp(planted.beta_tt(g, Condition::kPR) - planted.beta_tt(g, Condition::kPP)));
    for (Condition c : {Condition::kPR, Condition::kRP, Condition::kRR}) {
      const auto& id = boot.layout.identified;
      if (!id[g * kNumConditions + static_cast<int>(c)] || !id[g * kNumConditions]) continue;
      std::vector<double> contrast;
      for (const auto& theta : boot.trials) {
        contrast.push_back(theta[boot.layout.beta_tt_index(g, c)] -
                           theta[boot.layout.beta_tt_index(g, Condition::kPP)]);
      }
      const auto s = summarize(contrast);
      const double truth = planted.beta_tt(g, c) - planted.beta_tt(g, Condition::kPP);
      const bool ok = s.lo <= truth && truth <= s.hi;
      covered += ok;
      ++cells;
      if (!ok) misses += fmt::format(" {}:{}", planted.groups[g], to_string(c));
    }
  }
  const double share = cells > 0 ? static_cast<double>(covered) / cells : 0.0;
  return {cells > 0 && share >= 0.9 && secs < 900.0,
          fmt::format("{} counties, {} non-zero triples, planted tau_PR in [{:.3f}, {:.3f}]; {} trials cover {}/{} "
                      "identified cells{}; {:.0f}s",
                      w.world.data.counties.size(), w.pairwise_training->nonzeros().size(), tau_lo, tau_hi,
                      boot.trial_count(), covered, cells, misses.empty() ? "" : ", missed" + misses, secs)};
}

// ------------------------------------------------------------------ 5

Outcome rd_separation() {
  WorldConfig wc;
  wc.seed = 21;
  wc.n_counties = 40;
  wc.n_weeks = 8;
  wc.cbgs_per_county = {2, 3};
  wc.pois_per_county = {2, 3};
  const auto clean = generate_world(wc);
  std::size_t noncompliant = 0;
  for (const auto& r : clean.assignments) noncompliant += !r.compliant;

  wc.noncomplier_rate = 0.05;
  const auto noisy = generate_world(wc);
  FilterConfig open;
  open.bandwidth = std::numeric_limits<double>::infinity();
  open.excluded_weeks.clear();
  const auto filtered = filter_dataset(noisy.data, noisy.assignments, open);
  std::set<std::pair<int, int>> dropped, injected;
  for (int w = 0; w < static_cast<int>(noisy.data.weeks.size()); ++w) {
    for (int c = 0; c < static_cast<int>(noisy.data.counties.size()); ++c) {
      if (filtered.status(w, c) == DropReason::kNonCompliant) dropped.emplace(c, w);
    }
  }
  for (auto [c, week] : noisy.noncompliers) injected.emplace(c, noisy.data.week_index(week));
  return {noncompliant == 0 && !injected.empty() && dropped == injected,
          fmt::format("clean world: {}/{} compliant; 5% injection: {} flagged, {} dropped, sets equal: {}",
                      clean.assignments.size() - noncompliant, clean.assignments.size(), injected.size(),
                      dropped.size(), dropped == injected ? "yes" : "no")};
}

// ------------------------------------------------------------------ 6 and 7

ModelParams spillover_params(std::uint64_t seed) {
  auto p = toy_params({"g0", "g1"});
  std::mt19937_64 rng(seed);
  randomize_theta(p, rng, 0.2);
  for (int g = 0; g < 2; ++g) {
    const double base = p.beta_tt(g, Condition::kPP);
    p.theta[p.beta_tt_index(g, Condition::kPR)] = base + 0.2 + 0.1 * g;
    p.theta[p.beta_tt_index(g, Condition::kRP)] = base + 0.05;
    p.theta[p.beta_tt_index(g, Condition::kRR)] = base + 0.4;
  }
  return p;
}

ToySpec toy_world(int n) {
  ToySpec spec;
  spec.counties = n;
  spec.adjacent.clear();
  for (int c = 0; c < n; ++c) spec.adjacent.emplace_back(c, (c + 1) % n);
  for (int c = 0; c + 3 < n; c += 3) spec.adjacent.emplace_back(c, c + 3);
  spec.cbgs = 3;
  spec.pois = 4;
  spec.groups = {"g0", "g1"};
  return spec;
}

Outcome factorization() {
  const auto data = make_toy(toy_world(5));
  const auto params = spillover_params(3);
  const auto phi = precompute_phi(params, data);
  std::vector<double> row(params.covariates.size());
  double worst = 0;
  int checks = 0;
  for (auto [a0, b0] : data.adjacency.pairs()) {
    for (auto [a, b] : {std::pair{a0, b0}, std::pair{b0, a0}}) {
      for (Tier ta : {Tier::kPurple, Tier::kRed}) {
        for (Tier tb : {Tier::kPurple, Tier::kRed}) {
          double direct = 0;
          for (int i : data.cbgs_in(a)) {
            for (int j : data.pois_in(b)) {
              const double d = distance_km(data.cbgs[i].location, data.pois[j].location);
              params.covariates.raw_row(d, data.mean_device_count(i), data.cbgs[i].demographics,
                                        data.pois[j].area_sqft, data.pois[j].group, row);
              params.covariates.standardize(row);
              Datapoint dp;
              dp.x = row;
              dp.group = data.pois[j].group;
              dp.condition = condition_of(ta, tb);
              dp.distance_km = d;
              direct += expected_visits(params, dp);
            }
          }
          const double via_phi = expected_pair_visits(params, phi, a, b, ta, tb);
          worst = std::max(worst, std::abs(via_phi - direct) / direct);
          ++checks;
        }
      }
    }
  }
  return {worst <= 1e-9, fmt::format("{} (pair, tier pair) checks, worst relative gap {:.2e}", checks, worst)};
}

Outcome kcut_equivalence() {
  const int n = 8;
  const auto data = make_toy(toy_world(n));
  auto within = spillover_params(4);
  within.kind = ModelKind::kWithin;
  const auto model = make_counterfactual(spillover_params(3), within, data);
  const auto graph = build_county_graph(model);
  double worst = 0;
  std::size_t partitions = 0;
  bool argmatch = true;
  for (int k : {2, 3, 4}) {
    double best_cut = 1e300, best_r = -1e300;
    std::vector<int> argmin, argmax;
    for_each_partition(n, k, part_size_cap(n, k, kDefaultBalanceSlack), [&](std::span<const int> parts) {
      CountyPartition p;
      p.parts.assign(parts.begin(), parts.end());
      p.k = k;
      evaluate_partition(p, graph, model);
      worst = std::max(worst, std::abs(p.average_r_m - (1.0 - p.cut / n)));
      ++partitions;
      if (p.cut < best_cut) {
        best_cut = p.cut;
        argmin = p.parts;
      }
      if (p.average_r_m > best_r) {
        best_r = p.average_r_m;
        argmax = p.parts;
      }
    });
    argmatch &= argmax == brute_force_kcut(graph, k).parts && argmin == argmax;
  }
  return {worst <= 1e-9 && argmatch,
          fmt::format("{} counties, {} feasible partitions for k=2,3,4; |avg r_M - (1 - cut/N)| <= {:.2e}; "
                      "argmin cut = argmax avg r_M: {}",
                      n, partitions, worst, argmatch ? "yes" : "no")};
}

// ------------------------------------------------------------------ 8

Outcome heuristic_quality() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  bool feasible = true;
  int runs = 0;
  for (int rep = 0; rep < 50; ++rep) {
    CountyGraph g(8);
    const double density = 0.25 + 0.5 * u(rng);
    for (int a = 0; a < 8; ++a) {
      for (int b = a + 1; b < 8; ++b) {
        if (u(rng) < density) g.set_weight(a, b, std::exp(2.0 * u(rng) - 1.0));
      }
    }
    for (int k : {2, 3, 4}) {
      const auto h = min_kcut(g, k);
      const auto exact = brute_force_kcut(g, k);
      feasible &= is_feasible(h.parts, k, part_size_cap(8, k, kDefaultBalanceSlack));
      const double ratio = exact.cut > 0 ? h.cut / exact.cut : (h.cut > 0 ? 1e300 : 1.0);
      worst = std::max(worst, ratio);
      ++runs;
    }
  }
  return {worst <= 1.1 && feasible,
          fmt::format("50 graphs x k=2,3,4 ({} runs), worst cut ratio {:.4f}, balance cap honored: {}", runs, worst,
                      feasible ? "yes" : "no")};
}

// ------------------------------------------------------------------ 9

Outcome qualitative_ordering(const World& w, const BootstrapResult& pairwise, const BootstrapResult& within) {
  const auto& data = w.world.data;
  const auto trials = counterfactual_trials(pairwise, within, data);
  const auto mean = make_counterfactual(pairwise.mean_params(), within.mean_params(), data);
  const auto graph = build_county_graph(mean, true);
  const auto lone = efficacy_report(Scenario::lone_county(), trials, data).subset("all").summary;
  const int n = static_cast<int>(data.counties.size());
  const int k_macro = std::max(2, static_cast<int>(std::lround(n / 8.0)));
  std::vector<int> ks{k_macro};
  for (int k : {2, 3, 4, 5, 6, 8, 10}) {
    if (k != k_macro) ks.push_back(k);
  }
  TradeoffOptions options;
  options.kcut.seed = 5;
  const auto rows = tradeoff_curve(graph, ks, trials, options);
  const auto& macro = rows.front().optimized;
  bool beats = true;
  std::string curve;
  for (const auto& r : rows) {
    beats &= r.optimized.lo > r.random.hi;
    curve += fmt::format(" k={}: {:.3f} [{:.3f}, {:.3f}] vs {:.3f} [{:.3f}, {:.3f}];", r.k, r.optimized.mean,
                         r.optimized.lo, r.optimized.hi, r.random.mean, r.random.lo, r.random.hi);
  }
  const bool ordered = lone.hi < macro.lo && macro.hi < 1.0;
  return {ordered && beats,
          fmt::format("lone r {:.3f} [{:.3f}, {:.3f}] < macro r (k={}) {:.3f} [{:.3f}, {:.3f}] < 1; optimized vs "
                      "random:{}",
                      lone.mean, lone.lo, lone.hi, k_macro, macro.mean, macro.lo, macro.hi, curve)};
}

// ------------------------------------------------------------------ 10

std::vector<double> treatment_effects(const ModelParams& p) {
  std::vector<double> tau;
  for (int g = 0; g < static_cast<int>(p.groups.size()); ++g) {
    for (Condition c : {Condition::kPR, Condition::kRP, Condition::kRR}) {
      tau.push_back(std::exp(p.beta_tt(g, c) - p.beta_tt(g, Condition::kPP)));
    }
  }
  return tau;
}

ModelParams fit_at(const World& w, double bandwidth) {
  auto filter = w.filter;
  filter.bandwidth = bandwidth;
  const auto filtered = filter_dataset(w.world.data, w.world.assignments, filter);
  auto init = make_model(w.world.data, w.world.schedule.size(), ModelKind::kPairwise);
  fit_standardization(w.world.data, filtered, init.covariates);
  const auto training = TrainingData::build(w.world.data, filtered, init);
  return fit(training, init, w.fit).params;
}

Outcome bandwidth_stability(const World& w) {
  const double h = w.filter.bandwidth;
  const auto base = treatment_effects(fit_at(w, h));
  double worst = 0;
  for (double scale : {0.8, 1.2}) {
    const auto tau = treatment_effects(fit_at(w, scale * h));
    for (std::size_t k = 0; k < tau.size(); ++k) worst = std::max(worst, std::abs(tau[k] / base[k] - 1.0));
  }
  return {worst < 0.05, fmt::format("h = {} scaled by 0.8 and 1.2: largest change in tau {:.2f}%", h, 100 * worst)};
}

// ------------------------------------------------------------------ 11

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const World& w) {
  namespace fs = std::filesystem;
  WorldConfig wc;
  wc.n_counties = 10;
  wc.seed = 77;
  const auto root = fs::temp_directory_path() / "spillover_acceptance_determinism";
  fs::remove_all(root);
  save_dataset(synthesize(wc).data, root / "a");
  save_dataset(synthesize(wc).data, root / "b");
  bool files_equal = true;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    files_equal &= slurp(e.path()) == slurp(root / "b" / e.path().filename());
    ++files;
  }
  fs::remove_all(root);

  auto config = w.fit;
  config.epochs = 10;
  const auto a = fit(*w.pairwise_training, w.pairwise_init, config).params.theta;
  const auto b = fit(*w.pairwise_training, w.pairwise_init, config).params.theta;
  config.workers = 4;
  const auto c = fit(*w.pairwise_training, w.pairwise_init, config).params.theta;
  double worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(c[k] - a[k]) / std::max(1e-12, std::abs(a[k])));
  return {files_equal && files > 0 && a == b && worst <= 1e-9,
          fmt::format("synth {} files byte-identical: {}; single-worker fits bitwise equal: {}; 4 workers max "
                      "relative gap {:.2e}",
                      files, files_equal ? "yes" : "no", a == b ? "yes" : "no", worst)};
}

}  // namespace

int main() {
  int failures = 0;
  const auto report = [&](int id, const Outcome& o) {
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  report(1, gradient_check());
  report(2, sampling_unbiasedness());
  report(3, variance_formula());

  const World world;
  const auto t0 = std::chrono::steady_clock::now();
  const auto pairwise = bootstrap(*world.pairwise_training, world.pairwise_init, world.fit, 30);
  report(4, parameter_recovery(world, pairwise, seconds_since(t0)));

  report(5, rd_separation());
  report(6, factorization());
  report(7, kcut_equivalence());
  report(8, heuristic_quality());

  const auto within = bootstrap(*world.within_training, world.within_init, world.fit, 30);
  report(9, qualitative_ordering(world, pairwise, within));
  report(10, bandwidth_stability(world));
  report(11, determinism(world));
  return failures == 0 ? 0 : 1;
}
