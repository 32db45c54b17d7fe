#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spillover/dataset_io.hpp"
#include "spillover/error.hpp"
#include "spillover/synth.hpp"

namespace spill {
namespace {

namespace fs = std::filesystem;

WorldConfig small_config(std::uint64_t seed = 3) {
  WorldConfig c;
  c.n_counties = 6;
  c.cbgs_per_county = {5, 7};
  c.pois_per_county = {8, 12};
  c.n_weeks = 4;
  c.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int stored_visits(const MobilityDataset& d, int w, int cbg, int poi) {
  for (const auto& e : d.edges_from(w, cbg)) {
    if (e.poi == poi) return e.visits;
  }
  return 0;
}

template <typename Fn>
void for_each_simulated(const SyntheticWorld& world, Fn&& fn) {
  const auto& d = world.data;
  for (int w = 0; w < static_cast<int>(d.weeks.size()); ++w) {
    for (int i = 0; i < static_cast<int>(d.cbgs.size()); ++i) {
      for (int j = 0; j < static_cast<int>(d.pois.size()); ++j) {
        const int a = d.cbgs[i].county, b = d.pois[j].county;
        if (a != b && !d.adjacency.adjacent(a, b)) continue;
        fn(w, i, j);
      }
    }
  }
}

TEST(Synth, ValidatesConfig) {
  auto c = small_config();
  c.noncomplier_rate = 1.5;
  EXPECT_THROW(synthesize(c), ValidationError);
  c = small_config();
  c.n_counties = 0;
  EXPECT_THROW(synthesize(c), ValidationError);
}

TEST(Synth, SameSeedGivesIdenticalFiles) {
  const auto root = fs::temp_directory_path() / "spillover_synth_det";
  fs::remove_all(root);
  save_dataset(synthesize(small_config(5)).data, root / "a");
  save_dataset(synthesize(small_config(5)).data, root / "b");
  save_dataset(synthesize(small_config(6)).data, root / "c");
  std::size_t files = 0;
  bool any_differs = false;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(root / "b" / name)) << name;
    any_differs |= slurp(entry.path()) != slurp(root / "c" / name);
    ++files;
  }
  EXPECT_GE(files, 5u);
  EXPECT_TRUE(any_differs);
  fs::remove_all(root);
}

TEST(Synth, NoInjectedNoncomplianceMeansAllCompliant) {
  const auto world = synthesize(small_config());
  EXPECT_TRUE(world.noncompliers.empty());
  for (const auto& r : compute_assignments(world.data, world.schedule)) EXPECT_TRUE(r.compliant);
}

TEST(Synth, NoncomplierRateMatchesConfig) {
  auto c = small_config(8);
  c.n_counties = 40;
  c.n_weeks = 8;
  c.noncomplier_rate = 0.05;
  const auto world = generate_world(c);
  const double n = 40.0 * 8.0;
  const double rate = static_cast<double>(world.noncompliers.size()) / n;
  EXPECT_LT(std::abs(rate - 0.05), 4.0 * std::sqrt(0.05 * 0.95 / n));
  // Every injected flip is detected as non-compliant.
  std::size_t flagged = 0;
  for (const auto& r : world.assignments) flagged += !r.compliant;
  EXPECT_EQ(flagged, world.noncompliers.size());
}

TEST(Synth, AllConditionsSupported) {
  WorldConfig c;
  c.n_counties = 20;
  c.cbgs_per_county = {2, 3};
  c.pois_per_county = {2, 3};
  const auto world = generate_world(c);
  for (int k = 0; k < kNumConditions; ++k) EXPECT_GT(world.condition_support[k], 0) << k;
}

TEST(Synth, VisitMomentsMatchPlantedModel) {
  const auto world = synthesize(small_config(4));
  double y_sum = 0, e_sum = 0, y_var = 0, zeros = 0, p0_sum = 0, p0_var = 0;
  std::int64_t cells = 0;
  for_each_simulated(world, [&](int w, int i, int j) {
    auto pt = planted_point(world, w, i, j);
    pt.dp.x = pt.x;
    const double pi = exposure_prob(world.planted, pt.dp.distance_km);
    const double lambda = poisson_rate(world.planted, pt.dp);
    const double mean = pi * lambda;
    const double p0 = 1.0 - pi + pi * std::exp(-lambda);
    const int y = stored_visits(world.data, w, i, j);
    y_sum += y;
    e_sum += mean;
    y_var += pi * (lambda + lambda * lambda) - mean * mean;
    zeros += y == 0;
    p0_sum += p0;
    p0_var += p0 * (1.0 - p0);
    ++cells;
  });
  ASSERT_GT(cells, 1000);
  EXPECT_LT(std::abs(y_sum - e_sum), 5.0 * std::sqrt(y_var));
  EXPECT_LT(std::abs(zeros - p0_sum), 5.0 * std::sqrt(p0_var));
  EXPECT_GT(zeros / cells, 0.5);  // zero-inflated
}

TEST(Synth, PlantedParametersBeatPerturbed) {
  const auto world = synthesize(small_config(9));
  auto perturbed = world.planted;
  for (int g = 0; g < static_cast<int>(perturbed.groups.size()); ++g) {
    perturbed.theta[perturbed.beta_tt_index(g, Condition::kPR)] += 0.3;
  }
  perturbed.theta[perturbed.beta0_index()] -= 0.2;
  double planted_ll = 0, perturbed_ll = 0;
  for_each_simulated(world, [&](int w, int i, int j) {
    auto pt = planted_point(world, w, i, j);
    pt.dp.x = pt.x;
    pt.dp.y = stored_visits(world.data, w, i, j);
    planted_ll += log_likelihood(world.planted, pt.dp);
    perturbed_ll += log_likelihood(perturbed, pt.dp);
  });
  EXPECT_GT(planted_ll, perturbed_ll);
}

TEST(Synth, VisitsOnlyWithinReach) {
  const auto world = synthesize(small_config());
  const auto& d = world.data;
  ASSERT_FALSE(d.edges.empty());
  for (const auto& e : d.edges) {
    const int a = d.cbgs[e.cbg].county, b = d.pois[e.poi].county;
    EXPECT_TRUE(a == b || d.adjacency.adjacent(a, b));
    EXPECT_GE(e.visits, 1);
  }
}

}  // namespace
}  // namespace spill
