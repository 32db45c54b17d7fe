#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spillover/assignment.hpp"
#include "spillover/domain.hpp"
#include "spillover/zipmodel.hpp"

namespace spill {

// Mean-reverting weekly severity per county; the reported metrics are noisy
// affine functions of it, centered on the red thresholds.
struct MetricProcess {
  double level_low = -3.0;    // county long-run level, uniform in [low, high]
  double level_high = 2.0;
  double persistence = 0.6;   // AR(1) coefficient
  double innovation_sd = 1.5;
  double tp_loading = 0.5;
  double he_offset = 0.5;     // health equity sits above test positivity
  double noise_sd = 0.4;
};

struct WorldConfig {
  int n_counties = 20;
  double small_fraction = 0.35;
  std::pair<int, int> cbgs_per_county{12, 24};
  std::pair<int, int> pois_per_county{30, 60};
  std::vector<std::string> groups{"restaurants", "retail", "fitness", "worship"};
  std::vector<double> group_mix{0.4, 0.3, 0.15, 0.15};
  std::vector<std::string> demographic_names{"median_income_z", "share_over_65_z"};
  Date first_week = Date::from_ymd(2021, 2, 1);
  int n_weeks = 9;
  double grid_spacing_km = 40.0;
  double scatter_km = 8.0;
  double noncomplier_rate = 0.0;
  MetricProcess metrics;
  RegimeSchedule schedule = RegimeSchedule::blueprint_default();
  // Empty theta means default_planted_params().
  ModelParams planted;
  std::uint64_t seed = 1;

  void validate() const;
};

// Planted parameters on unstandardized covariates, with per-group spillover
// lifts tau_PR in [1.15, 1.45].
ModelParams default_planted_params(const WorldConfig& config);

struct SyntheticWorld {
  MobilityDataset data;
  ModelParams planted;
  RegimeSchedule schedule;
  std::vector<AssignmentRecord> assignments;       // ground truth, after non-compliance
  std::vector<std::pair<int, Date>> noncompliers;  // (county, week)
  std::array<std::int64_t, kNumConditions> condition_support{};  // adjacent county-week pairs
  std::vector<int> record_index;  // week index * counties + county -> assignments position, or -1

  const AssignmentRecord* record(int week, int county) const;
};

// Geography, metrics and tiers; no visits yet.
SyntheticWorld generate_world(const WorldConfig& config);

// Draws Y for every (week, CBG, POI) with the POI in the CBG's county or an
// adjacent one; only Y >= 1 is stored.
void simulate_visits(SyntheticWorld& world, std::uint64_t seed);

// generate_world followed by simulate_visits with the config seed.
SyntheticWorld synthesize(const WorldConfig& config);

// Datapoint for (week, cbg, poi) under the planted model, covariates unstandardized.
struct PlantedPoint {
  std::vector<double> x;
  Datapoint dp;
};
PlantedPoint planted_point(const SyntheticWorld& world, int week, int cbg, int poi);

}  // namespace spill
