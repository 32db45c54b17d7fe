#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillover/domain.hpp"
#include "spillover/estimator.hpp"
#include "spillover/zipmodel.hpp"

namespace spill {

// Baseline expected visits phi(g, A, B) from the CBGs of A to the group-g
// POIs of B, with Z = 0 and each CBG's mean device count. Entries exist for
// ordered adjacent pairs; the diagonal (A, A) is filled for within-county
// tables.
class PhiTable {
 public:
  PhiTable() = default;
  PhiTable(std::size_t n_counties, std::size_t n_groups)
      : n_counties_(n_counties), n_groups_(n_groups), values_(n_counties * n_counties * n_groups, 0.0),
        present_(n_counties * n_counties, 0) {}

  std::size_t n_counties() const { return n_counties_; }
  std::size_t n_groups() const { return n_groups_; }
  bool has(int a, int b) const { return present_[pair(a, b)] != 0; }
  double operator()(int group, int a, int b) const { return values_[pair(a, b) * n_groups_ + group]; }
  void set(int group, int a, int b, double value) {
    present_[pair(a, b)] = 1;
    values_[pair(a, b) * n_groups_ + group] = value;
  }
  void mark(int a, int b) { present_[pair(a, b)] = 1; }

 private:
  std::size_t pair(int a, int b) const { return static_cast<std::size_t>(a) * n_counties_ + b; }

  std::size_t n_counties_ = 0;
  std::size_t n_groups_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> present_;
};

// Ordered adjacent pairs; with `diagonal`, the within-county (A, A) entries
// instead.
PhiTable precompute_phi(const ModelParams& params, const MobilityDataset& data, bool diagonal = false,
                        int workers = 1);

// Treatment coefficient used in counterfactuals. Cells without support fall
// back to the group's PP coefficient, i.e. no effect.
double effective_beta_tt(const ModelParams& params, int group, Condition c);

// Expected pair flow E[Y_AB | T_A, T_B] = sum_g exp(beta_{g,T_A,T_B}) phi(g, A, B).
double expected_pair_visits(const ModelParams& params, const PhiTable& phi, int a, int b, Tier ta, Tier tb);

struct WithinCountyModel {
  std::vector<double> purple;  // E[Y_AA | Purple] per county
  std::vector<double> red;     // E[Y_AA | Red] per county

  double expected(int county, Tier t) const { return t == Tier::kPurple ? purple.at(county) : red.at(county); }
};

// Evaluates the within-county companion model at the two tiers.
WithinCountyModel within_county_model(const ModelParams& within_params, const MobilityDataset& data, int workers = 1);

// Everything needed to evaluate county out-degrees for one parameter draw.
struct CounterfactualModel {
  ModelParams params;  // pairwise model
  PhiTable phi;
  WithinCountyModel within;
  const AdjacencyMap* adjacency = nullptr;
};

CounterfactualModel make_counterfactual(const ModelParams& pairwise, const ModelParams& within,
                                        const MobilityDataset& data, int workers = 1);

using TreatmentVector = std::vector<Tier>;  // per county, Purple or Red

double expected_out_degree(const CounterfactualModel& model, int county, std::span<const Tier> treatment);

// r = (E[out | all Red] - E[out | scenario]) / (E[out | all Red] - E[out | all Purple]);
// empty when the denominator is not positive.
std::optional<double> efficacy_ratio(const CounterfactualModel& model, int county, std::span<const Tier> scenario);

enum class ScenarioKind : std::uint8_t { kLoneCounty, kRealisticWeek, kMacroCounty, kFixed };

std::string_view to_string(ScenarioKind kind);

// A family of treatment vectors, one per focal county.
struct Scenario {
  ScenarioKind kind = ScenarioKind::kLoneCounty;
  std::optional<Date> week;
  std::vector<int> parts;          // macro-county part per county
  TreatmentVector fixed;           // realistic-week and fixed scenarios

  TreatmentVector treatment_for(int county, std::size_t n_counties) const;

  static Scenario lone_county();
  // Purple where the recorded tier was Purple, Red otherwise.
  static Scenario realistic_week(const MobilityDataset& data, Date week);
  static Scenario macro_county(std::vector<int> parts);
  static Scenario fixed_vector(TreatmentVector t);
};

TreatmentVector all_tier(std::size_t n_counties, Tier t);

struct CountyEfficacy {
  int county = 0;
  std::vector<double> trial_values;  // trials where the ratio is defined
  std::size_t undefined_trials = 0;
  Summary summary;
};

struct SubsetAverage {
  std::string subset;  // all, small, large; purple for realistic-week scenarios
  std::vector<double> trial_values;
  Summary summary;
  std::size_t counties = 0;
  std::size_t excluded = 0;  // county-trials left out for an undefined ratio
};

struct EfficacyReport {
  Scenario scenario;
  std::vector<CountyEfficacy> counties;
  std::vector<SubsetAverage> subsets;

  const SubsetAverage& subset(std::string_view name) const;
};

EfficacyReport efficacy_report(const Scenario& scenario, std::span<const CounterfactualModel> trials,
                               const MobilityDataset& data);

// One model per bootstrap trial, pairing trial t of each result. The within
// result is reused cyclically when it has fewer trials.
std::vector<CounterfactualModel> counterfactual_trials(const BootstrapResult& pairwise, const BootstrapResult& within,
                                                       const MobilityDataset& data, int workers = 1);

}  // namespace spill
