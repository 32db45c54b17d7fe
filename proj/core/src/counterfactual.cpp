#include "spillover/counterfactual.hpp"

#include <cmath>

#include <fmt/format.h>

#include "spillover/error.hpp"
#include "spillover/parallel.hpp"

namespace spill {

namespace {

// phi(., a, b) for every group into `out`.
void phi_block(const ModelParams& params, const MobilityDataset& data, int a, int b, std::span<double> out) {
  const auto& th = params.theta;
  const double alpha1 = params.alpha1();
  const double alpha2 = params.alpha2();
  std::vector<double> row(params.covariates.size());
  std::fill(out.begin(), out.end(), 0.0);
  for (int i : data.cbgs_in(a)) {
    const auto& cbg = data.cbgs[i];
    const double devices = data.mean_device_count(i);
    for (int j : data.pois_in(b)) {
      const auto& poi = data.pois[j];
      const double d = distance_km(cbg.location, poi.location);
      params.covariates.raw_row(d, devices, cbg.demographics, poi.area_sqft, poi.group, row);
      params.covariates.standardize(row);
      double eta = th[params.beta0_index()];
      for (std::size_t k = 0; k < row.size(); ++k) eta += th[params.beta3_index(k)] * row[k];
      out[poi.group] += exposure_prob(alpha1, alpha2, d) * std::exp(eta);
    }
  }
}

}  // namespace

PhiTable precompute_phi(const ModelParams& params, const MobilityDataset& data, bool diagonal, int workers) {
  const std::size_t n = data.counties.size();
  const std::size_t g = params.groups.size();
  if (g != data.groups.size()) throw ValidationError("model and dataset disagree on POI groups");
  PhiTable table(n, g);
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < static_cast<int>(n); ++a) {
    if (diagonal) {
      pairs.emplace_back(a, a);
    } else {
      for (int b : data.adjacency.neighbors(a)) pairs.emplace_back(a, b);
    }
  }
  std::vector<double> values(pairs.size() * g);
  parallel_for(pairs.size(), workers, [&](std::size_t k) {
    phi_block(params, data, pairs[k].first, pairs[k].second, std::span<double>(values.data() + k * g, g));
  });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    table.mark(pairs[k].first, pairs[k].second);
    for (std::size_t q = 0; q < g; ++q) table.set(static_cast<int>(q), pairs[k].first, pairs[k].second, values[k * g + q]);
  }
  return table;
}

double effective_beta_tt(const ModelParams& params, int group, Condition c) {
  const auto cell = [&](Condition x) { return params.identified[group * kNumConditions + static_cast<int>(x)] != 0; };
  if (cell(c)) return params.beta_tt(group, c);
  if (cell(Condition::kPP)) return params.beta_tt(group, Condition::kPP);
  return 0.0;
}

double expected_pair_visits(const ModelParams& params, const PhiTable& phi, int a, int b, Tier ta, Tier tb) {
  const Condition c = condition_of(ta, tb);
  double total = 0.0;
  for (int g = 0; g < static_cast<int>(phi.n_groups()); ++g) total += std::exp(effective_beta_tt(params, g, c)) * phi(g, a, b);
  return total;
}

WithinCountyModel within_county_model(const ModelParams& within_params, const MobilityDataset& data, int workers) {
  const auto phi = precompute_phi(within_params, data, true, workers);
  WithinCountyModel out;
  const std::size_t n = data.counties.size();
  out.purple.resize(n);
  out.red.resize(n);
  for (int a = 0; a < static_cast<int>(n); ++a) {
    out.purple[a] = expected_pair_visits(within_params, phi, a, a, Tier::kPurple, Tier::kPurple);
    out.red[a] = expected_pair_visits(within_params, phi, a, a, Tier::kRed, Tier::kRed);
  }
  return out;
}

CounterfactualModel make_counterfactual(const ModelParams& pairwise, const ModelParams& within,
                                        const MobilityDataset& data, int workers) {
  CounterfactualModel m;
  m.params = pairwise;
  m.phi = precompute_phi(pairwise, data, false, workers);
  m.within = within_county_model(within, data, workers);
  m.adjacency = &data.adjacency;
  return m;
}

double expected_out_degree(const CounterfactualModel& model, int county, std::span<const Tier> treatment) {
  const Tier ta = treatment[county];
  double total = model.within.expected(county, ta);
  for (int b : model.adjacency->neighbors(county)) {
    total += expected_pair_visits(model.params, model.phi, county, b, ta, treatment[b]);
  }
  return total;
}

TreatmentVector all_tier(std::size_t n_counties, Tier t) { return TreatmentVector(n_counties, t); }

std::optional<double> efficacy_ratio(const CounterfactualModel& model, int county, std::span<const Tier> scenario) {
  const std::size_t n = scenario.size();
  const double red = expected_out_degree(model, county, all_tier(n, Tier::kRed));
  const double purple = expected_out_degree(model, county, all_tier(n, Tier::kPurple));
  const double denom = red - purple;
  if (!(denom > 0.0)) return std::nullopt;
  return (red - expected_out_degree(model, county, scenario)) / denom;
}

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kLoneCounty: return "lone-county";
    case ScenarioKind::kRealisticWeek: return "realistic-week";
    case ScenarioKind::kMacroCounty: return "macro-county";
    case ScenarioKind::kFixed: return "fixed";
  }
  return "?";
}

TreatmentVector Scenario::treatment_for(int county, std::size_t n_counties) const {
  switch (kind) {
    case ScenarioKind::kLoneCounty: {
      auto t = all_tier(n_counties, Tier::kRed);
      t[county] = Tier::kPurple;
      return t;
    }
    case ScenarioKind::kMacroCounty: {
      if (parts.size() != n_counties) throw ValidationError("partition does not cover every county");
      TreatmentVector t(n_counties);
      for (std::size_t b = 0; b < n_counties; ++b) t[b] = parts[b] == parts[county] ? Tier::kPurple : Tier::kRed;
      return t;
    }
    case ScenarioKind::kRealisticWeek:
    case ScenarioKind::kFixed:
      if (fixed.size() != n_counties) throw ValidationError("treatment vector does not cover every county");
      return fixed;
  }
  return {};
}

Scenario Scenario::lone_county() { return Scenario{}; }

Scenario Scenario::realistic_week(const MobilityDataset& data, Date week) {
  Scenario s;
  s.kind = ScenarioKind::kRealisticWeek;
  s.week = week;
  s.fixed.resize(data.counties.size());
  for (int a = 0; a < static_cast<int>(data.counties.size()); ++a) {
    const auto t = data.observed_tier(a, week);
    s.fixed[a] = t && *t == Tier::kPurple ? Tier::kPurple : Tier::kRed;
  }
  return s;
}

Scenario Scenario::macro_county(std::vector<int> parts) {
  Scenario s;
  s.kind = ScenarioKind::kMacroCounty;
  s.parts = std::move(parts);
  return s;
}

Scenario Scenario::fixed_vector(TreatmentVector t) {
  Scenario s;
  s.kind = ScenarioKind::kFixed;
  s.fixed = std::move(t);
  return s;
}

const SubsetAverage& EfficacyReport::subset(std::string_view name) const {
  for (const auto& s : subsets) {
    if (s.subset == name) return s;
  }
  throw ValidationError(fmt::format("unknown county subset '{}'", name));
}

EfficacyReport efficacy_report(const Scenario& scenario, std::span<const CounterfactualModel> trials,
                               const MobilityDataset& data) {
  if (trials.empty()) throw ValidationError("efficacy needs at least one parameter draw");
  const std::size_t n = data.counties.size();
  EfficacyReport report;
  report.scenario = scenario;
  report.counties.resize(n);
  std::vector<SubsetAverage> subsets(3);
  subsets[0].subset = "all";
  subsets[1].subset = "small";
  subsets[2].subset = "large";
  const bool focal = scenario.kind == ScenarioKind::kRealisticWeek;
  if (focal) {
    subsets.emplace_back();
    subsets[3].subset = "purple";
  }
  std::vector<TreatmentVector> treatments(n);
  // Subset memberships per county.
  std::vector<std::vector<std::size_t>> member(n);
  for (int a = 0; a < static_cast<int>(n); ++a) {
    treatments[a] = scenario.treatment_for(a, n);
    report.counties[a].county = a;
    member[a] = {0, std::size_t{data.counties[a].size_class() == SizeClass::kSmall ? 1u : 2u}};
    if (focal && treatments[a][a] == Tier::kPurple) member[a].push_back(3);
    for (auto s : member[a]) ++subsets[s].counties;
  }

  for (const auto& model : trials) {
    std::vector<double> sum(subsets.size(), 0.0);
    std::vector<std::size_t> count(subsets.size(), 0);
    for (int a = 0; a < static_cast<int>(n); ++a) {
      const auto r = efficacy_ratio(model, a, treatments[a]);
      if (!r) {
        ++report.counties[a].undefined_trials;
        for (auto s : member[a]) ++subsets[s].excluded;
        continue;
      }
      report.counties[a].trial_values.push_back(*r);
      for (auto s : member[a]) {
        sum[s] += *r;
        ++count[s];
      }
    }
    for (std::size_t s = 0; s < subsets.size(); ++s) {
      if (count[s] > 0) subsets[s].trial_values.push_back(sum[s] / static_cast<double>(count[s]));
    }
  }
  for (auto& c : report.counties) c.summary = summarize(c.trial_values);
  for (auto& s : subsets) s.summary = summarize(s.trial_values);
  report.subsets = std::move(subsets);
  return report;
}

std::vector<CounterfactualModel> counterfactual_trials(const BootstrapResult& pairwise, const BootstrapResult& within,
                                                       const MobilityDataset& data, int workers) {
  if (pairwise.trials.empty() || within.trials.empty()) throw ValidationError("bootstrap results hold no trials");
  std::vector<CounterfactualModel> out(pairwise.trials.size());
  parallel_for(out.size(), workers, [&](std::size_t t) {
    out[t] = make_counterfactual(pairwise.trial_params(t), within.trial_params(t % within.trials.size()), data);
  });
  return out;
}

}  // namespace spill
