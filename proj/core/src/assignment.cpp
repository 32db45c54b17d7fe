#include "spillover/assignment.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "spillover/error.hpp"

namespace spill {

std::string TriggerInput::str() const {
  const char* name = metric == Metric::kCaseRate ? "CR" : metric == Metric::kTestPositivity ? "TP" : "HE";
  return week_offset == 0 ? fmt::format("{}@w", name) : fmt::format("{}@w-{}", name, week_offset);
}

RegimeSchedule::RegimeSchedule(std::vector<ThresholdRegime> regimes) : regimes_(std::move(regimes)) {
  if (regimes_.empty()) throw ValidationError("at least one threshold regime is required");
  for (const auto& r : regimes_) r.validate();
  std::stable_sort(regimes_.begin(), regimes_.end(),
                   [](const auto& a, const auto& b) { return a.effective_from < b.effective_from; });
  for (std::size_t k = 1; k < regimes_.size(); ++k) {
    if (regimes_[k].effective_from == regimes_[k - 1].effective_from) {
      throw ValidationError("two threshold regimes share an effective date");
    }
  }
}

RegimeSchedule RegimeSchedule::blueprint_default() {
  ThresholdRegime before;
  before.effective_from = Date::from_ymd(2020, 8, 1);
  ThresholdRegime after = before;
  after.cr_red = 10.0;
  after.effective_from = Date::from_ymd(2021, 3, 12);
  return RegimeSchedule({before, after});
}

int RegimeSchedule::index_at(Date week) const {
  const Date monday = week.monday();
  int found = -1;
  for (int k = 0; k < static_cast<int>(regimes_.size()); ++k) {
    if (regimes_[k].effective_from <= monday) found = k;
  }
  if (found < 0) throw ValidationError(fmt::format("no threshold regime in force for week {}", week.str()));
  return found;
}

namespace {

struct Candidate {
  TriggerInput input;
  double value;
};

// Max with ties resolved to the earliest candidate.
Candidate arg_max(std::span<const Candidate> cands) {
  Candidate best = cands.front();
  for (std::size_t k = 1; k < cands.size(); ++k) {
    if (cands[k].value > best.value) best = cands[k];
  }
  return best;
}

double health_equity_of(const CountyWeekMetrics& m) {
  if (!m.health_equity) {
    throw ValidationError(fmt::format("large county lacks a health equity reading for {}", m.week.str()));
  }
  return *m.health_equity;
}

}  // namespace

ZResult compute_z(const CountyWeekMetrics& cur, const CountyWeekMetrics& prev, SizeClass size,
                  const ThresholdRegime& regime) {
  ZResult out;
  if (size == SizeClass::kSmall) {
    const std::array<Candidate, 4> z_inputs{{
        {{Metric::kCaseRate, 0}, center_metric(cur.case_rate, regime.cr_red)},
        {{Metric::kTestPositivity, 0}, center_metric(cur.test_positivity, regime.tp_red)},
        {{Metric::kCaseRate, 1}, center_metric(prev.case_rate, regime.cr_red)},
        {{Metric::kTestPositivity, 1}, center_metric(prev.test_positivity, regime.tp_red)},
    }};
    const auto best = arg_max(z_inputs);
    out.z = best.value;
    out.trigger.z1_argmax = best.input;
    return out;
  }

  const double he_cur = health_equity_of(cur);
  const double he_prev = health_equity_of(prev);
  const std::array<Candidate, 6> red{{
      {{Metric::kCaseRate, 0}, center_metric(cur.case_rate, regime.cr_red)},
      {{Metric::kTestPositivity, 0}, center_metric(cur.test_positivity, regime.tp_red)},
      {{Metric::kHealthEquity, 0}, center_metric(he_cur, regime.he_red)},
      {{Metric::kCaseRate, 1}, center_metric(prev.case_rate, regime.cr_red)},
      {{Metric::kTestPositivity, 1}, center_metric(prev.test_positivity, regime.tp_red)},
      {{Metric::kHealthEquity, 1}, center_metric(he_prev, regime.he_red)},
  }};
  const std::array<Candidate, 4> orange{{
      {{Metric::kTestPositivity, 0}, center_metric(cur.test_positivity, regime.tp_orange)},
      {{Metric::kHealthEquity, 0}, center_metric(he_cur, regime.he_orange)},
      {{Metric::kTestPositivity, 1}, center_metric(prev.test_positivity, regime.tp_orange)},
      {{Metric::kHealthEquity, 1}, center_metric(he_prev, regime.he_orange)},
  }};
  const auto z1 = arg_max(red);
  const auto z2 = arg_max(orange);
  out.z1 = z1.value;
  out.z2 = z2.value;
  out.trigger.z1_argmax = z1.input;
  out.trigger.z2_argmax = z2.input;
  if (z2.value < z1.value) {
    out.z = z2.value;
    out.trigger.min_branch = MinBranch::kZ2;
  } else {
    out.z = z1.value;
    out.trigger.min_branch = MinBranch::kZ1;
  }
  return out;
}

std::vector<AssignmentRecord> compute_assignments(const MobilityDataset& data, const RegimeSchedule& schedule) {
  std::vector<AssignmentRecord> out;
  out.reserve(data.tiers.size());
  for (const auto& t : data.tiers) {
    const auto& county = data.counties[t.county];
    const auto* cur = data.find_metrics(t.county, t.week);
    const auto* prev = data.find_metrics(t.county, t.week.plus_days(-7));
    if (cur == nullptr || prev == nullptr) {
      throw ValidationError(fmt::format("county '{}' week {}: metrics for weeks w and w-1 are required", county.id,
                                        t.week.str()));
    }
    AssignmentRecord rec;
    rec.county = t.county;
    rec.week = t.week;
    rec.size = county.size_class();
    rec.regime = schedule.index_at(t.week);
    ZResult z;
    try {
      z = compute_z(*cur, *prev, rec.size, schedule.regimes()[rec.regime]);
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("county '{}': {}", county.id, e.what()));
    }
    rec.z = z.z;
    rec.z1 = z.z1;
    rec.z2 = z.z2;
    rec.trigger = z.trigger;
    rec.tier = t.tier;
    rec.compliant = check_compliance(t.tier, z.z);
    out.push_back(rec);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return std::tie(a.week, a.county) < std::tie(b.week, b.county); });
  return out;
}

void FilterConfig::validate() const {
  if (!(bandwidth > 0)) throw ValidationError("bandwidth must be positive");
}

const AssignmentRecord* FilteredDataset::record(int week, int county) const {
  const int k = record_index_[index(week, county)];
  return k < 0 ? nullptr : &assignments[k];
}

bool FilteredDataset::retains(int week, int cbg_county, int poi_county) const {
  if (status_[index(week, cbg_county)] != DropReason::kRetained ||
      status_[index(week, poi_county)] != DropReason::kRetained) {
    return false;
  }
  // Blocks are sorted, so a binary search settles adjacency and the
  // condition whitelist together.
  const TripleBlock key{week, cbg_county, poi_county, Condition::kPP};
  return std::binary_search(blocks.begin(), blocks.end(), key, [](const TripleBlock& a, const TripleBlock& b) {
    return std::tie(a.week, a.cbg_county, a.poi_county) < std::tie(b.week, b.cbg_county, b.poi_county);
  });
}

std::int64_t FilteredDataset::dense_size() const {
  std::int64_t n = 0;
  for (const auto& c : counts) n += c.dense;
  return n;
}

std::int64_t FilteredDataset::nonzero_size() const {
  std::int64_t n = 0;
  for (const auto& c : counts) n += c.nonzero;
  return n;
}

FilteredDataset filter_dataset(const MobilityDataset& data, std::span<const AssignmentRecord> assignments,
                               const FilterConfig& config) {
  config.validate();
  FilteredDataset out;
  out.config = config;
  out.assignments.assign(assignments.begin(), assignments.end());
  const std::size_t n_weeks = data.weeks.size();
  const std::size_t n_counties = data.counties.size();
  out.n_counties_ = n_counties;
  out.record_index_.assign(n_weeks * n_counties, -1);
  out.status_.assign(n_weeks * n_counties, DropReason::kNoAssignment);

  for (int k = 0; k < static_cast<int>(out.assignments.size()); ++k) {
    const auto& r = out.assignments[k];
    const int w = data.week_index(r.week);
    if (w < 0) continue;
    out.record_index_[out.index(w, r.county)] = k;
  }
  for (std::size_t w = 0; w < n_weeks; ++w) {
    const bool excluded = std::find(config.excluded_weeks.begin(), config.excluded_weeks.end(), data.weeks[w]) !=
                          config.excluded_weeks.end();
    for (std::size_t c = 0; c < n_counties; ++c) {
      auto& status = out.status_[out.index(static_cast<int>(w), static_cast<int>(c))];
      const int k = out.record_index_[out.index(static_cast<int>(w), static_cast<int>(c))];
      if (excluded) {
        status = DropReason::kExcludedWeek;
      } else if (k < 0) {
        status = DropReason::kNoAssignment;
      } else if (const auto& r = out.assignments[k]; !is_modeled(r.tier)) {
        status = DropReason::kTierNotModeled;
      } else if (!r.compliant) {
        status = DropReason::kNonCompliant;
      } else if (!(std::abs(r.z) <= config.bandwidth)) {
        status = DropReason::kOutsideBandwidth;
      } else {
        status = DropReason::kRetained;
      }
    }
  }

  for (int w = 0; w < static_cast<int>(n_weeks); ++w) {
    for (int a = 0; a < static_cast<int>(n_counties); ++a) {
      if (out.status(w, a) != DropReason::kRetained) continue;
      auto add_block = [&](int b) {
        if (out.status(w, b) != DropReason::kRetained) return;
        const auto cond = condition_of(out.record(w, a)->tier, out.record(w, b)->tier);
        if (!config.conditions[static_cast<int>(cond)]) return;
        out.blocks.push_back({w, a, b, cond});
      };
      if (config.scope == FilterScope::kWithinCounty) {
        add_block(a);
      } else {
        for (int b : data.adjacency.neighbors(a)) add_block(b);
      }
    }
  }

  std::vector<int> poi_mark(data.pois.size(), -1);
  for (const auto& blk : out.blocks) {
    auto& cc = out.counts[static_cast<int>(blk.condition)];
    const auto cbgs = data.cbgs_in(blk.cbg_county);
    const auto pois = data.pois_in(blk.poi_county);
    cc.dense += static_cast<std::int64_t>(cbgs.size()) * static_cast<std::int64_t>(pois.size());
    std::int64_t block_nonzero = 0;
    for (int i : cbgs) {
      for (const auto& e : data.edges_from(blk.week, i)) {
        if (data.pois[e.poi].county != blk.poi_county) continue;
        ++block_nonzero;
        cc.visits += e.visits;
      }
    }
    cc.nonzero += block_nonzero;
    if (block_nonzero > 0) cc.pair_nonzero[{blk.cbg_county, blk.poi_county}] += block_nonzero;
  }
  return out;
}

TriggerHistogram trigger_histogram(std::span<const AssignmentRecord> records, bool compliant_large_only) {
  TriggerHistogram h;
  for (const auto& r : records) {
    if (compliant_large_only && (!r.compliant || r.size != SizeClass::kLarge)) continue;
    ++h.records;
    ++h.z1_argmax[r.trigger.z1_argmax.str()];
    if (r.trigger.z2_argmax) ++h.z2_argmax[r.trigger.z2_argmax->str()];
    if (r.trigger.min_branch) ++h.min_branch[*r.trigger.min_branch == MinBranch::kZ1 ? "Z1" : "Z2"];
  }
  return h;
}

}  // namespace spill
