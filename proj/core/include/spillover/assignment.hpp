#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillover/domain.hpp"

namespace spill {

enum class Metric : std::uint8_t { kCaseRate, kTestPositivity, kHealthEquity };

// One input of a max/min aggregation: a metric from week w (offset 0) or the
// preceding week (offset 1).
struct TriggerInput {
  Metric metric = Metric::kCaseRate;
  int week_offset = 0;

  std::string str() const;  // e.g. "CR@w", "HE@w-1"
  friend bool operator==(const TriggerInput&, const TriggerInput&) = default;
};

enum class MinBranch : std::uint8_t { kZ1, kZ2 };

struct TriggerPattern {
  TriggerInput z1_argmax;  // argmax of Z1 for large counties, of Z for small
  std::optional<TriggerInput> z2_argmax;
  std::optional<MinBranch> min_branch;
};

struct ZResult {
  double z = 0.0;
  std::optional<double> z1;
  std::optional<double> z2;
  TriggerPattern trigger;
};

// Ordered set of threshold regimes; a week uses the latest regime whose
// effective_from is on or before the week's Monday.
class RegimeSchedule {
 public:
  RegimeSchedule() = default;
  explicit RegimeSchedule(std::vector<ThresholdRegime> regimes);

  // 7/8/8 red and 5/5 orange thresholds from 2020-08-01, case-rate threshold
  // raised to 10 from 2021-03-12.
  static RegimeSchedule blueprint_default();

  // Throws ValidationError when no regime covers the week.
  int index_at(Date week) const;
  const ThresholdRegime& at(Date week) const { return regimes_[index_at(week)]; }
  const std::vector<ThresholdRegime>& regimes() const { return regimes_; }
  std::size_t size() const { return regimes_.size(); }

 private:
  std::vector<ThresholdRegime> regimes_;
};

constexpr double center_metric(double value, double threshold) { return value - threshold; }

// Builds the assignment variable from the metrics of week w and w-1.
// Large counties need health equity in both weeks.
ZResult compute_z(const CountyWeekMetrics& current, const CountyWeekMetrics& previous, SizeClass size,
                  const ThresholdRegime& regime);

constexpr Tier assign_tier_from_z(double z) { return z < 0.0 ? Tier::kRed : Tier::kPurple; }

constexpr bool check_compliance(Tier observed, double z) {
  return is_modeled(observed) && observed == assign_tier_from_z(z);
}

struct AssignmentRecord {
  int county = 0;
  Date week;
  SizeClass size = SizeClass::kLarge;
  int regime = 0;
  double z = 0.0;
  std::optional<double> z1;
  std::optional<double> z2;
  Tier tier = Tier::kPurple;  // observed
  bool compliant = false;
  TriggerPattern trigger;
};

// One record per tiers.csv row; metrics for w and w-1 must exist.
std::vector<AssignmentRecord> compute_assignments(const MobilityDataset& data, const RegimeSchedule& schedule);

enum class FilterScope : std::uint8_t {
  kCrossCounty,   // CBG and POI in adjacent counties
  kWithinCounty,  // CBG and POI in the same county
};

struct FilterConfig {
  double bandwidth = 5.0;
  std::array<bool, kNumConditions> conditions{true, true, true, true};
  std::vector<Date> excluded_weeks{Date::from_ymd(2021, 3, 8)};
  FilterScope scope = FilterScope::kCrossCounty;

  void validate() const;
};

// Reason a county-week did not make it into the analysis sample; the first
// failing criterion in this order is recorded.
enum class DropReason : std::uint8_t {
  kRetained,
  kExcludedWeek,
  kNoAssignment,
  kTierNotModeled,
  kNonCompliant,
  kOutsideBandwidth,
};

struct ConditionCounts {
  std::int64_t dense = 0;
  std::int64_t nonzero = 0;
  std::int64_t visits = 0;
  // ordered county pair -> non-zero triples
  std::map<std::pair<int, int>, std::int64_t> pair_nonzero;
};

// A (week, CBG county, POI county) block of the dense triple space; every
// CBG of cbg_county paired with every POI of poi_county is retained.
struct TripleBlock {
  int week = 0;
  int cbg_county = 0;
  int poi_county = 0;
  Condition condition = Condition::kPP;
};

class FilteredDataset {
 public:
  FilterConfig config;
  std::vector<AssignmentRecord> assignments;
  std::vector<TripleBlock> blocks;
  std::array<ConditionCounts, kNumConditions> counts;

  // Indexed by (week index, county); -1 when no record exists.
  const AssignmentRecord* record(int week, int county) const;
  DropReason status(int week, int county) const { return status_[index(week, county)]; }
  bool retains(int week, int cbg_county, int poi_county) const;
  bool retains_triple(const MobilityDataset& data, int week, int cbg, int poi) const {
    return retains(week, data.cbgs[cbg].county, data.pois[poi].county);
  }

  std::int64_t dense_size() const;
  std::int64_t nonzero_size() const;
  bool empty() const { return blocks.empty(); }

 private:
  friend FilteredDataset filter_dataset(const MobilityDataset&, std::span<const AssignmentRecord>,
                                        const FilterConfig&);
  std::size_t index(int week, int county) const { return static_cast<std::size_t>(week) * n_counties_ + county; }

  std::size_t n_counties_ = 0;
  std::vector<int> record_index_;
  std::vector<DropReason> status_;
};

FilteredDataset filter_dataset(const MobilityDataset& data, std::span<const AssignmentRecord> assignments,
                               const FilterConfig& config);

struct TriggerHistogram {
  std::int64_t records = 0;
  std::map<std::string, std::int64_t> z1_argmax;
  std::map<std::string, std::int64_t> z2_argmax;
  std::map<std::string, std::int64_t> min_branch;
};

// Defaults to the compliant large-county subset.
TriggerHistogram trigger_histogram(std::span<const AssignmentRecord> records, bool compliant_large_only = true);

}  // namespace spill
