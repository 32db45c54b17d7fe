#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spillover/date.hpp"

namespace spill {

inline constexpr std::int64_t kLargeCountyPopulation = 106000;
inline constexpr double kEarthRadiusKm = 6371.0;

enum class SizeClass : std::uint8_t { kLarge = 0, kSmall = 1 };

// Purple and Red carry treatments; Orange and Yellow are only recognized so
// that the filter can drop them.
enum class Tier : std::uint8_t { kPurple = 0, kRed = 1, kOrange = 2, kYellow = 3 };

std::string_view to_string(Tier tier);
Tier parse_tier(std::string_view text);
constexpr bool is_modeled(Tier t) { return t == Tier::kPurple || t == Tier::kRed; }

// Ordered (CBG-county tier, POI-county tier) treatment condition.
enum class Condition : std::uint8_t { kPP = 0, kPR = 1, kRP = 2, kRR = 3 };
inline constexpr int kNumConditions = 4;

constexpr Condition condition_of(Tier cbg_tier, Tier poi_tier) {
  return static_cast<Condition>((cbg_tier == Tier::kRed ? 2 : 0) +
                                (poi_tier == Tier::kRed ? 1 : 0));
}
std::string_view to_string(Condition c);
Condition parse_condition(std::string_view text);

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

// Haversine great-circle distance in kilometers.
double distance_km(LatLon a, LatLon b);

struct County {
  std::string id;
  std::string name;
  std::int64_t population = 0;

  SizeClass size_class() const {
    return population > kLargeCountyPopulation ? SizeClass::kLarge : SizeClass::kSmall;
  }
};

// Symmetric county adjacency over county indices.
class AdjacencyMap {
 public:
  AdjacencyMap() = default;
  explicit AdjacencyMap(std::size_t county_count) : neighbors_(county_count) {}

  void add(int a, int b);
  bool adjacent(int a, int b) const;
  std::span<const int> neighbors(int county) const { return neighbors_.at(county); }
  std::size_t county_count() const { return neighbors_.size(); }
  // Unordered pairs with first < second, ascending.
  std::vector<std::pair<int, int>> pairs() const;

 private:
  std::vector<std::vector<int>> neighbors_;
};

struct CountyWeekMetrics {
  int county = 0;
  Date week;
  double case_rate = 0.0;      // adjusted cases per 100,000
  double test_positivity = 0.0;  // percent
  std::optional<double> health_equity;  // percent; absent only for small counties
};

struct ThresholdRegime {
  double cr_red = 7.0;
  double tp_red = 8.0;
  double he_red = 8.0;
  double tp_orange = 5.0;
  double he_orange = 5.0;
  Date effective_from;

  void validate() const;
};

struct TierRecord {
  int county = 0;
  Date week;
  Tier tier = Tier::kPurple;
};

struct Cbg {
  std::string id;
  int county = 0;
  LatLon location;
  std::vector<double> demographics;
};

struct Poi {
  std::string id;
  int county = 0;
  LatLon location;
  int group = 0;  // index into MobilityDataset::groups
  double area_sqft = 0.0;
};

// Indices are into MobilityDataset::weeks / cbgs / pois.
struct VisitEdge {
  int week = 0;
  int cbg = 0;
  int poi = 0;
  std::int32_t visits = 0;
};

struct DenseTriple {
  int week = 0;
  int cbg = 0;
  int poi = 0;
  std::int32_t visits = 0;
};

// Everything loaded from the input tables. Populate the public vectors and
// call finalize(), which validates cross references and builds the lookup
// indices; the object is read-only afterwards.
class MobilityDataset {
 public:
  std::vector<County> counties;
  AdjacencyMap adjacency;
  std::vector<CountyWeekMetrics> metrics;
  std::vector<TierRecord> tiers;
  std::vector<Cbg> cbgs;
  std::vector<Poi> pois;
  std::vector<std::string> groups;
  std::vector<std::string> demographic_names;
  std::vector<Date> weeks;        // study weeks, ascending
  std::vector<VisitEdge> edges;   // sorted by (week, cbg, poi) after finalize
  std::vector<std::int64_t> devices;  // weeks.size() x cbgs.size(), 0 = missing

  void finalize();

  int county_index(std::string_view id) const;
  int cbg_index(std::string_view id) const;
  int poi_index(std::string_view id) const;
  int group_index(std::string_view name) const;
  // -1 when the date is not a study week.
  int week_index(Date week) const;

  std::span<const int> cbgs_in(int county) const { return cbgs_by_county_.at(county); }
  std::span<const int> pois_in(int county) const { return pois_by_county_.at(county); }
  // Stored edges of one (week, cbg) row, sorted by poi.
  std::span<const VisitEdge> edges_from(int week, int cbg) const;

  std::int64_t device_count(int week, int cbg) const {
    return devices[static_cast<std::size_t>(week) * cbgs.size() + cbg];
  }
  // Mean over the study weeks with a recorded count.
  double mean_device_count(int cbg) const;

  const CountyWeekMetrics* find_metrics(int county, Date week) const;
  std::optional<Tier> observed_tier(int county, Date week) const;

  std::size_t dense_size() const { return weeks.size() * cbgs.size() * pois.size(); }
  std::int64_t total_visits() const;

 private:
  std::unordered_map<std::string, int> county_ids_;
  std::unordered_map<std::string, int> cbg_ids_;
  std::unordered_map<std::string, int> poi_ids_;
  std::vector<std::vector<int>> cbgs_by_county_;
  std::vector<std::vector<int>> pois_by_county_;
  std::vector<std::size_t> row_offsets_;  // (week * cbgs + cbg) -> first edge
  std::unordered_map<std::int64_t, std::size_t> metric_index_;
  std::unordered_map<std::int64_t, Tier> tier_index_;
};

// Streams every (week, cbg, poi) triple of the dense cross product in
// lexicographic order, resolving implicit zeros against the sorted edge list.
class DenseTripleRange {
 public:
  explicit DenseTripleRange(const MobilityDataset& data) : data_(&data) {}

  class iterator {
   public:
    using value_type = DenseTriple;
    using difference_type = std::ptrdiff_t;

    iterator() = default;
    iterator(const MobilityDataset* data, bool at_end);

    const DenseTriple& operator*() const { return current_; }
    const DenseTriple* operator->() const { return &current_; }
    iterator& operator++();
    iterator operator++(int) {
      auto copy = *this;
      ++*this;
      return copy;
    }
    bool operator==(const iterator& other) const { return done_ == other.done_ && (done_ || linear_ == other.linear_); }

   private:
    void resolve();

    const MobilityDataset* data_ = nullptr;
    DenseTriple current_;
    std::size_t linear_ = 0;
    std::size_t edge_cursor_ = 0;
    bool done_ = true;
  };

  iterator begin() const { return iterator(data_, false); }
  iterator end() const { return iterator(data_, true); }

 private:
  const MobilityDataset* data_;
};

inline DenseTripleRange dense_index(const MobilityDataset& data) { return DenseTripleRange(data); }

}  // namespace spill
