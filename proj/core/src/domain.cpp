#include "spillover/domain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "spillover/error.hpp"

namespace spill {

namespace {

std::int64_t county_week_key(int county, Date week) {
  return (static_cast<std::int64_t>(county) << 32) ^ static_cast<std::uint32_t>(week.days());
}

}  // namespace

// ---------------------------------------------------------------- Date

Date Date::from_ymd(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw ValidationError(fmt::format("invalid date {}-{}-{}", year, month, day));
  return Date(static_cast<int>(sys_days{ymd}.time_since_epoch().count()));
}

Date Date::parse(std::string_view text) {
  auto fail = [&] { return ValidationError(fmt::format("invalid date '{}', expected YYYY-MM-DD", text)); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw fail();
  auto number = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (text[i] < '0' || text[i] > '9') throw fail();
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  return from_ymd(number(0, 4), static_cast<unsigned>(number(5, 2)), static_cast<unsigned>(number(8, 2)));
}

std::string Date::str() const {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{std::chrono::days{days_}}};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
}

int Date::weekday() const {
  // 1970-01-01 was a Thursday.
  return ((days_ % 7) + 7 + 3) % 7;
}

// ---------------------------------------------------------------- enums

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::kPurple: return "purple";
    case Tier::kRed: return "red";
    case Tier::kOrange: return "orange";
    case Tier::kYellow: return "yellow";
  }
  return "?";
}

Tier parse_tier(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "purple") return Tier::kPurple;
  if (lower == "red") return Tier::kRed;
  if (lower == "orange") return Tier::kOrange;
  if (lower == "yellow") return Tier::kYellow;
  throw ValidationError(fmt::format("unknown tier '{}'", text));
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::kPP: return "PP";
    case Condition::kPR: return "PR";
    case Condition::kRP: return "RP";
    case Condition::kRR: return "RR";
  }
  return "?";
}

Condition parse_condition(std::string_view text) {
  for (int c = 0; c < kNumConditions; ++c) {
    if (to_string(static_cast<Condition>(c)) == text) return static_cast<Condition>(c);
  }
  throw ValidationError(fmt::format("unknown treatment condition '{}'", text));
}

// ---------------------------------------------------------------- geometry

double distance_km(LatLon a, LatLon b) {
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

// ---------------------------------------------------------------- adjacency

void AdjacencyMap::add(int a, int b) {
  if (a == b) throw ValidationError(fmt::format("adjacency self-pair for county index {}", a));
  const auto n = static_cast<int>(neighbors_.size());
  if (a < 0 || b < 0 || a >= n || b >= n) throw ValidationError("adjacency pair references unknown county");
  auto insert = [](std::vector<int>& v, int x) {
    auto it = std::lower_bound(v.begin(), v.end(), x);
    if (it == v.end() || *it != x) v.insert(it, x);
  };
  insert(neighbors_[a], b);
  insert(neighbors_[b], a);
}

bool AdjacencyMap::adjacent(int a, int b) const {
  const auto& v = neighbors_.at(a);
  return std::binary_search(v.begin(), v.end(), b);
}

std::vector<std::pair<int, int>> AdjacencyMap::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < static_cast<int>(neighbors_.size()); ++a) {
    for (int b : neighbors_[a]) {
      if (a < b) out.emplace_back(a, b);
    }
  }
  return out;
}

void ThresholdRegime::validate() const {
  if (!(cr_red > 0 && tp_red > 0 && he_red > 0 && tp_orange > 0 && he_orange > 0)) {
    throw ValidationError("threshold regime values must be positive");
  }
  if (!(tp_orange < tp_red) || !(he_orange < he_red)) {
    throw ValidationError("orange thresholds must lie below the red thresholds");
  }
}

// ---------------------------------------------------------------- dataset

void MobilityDataset::finalize() {
  const auto n_counties = static_cast<int>(counties.size());
  county_ids_.clear();
  for (int c = 0; c < n_counties; ++c) {
    if (counties[c].population <= 0) {
      throw ValidationError(fmt::format("county '{}' has non-positive population", counties[c].id));
    }
    if (!county_ids_.emplace(counties[c].id, c).second) {
      throw ValidationError(fmt::format("duplicate county id '{}'", counties[c].id));
    }
  }
  if (adjacency.county_count() != counties.size()) {
    throw ValidationError("adjacency map does not match the county table");
  }
  std::sort(weeks.begin(), weeks.end());
  weeks.erase(std::unique(weeks.begin(), weeks.end()), weeks.end());

  cbg_ids_.clear();
  cbgs_by_county_.assign(counties.size(), {});
  for (int i = 0; i < static_cast<int>(cbgs.size()); ++i) {
    const auto& c = cbgs[i];
    if (c.county < 0 || c.county >= n_counties) throw ValidationError(fmt::format("CBG '{}' has unknown county", c.id));
    if (c.demographics.size() != demographic_names.size()) {
      throw ValidationError(fmt::format("CBG '{}' has {} demographic columns, expected {}", c.id,
                                        c.demographics.size(), demographic_names.size()));
    }
    if (!cbg_ids_.emplace(c.id, i).second) throw ValidationError(fmt::format("duplicate CBG id '{}'", c.id));
    cbgs_by_county_[c.county].push_back(i);
  }
  poi_ids_.clear();
  pois_by_county_.assign(counties.size(), {});
  for (int j = 0; j < static_cast<int>(pois.size()); ++j) {
    const auto& p = pois[j];
    if (p.county < 0 || p.county >= n_counties) throw ValidationError(fmt::format("POI '{}' has unknown county", p.id));
    if (p.group < 0 || p.group >= static_cast<int>(groups.size())) {
      throw ValidationError(fmt::format("POI '{}' has unknown group", p.id));
    }
    if (!(p.area_sqft > 0)) throw ValidationError(fmt::format("POI '{}' has non-positive area", p.id));
    if (!poi_ids_.emplace(p.id, j).second) throw ValidationError(fmt::format("duplicate POI id '{}'", p.id));
    pois_by_county_[p.county].push_back(j);
  }

  metric_index_.clear();
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    const auto& row = metrics[m];
    if (row.county < 0 || row.county >= n_counties) throw ValidationError("metrics row has unknown county");
    if (!(row.case_rate >= 0)) throw ValidationError("case rate must be non-negative");
    if (!(row.test_positivity >= 0 && row.test_positivity <= 100)) throw ValidationError("test positivity outside [0,100]");
    if (row.health_equity && !(*row.health_equity >= 0 && *row.health_equity <= 100)) {
      throw ValidationError("health equity outside [0,100]");
    }
    if (!row.health_equity && counties[row.county].size_class() == SizeClass::kLarge) {
      throw ValidationError(fmt::format("large county '{}' lacks a health equity reading for {}",
                                        counties[row.county].id, row.week.str()));
    }
    if (!metric_index_.emplace(county_week_key(row.county, row.week), m).second) {
      throw ValidationError(fmt::format("duplicate metrics row for county '{}' week {}", counties[row.county].id,
                                        row.week.str()));
    }
  }
  tier_index_.clear();
  for (const auto& t : tiers) {
    if (t.county < 0 || t.county >= n_counties) throw ValidationError("tier row has unknown county");
    if (!tier_index_.emplace(county_week_key(t.county, t.week), t.tier).second) {
      throw ValidationError(fmt::format("duplicate tier row for county '{}' week {}", counties[t.county].id,
                                        t.week.str()));
    }
  }

  const std::size_t n_weeks = weeks.size();
  if (devices.empty()) devices.assign(n_weeks * cbgs.size(), 0);
  if (devices.size() != n_weeks * cbgs.size()) throw ValidationError("device table has the wrong shape");

  for (const auto& e : edges) {
    if (e.week < 0 || e.week >= static_cast<int>(n_weeks) || e.cbg < 0 || e.cbg >= static_cast<int>(cbgs.size()) ||
        e.poi < 0 || e.poi >= static_cast<int>(pois.size())) {
      throw ValidationError("visit edge references an unknown week, CBG or POI");
    }
    if (e.visits < 1) throw ValidationError("stored visit edges must have visits >= 1");
  }
  std::sort(edges.begin(), edges.end(), [](const VisitEdge& a, const VisitEdge& b) {
    return std::tie(a.week, a.cbg, a.poi) < std::tie(b.week, b.cbg, b.poi);
  });
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (edges[k].week == edges[k - 1].week && edges[k].cbg == edges[k - 1].cbg && edges[k].poi == edges[k - 1].poi) {
      throw ValidationError("duplicate visit edge");
    }
  }
  const std::size_t rows = n_weeks * cbgs.size();
  row_offsets_.assign(rows + 1, 0);
  for (const auto& e : edges) ++row_offsets_[static_cast<std::size_t>(e.week) * cbgs.size() + e.cbg + 1];
  for (std::size_t r = 0; r < rows; ++r) row_offsets_[r + 1] += row_offsets_[r];
}

int MobilityDataset::county_index(std::string_view id) const {
  auto it = county_ids_.find(std::string(id));
  if (it == county_ids_.end()) throw ValidationError(fmt::format("unknown county '{}'", id));
  return it->second;
}

int MobilityDataset::cbg_index(std::string_view id) const {
  auto it = cbg_ids_.find(std::string(id));
  if (it == cbg_ids_.end()) throw ValidationError(fmt::format("unknown CBG '{}'", id));
  return it->second;
}

int MobilityDataset::poi_index(std::string_view id) const {
  auto it = poi_ids_.find(std::string(id));
  if (it == poi_ids_.end()) throw ValidationError(fmt::format("unknown POI '{}'", id));
  return it->second;
}

int MobilityDataset::group_index(std::string_view name) const {
  for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
    if (groups[g] == name) return g;
  }
  throw ValidationError(fmt::format("unknown POI group '{}'", name));
}

int MobilityDataset::week_index(Date week) const {
  auto it = std::lower_bound(weeks.begin(), weeks.end(), week);
  if (it == weeks.end() || *it != week) return -1;
  return static_cast<int>(it - weeks.begin());
}

std::span<const VisitEdge> MobilityDataset::edges_from(int week, int cbg) const {
  const std::size_t r = static_cast<std::size_t>(week) * cbgs.size() + cbg;
  return {edges.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
}

double MobilityDataset::mean_device_count(int cbg) const {
  double sum = 0.0;
  int n = 0;
  for (std::size_t w = 0; w < weeks.size(); ++w) {
    const auto d = device_count(static_cast<int>(w), cbg);
    if (d > 0) {
      sum += static_cast<double>(d);
      ++n;
    }
  }
  return n > 0 ? sum / n : 1.0;
}

const CountyWeekMetrics* MobilityDataset::find_metrics(int county, Date week) const {
  auto it = metric_index_.find(county_week_key(county, week));
  return it == metric_index_.end() ? nullptr : &metrics[it->second];
}

std::optional<Tier> MobilityDataset::observed_tier(int county, Date week) const {
  auto it = tier_index_.find(county_week_key(county, week));
  if (it == tier_index_.end()) return std::nullopt;
  return it->second;
}

std::int64_t MobilityDataset::total_visits() const {
  std::int64_t s = 0;
  for (const auto& e : edges) s += e.visits;
  return s;
}

// ---------------------------------------------------------------- dense iteration

DenseTripleRange::iterator::iterator(const MobilityDataset* data, bool at_end) : data_(data) {
  done_ = at_end || data->dense_size() == 0;
  if (!done_) resolve();
}

void DenseTripleRange::iterator::resolve() {
  const std::size_t n_pois = data_->pois.size();
  const std::size_t n_cbgs = data_->cbgs.size();
  current_.poi = static_cast<int>(linear_ % n_pois);
  current_.cbg = static_cast<int>((linear_ / n_pois) % n_cbgs);
  current_.week = static_cast<int>(linear_ / (n_pois * n_cbgs));
  current_.visits = 0;
  const auto& edges = data_->edges;
  if (edge_cursor_ < edges.size()) {
    const auto& e = edges[edge_cursor_];
    if (e.week == current_.week && e.cbg == current_.cbg && e.poi == current_.poi) {
      current_.visits = e.visits;
      ++edge_cursor_;
    }
  }
}

DenseTripleRange::iterator& DenseTripleRange::iterator::operator++() {
  if (done_) return *this;
  if (++linear_ >= data_->dense_size()) {
    done_ = true;
    return *this;
  }
  resolve();
  return *this;
}

}  // namespace spill
