#include "spillover/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/polygon/voronoi.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "spillover/error.hpp"
#include "spillover/rng.hpp"

namespace spill {

namespace {

constexpr double kOriginLat = 36.5;
constexpr double kOriginLon = -119.5;
constexpr double kKmPerDegree = 111.195;

// Streams of the world RNG; each consumer gets its own.
enum WorldStream : std::uint64_t {
  kGeometry = 1,
  kPopulation,
  kMetrics,
  kCompliance,
  kUnits,  // + county index
};

LatLon to_latlon(double x_km, double y_km) {
  const double lat = kOriginLat + y_km / kKmPerDegree;
  const double lon = kOriginLon + x_km / (kKmPerDegree * std::cos(kOriginLat * std::numbers::pi / 180.0));
  return {lat, lon};
}

// Delaunay neighbors are the pairs of Voronoi cells that share an edge.
AdjacencyMap delaunay_adjacency(const std::vector<std::pair<double, double>>& points_km) {
  using Point = boost::polygon::point_data<std::int64_t>;
  std::vector<Point> pts;
  pts.reserve(points_km.size());
  for (const auto& [x, y] : points_km) {
    pts.emplace_back(static_cast<std::int64_t>(std::llround(x * 1000.0)),
                     static_cast<std::int64_t>(std::llround(y * 1000.0)));
  }
  boost::polygon::voronoi_diagram<double> vd;
  boost::polygon::construct_voronoi(pts.begin(), pts.end(), &vd);
  AdjacencyMap adj(points_km.size());
  for (const auto& edge : vd.edges()) {
    if (!edge.is_primary()) continue;
    const auto a = static_cast<int>(edge.cell()->source_index());
    const auto b = static_cast<int>(edge.twin()->cell()->source_index());
    if (a < b) adj.add(a, b);
  }
  return adj;
}

int uniform_int(CounterRng& rng, std::pair<int, int> range) {
  return range.first + static_cast<int>(rng.below(static_cast<std::uint64_t>(range.second - range.first + 1)));
}

int draw_group(CounterRng& rng, const std::vector<double>& mix) {
  double total = 0.0;
  for (double m : mix) total += m;
  double u = rng.uniform() * total;
  for (std::size_t g = 0; g < mix.size(); ++g) {
    if (u < mix[g]) return static_cast<int>(g);
    u -= mix[g];
  }
  return static_cast<int>(mix.size()) - 1;
}

double clamp_percent(double v) { return std::clamp(v, 0.0, 100.0); }

}  // namespace

void WorldConfig::validate() const {
  if (n_counties < 2) throw ValidationError("a world needs at least two counties");
  if (!(small_fraction >= 0.0 && small_fraction <= 1.0)) throw ValidationError("small fraction must lie in [0, 1]");
  for (auto r : {cbgs_per_county, pois_per_county}) {
    if (r.first < 1 || r.second < r.first) throw ValidationError("per-county unit ranges must be positive and ordered");
  }
  if (groups.empty()) throw ValidationError("at least one POI group is required");
  if (group_mix.size() != groups.size()) throw ValidationError("group mix must have one weight per group");
  if (std::any_of(group_mix.begin(), group_mix.end(), [](double m) { return !(m >= 0.0); })) {
    throw ValidationError("group mix weights must be non-negative");
  }
  if (n_weeks < 1) throw ValidationError("at least one week is required");
  if (!(grid_spacing_km > 0.0 && scatter_km > 0.0)) throw ValidationError("geometry scales must be positive");
  if (!(noncomplier_rate >= 0.0 && noncomplier_rate <= 1.0)) throw ValidationError("non-complier rate must lie in [0, 1]");
  if (!planted.theta.empty()) {
    if (planted.groups != groups) throw ValidationError("planted parameters use different groups");
    if (planted.covariates.n_demographics() != demographic_names.size()) {
      throw ValidationError("planted parameters use a different covariate layout");
    }
    if (planted.n_regimes() != static_cast<int>(schedule.size())) {
      throw ValidationError("planted parameters use a different number of threshold regimes");
    }
  }
}

ModelParams default_planted_params(const WorldConfig& config) {
  CovariateLayout layout(config.demographic_names, config.groups, true);
  ModelParams p(ModelKind::kPairwise, config.groups, layout, static_cast<int>(config.schedule.size()));
  p.theta[p.beta0_index()] = -2.0;
  for (int v = 0; v < p.n_variants(); ++v) {
    const bool small = v >= p.n_regimes();
    p.theta[p.beta1_index(v)] = small ? 0.02 : 0.04;
    p.theta[p.beta2_index(v)] = small ? -0.01 : -0.03;
  }
  p.theta[p.beta3_index(0)] = -0.8;  // log1p distance
  p.theta[p.beta3_index(1)] = 0.5;   // log devices
  for (std::size_t d = 0; d < p.covariates.n_demographics(); ++d) {
    p.theta[p.beta3_index(2 + d)] = d % 2 == 0 ? 0.1 : -0.05;
  }
  p.theta[p.beta3_index(2 + p.covariates.n_demographics())] = 0.2;  // log area
  const std::array<double, 4> base{0.0, -0.3, 0.2, -0.5};
  const std::array<double, 4> tau_pr{1.15, 1.25, 1.35, 1.45};
  const std::array<double, 4> tau_rp{1.05, 1.10, 1.15, 1.10};
  const std::array<double, 4> tau_rr{1.30, 1.40, 1.55, 1.60};
  for (int g = 0; g < static_cast<int>(p.groups.size()); ++g) {
    const auto q = static_cast<std::size_t>(g) % 4;
    const double b = base[q];
    p.theta[p.beta_tt_index(g, Condition::kPP)] = b;
    p.theta[p.beta_tt_index(g, Condition::kPR)] = b + std::log(tau_pr[q]);
    p.theta[p.beta_tt_index(g, Condition::kRP)] = b + std::log(tau_rp[q]);
    p.theta[p.beta_tt_index(g, Condition::kRR)] = b + std::log(tau_rr[q]);
  }
  p.theta[p.log_alpha1_index()] = std::log(0.02);
  p.theta[p.log_alpha2_index()] = std::log(1.0);
  return p;
}

const AssignmentRecord* SyntheticWorld::record(int week, int county) const {
  const std::size_t key = static_cast<std::size_t>(week) * data.counties.size() + county;
  if (key >= record_index.size() || record_index[key] < 0) return nullptr;
  return &assignments[record_index[key]];
}

SyntheticWorld generate_world(const WorldConfig& config) {
  config.validate();
  SyntheticWorld world;
  world.schedule = config.schedule;
  world.planted = config.planted.theta.empty() ? default_planted_params(config) : config.planted;
  auto& data = world.data;
  const int n = config.n_counties;

  // Geography: jittered grid, Delaunay adjacency.
  CounterRng geo(config.seed, RngPurpose::kWorld, kGeometry);
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<std::pair<double, double>> centers;
  for (int c = 0; c < n; ++c) {
    const double jitter = 0.25 * config.grid_spacing_km;
    const double x = (c % cols) * config.grid_spacing_km + geo.uniform(-jitter, jitter);
    const double y = (c / cols) * config.grid_spacing_km + geo.uniform(-jitter, jitter);
    centers.emplace_back(x, y);
  }
  data.adjacency = delaunay_adjacency(centers);

  CounterRng pop(config.seed, RngPurpose::kWorld, kPopulation);
  const int n_small = static_cast<int>(std::lround(config.small_fraction * n));
  std::vector<int> order(n);
  for (int c = 0; c < n; ++c) order[c] = c;
  for (int i = n; i > 1; --i) std::swap(order[i - 1], order[pop.below(static_cast<std::uint64_t>(i))]);
  std::vector<bool> small(n, false);
  for (int i = 0; i < n_small; ++i) small[order[i]] = true;
  for (int c = 0; c < n; ++c) {
    County county;
    county.id = fmt::format("C{:03d}", c);
    county.name = fmt::format("County {}", c);
    county.population = small[c] ? static_cast<std::int64_t>(std::exp(pop.uniform(std::log(20000.0), std::log(100000.0))))
                                 : static_cast<std::int64_t>(std::exp(pop.uniform(std::log(120000.0), std::log(2e6))));
    data.counties.push_back(county);
  }

  data.groups = config.groups;
  data.demographic_names = config.demographic_names;
  for (int w = 0; w < config.n_weeks; ++w) data.weeks.push_back(config.first_week.plus_days(7 * w));

  // CBGs and POIs scattered around each center.
  std::vector<double> base_devices;
  for (int c = 0; c < n; ++c) {
    CounterRng units(config.seed, RngPurpose::kWorld, kUnits + static_cast<std::uint64_t>(c));
    auto cbg_range = config.cbgs_per_county;
    auto poi_range = config.pois_per_county;
    if (small[c]) {
      cbg_range.second = std::max(cbg_range.first, (cbg_range.first + cbg_range.second) / 2);
      poi_range.second = std::max(poi_range.first, (poi_range.first + poi_range.second) / 2);
    }
    const int n_cbg = uniform_int(units, cbg_range);
    const int n_poi = uniform_int(units, poi_range);
    const auto [cx, cy] = centers[c];
    for (int i = 0; i < n_cbg; ++i) {
      Cbg cbg;
      cbg.id = fmt::format("C{:03d}-B{:03d}", c, i);
      cbg.county = c;
      cbg.location = to_latlon(cx + units.normal(0.0, config.scatter_km), cy + units.normal(0.0, config.scatter_km));
      for (std::size_t d = 0; d < config.demographic_names.size(); ++d) {
        cbg.demographics.push_back(std::round(units.normal() * 1e4) / 1e4);
      }
      data.cbgs.push_back(std::move(cbg));
      base_devices.push_back(std::exp(units.normal(5.5, 0.4)));
    }
    for (int j = 0; j < n_poi; ++j) {
      Poi poi;
      poi.id = fmt::format("C{:03d}-P{:03d}", c, j);
      poi.county = c;
      poi.location = to_latlon(cx + units.normal(0.0, config.scatter_km), cy + units.normal(0.0, config.scatter_km));
      poi.group = draw_group(units, config.group_mix);
      poi.area_sqft = std::round(std::exp(units.normal(8.0, 0.6)));
      data.pois.push_back(std::move(poi));
    }
  }
  data.devices.assign(data.weeks.size() * data.cbgs.size(), 0);
  for (std::size_t w = 0; w < data.weeks.size(); ++w) {
    CounterRng dev(config.seed, RngPurpose::kWorld, (std::uint64_t{1} << 32) + w);
    for (std::size_t i = 0; i < data.cbgs.size(); ++i) {
      data.devices[w * data.cbgs.size() + i] =
          std::max<std::int64_t>(1, std::llround(base_devices[i] * std::exp(dev.normal(0.0, 0.05))));
    }
  }

  // Metrics for one week before the study window through its end.
  const auto& mp = config.metrics;
  CounterRng met(config.seed, RngPurpose::kWorld, kMetrics);
  const ThresholdRegime& reference = config.schedule.regimes().front();
  for (int c = 0; c < n; ++c) {
    const double level = met.uniform(mp.level_low, mp.level_high);
    double s = level + met.normal(0.0, mp.innovation_sd);
    for (int w = -1; w < config.n_weeks; ++w) {
      if (w > -1) s = level + mp.persistence * (s - level) + met.normal(0.0, mp.innovation_sd);
      CountyWeekMetrics m;
      m.county = c;
      m.week = config.first_week.plus_days(7 * w);
      m.case_rate = std::max(0.0, std::round((reference.cr_red + s + met.normal(0.0, mp.noise_sd)) * 1e3) / 1e3);
      m.test_positivity =
          clamp_percent(std::round((reference.tp_red + mp.tp_loading * s + met.normal(0.0, mp.noise_sd)) * 1e3) / 1e3);
      const double he = clamp_percent(
          std::round((m.test_positivity + mp.he_offset + met.normal(0.0, mp.noise_sd)) * 1e3) / 1e3);
      if (!small[c]) m.health_equity = he;
      data.metrics.push_back(m);
    }
  }
  data.finalize();

  // Tiers follow Z, with optional injected non-compliance.
  for (int w = 0; w < config.n_weeks; ++w) {
    for (int c = 0; c < n; ++c) {
      const Date week = data.weeks[w];
      const auto z = compute_z(*data.find_metrics(c, week), *data.find_metrics(c, week.plus_days(-7)),
                               data.counties[c].size_class(), config.schedule.at(week));
      Tier tier = assign_tier_from_z(z.z);
      const std::uint64_t stream = static_cast<std::uint64_t>(w) * n + c;
      if (config.noncomplier_rate > 0.0 &&
          counter_uniform(mix_seed(config.seed, kCompliance), RngPurpose::kWorld, stream) < config.noncomplier_rate) {
        tier = tier == Tier::kPurple ? Tier::kRed : Tier::kPurple;
        world.noncompliers.emplace_back(c, week);
      }
      data.tiers.push_back({c, week, tier});
    }
  }
  data.finalize();
  world.assignments = compute_assignments(data, config.schedule);
  world.record_index.assign(data.weeks.size() * data.counties.size(), -1);
  for (int k = 0; k < static_cast<int>(world.assignments.size()); ++k) {
    const auto& r = world.assignments[k];
    world.record_index[static_cast<std::size_t>(data.week_index(r.week)) * n + r.county] = k;
  }

  for (int w = 0; w < config.n_weeks; ++w) {
    for (auto [a, b] : data.adjacency.pairs()) {
      const auto* ra = world.record(w, a);
      const auto* rb = world.record(w, b);
      ++world.condition_support[static_cast<int>(condition_of(ra->tier, rb->tier))];
      ++world.condition_support[static_cast<int>(condition_of(rb->tier, ra->tier))];
    }
  }
  if (std::any_of(world.condition_support.begin(), world.condition_support.end(), [](auto v) { return v == 0; })) {
    spdlog::warn("synthetic world lacks support for some treatment condition: PP={} PR={} RP={} RR={}",
                 world.condition_support[0], world.condition_support[1], world.condition_support[2],
                 world.condition_support[3]);
  }
  return world;
}

PlantedPoint planted_point(const SyntheticWorld& world, int week, int cbg, int poi) {
  const auto& data = world.data;
  const auto& p = world.planted;
  const auto& c = data.cbgs[cbg];
  const auto& q = data.pois[poi];
  PlantedPoint out;
  out.x.resize(p.covariates.size());
  const double d = distance_km(c.location, q.location);
  p.covariates.raw_row(d, static_cast<double>(data.device_count(week, cbg)), c.demographics, q.area_sqft, q.group,
                       out.x);
  p.covariates.standardize(out.x);
  const auto* ra = world.record(week, c.county);
  const auto* rb = world.record(week, q.county);
  const int nr = p.n_regimes();
  out.dp.x = out.x;
  out.dp.z_cbg = ra->z;
  out.dp.z_poi = rb->z;
  out.dp.variant_cbg = ModelParams::variant_of(ra->size, std::min(ra->regime, nr - 1), nr);
  out.dp.variant_poi = ModelParams::variant_of(rb->size, std::min(rb->regime, nr - 1), nr);
  out.dp.group = q.group;
  out.dp.condition = condition_of(ra->tier, rb->tier);
  out.dp.distance_km = d;
  return out;
}

void simulate_visits(SyntheticWorld& world, std::uint64_t seed) {
  auto& data = world.data;
  data.edges.clear();
  const std::uint64_t n_cbgs = data.cbgs.size();
  const std::uint64_t n_pois = data.pois.size();
  for (int w = 0; w < static_cast<int>(data.weeks.size()); ++w) {
    for (int i = 0; i < static_cast<int>(n_cbgs); ++i) {
      const int a = data.cbgs[i].county;
      std::vector<int> targets{a};
      for (int b : data.adjacency.neighbors(a)) targets.push_back(b);
      for (int b : targets) {
        for (int j : data.pois_in(b)) {
          const auto pt = planted_point(world, w, i, j);
          const double pi = exposure_prob(world.planted, pt.dp.distance_km);
          const double lambda = poisson_rate(world.planted, pt.dp);
          const std::uint64_t id = (static_cast<std::uint64_t>(w) * n_cbgs + i) * n_pois + j;
          CounterRng rng(seed, RngPurpose::kVisits, id);
          if (!rng.bernoulli(pi)) continue;
          const auto y = rng.poisson(lambda);
          if (y > 0) data.edges.push_back({w, i, j, static_cast<std::int32_t>(y)});
        }
      }
    }
  }
  data.finalize();
}

SyntheticWorld synthesize(const WorldConfig& config) {
  auto world = generate_world(config);
  simulate_visits(world, config.seed);
  return world;
}

}  // namespace spill
