#include "spillover/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "spillover/csv.hpp"
#include "spillover/error.hpp"

namespace spill {

namespace fs = std::filesystem;

namespace {

int data_week(const MobilityDataset& data, Date week) {
  return static_cast<int>(std::lower_bound(data.weeks.begin(), data.weeks.end(), week) - data.weeks.begin());
}

}  // namespace

MobilityDataset load_dataset(const fs::path& dir) {
  MobilityDataset data;

  const auto counties = CsvTable::read(dir / "counties.csv");
  {
    const auto c_id = counties.column("id"), c_name = counties.column("name"), c_pop = counties.column("population");
    for (const auto& r : counties.rows()) {
      data.counties.push_back({r[c_id], r[c_name], parse_int(r[c_pop], "population")});
    }
  }
  std::map<std::string, int, std::less<>> county_ids;
  for (int c = 0; c < static_cast<int>(data.counties.size()); ++c) {
    if (!county_ids.emplace(data.counties[c].id, c).second) {
      throw ValidationError(fmt::format("duplicate county id '{}'", data.counties[c].id));
    }
  }
  auto county = [&](const std::string& id, const CsvTable& t) {
    auto it = county_ids.find(id);
    if (it == county_ids.end()) throw ValidationError(fmt::format("{}: unknown county '{}'", t.source(), id));
    return it->second;
  };

  const auto adjacency = CsvTable::read(dir / "adjacency.csv");
  data.adjacency = AdjacencyMap(data.counties.size());
  {
    const auto a = adjacency.column("id_a"), b = adjacency.column("id_b");
    for (const auto& r : adjacency.rows()) data.adjacency.add(county(r[a], adjacency), county(r[b], adjacency));
  }

  const auto metrics = CsvTable::read(dir / "metrics.csv");
  {
    const auto c = metrics.column("county"), w = metrics.column("week"), cr = metrics.column("cr"),
               tp = metrics.column("tp"), he = metrics.column("he");
    for (const auto& r : metrics.rows()) {
      CountyWeekMetrics m;
      m.county = county(r[c], metrics);
      m.week = Date::parse(r[w]);
      m.case_rate = parse_double(r[cr], "cr");
      m.test_positivity = parse_double(r[tp], "tp");
      if (!r[he].empty()) m.health_equity = parse_double(r[he], "he");
      data.metrics.push_back(m);
    }
  }

  std::set<Date> weeks;
  const auto tiers = CsvTable::read(dir / "tiers.csv");
  {
    const auto c = tiers.column("county"), w = tiers.column("week"), t = tiers.column("tier");
    for (const auto& r : tiers.rows()) {
      TierRecord rec{county(r[c], tiers), Date::parse(r[w]), parse_tier(r[t])};
      weeks.insert(rec.week);
      data.tiers.push_back(rec);
    }
  }

  const auto cbgs = CsvTable::read(dir / "cbgs.csv");
  {
    const auto id = cbgs.column("id"), c = cbgs.column("county"), lat = cbgs.column("lat"), lon = cbgs.column("lon");
    std::vector<std::size_t> demo_cols;
    for (std::size_t k = 0; k < cbgs.header().size(); ++k) {
      if (k != id && k != c && k != lat && k != lon) {
        demo_cols.push_back(k);
        data.demographic_names.push_back(cbgs.header()[k]);
      }
    }
    for (const auto& r : cbgs.rows()) {
      Cbg cbg;
      cbg.id = r[id];
      cbg.county = county(r[c], cbgs);
      cbg.location = {parse_double(r[lat], "lat"), parse_double(r[lon], "lon")};
      for (auto k : demo_cols) cbg.demographics.push_back(parse_double(r[k], cbgs.header()[k]));
      data.cbgs.push_back(std::move(cbg));
    }
  }

  const auto pois = CsvTable::read(dir / "pois.csv");
  {
    const auto id = pois.column("id"), c = pois.column("county"), lat = pois.column("lat"), lon = pois.column("lon"),
               g = pois.column("group"), area = pois.column("area_sqft");
    std::set<std::string> groups;
    for (const auto& r : pois.rows()) groups.insert(r[g]);
    data.groups.assign(groups.begin(), groups.end());
    for (const auto& r : pois.rows()) {
      Poi p;
      p.id = r[id];
      p.county = county(r[c], pois);
      p.location = {parse_double(r[lat], "lat"), parse_double(r[lon], "lon")};
      p.group = static_cast<int>(std::lower_bound(data.groups.begin(), data.groups.end(), r[g]) - data.groups.begin());
      p.area_sqft = parse_double(r[area], "area_sqft");
      data.pois.push_back(std::move(p));
    }
  }
  for (const auto& loc : data.cbgs) {
    if (std::abs(loc.location.lat) > 90 || std::abs(loc.location.lon) > 180) {
      throw ValidationError(fmt::format("CBG '{}' has out-of-range coordinates", loc.id));
    }
  }
  for (const auto& loc : data.pois) {
    if (std::abs(loc.location.lat) > 90 || std::abs(loc.location.lon) > 180) {
      throw ValidationError(fmt::format("POI '{}' has out-of-range coordinates", loc.id));
    }
  }

  std::map<std::string, int, std::less<>> cbg_ids, poi_ids;
  for (int i = 0; i < static_cast<int>(data.cbgs.size()); ++i) cbg_ids.emplace(data.cbgs[i].id, i);
  for (int j = 0; j < static_cast<int>(data.pois.size()); ++j) poi_ids.emplace(data.pois[j].id, j);
  auto lookup = [](const auto& ids, const std::string& id, const CsvTable& t, const char* what) {
    auto it = ids.find(id);
    if (it == ids.end()) throw ValidationError(fmt::format("{}: unknown {} '{}'", t.source(), what, id));
    return it->second;
  };

  struct RawEdge {
    Date week;
    int cbg, poi;
    std::int32_t visits;
  };
  std::vector<RawEdge> raw_edges;
  const auto edges = CsvTable::read(dir / "edges.csv");
  {
    const auto w = edges.column("week"), c = edges.column("cbg"), p = edges.column("poi"), v = edges.column("visits");
    for (const auto& r : edges.rows()) {
      RawEdge e{Date::parse(r[w]), lookup(cbg_ids, r[c], edges, "CBG"), lookup(poi_ids, r[p], edges, "POI"),
                static_cast<std::int32_t>(parse_int(r[v], "visits"))};
      if (e.visits < 0) throw ValidationError("edges.csv: negative visit count");
      if (e.visits == 0) continue;  // zeros are implicit
      weeks.insert(e.week);
      raw_edges.push_back(e);
    }
  }

  struct RawDevice {
    Date week;
    int cbg;
    std::int64_t devices;
  };
  std::vector<RawDevice> raw_devices;
  const auto devices = CsvTable::read(dir / "devices.csv");
  {
    const auto c = devices.column("cbg"), w = devices.column("week"), d = devices.column("devices");
    for (const auto& r : devices.rows()) {
      RawDevice rd{Date::parse(r[w]), lookup(cbg_ids, r[c], devices, "CBG"), parse_int(r[d], "devices")};
      if (rd.devices <= 0) throw ValidationError("devices.csv: device counts must be positive");
      weeks.insert(rd.week);
      raw_devices.push_back(rd);
    }
  }

  data.weeks.assign(weeks.begin(), weeks.end());
  for (const auto& e : raw_edges) data.edges.push_back({data_week(data, e.week), e.cbg, e.poi, e.visits});
  data.devices.assign(data.weeks.size() * data.cbgs.size(), 0);
  for (const auto& d : raw_devices) {
    auto& slot = data.devices[static_cast<std::size_t>(data_week(data, d.week)) * data.cbgs.size() + d.cbg];
    if (slot != 0) throw ValidationError("devices.csv: duplicate (cbg, week) record");
    slot = d.devices;
  }
  data.finalize();
  return data;
}

void save_dataset(const MobilityDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  std::string out = "id,name,population\n";
  for (const auto& c : data.counties) out += fmt::format("{},{},{}\n", csv_escape(c.id), csv_escape(c.name), c.population);
  write_file_atomic(dir / "counties.csv", out);

  out = "id_a,id_b\n";
  for (auto [a, b] : data.adjacency.pairs()) {
    out += fmt::format("{},{}\n", csv_escape(data.counties[a].id), csv_escape(data.counties[b].id));
  }
  write_file_atomic(dir / "adjacency.csv", out);

  out = "county,week,cr,tp,he\n";
  for (const auto& m : data.metrics) {
    out += fmt::format("{},{},{},{},{}\n", csv_escape(data.counties[m.county].id), m.week.str(), m.case_rate,
                       m.test_positivity, m.health_equity ? fmt::format("{}", *m.health_equity) : std::string());
  }
  write_file_atomic(dir / "metrics.csv", out);

  out = "county,week,tier\n";
  for (const auto& t : data.tiers) {
    out += fmt::format("{},{},{}\n", csv_escape(data.counties[t.county].id), t.week.str(), to_string(t.tier));
  }
  write_file_atomic(dir / "tiers.csv", out);

  out = "id,county,lat,lon";
  for (const auto& name : data.demographic_names) out += "," + csv_escape(name);
  out += "\n";
  for (const auto& c : data.cbgs) {
    out += fmt::format("{},{},{},{}", csv_escape(c.id), csv_escape(data.counties[c.county].id), c.location.lat,
                       c.location.lon);
    for (double v : c.demographics) out += fmt::format(",{}", v);
    out += "\n";
  }
  write_file_atomic(dir / "cbgs.csv", out);

  out = "id,county,lat,lon,group,area_sqft\n";
  for (const auto& p : data.pois) {
    out += fmt::format("{},{},{},{},{},{}\n", csv_escape(p.id), csv_escape(data.counties[p.county].id),
                       p.location.lat, p.location.lon, csv_escape(data.groups[p.group]), p.area_sqft);
  }
  write_file_atomic(dir / "pois.csv", out);

  out = "week,cbg,poi,visits\n";
  for (const auto& e : data.edges) {
    out += fmt::format("{},{},{},{}\n", data.weeks[e.week].str(), csv_escape(data.cbgs[e.cbg].id),
                       csv_escape(data.pois[e.poi].id), e.visits);
  }
  write_file_atomic(dir / "edges.csv", out);

  out = "cbg,week,devices\n";
  for (std::size_t i = 0; i < data.cbgs.size(); ++i) {
    for (std::size_t w = 0; w < data.weeks.size(); ++w) {
      const auto d = data.device_count(static_cast<int>(w), static_cast<int>(i));
      if (d > 0) out += fmt::format("{},{},{}\n", csv_escape(data.cbgs[i].id), data.weeks[w].str(), d);
    }
  }
  write_file_atomic(dir / "devices.csv", out);
}

}  // namespace spill
