#include "spillover/serialize.hpp"

#include <fstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "spillover/csv.hpp"
#include "spillover/error.hpp"

namespace spill {

namespace {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string_view kind_name(ModelKind k) { return k == ModelKind::kWithin ? "within" : "pairwise"; }

ModelKind parse_kind(std::string_view s) {
  if (s == "pairwise") return ModelKind::kPairwise;
  if (s == "within") return ModelKind::kWithin;
  throw ValidationError(fmt::format("unknown model kind '{}'", s));
}

std::string_view drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::kRetained: return "retained";
    case DropReason::kExcludedWeek: return "excluded_week";
    case DropReason::kNoAssignment: return "no_assignment";
    case DropReason::kTierNotModeled: return "tier_not_modeled";
    case DropReason::kNonCompliant: return "non_compliant";
    case DropReason::kOutsideBandwidth: return "outside_bandwidth";
  }
  return "?";
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

// ------------------------------------------------------------------ model

Json to_json(const ModelParams& p) {
  Json j;
  j["kind"] = kind_name(p.kind);
  j["groups"] = p.groups;
  j["n_regimes"] = p.n_regimes();
  std::vector<std::string> demographics;
  for (std::size_t k = 0; k < p.covariates.n_demographics(); ++k) {
    demographics.push_back(p.covariates.names()[2 + k].substr(5));
  }
  j["covariates"] = {{"names", p.covariates.names()},
                     {"demographics", demographics},
                     {"group_onehot", p.covariates.group_onehot()},
                     {"mean", p.covariates.mean},
                     {"sd", p.covariates.sd}};
  j["theta"] = p.theta;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < p.size(); ++k) names.push_back(p.parameter_name(k));
  j["parameter_names"] = names;
  std::vector<int> identified(p.identified.begin(), p.identified.end());
  j["identified"] = identified;
  return j;
}

ModelParams model_from_json(const Json& j) {
  try {
    const auto groups = j.at("groups").get<std::vector<std::string>>();
    const auto& cov = j.at("covariates");
    CovariateLayout layout(cov.at("demographics").get<std::vector<std::string>>(), groups,
                           cov.at("group_onehot").get<bool>());
    layout.mean = cov.at("mean").get<std::vector<double>>();
    layout.sd = cov.at("sd").get<std::vector<double>>();
    if (layout.mean.size() != layout.size() || layout.sd.size() != layout.size()) {
      throw ValidationError("covariate standardization has the wrong length");
    }
    ModelParams p(parse_kind(j.at("kind").get<std::string>()), groups, std::move(layout), j.at("n_regimes").get<int>());
    auto theta = j.at("theta").get<std::vector<double>>();
    if (theta.size() != p.theta.size()) {
      throw ValidationError(fmt::format("model has {} parameters, expected {}", theta.size(), p.theta.size()));
    }
    p.theta = std::move(theta);
    if (j.contains("identified")) {
      const auto id = j.at("identified").get<std::vector<int>>();
      if (id.size() != p.identified.size()) throw ValidationError("identification flags have the wrong length");
      for (std::size_t k = 0; k < id.size(); ++k) p.identified[k] = static_cast<std::uint8_t>(id[k] != 0);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed model JSON: {}", e.what()));
  }
}

Json to_json(const Summary& s) { return {{"mean", s.mean}, {"sd", s.sd}, {"lo", s.lo}, {"hi", s.hi}}; }

Json to_json(const FitResult& r) {
  Json j;
  j["params"] = to_json(r.params);
  j["clamped_predictors"] = r.clamped;
  Json trace = Json::array();
  for (const auto& e : r.trace) {
    trace.push_back({{"epoch", e.epoch},
                     {"loss", e.loss},
                     {"learning_rate", e.learning_rate},
                     {"sampled_zeros", e.sampled_zeros},
                     {"theta", e.theta}});
  }
  j["trace"] = std::move(trace);
  return j;
}

Json to_json(const BootstrapResult& r) {
  Json j;
  j["mode"] = r.mode == BootstrapMode::kFull ? "full" : "sampling-only";
  j["trial_count"] = r.trials.size();
  j["layout"] = to_json(r.layout);
  j["trials"] = r.trials;
  Json params = Json::array();
  for (std::size_t k = 0; k < r.parameters.size(); ++k) {
    auto s = to_json(r.parameters[k]);
    s["name"] = r.layout.parameter_name(k);
    params.push_back(std::move(s));
  }
  j["parameters"] = std::move(params);
  return j;
}

BootstrapResult bootstrap_from_json(const Json& j) {
  try {
    BootstrapResult r;
    r.mode = j.at("mode").get<std::string>() == "full" ? BootstrapMode::kFull : BootstrapMode::kSamplingOnly;
    r.layout = model_from_json(j.at("layout"));
    r.trials = j.at("trials").get<std::vector<std::vector<double>>>();
    for (const auto& t : r.trials) {
      if (t.size() != r.layout.size()) throw ValidationError("bootstrap trial has the wrong parameter count");
    }
    std::vector<double> column(r.trials.size());
    r.parameters.resize(r.layout.size());
    for (std::size_t k = 0; k < r.layout.size(); ++k) {
      for (std::size_t t = 0; t < r.trials.size(); ++t) column[t] = r.trials[t][k];
      r.parameters[k] = summarize(column);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed bootstrap JSON: {}", e.what()));
  }
}

// ------------------------------------------------------------------ assignment

Json to_json(const AssignmentRecord& r, const MobilityDataset& data) {
  Json j;
  j["county"] = data.counties[r.county].id;
  j["week"] = r.week.str();
  j["size"] = r.size == SizeClass::kLarge ? "large" : "small";
  j["regime"] = r.regime;
  j["z"] = r.z;
  j["z1"] = optional_number(r.z1);
  j["z2"] = optional_number(r.z2);
  j["tier"] = to_string(r.tier);
  j["compliant"] = r.compliant;
  j["z1_argmax"] = r.trigger.z1_argmax.str();
  j["z2_argmax"] = r.trigger.z2_argmax ? Json(r.trigger.z2_argmax->str()) : Json(nullptr);
  j["min_branch"] = r.trigger.min_branch ? Json(*r.trigger.min_branch == MinBranch::kZ1 ? "Z1" : "Z2") : Json(nullptr);
  return j;
}

Json to_json(const FilteredDataset& f, const MobilityDataset& data) {
  Json j;
  j["config"] = to_json(f.config);
  Json conds;
  for (int c = 0; c < kNumConditions; ++c) {
    const auto& cc = f.counts[c];
    Json pairs = Json::array();
    for (const auto& [key, count] : cc.pair_nonzero) {
      pairs.push_back({{"cbg_county", data.counties[key.first].id},
                       {"poi_county", data.counties[key.second].id},
                       {"nonzero", count}});
    }
    conds[std::string(to_string(static_cast<Condition>(c)))] = {
        {"dense", cc.dense}, {"nonzero", cc.nonzero}, {"visits", cc.visits}, {"pairs", std::move(pairs)}};
  }
  j["conditions"] = std::move(conds);
  j["dense_total"] = f.dense_size();
  j["nonzero_total"] = f.nonzero_size();
  std::map<std::string, std::int64_t> status;
  for (int w = 0; w < static_cast<int>(data.weeks.size()); ++w) {
    for (int c = 0; c < static_cast<int>(data.counties.size()); ++c) ++status[std::string(drop_reason_name(f.status(w, c)))];
  }
  j["county_weeks"] = status;
  return j;
}

Json to_json(const TriggerHistogram& h) {
  return {{"records", h.records}, {"z1_argmax", h.z1_argmax}, {"z2_argmax", h.z2_argmax}, {"min_branch", h.min_branch}};
}

// ------------------------------------------------------------------ counterfactual

Json to_json(const PhiTable& phi, const MobilityDataset& data) {
  Json entries = Json::array();
  for (int a = 0; a < static_cast<int>(phi.n_counties()); ++a) {
    for (int b = 0; b < static_cast<int>(phi.n_counties()); ++b) {
      if (!phi.has(a, b)) continue;
      for (int g = 0; g < static_cast<int>(phi.n_groups()); ++g) {
        entries.push_back(
            {{"group", data.groups[g]}, {"a", data.counties[a].id}, {"b", data.counties[b].id}, {"phi", phi(g, a, b)}});
      }
    }
  }
  return {{"groups", data.groups}, {"entries", std::move(entries)}};
}

Json to_json(const CountyPartition& p, const MobilityDataset& data) {
  Json j;
  j["k"] = p.k;
  j["cut"] = p.cut;
  j["max_part_size"] = p.max_part_size;
  j["average_r_m"] = p.average_r_m;
  Json counties = Json::array();
  for (std::size_t a = 0; a < p.parts.size(); ++a) {
    Json row{{"county", data.counties[a].id}, {"part", p.parts[a]}};
    if (a < p.r_m.size()) row["r_m"] = optional_number(p.r_m[a]);
    counties.push_back(std::move(row));
  }
  j["counties"] = std::move(counties);
  return j;
}

Json to_json(const EfficacyReport& report, const MobilityDataset& data) {
  Json j;
  j["scenario"] = to_string(report.scenario.kind);
  j["week"] = report.scenario.week ? Json(report.scenario.week->str()) : Json(nullptr);
  Json subsets = Json::array();
  for (const auto& s : report.subsets) {
    auto row = to_json(s.summary);
    row["subset"] = s.subset;
    row["counties"] = s.counties;
    row["excluded_county_trials"] = s.excluded;
    subsets.push_back(std::move(row));
  }
  j["subsets"] = std::move(subsets);
  Json counties = Json::array();
  for (const auto& c : report.counties) {
    auto row = to_json(c.summary);
    row["county"] = data.counties[c.county].id;
    row["undefined_trials"] = c.undefined_trials;
    counties.push_back(std::move(row));
  }
  j["counties"] = std::move(counties);
  return j;
}

// ------------------------------------------------------------------ configs

Json to_json(const RegimeSchedule& schedule) {
  Json out = Json::array();
  for (const auto& r : schedule.regimes()) {
    out.push_back({{"effective_from", r.effective_from.str()},
                   {"cr_red", r.cr_red},
                   {"tp_red", r.tp_red},
                   {"he_red", r.he_red},
                   {"tp_orange", r.tp_orange},
                   {"he_orange", r.he_orange}});
  }
  return out;
}

RegimeSchedule schedule_from_json(const Json& j) {
  std::vector<ThresholdRegime> regimes;
  for (const auto& r : j) {
    ThresholdRegime t;
    t.effective_from = Date::parse(r.at("effective_from").get<std::string>());
    read_opt(r, "cr_red", t.cr_red);
    read_opt(r, "tp_red", t.tp_red);
    read_opt(r, "he_red", t.he_red);
    read_opt(r, "tp_orange", t.tp_orange);
    read_opt(r, "he_orange", t.he_orange);
    regimes.push_back(t);
  }
  return RegimeSchedule(std::move(regimes));
}

void update_from_json(WorldConfig& c, const Json& j) {
  try {
    read_opt(j, "n_counties", c.n_counties);
    read_opt(j, "small_fraction", c.small_fraction);
    read_opt(j, "cbgs_per_county", c.cbgs_per_county);
    read_opt(j, "pois_per_county", c.pois_per_county);
    read_opt(j, "groups", c.groups);
    read_opt(j, "group_mix", c.group_mix);
    read_opt(j, "demographic_names", c.demographic_names);
    if (j.contains("first_week")) c.first_week = Date::parse(j.at("first_week").get<std::string>());
    read_opt(j, "n_weeks", c.n_weeks);
    read_opt(j, "grid_spacing_km", c.grid_spacing_km);
    read_opt(j, "scatter_km", c.scatter_km);
    read_opt(j, "noncomplier_rate", c.noncomplier_rate);
    read_opt(j, "seed", c.seed);
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      read_opt(m, "level_low", c.metrics.level_low);
      read_opt(m, "level_high", c.metrics.level_high);
      read_opt(m, "persistence", c.metrics.persistence);
      read_opt(m, "innovation_sd", c.metrics.innovation_sd);
      read_opt(m, "tp_loading", c.metrics.tp_loading);
      read_opt(m, "he_offset", c.metrics.he_offset);
      read_opt(m, "noise_sd", c.metrics.noise_sd);
    }
    if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
    if (j.contains("planted")) c.planted = model_from_json(j.at("planted"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed world config: {}", e.what()));
  }
}

Json to_json(const WorldConfig& c) {
  Json j;
  j["n_counties"] = c.n_counties;
  j["small_fraction"] = c.small_fraction;
  j["cbgs_per_county"] = c.cbgs_per_county;
  j["pois_per_county"] = c.pois_per_county;
  j["groups"] = c.groups;
  j["group_mix"] = c.group_mix;
  j["demographic_names"] = c.demographic_names;
  j["first_week"] = c.first_week.str();
  j["n_weeks"] = c.n_weeks;
  j["grid_spacing_km"] = c.grid_spacing_km;
  j["scatter_km"] = c.scatter_km;
  j["noncomplier_rate"] = c.noncomplier_rate;
  j["seed"] = c.seed;
  j["metrics"] = {{"level_low", c.metrics.level_low},         {"level_high", c.metrics.level_high},
                  {"persistence", c.metrics.persistence},     {"innovation_sd", c.metrics.innovation_sd},
                  {"tp_loading", c.metrics.tp_loading},       {"he_offset", c.metrics.he_offset},
                  {"noise_sd", c.metrics.noise_sd}};
  j["schedule"] = to_json(c.schedule);
  if (!c.planted.theta.empty()) j["planted"] = to_json(c.planted);
  return j;
}

void update_from_json(FilterConfig& c, const Json& j) {
  try {
    read_opt(j, "bandwidth", c.bandwidth);
    if (j.contains("conditions")) {
      c.conditions = {false, false, false, false};
      for (const auto& name : j.at("conditions")) c.conditions[static_cast<int>(parse_condition(name.get<std::string>()))] = true;
    }
    if (j.contains("excluded_weeks")) {
      c.excluded_weeks.clear();
      for (const auto& w : j.at("excluded_weeks")) c.excluded_weeks.push_back(Date::parse(w.get<std::string>()));
    }
    if (j.contains("scope")) {
      const auto s = j.at("scope").get<std::string>();
      if (s == "cross-county") {
        c.scope = FilterScope::kCrossCounty;
      } else if (s == "within-county") {
        c.scope = FilterScope::kWithinCounty;
      } else {
        throw ValidationError(fmt::format("unknown filter scope '{}'", s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed filter config: {}", e.what()));
  }
}

Json to_json(const FilterConfig& c) {
  Json conds = Json::array();
  for (int k = 0; k < kNumConditions; ++k) {
    if (c.conditions[k]) conds.push_back(to_string(static_cast<Condition>(k)));
  }
  Json weeks = Json::array();
  for (auto w : c.excluded_weeks) weeks.push_back(w.str());
  return {{"bandwidth", c.bandwidth},
          {"conditions", std::move(conds)},
          {"excluded_weeks", std::move(weeks)},
          {"scope", c.scope == FilterScope::kCrossCounty ? "cross-county" : "within-county"}};
}

void update_from_json(FitConfig& c, const Json& j) {
  try {
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "steps_per_epoch", c.steps_per_epoch);
    read_opt(j, "learning_rate", c.learning_rate);
    read_opt(j, "final_lr_fraction", c.final_lr_fraction);
    read_opt(j, "tail_fraction", c.tail_fraction);
    read_opt(j, "sample_fraction", c.sample_fraction);
    read_opt(j, "seed", c.seed);
    read_opt(j, "workers", c.workers);
    if (j.contains("weighting")) c.weighting = parse_weighting(j.at("weighting").get<std::string>());
    if (j.contains("optimizer")) {
      const auto o = j.at("optimizer").get<std::string>();
      if (o == "adam") {
        c.optimizer = Optimizer::kAdam;
      } else if (o == "gd") {
        c.optimizer = Optimizer::kGradientDescent;
      } else {
        throw ValidationError(fmt::format("unknown optimizer '{}'", o));
      }
    }
    if (j.contains("redraw")) {
      const auto r = j.at("redraw").get<std::string>();
      if (r == "per-epoch") {
        c.redraw = NegativeRedraw::kPerEpoch;
      } else if (r == "per-trial") {
        c.redraw = NegativeRedraw::kPerTrial;
      } else {
        throw ValidationError(fmt::format("unknown redraw mode '{}'", r));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed fit config: {}", e.what()));
  }
}

Json to_json(const FitConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"learning_rate", c.learning_rate},
          {"final_lr_fraction", c.final_lr_fraction},
          {"tail_fraction", c.tail_fraction},
          {"optimizer", c.optimizer == Optimizer::kAdam ? "adam" : "gd"},
          {"sample_fraction", c.sample_fraction},
          {"weighting", to_string(c.weighting)},
          {"redraw", c.redraw == NegativeRedraw::kPerEpoch ? "per-epoch" : "per-trial"},
          {"seed", c.seed},
          {"workers", c.workers}};
}

Json ground_truth_json(const SyntheticWorld& world) {
  Json j;
  j["planted"] = to_json(world.planted);
  j["schedule"] = to_json(world.schedule);
  Json records = Json::array();
  for (const auto& r : world.assignments) records.push_back(to_json(r, world.data));
  j["assignments"] = std::move(records);
  Json flagged = Json::array();
  for (const auto& [c, w] : world.noncompliers) flagged.push_back({{"county", world.data.counties[c].id}, {"week", w.str()}});
  j["noncompliers"] = std::move(flagged);
  Json support;
  for (int c = 0; c < kNumConditions; ++c) support[std::string(to_string(static_cast<Condition>(c)))] = world.condition_support[c];
  j["condition_support"] = std::move(support);
  return j;
}

// ------------------------------------------------------------------ hashing

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 digest failed");
  }
  std::string out;
  out.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) out += fmt::format("{:02x}", digest[k]);
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace spill
