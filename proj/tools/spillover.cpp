#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "spillover/assignment.hpp"
#include "spillover/counterfactual.hpp"
#include "spillover/csv.hpp"
#include "spillover/dataset_io.hpp"
#include "spillover/error.hpp"
#include "spillover/estimator.hpp"
#include "spillover/partition.hpp"
#include "spillover/report.hpp"
#include "spillover/serialize.hpp"
#include "spillover/synth.hpp"

namespace fs = std::filesystem;
using namespace spill;

namespace {

constexpr const char* kToolName = "spillover";

// Everything a subcommand may read. Defaults, then the config file, then flags.
struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  WorldConfig world;
  FilterConfig filter;
  FitConfig fit;
  int trials = 30;
  bool sampling_only = false;
  bool within = false;
  KcutOptions kcut;
  int k = 0;  // 0 picks round(N / 8)
  std::vector<int> ks;
  int random_partitions = 20;
  bool allow_degenerate = false;
  std::string scenario = "lone";
  std::optional<Date> week;
  double bin_width = 0.5;

  Json to_json() const {
    Json j;
    j["seed"] = seed;
    j["workers"] = workers;
    j["world"] = spill::to_json(world);
    j["filter"] = spill::to_json(filter);
    j["fit"] = spill::to_json(fit);
    j["bootstrap"] = {{"trials", trials}, {"mode", sampling_only ? "sampling-only" : "full"}};
    j["model"] = within ? "within" : "pairwise";
    j["partition"] = {{"k", k},
                      {"ks", ks},
                      {"epsilon", kcut.epsilon},
                      {"restarts", kcut.restarts},
                      {"random_partitions", random_partitions},
                      {"allow_degenerate", allow_degenerate}};
    j["efficacy"] = {{"scenario", scenario}, {"week", week ? Json(week->str()) : Json(nullptr)}};
    j["report"] = {{"bin_width", bin_width}};
    return j;
  }

  void apply_file(const Json& j) {
    try {
      if (j.contains("world")) update_from_json(world, j.at("world"));
      if (j.contains("filter")) update_from_json(filter, j.at("filter"));
      if (j.contains("fit")) update_from_json(fit, j.at("fit"));
      if (j.contains("workers")) workers = j.at("workers").get<int>();
      if (j.contains("model")) within = j.at("model").get<std::string>() == "within";
      if (j.contains("bootstrap")) {
        const auto& b = j.at("bootstrap");
        if (b.contains("trials")) trials = b.at("trials").get<int>();
        if (b.contains("mode")) sampling_only = b.at("mode").get<std::string>() == "sampling-only";
      }
      if (j.contains("partition")) {
        const auto& p = j.at("partition");
        if (p.contains("k")) k = p.at("k").get<int>();
        if (p.contains("ks")) ks = p.at("ks").get<std::vector<int>>();
        if (p.contains("epsilon")) kcut.epsilon = p.at("epsilon").get<double>();
        if (p.contains("restarts")) kcut.restarts = p.at("restarts").get<int>();
        if (p.contains("random_partitions")) random_partitions = p.at("random_partitions").get<int>();
        if (p.contains("allow_degenerate")) allow_degenerate = p.at("allow_degenerate").get<bool>();
      }
      if (j.contains("efficacy")) {
        const auto& e = j.at("efficacy");
        if (e.contains("scenario")) scenario = e.at("scenario").get<std::string>();
        if (e.contains("week") && !e.at("week").is_null()) week = Date::parse(e.at("week").get<std::string>());
      }
      if (j.contains("report") && j.at("report").contains("bin_width")) {
        bin_width = j.at("report").at("bin_width").get<double>();
      }
      // A top-level seed drives every seeded stage.
      if (j.contains("seed")) set_seed(j.at("seed").get<std::uint64_t>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(fmt::format("malformed config: {}", e.what()));
    }
  }

  void set_seed(std::uint64_t s) {
    seed = s;
    world.seed = s;
    fit.seed = s;
    kcut.seed = s;
  }

  void set_workers(int w) {
    workers = w;
    fit.workers = w;
    kcut.workers = w;
  }
};

// Raw flag values; only flags that were given override the config.
struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  int workers = 1;
  double bandwidth = 0;
  double sample_frac = 0;
  std::string weighting;
  int trials = 0;
  int epochs = 0;
  double lr = 0;
  int k = 0;
  std::vector<int> ks;
  double epsilon = 0;
  bool allow_degenerate = false;
  bool sampling_only = false;
  bool within = false;
  std::string scenario;
  std::string week;
  std::string data, out, bootstrap, within_bootstrap, model, within_model, partition;
};

struct Context {
  std::string subcommand;
  std::vector<std::string> argv;
  RunConfig config;
  Json inputs = Json::object();
  Json outputs = Json::object();
  Json timing = Json::object();
  fs::path out;
};

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(fmt::format("{} is required", flag));
}

// A path may name the file itself or the directory holding `file_name`.
fs::path resolve(const std::string& path, const char* file_name) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= file_name;
  if (!fs::exists(p)) throw ValidationError(fmt::format("input not found: {}", p.string()));
  return p;
}

Json read_json(Context& ctx, const fs::path& p) {
  const auto text = read_file(p);
  ctx.inputs[p.string()] = sha256_hex(text);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", p.string(), e.what()));
  }
}

MobilityDataset load_data(Context& ctx, const std::string& dir) {
  require(dir, "--data");
  auto data = load_dataset(dir);
  for (const char* name : kDatasetFiles) ctx.inputs[(fs::path(dir) / name).string()] = sha256_file(fs::path(dir) / name);
  return data;
}

// The schedule travels with synthetic datasets; otherwise the config's.
RegimeSchedule load_schedule(Context& ctx, const std::string& dir) {
  const auto p = fs::path(dir) / "schedule.json";
  if (fs::exists(p)) return schedule_from_json(read_json(ctx, p));
  return ctx.config.world.schedule;
}

void emit(Context& ctx, const std::string& name, const std::string& contents) {
  write_file_atomic(ctx.out / name, contents);
  ctx.outputs[name] = sha256_hex(contents);
}

void emit_json(Context& ctx, const std::string& name, const Json& j) { emit(ctx, name, j.dump(2) + "\n"); }

std::string fmt_num(double v) { return fmt::format("{:.10g}", v); }

std::string csv_row(std::initializer_list<std::string> fields) {
  std::string line;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) line += ',';
    line += csv_escape(f);
    first = false;
  }
  return line + "\n";
}

template <class F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------------ shared steps

FilterConfig filter_for(const RunConfig& config) {
  auto f = config.filter;
  if (config.within) f.scope = FilterScope::kWithinCounty;
  return f;
}

struct Prepared {
  FilteredDataset filtered;
  ModelParams init;
};

Prepared prepare(Context& ctx, const MobilityDataset& data, const std::string& dir) {
  const auto schedule = load_schedule(ctx, dir);
  const auto assignments = compute_assignments(data, schedule);
  Prepared p;
  p.filtered = filter_dataset(data, assignments, filter_for(ctx.config));
  if (p.filtered.nonzero_size() == 0) {
    throw ValidationError("filtered dataset has no non-zero triples to fit");
  }
  p.init = make_model(data, schedule.size(), ctx.config.within ? ModelKind::kWithin : ModelKind::kPairwise);
  fit_standardization(data, p.filtered, p.init.covariates);
  return p;
}

ModelParams load_model(Context& ctx, const std::string& path) {
  auto j = read_json(ctx, resolve(path, "model.json"));
  if (j.contains("params")) j = j.at("params");
  return model_from_json(j);
}

BootstrapResult load_bootstrap(Context& ctx, const std::string& path) {
  return bootstrap_from_json(read_json(ctx, resolve(path, "bootstrap.json")));
}

// Point models for graph and partition: explicit fits, or bootstrap means.
CounterfactualModel point_model(Context& ctx, const Flags& f, const MobilityDataset& data) {
  ModelParams pairwise, within;
  if (!f.model.empty()) {
    pairwise = load_model(ctx, f.model);
  } else {
    require(f.bootstrap, "--model or --bootstrap");
    pairwise = load_bootstrap(ctx, f.bootstrap).mean_params();
  }
  if (!f.within_model.empty()) {
    within = load_model(ctx, f.within_model);
  } else {
    require(f.within_bootstrap, "--within or --within-bootstrap");
    within = load_bootstrap(ctx, f.within_bootstrap).mean_params();
  }
  return make_counterfactual(pairwise, within, data, ctx.config.workers);
}

std::vector<CounterfactualModel> trial_models(Context& ctx, const Flags& f, const MobilityDataset& data) {
  require(f.bootstrap, "--bootstrap");
  require(f.within_bootstrap, "--within-bootstrap");
  const auto pairwise = load_bootstrap(ctx, f.bootstrap);
  const auto within = load_bootstrap(ctx, f.within_bootstrap);
  return counterfactual_trials(pairwise, within, data, ctx.config.workers);
}

int default_k(std::size_t n) { return std::max(2, static_cast<int>(std::lround(static_cast<double>(n) / 8.0))); }

std::vector<int> default_ks(std::size_t n) {
  std::vector<int> ks;
  for (int k = 1; k <= static_cast<int>(n); ++k) ks.push_back(k);
  return ks;
}

std::string effects_csv(const std::vector<EffectEstimate>& effects) {
  std::string out = "group,condition,available,tau_mean,tau_sd,tau_lo,tau_hi,significant,bonferroni_significant\n";
  for (const auto& e : effects) {
    out += csv_row({e.group, std::string(to_string(e.condition)), e.available ? "1" : "0", fmt_num(e.summary.mean),
                    fmt_num(e.summary.sd), fmt_num(e.summary.lo), fmt_num(e.summary.hi), e.significant ? "1" : "0",
                    e.bonferroni_significant ? "1" : "0"});
  }
  return out;
}

Json effects_json(const std::vector<EffectEstimate>& effects) {
  Json rows = Json::array();
  for (const auto& e : effects) {
    auto row = to_json(e.summary);
    row["group"] = e.group;
    row["condition"] = to_string(e.condition);
    row["available"] = e.available;
    row["significant"] = e.significant;
    row["bonferroni_significant"] = e.bonferroni_significant;
    row["trials"] = e.trial_values;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  std::string out =
      "k,average_part_size,cut,optimized_mean,optimized_lo,optimized_hi,random_mean,random_lo,random_hi\n";
  for (const auto& r : rows) {
    out += csv_row({std::to_string(r.k), fmt_num(r.average_part_size), fmt_num(r.cut), fmt_num(r.optimized.mean),
                    fmt_num(r.optimized.lo), fmt_num(r.optimized.hi), fmt_num(r.random.mean), fmt_num(r.random.lo),
                    fmt_num(r.random.hi)});
  }
  return out;
}

std::string efficacy_csv(const EfficacyReport& report, const MobilityDataset& data) {
  std::string out = "county,size_class,mean,sd,lo,hi,undefined_trials\n";
  for (const auto& c : report.counties) {
    out += csv_row({data.counties[c.county].id,
                    data.counties[c.county].size_class() == SizeClass::kSmall ? "small" : "large",
                    fmt_num(c.summary.mean), fmt_num(c.summary.sd), fmt_num(c.summary.lo), fmt_num(c.summary.hi),
                    std::to_string(c.undefined_trials)});
  }
  return out;
}

std::vector<int> read_partition(Context& ctx, const std::string& path, const MobilityDataset& data) {
  const auto j = read_json(ctx, resolve(path, "partition.json"));
  std::vector<int> parts(data.counties.size(), -1);
  try {
    for (const auto& row : j.at("counties")) {
      parts.at(data.county_index(row.at("county").get<std::string>())) = row.at("part").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed partition: {}", e.what()));
  }
  for (int p : parts) {
    if (p < 0) throw ValidationError("partition does not cover every county");
  }
  return parts;
}

// ------------------------------------------------------------------ subcommands

void cmd_synth(Context& ctx, const Flags&) {
  auto& cfg = ctx.config;
  SyntheticWorld world;
  ctx.timing["synthesize"] = timed([&] { world = synthesize(cfg.world); });
  save_dataset(world.data, ctx.out);
  for (const char* name : kDatasetFiles) ctx.outputs[name] = sha256_file(ctx.out / name);
  emit_json(ctx, "schedule.json", to_json(world.schedule));
  emit_json(ctx, "ground_truth.json", ground_truth_json(world));
}

void cmd_assign(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto records = compute_assignments(data, load_schedule(ctx, f.data));
  Json rows = Json::array();
  std::size_t compliant = 0;
  for (const auto& r : records) {
    rows.push_back(to_json(r, data));
    compliant += r.compliant ? 1 : 0;
  }
  emit_json(ctx, "assignments.json", rows);
  emit_json(ctx, "summary.json",
            {{"records", records.size()},
             {"compliant", compliant},
             {"compliance_rate", records.empty() ? 0.0 : static_cast<double>(compliant) / records.size()},
             {"triggers", to_json(trigger_histogram(records))}});
}

void cmd_filter(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto records = compute_assignments(data, load_schedule(ctx, f.data));
  const auto filtered = filter_dataset(data, records, filter_for(ctx.config));
  emit_json(ctx, "filtered.json", to_json(filtered, data));
}

void cmd_fit(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto prep = prepare(ctx, data, f.data);
  const auto training = TrainingData::build(data, prep.filtered, prep.init);
  FitResult result;
  try {
    ctx.timing["fit"] = timed([&] { result = fit(training, prep.init, ctx.config.fit); });
  } catch (const DivergenceError& e) {
    FitResult partial;
    partial.params = prep.init;
    partial.trace = e.trace();
    emit_json(ctx, "fit.json", to_json(partial));
    throw;
  }
  emit_json(ctx, "model.json", to_json(result.params));
  emit_json(ctx, "fit.json", to_json(result));
}

void cmd_bootstrap(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto prep = prepare(ctx, data, f.data);
  const auto training = TrainingData::build(data, prep.filtered, prep.init);
  BootstrapResult result;
  ctx.timing["bootstrap"] = timed([&] {
    result = bootstrap(training, prep.init, ctx.config.fit, ctx.config.trials,
                       ctx.config.sampling_only ? BootstrapMode::kSamplingOnly : BootstrapMode::kFull);
  });
  emit_json(ctx, "bootstrap.json", to_json(result));
}

void cmd_effects(Context& ctx, const Flags& f) {
  require(f.bootstrap, "--bootstrap");
  const auto effects = spillover_effects(load_bootstrap(ctx, f.bootstrap));
  emit(ctx, "effects.csv", effects_csv(effects));
  emit_json(ctx, "effects.json", effects_json(effects));
}

void cmd_phi(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  require(f.model, "--model");
  const auto params = load_model(ctx, f.model);
  const auto phi = precompute_phi(params, data, params.kind == ModelKind::kWithin, ctx.config.workers);
  emit_json(ctx, "phi.json", to_json(phi, data));
}

void cmd_efficacy(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto trials = trial_models(ctx, f, data);
  const auto& cfg = ctx.config;
  Scenario scenario;
  if (cfg.scenario == "lone") {
    scenario = Scenario::lone_county();
  } else if (cfg.scenario == "realistic") {
    if (!cfg.week) throw ValidationError("--week is required for the realistic scenario");
    scenario = Scenario::realistic_week(data, *cfg.week);
  } else if (cfg.scenario == "macro") {
    require(f.partition, "--partition");
    scenario = Scenario::macro_county(read_partition(ctx, f.partition, data));
  } else {
    throw ValidationError(fmt::format("unknown scenario '{}'", cfg.scenario));
  }
  const auto report = efficacy_report(scenario, trials, data);
  emit_json(ctx, "efficacy.json", to_json(report, data));
  emit(ctx, "efficacy.csv", efficacy_csv(report, data));
}

void cmd_graph(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto model = point_model(ctx, f, data);
  GraphBuildReport report;
  const auto graph = build_county_graph(model, ctx.config.allow_degenerate, &report);
  std::string out = "county_a,county_b,weight,raw_weight\n";
  for (const auto& [a, b] : data.adjacency.pairs()) {
    const auto raw = pair_weight(model, a, b);
    out += csv_row({data.counties[a].id, data.counties[b].id, fmt_num(graph.weight(a, b)),
                    raw ? fmt_num(*raw) : std::string()});
  }
  emit(ctx, "graph.csv", out);
  auto pairs = [&](const auto& list) {
    Json arr = Json::array();
    for (const auto& [a, b] : list) arr.push_back({data.counties[a].id, data.counties[b].id});
    return arr;
  };
  emit_json(ctx, "graph_report.json",
            {{"total_weight", graph.total_weight()},
             {"clamped", pairs(report.clamped)},
             {"unbuildable", pairs(report.unbuildable)}});
}

void cmd_partition(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto model = point_model(ctx, f, data);
  const auto graph = build_county_graph(model, ctx.config.allow_degenerate);
  const int k = ctx.config.k > 0 ? ctx.config.k : default_k(data.counties.size());
  auto partition = min_kcut(graph, k, ctx.config.kcut);
  evaluate_partition(partition, graph, model);
  emit_json(ctx, "partition.json", to_json(partition, data));
}

void cmd_tradeoff(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto trials = trial_models(ctx, f, data);
  const auto mean = point_model(ctx, f, data);
  const auto graph = build_county_graph(mean, ctx.config.allow_degenerate);
  const auto ks = ctx.config.ks.empty() ? default_ks(data.counties.size()) : ctx.config.ks;
  TradeoffOptions options{ctx.config.kcut, ctx.config.random_partitions};
  std::vector<TradeoffRow> rows;
  ctx.timing["tradeoff"] = timed([&] { rows = tradeoff_curve(graph, ks, trials, options); });
  emit(ctx, "tradeoff.csv", tradeoff_csv(rows));
}

void cmd_report(Context& ctx, const Flags& f) {
  const auto data = load_data(ctx, f.data);
  const auto schedule = load_schedule(ctx, f.data);
  const auto records = compute_assignments(data, schedule);
  const auto& cfg = ctx.config;

  const auto plot = discontinuity_plot(data, records, cfg.bin_width, cfg.filter.bandwidth, cfg.filter.bandwidth);
  std::string bins = "z_lo,z_hi,z_mid,side,points,mean_visits\n";
  for (const auto& b : plot.bins) {
    bins += csv_row({fmt_num(b.lo), fmt_num(b.hi), fmt_num(0.5 * (b.lo + b.hi)), b.lo < 0 ? "left" : "right",
                     std::to_string(b.points), fmt_num(b.mean_visits)});
  }
  emit(ctx, "fig2c_bins.csv", bins);
  std::string fits = "side,intercept,slope,points\n";
  fits += csv_row({"left", fmt_num(plot.left.intercept), fmt_num(plot.left.slope), std::to_string(plot.left.points)});
  fits += csv_row(
      {"right", fmt_num(plot.right.intercept), fmt_num(plot.right.slope), std::to_string(plot.right.points)});
  emit(ctx, "fig2c_fits.csv", fits);

  require(f.bootstrap, "--bootstrap");
  const auto pairwise_boot = load_bootstrap(ctx, f.bootstrap);
  emit(ctx, "fig3_effects.csv", effects_csv(spillover_effects(pairwise_boot)));

  const auto trials = trial_models(ctx, f, data);
  const auto mean = point_model(ctx, f, data);
  const auto graph = build_county_graph(mean, cfg.allow_degenerate);
  const auto ks = cfg.ks.empty() ? default_ks(data.counties.size()) : cfg.ks;
  emit(ctx, "fig4b_tradeoff.csv",
       tradeoff_csv(tradeoff_curve(graph, ks, trials, TradeoffOptions{cfg.kcut, cfg.random_partitions})));

  std::string weekly = "week,purple_counties,mean,sd,lo,hi,excluded_county_trials\n";
  for (auto week : data.weeks) {
    const auto report = efficacy_report(Scenario::realistic_week(data, week), trials, data);
    const auto& s = report.subset("purple");
    weekly += csv_row({week.str(), std::to_string(s.counties), fmt_num(s.summary.mean), fmt_num(s.summary.sd),
                       fmt_num(s.summary.lo), fmt_num(s.summary.hi), std::to_string(s.excluded)});
  }
  emit(ctx, "figA4_realistic_week.csv", weekly);

  const auto lone = efficacy_report(Scenario::lone_county(), trials, data);
  std::string summary = "scenario,subset,counties,mean,lo,hi\n";
  for (const auto& s : lone.subsets) {
    summary += csv_row({"lone-county", s.subset, std::to_string(s.counties), fmt_num(s.summary.mean),
                        fmt_num(s.summary.lo), fmt_num(s.summary.hi)});
  }
  emit(ctx, "efficacy_summary.csv", summary);
}

// ------------------------------------------------------------------ plumbing

void write_manifest(Context& ctx, double elapsed) {
  const auto config_text = ctx.config.to_json().dump(2) + "\n";
  write_file_atomic(ctx.out / "config.json", config_text);
  Json m;
  m["tool"] = kToolName;
  m["version"] = SPILLOVER_VERSION;
  m["subcommand"] = ctx.subcommand;
  m["argv"] = ctx.argv;
  m["config_sha256"] = sha256_hex(config_text);
  m["inputs"] = ctx.inputs;
  m["outputs"] = ctx.outputs;
  m["timing_seconds"] = ctx.timing;
  m["elapsed_seconds"] = elapsed;
  write_file_atomic(ctx.out / "manifest.json", m.dump(2) + "\n");
}

void report_error(const std::string& type, const std::string& message, const std::string& subcommand) {
  Json j{{"error", {{"type", type}, {"message", message}, {"subcommand", subcommand}}}};
  std::cerr << j.dump() << std::endl;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("spillover");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("SPILLOVER_LOG")) spdlog::cfg::helpers::load_levels(level);
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"County tier spillover analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SPILLOVER_VERSION);

  Flags f;
  using Handler = void (*)(Context&, const Flags&);
  struct Command {
    const char* name;
    const char* help;
    Handler handler;
  };
  const std::vector<Command> commands{
      {"synth", "generate a synthetic world", cmd_synth},
      {"assign", "compute the assignment variable and compliance", cmd_assign},
      {"filter", "select the analysis sample", cmd_filter},
      {"fit", "fit the zero-inflated Poisson model", cmd_fit},
      {"bootstrap", "bootstrap the fit", cmd_bootstrap},
      {"effects", "spillover effects from a bootstrap", cmd_effects},
      {"phi", "precompute baseline pair flows", cmd_phi},
      {"efficacy", "efficacy ratios for a scenario", cmd_efficacy},
      {"graph", "county graph for the k-cut", cmd_graph},
      {"partition", "balanced minimum k-cut", cmd_partition},
      {"tradeoff", "efficacy against number of parts", cmd_tradeoff},
      {"report", "plot data for the figures", cmd_report},
  };

  std::map<CLI::App*, Handler> handlers;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    handlers[sub] = c.handler;
    sub->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "seed for every seeded stage");
    sub->add_option("--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", f.out, "output directory")->required();
    sub->add_option("--bandwidth", f.bandwidth, "half-width of the Z window")->check(CLI::PositiveNumber);
    sub->add_option("--sample-frac", f.sample_frac, "expected share of zeros sampled");
    sub->add_option("--weighting", f.weighting, "negative sampling weights")
        ->check(CLI::IsMember({"uniform", "inv-distance"}));
    sub->add_option("--trials", f.trials, "bootstrap trials")->check(CLI::PositiveNumber);
    sub->add_option("--epochs", f.epochs, "fit epochs")->check(CLI::PositiveNumber);
    sub->add_option("--lr", f.lr, "learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--k", f.k, "number of parts")->check(CLI::PositiveNumber);
    sub->add_option("--ks", f.ks, "part counts for the trade-off curve");
    sub->add_option("--epsilon", f.epsilon, "balance slack");
    sub->add_flag("--allow-degenerate", f.allow_degenerate, "zero out edges with undefined weight");
    sub->add_flag("--sampling-only", f.sampling_only, "bootstrap negative sampling only");
    sub->add_flag("--within-county", f.within, "fit the within-county model");
    sub->add_option("--scenario", f.scenario, "lone, realistic or macro")
        ->check(CLI::IsMember({"lone", "realistic", "macro"}));
    sub->add_option("--week", f.week, "study week (YYYY-MM-DD)");
    sub->add_option("--data", f.data, "dataset directory");
    sub->add_option("--bootstrap", f.bootstrap, "pairwise bootstrap result");
    sub->add_option("--within-bootstrap", f.within_bootstrap, "within-county bootstrap result");
    sub->add_option("--model", f.model, "pairwise model");
    sub->add_option("--within", f.within_model, "within-county model");
    sub->add_option("--partition", f.partition, "partition result");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", e.what(), "");
    return 1;
  }

  Context ctx;
  CLI::App* sub = app.get_subcommands().front();
  ctx.subcommand = sub->get_name();
  for (int i = 1; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
  const auto started = std::chrono::steady_clock::now();
  try {
    auto& cfg = ctx.config;
    cfg.set_seed(cfg.seed);
    if (!f.config.empty()) cfg.apply_file(read_json(ctx, f.config));
    if (sub->count("--seed")) cfg.set_seed(f.seed);
    cfg.set_workers(sub->count("--workers") ? f.workers : cfg.workers);
    if (sub->count("--bandwidth")) cfg.filter.bandwidth = f.bandwidth;
    if (sub->count("--sample-frac")) cfg.fit.sample_fraction = f.sample_frac;
    if (sub->count("--weighting")) cfg.fit.weighting = parse_weighting(f.weighting);
    if (sub->count("--trials")) cfg.trials = f.trials;
    if (sub->count("--epochs")) cfg.fit.epochs = f.epochs;
    if (sub->count("--lr")) cfg.fit.learning_rate = f.lr;
    if (sub->count("--k")) cfg.k = f.k;
    if (sub->count("--ks")) cfg.ks = f.ks;
    if (sub->count("--epsilon")) cfg.kcut.epsilon = f.epsilon;
    if (f.allow_degenerate) cfg.allow_degenerate = true;
    if (f.sampling_only) cfg.sampling_only = true;
    if (f.within) cfg.within = true;
    if (sub->count("--scenario")) cfg.scenario = f.scenario;
    if (!f.week.empty()) cfg.week = Date::parse(f.week);
    cfg.world.validate();
    cfg.filter.validate();
    cfg.fit.validate();

    ctx.out = f.out;
    fs::create_directories(ctx.out);
    handlers.at(sub)(ctx, f);
    write_manifest(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  } catch (const ValidationError& e) {
    report_error("validation", e.what(), ctx.subcommand);
    return 1;
  } catch (const NumericalError& e) {
    report_error("numerical", e.what(), ctx.subcommand);
    return 2;
  } catch (const fs::filesystem_error& e) {
    report_error("io", e.what(), ctx.subcommand);
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what(), ctx.subcommand);
    return 2;
  }
  return 0;
}
