#include "spillover/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

namespace spill {

namespace {

constexpr std::size_t kChunkSize = 4096;

struct PointSource {
  const MobilityDataset& data;
  const FilteredDataset& filtered;
  ModelKind kind;
};

// Covariates, Z values and variant keys of one triple.
void fill_point(const PointSource& src, const ModelParams& layout, const ZeroCell& cell, std::span<double> row,
                Datapoint& dp) {
  const auto& cbg = src.data.cbgs[cell.cbg];
  const auto& poi = src.data.pois[cell.poi];
  const auto* rec_cbg = src.filtered.record(cell.week, cbg.county);
  const auto* rec_poi = src.filtered.record(cell.week, poi.county);
  double devices = static_cast<double>(src.data.device_count(cell.week, cell.cbg));
  if (devices <= 0.0) devices = src.data.mean_device_count(cell.cbg);
  layout.covariates.raw_row(cell.distance_km, devices, cbg.demographics, poi.area_sqft, poi.group, row);
  layout.covariates.standardize(row);
  dp.x = row;
  dp.group = poi.group;
  dp.distance_km = cell.distance_km;
  const int nr = layout.n_regimes();
  dp.variant_cbg = ModelParams::variant_of(rec_cbg->size, std::min(rec_cbg->regime, nr - 1), nr);
  dp.variant_poi = ModelParams::variant_of(rec_poi->size, std::min(rec_poi->regime, nr - 1), nr);
  if (src.kind == ModelKind::kWithin) {
    dp.z_cbg = 0.0;
    dp.z_poi = 0.0;
    dp.condition = condition_of(rec_cbg->tier, rec_cbg->tier);
  } else {
    dp.z_cbg = rec_cbg->z;
    dp.z_poi = rec_poi->z;
    dp.condition = condition_of(rec_cbg->tier, rec_poi->tier);
  }
}

// Visits every retained triple of the dense space in block order.
template <class Fn>
void for_each_retained(const MobilityDataset& data, const FilteredDataset& filtered, Fn&& fn) {
  for (const auto& blk : filtered.blocks) {
    const auto pois = data.pois_in(blk.poi_county);
    for (int i : data.cbgs_in(blk.cbg_county)) {
      const auto row = data.edges_from(blk.week, i);
      auto edge = row.begin();
      for (int j : pois) {
        while (edge != row.end() && edge->poi < j) ++edge;
        const std::int32_t y = edge != row.end() && edge->poi == j ? edge->visits : 0;
        fn(blk.week, i, j, y);
      }
    }
  }
}

}  // namespace

// ------------------------------------------------------------------ data

ModelParams make_model(const MobilityDataset& data, std::size_t n_regimes, ModelKind kind, bool group_onehot) {
  CovariateLayout layout(data.demographic_names, data.groups, group_onehot);
  return ModelParams(kind, data.groups, std::move(layout), static_cast<int>(n_regimes));
}

void fit_standardization(const MobilityDataset& data, const FilteredDataset& filtered, CovariateLayout& layout) {
  const std::size_t nc = layout.continuous_size();
  std::vector<double> mean(nc, 0.0), m2(nc, 0.0), row(layout.size());
  std::int64_t n = 0;
  for_each_retained(data, filtered, [&](int w, int i, int j, std::int32_t) {
    const auto& cbg = data.cbgs[i];
    const auto& poi = data.pois[j];
    double devices = static_cast<double>(data.device_count(w, i));
    if (devices <= 0.0) devices = data.mean_device_count(i);
    layout.raw_row(distance_km(cbg.location, poi.location), devices, cbg.demographics, poi.area_sqft, poi.group, row);
    ++n;
    for (std::size_t k = 0; k < nc; ++k) {
      const double delta = row[k] - mean[k];
      mean[k] += delta / static_cast<double>(n);
      m2[k] += delta * (row[k] - mean[k]);
    }
  });
  for (std::size_t k = 0; k < nc; ++k) {
    layout.mean[k] = n > 0 ? mean[k] : 0.0;
    const double sd = n > 1 ? std::sqrt(m2[k] / static_cast<double>(n - 1)) : 0.0;
    layout.sd[k] = sd > 1e-12 ? sd : 1.0;
  }
}

TrainingData TrainingData::build(const MobilityDataset& data, const FilteredDataset& filtered,
                                 const ModelParams& layout) {
  TrainingData out;
  out.data_ = &data;
  out.filtered_ = &filtered;
  out.kind_ = layout.kind;
  out.n_cbgs_ = data.cbgs.size();
  out.n_pois_ = data.pois.size();
  out.nonzeros_ = PointTable(layout.covariates.size());
  out.nonzeros_.reserve(static_cast<std::size_t>(filtered.nonzero_size()));
  out.cell_support_.assign(layout.groups.size() * kNumConditions, 0);
  const PointSource src{data, filtered, layout.kind};
  std::vector<double> row(layout.covariates.size());
  Datapoint dp;
  for_each_retained(data, filtered, [&](int w, int i, int j, std::int32_t y) {
    const ZeroCell cell{w, i, j, distance_km(data.cbgs[i].location, data.pois[j].location)};
    if (y == 0) {
      out.zeros_.push_back(cell);
      return;
    }
    fill_point(src, layout, cell, row, dp);
    dp.y = y;
    out.nonzeros_.add(layout, dp, 1.0);
    ++out.cell_support_[dp.group * kNumConditions + static_cast<int>(dp.condition)];
  });
  return out;
}

void TrainingData::append(const ModelParams& layout, const ZeroCell& cell, std::int32_t y, double weight,
                          PointTable& out) const {
  const PointSource src{*data_, *filtered_, kind_};
  std::vector<double> row(layout.covariates.size());
  Datapoint dp;
  fill_point(src, layout, cell, row, dp);
  dp.y = y;
  out.add(layout, dp, weight);
}

// ------------------------------------------------------------------ sampling

std::string_view to_string(Weighting w) { return w == Weighting::kUniform ? "uniform" : "inv-distance"; }

Weighting parse_weighting(std::string_view text) {
  if (text == "uniform") return Weighting::kUniform;
  if (text == "inv-distance" || text == "inverse-distance") return Weighting::kInverseDistance;
  throw ValidationError(fmt::format("unknown weighting mode '{}'", text));
}

double SamplingScheme::probability(double distance_km) const {
  if (all) return 1.0;
  if (mode == Weighting::kUniform) return fraction;
  return std::min(1.0, scale / (1.0 + distance_km));
}

SamplingScheme sampling_probabilities(std::span<const double> zero_distances, double fraction, Weighting mode) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("sample fraction must lie in (0, 1]");
  SamplingScheme scheme;
  scheme.mode = mode;
  scheme.fraction = fraction;
  scheme.all = fraction == 1.0;
  if (scheme.all || mode == Weighting::kUniform || zero_distances.empty()) {
    scheme.scale = fraction;
    return scheme;
  }
  const double target = fraction * static_cast<double>(zero_distances.size());
  // The clamped set only grows as the scale rises, so this reaches the
  // fixed point within |zeros| rounds.
  std::vector<double> raw(zero_distances.size());
  for (std::size_t k = 0; k < raw.size(); ++k) raw[k] = 1.0 / (1.0 + zero_distances[k]);
  double scale = 0.0;
  for (std::size_t round = 0; round <= raw.size(); ++round) {
    double free_mass = 0.0;
    double clamped = 0.0;
    for (double r : raw) {
      if (round > 0 && scale * r >= 1.0) {
        clamped += 1.0;
      } else {
        free_mass += r;
      }
    }
    if (free_mass <= 0.0) break;
    const double next = (target - clamped) / free_mass;
    if (round > 0 && next == scale) break;
    scale = next;
  }
  scheme.scale = scale;
  double total = 0.0;
  for (double d : zero_distances) total += scheme.probability(d);
  if (!(std::abs(total - target) <= 1e-6 * target)) {
    throw NumericalError(
        fmt::format("sampling probabilities did not converge: sum {} vs target {}", total, target));
  }
  return scheme;
}

std::vector<std::size_t> draw_inclusions(std::span<const double> probabilities, std::span<const std::uint64_t> ids,
                                         std::uint64_t seed) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    const double s = probabilities[k];
    if (s >= 1.0 || counter_uniform(seed, RngPurpose::kNegativeSample, ids[k]) < s) out.push_back(k);
  }
  return out;
}

NegativeSample draw_sample(const TrainingData& training, const SamplingScheme& scheme, std::uint64_t seed) {
  NegativeSample out;
  out.mode = scheme.mode;
  out.fraction = scheme.fraction;
  out.seed = seed;
  for (const auto& cell : training.zeros()) {
    const double s = scheme.probability(cell.distance_km);
    if (s >= 1.0 ||
        counter_uniform(seed, RngPurpose::kNegativeSample, training.triple_id(cell.week, cell.cbg, cell.poi)) < s) {
      out.zeros.push_back({cell, s});
    }
  }
  return out;
}

PointTable sample_table(const TrainingData& training, const ModelParams& layout, const NegativeSample& sample) {
  PointTable out(layout.covariates.size());
  out.reserve(sample.zeros.size());
  for (const auto& z : sample.zeros) training.append(layout, z.cell, 0, 1.0 / z.probability, out);
  return out;
}

// ------------------------------------------------------------------ loss

LossAndGradient corrected_loss_and_gradient(const ModelParams& params, const PointTable& nonzeros,
                                            const PointTable& sampled_zeros, int workers) {
  const std::size_t n1 = nonzeros.size();
  const std::size_t n_chunks1 = (n1 + kChunkSize - 1) / kChunkSize;
  const std::size_t n_chunks = n_chunks1 + (sampled_zeros.size() + kChunkSize - 1) / kChunkSize;
  const std::size_t p = params.size();
  std::vector<double> partial_grad(n_chunks * p, 0.0);
  std::vector<double> partial_ll(n_chunks, 0.0);
  std::vector<std::int64_t> partial_clamped(n_chunks, 0);
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const PointTable& table = c < n_chunks1 ? nonzeros : sampled_zeros;
    const std::size_t begin = (c < n_chunks1 ? c : c - n_chunks1) * kChunkSize;
    const std::size_t end = std::min(begin + kChunkSize, table.size());
    EvalStats stats;
    partial_ll[c] = table.accumulate(params, begin, end, std::span<double>(partial_grad.data() + c * p, p), &stats);
    partial_clamped[c] = stats.clamped;
  });
  LossAndGradient out;
  out.gradient.assign(p, 0.0);
  double ll = 0.0;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    ll += partial_ll[c];
    out.clamped += partial_clamped[c];
    for (std::size_t k = 0; k < p; ++k) out.gradient[k] -= partial_grad[c * p + k];
  }
  out.loss = -ll;
  return out;
}

// ------------------------------------------------------------------ fitting

void FitConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (steps_per_epoch < 1) throw ValidationError("steps per epoch must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) throw ValidationError("final learning-rate fraction must lie in (0, 1]");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw ValidationError("sample fraction must lie in (0, 1]");
  if (workers < 1) throw ValidationError("worker count must be at least 1");
  if (!(tail_fraction >= 0.0 && tail_fraction <= 1.0)) throw ValidationError("tail fraction must lie in [0, 1]");
}

namespace {

bool diverged(std::span<const double> theta, double threshold) {
  return std::any_of(theta.begin(), theta.end(), [&](double v) { return !std::isfinite(v) || std::abs(v) > threshold; });
}

}  // namespace

FitResult fit(const TrainingData& training, const ModelParams& init, const FitConfig& config,
              std::span<const double> nonzero_weights, std::optional<std::uint64_t> zero_resample_seed) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  FitResult result;
  result.params = init;
  auto& params = result.params;
  const auto& support = training.cell_support();
  for (std::size_t c = 0; c < params.identified.size(); ++c) {
    if (c < support.size() && support[c] == 0) params.identified[c] = 0;
  }
  if (config.epochs == 0) return result;

  PointTable weighted;
  const PointTable* nonzeros = &training.nonzeros();
  if (!nonzero_weights.empty()) {
    if (nonzero_weights.size() != nonzeros->size()) throw ValidationError("one weight per non-zero triple is required");
    weighted = *nonzeros;
    for (std::size_t k = 0; k < weighted.size(); ++k) weighted.set_weight(k, nonzero_weights[k]);
    nonzeros = &weighted;
  }
  const double nonzero_mass = nonzeros->total_weight();

  std::vector<double> distances;
  distances.reserve(training.zeros().size());
  for (const auto& z : training.zeros()) distances.push_back(z.distance_km);
  const auto scheme = sampling_probabilities(distances, config.sample_fraction, config.weighting);

  const std::size_t p = params.size();
  std::vector<std::uint8_t> frozen(p, 0);
  for (int g = 0; g < static_cast<int>(params.groups.size()); ++g) {
    for (int c = 0; c < kNumConditions; ++c) {
      if (!params.identified[g * kNumConditions + c]) frozen[params.beta_tt_index(g, static_cast<Condition>(c))] = 1;
    }
  }
  if (params.kind == ModelKind::kWithin) {
    for (int v = 0; v < params.n_variants(); ++v) {
      frozen[params.beta1_index(v)] = 1;
      frozen[params.beta2_index(v)] = 1;
    }
  }

  // The optimizer works on u, where u equals theta except that the
  // log(alpha1) slot holds the exposure log-odds at the centering distance
  // log d = c. This removes most of the correlation between the two exposure
  // parameters.
  double center = 0.0;
  std::size_t n_positive = 0;
  for (std::size_t k = 0; k < nonzeros->size(); ++k) {
    const double d = nonzeros->view(k).distance_km;
    if (d > 0.0) {
      center += std::log(d);
      ++n_positive;
    }
  }
  if (n_positive > 0) center /= static_cast<double>(n_positive);
  const std::size_t ia1 = params.log_alpha1_index();
  const std::size_t ia2 = params.log_alpha2_index();
  std::vector<double> u = params.theta;
  u[ia1] = params.theta[ia1] + std::exp(params.theta[ia2]) * center;
  const auto sync_theta = [&] {
    params.theta = u;
    params.theta[ia1] = u[ia1] - std::exp(u[ia2]) * center;
  };

  const int tail_start =
      config.epochs - std::max(1, static_cast<int>(std::lround(config.tail_fraction * config.epochs)));
  std::vector<double> tail_sum(p, 0.0);
  int tail_count = 0;

  std::vector<double> m(p, 0.0), v(p, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const int total_steps = config.epochs * config.steps_per_epoch;
  double gd_rate = config.learning_rate;
  int step = 0;
  PointTable zeros;
  NegativeSample sample;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch == 0 || config.redraw == NegativeRedraw::kPerEpoch) {
      const std::uint64_t seed =
          config.redraw == NegativeRedraw::kPerEpoch ? config.seed ^ static_cast<std::uint64_t>(epoch) : config.seed;
      sample = draw_sample(training, scheme, seed);
      zeros = sample_table(training, params, sample);
      if (zero_resample_seed) {
        for (std::size_t k = 0; k < zeros.size(); ++k) {
          const auto& cell = sample.zeros[k].cell;
          CounterRng rng(*zero_resample_seed, RngPurpose::kBootstrap, training.triple_id(cell.week, cell.cbg, cell.poi));
          zeros.set_weight(k, zeros.weight(k) * static_cast<double>(rng.poisson(1.0)));
        }
      }
    }
    const double norm = std::max(nonzero_mass + zeros.total_weight(), 1.0);
    double last_loss = 0.0;
    double previous_loss = std::numeric_limits<double>::infinity();
    double rate = config.learning_rate;
    for (int s = 0; s < config.steps_per_epoch; ++s, ++step) {
      auto lg = corrected_loss_and_gradient(params, *nonzeros, zeros, config.workers);
      result.clamped += lg.clamped;
      last_loss = lg.loss / norm;
      lg.gradient[ia2] -= center * std::exp(u[ia2]) * lg.gradient[ia1];
      if (config.optimizer == Optimizer::kAdam) {
        const double progress = total_steps > 1 ? static_cast<double>(step) / (total_steps - 1) : 1.0;
        const double floor = config.final_lr_fraction;
        rate = config.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        const double c1 = 1.0 - std::pow(kBeta1, step + 1);
        const double c2 = 1.0 - std::pow(kBeta2, step + 1);
        for (std::size_t k = 0; k < p; ++k) {
          if (frozen[k]) continue;
          const double g = lg.gradient[k] / norm;
          m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g;
          v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g * g;
          u[k] -= rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
        }
      } else {
        if (last_loss > previous_loss) gd_rate *= 0.5;
        previous_loss = last_loss;
        rate = gd_rate;
        for (std::size_t k = 0; k < p; ++k) {
          if (!frozen[k]) u[k] -= rate * lg.gradient[k] / norm;
        }
      }
      sync_theta();
      if (diverged(params.theta, config.divergence_threshold)) {
        result.trace.push_back({epoch, last_loss, rate, sample.zeros.size(), params.theta});
        throw DivergenceError(fmt::format("fit diverged at epoch {} step {}", epoch, s), std::move(result.trace));
      }
    }
    if (epoch >= tail_start) {
      ++tail_count;
      for (std::size_t k = 0; k < p; ++k) tail_sum[k] += u[k];
    }
    result.trace.push_back({epoch, last_loss, rate, sample.zeros.size(), params.theta});
    spdlog::debug("epoch {} loss {:.6f} lr {:.4g} zeros {}", epoch, last_loss, rate, sample.zeros.size());
  }
  if (tail_count > 1) {
    for (std::size_t k = 0; k < p; ++k) u[k] = tail_sum[k] / static_cast<double>(tail_count);
    sync_theta();
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ------------------------------------------------------------------ bootstrap

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double x : values) sum += x;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double x : values) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  s.lo = s.mean - 1.96 * s.sd;
  s.hi = s.mean + 1.96 * s.sd;
  return s;
}

ModelParams BootstrapResult::trial_params(std::size_t t) const {
  ModelParams p = layout;
  p.theta = trials.at(t);
  return p;
}

ModelParams BootstrapResult::mean_params() const {
  ModelParams p = layout;
  for (std::size_t k = 0; k < p.theta.size() && k < parameters.size(); ++k) p.theta[k] = parameters[k].mean;
  return p;
}

BootstrapResult bootstrap(const TrainingData& training, const ModelParams& init, const FitConfig& config, int trials,
                          BootstrapMode mode) {
  if (trials < 1) throw ValidationError("at least one bootstrap trial is required");
  config.validate();
  BootstrapResult out;
  out.mode = mode;
  out.trials.assign(static_cast<std::size_t>(trials), {});
  std::vector<ModelParams> fitted(static_cast<std::size_t>(trials));
  const std::size_t n = training.nonzeros().size();
  // Trials run in parallel and each fit is single-threaded; the chunked
  // reduction makes the result independent of that split.
  parallel_for(static_cast<std::size_t>(trials), config.workers, [&](std::size_t t) {
    FitConfig trial_config = config;
    trial_config.seed = mix_seed(config.seed, t);
    trial_config.workers = 1;
    std::vector<double> weights;
    if (mode == BootstrapMode::kFull) {
      weights.assign(n, 0.0);
      CounterRng rng(trial_config.seed, RngPurpose::kBootstrap);
      for (std::size_t k = 0; k < n; ++k) weights[rng.below(n)] += 1.0;
    }
    try {
      std::optional<std::uint64_t> zero_seed;
      if (mode == BootstrapMode::kFull) zero_seed = mix_seed(trial_config.seed, 1);
      auto r = fit(training, init, trial_config, weights, zero_seed);
      out.trials[t] = r.params.theta;
      fitted[t] = std::move(r.params);
    } catch (const std::exception& e) {
      throw NumericalError(fmt::format("bootstrap trial {} failed: {}", t, e.what()));
    }
    spdlog::info("bootstrap trial {}/{} done", t + 1, trials);
  });
  out.layout = fitted.front();
  // A cell is identified only when every trial identified it.
  for (const auto& f : fitted) {
    for (std::size_t c = 0; c < out.layout.identified.size(); ++c) out.layout.identified[c] &= f.identified[c];
  }
  const std::size_t p = out.layout.size();
  out.parameters.resize(p);
  std::vector<double> column(out.trials.size());
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t t = 0; t < out.trials.size(); ++t) column[t] = out.trials[t][k];
    out.parameters[k] = summarize(column);
  }
  return out;
}

std::vector<EffectEstimate> spillover_effects(const BootstrapResult& result) {
  const auto& layout = result.layout;
  const int n_groups = static_cast<int>(layout.groups.size());
  const double alpha = 0.05 / std::max(n_groups, 1);
  std::vector<EffectEstimate> out;
  for (int g = 0; g < n_groups; ++g) {
    for (Condition c : {Condition::kPR, Condition::kRR, Condition::kRP}) {
      EffectEstimate e;
      e.group = layout.groups[g];
      e.condition = c;
      e.available = layout.identified[g * kNumConditions + static_cast<int>(c)] &&
                    layout.identified[g * kNumConditions + static_cast<int>(Condition::kPP)];
      if (e.available) {
        const auto ic = layout.beta_tt_index(g, c);
        const auto ipp = layout.beta_tt_index(g, Condition::kPP);
        for (const auto& th : result.trials) e.trial_values.push_back(std::exp(th[ic] - th[ipp]));
        e.summary = summarize(e.trial_values);
        e.significant = e.summary.lo > 1.0 || e.summary.hi < 1.0;
        const double gap = std::abs(e.summary.mean - 1.0);
        const double p_value =
            e.summary.sd > 0.0 ? std::erfc(gap / e.summary.sd / std::numbers::sqrt2) : (gap > 0.0 ? 0.0 : 1.0);
        e.bonferroni_significant = p_value < alpha;
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace spill
