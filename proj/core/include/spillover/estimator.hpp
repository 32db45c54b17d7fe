#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillover/assignment.hpp"
#include "spillover/domain.hpp"
#include "spillover/error.hpp"
#include "spillover/zipmodel.hpp"

namespace spill {

// ------------------------------------------------------------------ data

struct ZeroCell {
  int week = 0;
  int cbg = 0;
  int poi = 0;
  double distance_km = 0.0;
};

// Model-ready view of a filtered dataset: every non-zero triple as a
// datapoint plus the list of implicit zero cells available for sampling.
class TrainingData {
 public:
  // `layout` supplies groups, regimes and the covariate layout; its
  // standardization constants are used as-is.
  static TrainingData build(const MobilityDataset& data, const FilteredDataset& filtered, const ModelParams& layout);

  const PointTable& nonzeros() const { return nonzeros_; }
  std::span<const ZeroCell> zeros() const { return zeros_; }
  std::uint64_t triple_id(int week, int cbg, int poi) const {
    return (static_cast<std::uint64_t>(week) * n_cbgs_ + static_cast<std::uint64_t>(cbg)) * n_pois_ +
           static_cast<std::uint64_t>(poi);
  }
  // Appends one datapoint for (week, cbg, poi) with the given outcome.
  void append(const ModelParams& layout, const ZeroCell& cell, std::int32_t y, double weight, PointTable& out) const;

  // Per beta_tt cell (group x condition): number of non-zero triples.
  const std::vector<std::int64_t>& cell_support() const { return cell_support_; }
  ModelKind kind() const { return kind_; }

 private:
  const MobilityDataset* data_ = nullptr;
  const FilteredDataset* filtered_ = nullptr;
  ModelKind kind_ = ModelKind::kPairwise;
  std::size_t n_cbgs_ = 0, n_pois_ = 0;
  PointTable nonzeros_;
  std::vector<ZeroCell> zeros_;
  std::vector<std::int64_t> cell_support_;
};

// Estimates mean and sd of every continuous covariate over the dense
// filtered triple space and stores them in the layout.
void fit_standardization(const MobilityDataset& data, const FilteredDataset& filtered, CovariateLayout& layout);

// Empty parameter set shaped for `data`.
ModelParams make_model(const MobilityDataset& data, std::size_t n_regimes, ModelKind kind, bool group_onehot = true);

// ------------------------------------------------------------------ sampling

enum class Weighting : std::uint8_t { kUniform, kInverseDistance };

std::string_view to_string(Weighting w);
Weighting parse_weighting(std::string_view text);

// s(d) = fraction (uniform) or min(1, scale / (1 + d)) (inverse distance).
struct SamplingScheme {
  Weighting mode = Weighting::kInverseDistance;
  double fraction = 0.02;
  double scale = 0.0;
  bool all = false;  // fraction == 1

  double probability(double distance_km) const;
};

// Scales inverse-distance weights so that sum(s) = fraction * |zeros|,
// clamping at 1 and redistributing until the sum matches to 1e-6 relative.
SamplingScheme sampling_probabilities(std::span<const double> zero_distances, double fraction, Weighting mode);

struct SampledZero {
  ZeroCell cell;
  double probability = 1.0;
};

struct NegativeSample {
  Weighting mode = Weighting::kInverseDistance;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<SampledZero> zeros;
};

// Independent Bernoulli(s) inclusion per cell, keyed on (seed, triple id).
NegativeSample draw_sample(const TrainingData& training, const SamplingScheme& scheme, std::uint64_t seed);
// Same rule over explicit probabilities; returns the included positions.
std::vector<std::size_t> draw_inclusions(std::span<const double> probabilities, std::span<const std::uint64_t> ids,
                                         std::uint64_t seed);

// ------------------------------------------------------------------ loss

struct LossAndGradient {
  double loss = 0.0;              // negative corrected log-likelihood
  std::vector<double> gradient;   // of `loss`
  std::int64_t clamped = 0;
};

// Sums over points in fixed chunks and combines chunk partials in chunk
// order, so results are bitwise identical for any worker count.
LossAndGradient corrected_loss_and_gradient(const ModelParams& params, const PointTable& nonzeros,
                                            const PointTable& sampled_zeros, int workers = 1);

// Builds the weighted zero table (weight 1/s) for a sample.
PointTable sample_table(const TrainingData& training, const ModelParams& layout, const NegativeSample& sample);

// ------------------------------------------------------------------ fitting

enum class Optimizer : std::uint8_t { kAdam, kGradientDescent };
enum class NegativeRedraw : std::uint8_t { kPerEpoch, kPerTrial };

struct FitConfig {
  int epochs = 50;
  int steps_per_epoch = 10;
  double learning_rate = 0.05;
  double final_lr_fraction = 0.02;  // cosine decay floor, relative to learning_rate
  Optimizer optimizer = Optimizer::kAdam;
  double sample_fraction = 0.02;
  Weighting weighting = Weighting::kInverseDistance;
  NegativeRedraw redraw = NegativeRedraw::kPerEpoch;
  // Returned parameters average the end-of-epoch iterates over this final
  // share of epochs; 0 keeps the last iterate.
  double tail_fraction = 0.5;
  std::uint64_t seed = 0;
  int workers = 1;
  double divergence_threshold = 1e3;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // per unit of corrected weight, at the last step
  double learning_rate = 0.0;
  std::size_t sampled_zeros = 0;
  std::vector<double> theta;
};

struct FitResult {
  ModelParams params;
  std::vector<EpochRecord> trace;
  std::int64_t clamped = 0;
  double seconds = 0.0;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& what, std::vector<EpochRecord> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<EpochRecord>& trace() const { return trace_; }

 private:
  std::vector<EpochRecord> trace_;
};

// `init` fixes the layout and starting point. `nonzero_weights`, when given,
// replaces the unit weight of every non-zero triple (bootstrap multiplicity).
// With `zero_resample_seed`, each sampled zero cell's weight is also scaled
// by a Poisson(1) multiplicity keyed on (seed, triple id), which stays fixed
// across epochs.
FitResult fit(const TrainingData& training, const ModelParams& init, const FitConfig& config,
              std::span<const double> nonzero_weights = {},
              std::optional<std::uint64_t> zero_resample_seed = std::nullopt);

// ------------------------------------------------------------------ bootstrap

enum class BootstrapMode : std::uint8_t {
  kFull,          // resample non-zeros with replacement, zeros by Poisson(1) weights, redraw negatives
  kSamplingOnly,  // keep non-zeros fixed, redraw negatives only
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Sample mean, sample sd (n - 1) and mean +- 1.96 sd.
Summary summarize(std::span<const double> values);

struct BootstrapResult {
  BootstrapMode mode = BootstrapMode::kFull;
  ModelParams layout;  // shape, names and identification flags
  std::vector<std::vector<double>> trials;  // theta per trial
  std::vector<Summary> parameters;           // per theta entry

  std::size_t trial_count() const { return trials.size(); }
  ModelParams trial_params(std::size_t t) const;
  ModelParams mean_params() const;
};

BootstrapResult bootstrap(const TrainingData& training, const ModelParams& init, const FitConfig& config,
                          int trials = 30, BootstrapMode mode = BootstrapMode::kFull);

struct EffectEstimate {
  std::string group;
  Condition condition = Condition::kPR;
  bool available = false;
  std::vector<double> trial_values;  // tau per trial
  Summary summary;
  bool significant = false;             // CI excludes 1
  bool bonferroni_significant = false;  // two-sided normal test at 0.05 / (number of groups)
};

// tau_c = exp(beta_{g,c} - beta_{g,PP}) for c in {PR, RR, RP}.
std::vector<EffectEstimate> spillover_effects(const BootstrapResult& result);

}  // namespace spill
