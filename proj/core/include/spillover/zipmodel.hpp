#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spillover/domain.hpp"

namespace spill {

inline constexpr double kMaxLinearPredictor = 30.0;

// Column order of the covariate vector X:
//   log(1 + distance km), log(device count), demographics..., log(POI area),
//   then an optional one-hot block over POI groups.
// The continuous columns are standardized with constants stored here.
class CovariateLayout {
 public:
  CovariateLayout() = default;
  CovariateLayout(std::vector<std::string> demographic_names, std::vector<std::string> groups, bool group_onehot);

  std::size_t size() const { return names_.size(); }
  std::size_t continuous_size() const { return 3 + n_demographics_; }
  const std::vector<std::string>& names() const { return names_; }
  bool group_onehot() const { return group_onehot_; }
  std::size_t n_demographics() const { return n_demographics_; }
  std::size_t n_groups() const { return n_groups_; }

  // Unstandardized values.
  void raw_row(double distance_km, double devices, std::span<const double> demographics, double area_sqft, int group,
               std::span<double> out) const;
  void standardize(std::span<double> row) const;

  std::vector<double> mean;  // per column; one-hot columns keep 0
  std::vector<double> sd;    // per column; one-hot columns keep 1

 private:
  std::vector<std::string> names_;
  std::size_t n_demographics_ = 0;
  std::size_t n_groups_ = 0;
  bool group_onehot_ = true;
};

enum class ModelKind : std::uint8_t {
  kPairwise,  // cross-county model with Z slopes and pairwise tiers
  kWithin,    // within-county companion model, single-county tier
};

// All learnable parameters as one flat vector with named views.
//   beta0 | beta1[variants] | beta2[variants] | beta3[covariates] |
//   beta_tt[groups x conditions] | log_alpha1 | log_alpha2
// Variants are keyed by size class x threshold regime.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelKind kind, std::vector<std::string> groups, CovariateLayout covariates, int n_regimes);

  ModelKind kind = ModelKind::kPairwise;
  std::vector<std::string> groups;
  CovariateLayout covariates;
  std::vector<double> theta;
  // Per beta_tt cell; cleared when the training data has no support.
  std::vector<std::uint8_t> identified;

  int n_regimes() const { return n_regimes_; }
  int n_variants() const { return 2 * n_regimes_; }
  std::size_t size() const { return theta.size(); }
  static int variant_of(SizeClass size, int regime, int n_regimes) {
    return static_cast<int>(size) * n_regimes + regime;
  }
  std::string variant_name(int variant) const;
  std::string parameter_name(std::size_t index) const;

  std::size_t beta0_index() const { return 0; }
  std::size_t beta1_index(int variant) const { return 1 + variant; }
  std::size_t beta2_index(int variant) const { return 1 + n_variants() + variant; }
  std::size_t beta3_index(std::size_t k) const { return 1 + 2 * n_variants() + k; }
  std::size_t beta_tt_index(int group, Condition c) const {
    return 1 + 2 * n_variants() + covariates.size() + group * kNumConditions + static_cast<int>(c);
  }
  std::size_t log_alpha1_index() const { return theta.size() - 2; }
  std::size_t log_alpha2_index() const { return theta.size() - 1; }

  double beta_tt(int group, Condition c) const { return theta[beta_tt_index(group, c)]; }
  double alpha1() const;
  double alpha2() const;
  int group_index(std::string_view name) const;

 private:
  int n_regimes_ = 1;
};

// A single observation in model terms.
struct Datapoint {
  std::span<const double> x;  // standardized covariates
  double z_cbg = 0.0;
  double z_poi = 0.0;
  int variant_cbg = 0;
  int variant_poi = 0;
  int group = 0;
  Condition condition = Condition::kPP;
  double distance_km = 0.0;
  std::int32_t y = 0;
};

struct EvalStats {
  std::int64_t clamped = 0;
};

double linear_predictor(const ModelParams& params, const Datapoint& dp);
// Throws ValidationError for an unknown group.
double poisson_rate(const ModelParams& params, const Datapoint& dp, EvalStats* stats = nullptr);
double exposure_prob(const ModelParams& params, double distance_km);
double exposure_prob(double alpha1, double alpha2, double distance_km);
double log_likelihood(const ModelParams& params, const Datapoint& dp);
// Dense gradient of log_likelihood over every entry of theta.
std::vector<double> gradient(const ModelParams& params, const Datapoint& dp);
double expected_visits(const ModelParams& params, const Datapoint& dp);

// Zero-inflated Poisson probability mass, computed directly from pi and lambda.
double zip_log_pmf(double pi, double lambda, std::int64_t y);

// Structure-of-arrays batch of datapoints with the parameter indices they
// touch resolved up front. This is the representation the trainer sweeps.
class PointTable {
 public:
  explicit PointTable(std::size_t n_covariates = 0) : n_cov_(n_covariates) {}

  void reserve(std::size_t n);
  void add(const ModelParams& layout, const Datapoint& dp, double weight);
  void clear();

  std::size_t size() const { return y_.size(); }
  std::size_t n_covariates() const { return n_cov_; }
  Datapoint view(std::size_t k) const;
  double weight(std::size_t k) const { return weight_[k]; }
  void set_weight(std::size_t k, double w) { weight_[k] = w; }
  double total_weight() const;

  // Adds sum_k weight_k * d logL_k / d theta over [begin, end) to grad and
  // returns sum_k weight_k * logL_k.
  double accumulate(const ModelParams& params, std::size_t begin, std::size_t end, std::span<double> grad,
                    EvalStats* stats = nullptr) const;

 private:
  std::size_t n_cov_ = 0;
  std::vector<double> x_;
  std::vector<double> z_cbg_, z_poi_, log_distance_, distance_, log_y_factorial_, weight_;
  std::vector<std::uint32_t> idx_b1_, idx_b2_, idx_tt_;
  std::vector<std::int32_t> y_;
  std::vector<std::uint8_t> variant_cbg_, variant_poi_, group_, condition_;
};

}  // namespace spill
