#include "spillover/zipmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "spillover/error.hpp"

namespace spill {

namespace {

// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_add_exp(double a, double b) {
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

struct PointTerms {
  double log_likelihood;
  double d_eta;        // d logL / d eta
  double d_log_alpha;  // d logL / d log(alpha1) = a * d logL / d a
};

// Shared scalar kernel. `log_a` is log(alpha1 * d^alpha2), or -inf at d = 0.
inline PointTerms point_terms(double eta, double log_a, std::int32_t y, double log_y_factorial, EvalStats* stats) {
  bool clamped = false;
  if (eta > kMaxLinearPredictor) {
    eta = kMaxLinearPredictor;
    clamped = true;
    if (stats != nullptr) ++stats->clamped;
  }
  const double lambda = std::exp(eta);
  PointTerms t{};
  const bool at_origin = std::isinf(log_a);
  if (y > 0) {
    const double log1p_a = at_origin ? 0.0 : softplus(log_a);
    t.log_likelihood = -log1p_a + y * eta - lambda - log_y_factorial;
    t.d_eta = y - lambda;
    t.d_log_alpha = at_origin ? 0.0 : -sigmoid(log_a);
  } else if (at_origin) {
    t.log_likelihood = -lambda;
    t.d_eta = -lambda;
    t.d_log_alpha = 0.0;
  } else {
    // Pr(0) = (a + e^-lambda) / (1 + a)
    t.log_likelihood = log_add_exp(log_a, -lambda) - softplus(log_a);
    const double w = sigmoid(-(log_a + lambda));  // e^-lambda / (a + e^-lambda)
    t.d_eta = -lambda * w;
    t.d_log_alpha = (1.0 - w) - sigmoid(log_a);
  }
  if (clamped) t.d_eta = 0.0;
  return t;
}

inline double log_exposure_odds(double log_alpha1, double alpha2, double distance_km) {
  if (distance_km <= 0.0) return -std::numeric_limits<double>::infinity();
  return log_alpha1 + alpha2 * std::log(distance_km);
}

void check_point(const ModelParams& params, const Datapoint& dp) {
  if (dp.group < 0 || dp.group >= static_cast<int>(params.groups.size())) {
    throw ValidationError(fmt::format("unknown POI group index {}", dp.group));
  }
  if (dp.variant_cbg < 0 || dp.variant_cbg >= params.n_variants() || dp.variant_poi < 0 ||
      dp.variant_poi >= params.n_variants()) {
    throw ValidationError("unresolvable Z variant key");
  }
  if (dp.x.size() != params.covariates.size()) throw ValidationError("covariate vector has the wrong length");
}

}  // namespace

// ---------------------------------------------------------------- covariates

CovariateLayout::CovariateLayout(std::vector<std::string> demographic_names, std::vector<std::string> groups,
                                 bool group_onehot)
    : n_demographics_(demographic_names.size()), n_groups_(groups.size()), group_onehot_(group_onehot) {
  names_.push_back("log1p_distance_km");
  names_.push_back("log_devices");
  for (auto& d : demographic_names) names_.push_back("demo:" + d);
  names_.push_back("log_area_sqft");
  if (group_onehot_) {
    for (auto& g : groups) names_.push_back("group:" + g);
  }
  mean.assign(names_.size(), 0.0);
  sd.assign(names_.size(), 1.0);
}

void CovariateLayout::raw_row(double distance_km, double devices, std::span<const double> demographics,
                              double area_sqft, int group, std::span<double> out) const {
  out[0] = std::log1p(distance_km);
  out[1] = std::log(std::max(devices, 1.0));
  for (std::size_t k = 0; k < n_demographics_; ++k) out[2 + k] = demographics[k];
  out[2 + n_demographics_] = std::log(area_sqft);
  if (group_onehot_) {
    for (std::size_t g = 0; g < n_groups_; ++g) out[continuous_size() + g] = static_cast<int>(g) == group ? 1.0 : 0.0;
  }
}

void CovariateLayout::standardize(std::span<double> row) const {
  for (std::size_t k = 0; k < continuous_size(); ++k) row[k] = (row[k] - mean[k]) / sd[k];
}

// ---------------------------------------------------------------- params

ModelParams::ModelParams(ModelKind kind_, std::vector<std::string> groups_, CovariateLayout covariates_,
                         int n_regimes)
    : kind(kind_), groups(std::move(groups_)), covariates(std::move(covariates_)), n_regimes_(n_regimes) {
  if (n_regimes_ < 1) throw ValidationError("at least one threshold regime is required");
  theta.assign(1 + 2 * n_variants() + covariates.size() + groups.size() * kNumConditions + 2, 0.0);
  identified.assign(groups.size() * kNumConditions, 1);
}

std::string ModelParams::variant_name(int variant) const {
  const bool small = variant >= n_regimes_;
  return fmt::format("{}/{}", small ? "small" : "large", variant % n_regimes_);
}

std::string ModelParams::parameter_name(std::size_t index) const {
  if (index == beta0_index()) return "beta0";
  if (index < beta2_index(0)) return fmt::format("beta1[{}]", variant_name(static_cast<int>(index - 1)));
  if (index < beta3_index(0)) return fmt::format("beta2[{}]", variant_name(static_cast<int>(index - beta2_index(0))));
  if (index < beta_tt_index(0, Condition::kPP)) return fmt::format("beta3[{}]", covariates.names()[index - beta3_index(0)]);
  if (index == log_alpha1_index()) return "log_alpha1";
  if (index == log_alpha2_index()) return "log_alpha2";
  const auto cell = index - beta_tt_index(0, Condition::kPP);
  return fmt::format("beta_tt[{},{}]", groups[cell / kNumConditions],
                     to_string(static_cast<Condition>(cell % kNumConditions)));
}

double ModelParams::alpha1() const { return std::exp(theta[log_alpha1_index()]); }
double ModelParams::alpha2() const { return std::exp(theta[log_alpha2_index()]); }

int ModelParams::group_index(std::string_view name) const {
  for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
    if (groups[g] == name) return g;
  }
  throw ValidationError(fmt::format("unknown POI group '{}'", name));
}

// ---------------------------------------------------------------- single point

double linear_predictor(const ModelParams& params, const Datapoint& dp) {
  const auto& th = params.theta;
  double eta = th[params.beta0_index()] + th[params.beta1_index(dp.variant_cbg)] * dp.z_cbg +
               th[params.beta2_index(dp.variant_poi)] * dp.z_poi + th[params.beta_tt_index(dp.group, dp.condition)];
  for (std::size_t k = 0; k < dp.x.size(); ++k) eta += th[params.beta3_index(k)] * dp.x[k];
  return eta;
}

double poisson_rate(const ModelParams& params, const Datapoint& dp, EvalStats* stats) {
  check_point(params, dp);
  double eta = linear_predictor(params, dp);
  if (eta > kMaxLinearPredictor) {
    eta = kMaxLinearPredictor;
    if (stats != nullptr) ++stats->clamped;
  }
  return std::exp(eta);
}

double exposure_prob(double alpha1, double alpha2, double distance_km) {
  if (distance_km <= 0.0) return 1.0;
  return 1.0 / (1.0 + alpha1 * std::pow(distance_km, alpha2));
}

double exposure_prob(const ModelParams& params, double distance_km) {
  return exposure_prob(params.alpha1(), params.alpha2(), distance_km);
}

double log_likelihood(const ModelParams& params, const Datapoint& dp) {
  check_point(params, dp);
  const double log_a =
      log_exposure_odds(params.theta[params.log_alpha1_index()], params.alpha2(), dp.distance_km);
  return point_terms(linear_predictor(params, dp), log_a, dp.y, std::lgamma(dp.y + 1.0), nullptr).log_likelihood;
}

std::vector<double> gradient(const ModelParams& params, const Datapoint& dp) {
  check_point(params, dp);
  std::vector<double> g(params.size(), 0.0);
  const double alpha2 = params.alpha2();
  const double log_a = log_exposure_odds(params.theta[params.log_alpha1_index()], alpha2, dp.distance_km);
  const auto t = point_terms(linear_predictor(params, dp), log_a, dp.y, std::lgamma(dp.y + 1.0), nullptr);
  g[params.beta0_index()] += t.d_eta;
  g[params.beta1_index(dp.variant_cbg)] += t.d_eta * dp.z_cbg;
  g[params.beta2_index(dp.variant_poi)] += t.d_eta * dp.z_poi;
  for (std::size_t k = 0; k < dp.x.size(); ++k) g[params.beta3_index(k)] += t.d_eta * dp.x[k];
  g[params.beta_tt_index(dp.group, dp.condition)] += t.d_eta;
  g[params.log_alpha1_index()] += t.d_log_alpha;
  if (dp.distance_km > 0.0) g[params.log_alpha2_index()] += t.d_log_alpha * alpha2 * std::log(dp.distance_km);
  return g;
}

double expected_visits(const ModelParams& params, const Datapoint& dp) {
  return exposure_prob(params, dp.distance_km) * poisson_rate(params, dp);
}

double zip_log_pmf(double pi, double lambda, std::int64_t y) {
  if (y == 0) return std::log((1.0 - pi) + pi * std::exp(-lambda));
  return std::log(pi) + static_cast<double>(y) * std::log(lambda) - lambda - std::lgamma(static_cast<double>(y) + 1);
}

// ---------------------------------------------------------------- batches

void PointTable::reserve(std::size_t n) {
  x_.reserve(n * n_cov_);
  for (auto* v : {&z_cbg_, &z_poi_, &log_distance_, &distance_, &log_y_factorial_, &weight_}) v->reserve(n);
  for (auto* v : {&idx_b1_, &idx_b2_, &idx_tt_}) v->reserve(n);
  y_.reserve(n);
  for (auto* v : {&variant_cbg_, &variant_poi_, &group_, &condition_}) v->reserve(n);
}

void PointTable::clear() {
  x_.clear();
  for (auto* v : {&z_cbg_, &z_poi_, &log_distance_, &distance_, &log_y_factorial_, &weight_}) v->clear();
  for (auto* v : {&idx_b1_, &idx_b2_, &idx_tt_}) v->clear();
  y_.clear();
  for (auto* v : {&variant_cbg_, &variant_poi_, &group_, &condition_}) v->clear();
}

void PointTable::add(const ModelParams& layout, const Datapoint& dp, double weight) {
  x_.insert(x_.end(), dp.x.begin(), dp.x.end());
  z_cbg_.push_back(dp.z_cbg);
  z_poi_.push_back(dp.z_poi);
  distance_.push_back(dp.distance_km);
  log_distance_.push_back(dp.distance_km > 0.0 ? std::log(dp.distance_km)
                                               : -std::numeric_limits<double>::infinity());
  log_y_factorial_.push_back(std::lgamma(dp.y + 1.0));
  weight_.push_back(weight);
  idx_b1_.push_back(static_cast<std::uint32_t>(layout.beta1_index(dp.variant_cbg)));
  idx_b2_.push_back(static_cast<std::uint32_t>(layout.beta2_index(dp.variant_poi)));
  idx_tt_.push_back(static_cast<std::uint32_t>(layout.beta_tt_index(dp.group, dp.condition)));
  y_.push_back(dp.y);
  variant_cbg_.push_back(static_cast<std::uint8_t>(dp.variant_cbg));
  variant_poi_.push_back(static_cast<std::uint8_t>(dp.variant_poi));
  group_.push_back(static_cast<std::uint8_t>(dp.group));
  condition_.push_back(static_cast<std::uint8_t>(dp.condition));
}

Datapoint PointTable::view(std::size_t k) const {
  Datapoint dp;
  dp.x = std::span<const double>(x_.data() + k * n_cov_, n_cov_);
  dp.z_cbg = z_cbg_[k];
  dp.z_poi = z_poi_[k];
  dp.variant_cbg = variant_cbg_[k];
  dp.variant_poi = variant_poi_[k];
  dp.group = group_[k];
  dp.condition = static_cast<Condition>(condition_[k]);
  dp.distance_km = distance_[k];
  dp.y = y_[k];
  return dp;
}

double PointTable::total_weight() const {
  double s = 0.0;
  for (double w : weight_) s += w;
  return s;
}

double PointTable::accumulate(const ModelParams& params, std::size_t begin, std::size_t end, std::span<double> grad,
                              EvalStats* stats) const {
  const double* th = params.theta.data();
  const double beta0 = th[params.beta0_index()];
  const double* beta3 = th + params.beta3_index(0);
  const double log_alpha1 = th[params.log_alpha1_index()];
  const double alpha2 = std::exp(th[params.log_alpha2_index()]);
  double* g3 = grad.data() + params.beta3_index(0);
  double g0 = 0.0, g_la1 = 0.0, g_la2 = 0.0, loglik = 0.0;
  for (std::size_t k = begin; k < end; ++k) {
    const double w = weight_[k];
    if (w == 0.0) continue;
    const double* x = x_.data() + k * n_cov_;
    double eta = beta0 + th[idx_b1_[k]] * z_cbg_[k] + th[idx_b2_[k]] * z_poi_[k] + th[idx_tt_[k]];
    for (std::size_t c = 0; c < n_cov_; ++c) eta += beta3[c] * x[c];
    const double log_a = std::isinf(log_distance_[k]) ? log_distance_[k] : log_alpha1 + alpha2 * log_distance_[k];
    const auto t = point_terms(eta, log_a, y_[k], log_y_factorial_[k], stats);
    loglik += w * t.log_likelihood;
    const double ge = w * t.d_eta;
    g0 += ge;
    grad[idx_b1_[k]] += ge * z_cbg_[k];
    grad[idx_b2_[k]] += ge * z_poi_[k];
    grad[idx_tt_[k]] += ge;
    for (std::size_t c = 0; c < n_cov_; ++c) g3[c] += ge * x[c];
    const double ga = w * t.d_log_alpha;
    g_la1 += ga;
    if (!std::isinf(log_distance_[k])) g_la2 += ga * alpha2 * log_distance_[k];
  }
  grad[params.beta0_index()] += g0;
  grad[params.log_alpha1_index()] += g_la1;
  grad[params.log_alpha2_index()] += g_la2;
  return loglik;
}

}  // namespace spill
