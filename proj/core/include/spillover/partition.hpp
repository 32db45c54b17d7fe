#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spillover/counterfactual.hpp"

namespace spill {

// Undirected weighted graph over counties, stored densely.
class CountyGraph {
 public:
  CountyGraph() = default;
  explicit CountyGraph(std::size_t n) : n_(n), w_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double weight(int a, int b) const { return w_[static_cast<std::size_t>(a) * n_ + b]; }
  // Sets both directions; throws for self-loops, negative or non-finite weights.
  void set_weight(int a, int b, double w);
  double total_weight() const;
  // Pairs a < b with positive weight.
  std::vector<std::pair<int, int>> edges() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> w_;
};

struct GraphBuildReport {
  std::vector<std::pair<int, int>> clamped;      // negative weight set to 0
  std::vector<std::pair<int, int>> unbuildable;  // non-positive denominator
};

// w_AB = -c_BA - c_AB with c_BA = (E[Y_AB|P,P] - E[Y_AB|P,R]) / (E[out(A)|R] - E[out(A)|P]).
// A non-positive denominator throws NumericalError unless allow_degenerate,
// in which case the edge gets weight 0 and is listed in the report.
CountyGraph build_county_graph(const CounterfactualModel& model, bool allow_degenerate = false,
                               GraphBuildReport* report = nullptr);

// The raw signed weight of one adjacent pair, before clamping.
std::optional<double> pair_weight(const CounterfactualModel& model, int a, int b);

inline constexpr double kDefaultBalanceSlack = 0.05;

std::size_t part_size_cap(std::size_t n, int k, double epsilon);

struct CountyPartition {
  std::vector<int> parts;  // county -> part id
  int k = 0;
  double cut = 0.0;
  std::vector<std::optional<double>> r_m;  // per county, when evaluated
  double average_r_m = 0.0;
  std::size_t max_part_size = 0;
};

double cut_weight(const CountyGraph& graph, std::span<const int> parts);
// Relabels parts in order of first appearance.
std::vector<int> canonical_parts(std::span<const int> parts);
bool is_feasible(std::span<const int> parts, int k, std::size_t cap);

struct KcutOptions {
  double epsilon = kDefaultBalanceSlack;
  std::uint64_t seed = 0;
  int restarts = 16;
  int workers = 1;
};

// Multilevel heuristic: heavy-edge matching, greedy initial split and
// boundary refinement with single moves and pair swaps, best of several
// seeded restarts.
CountyPartition min_kcut(const CountyGraph& graph, int k, const KcutOptions& options = {});

// Exhaustive search for N <= 12; ties go to the lexicographically smallest
// canonical part vector.
CountyPartition brute_force_kcut(const CountyGraph& graph, int k, double epsilon = kDefaultBalanceSlack);

// Calls `fn(parts)` for every feasible canonical partition into exactly k parts.
void for_each_partition(std::size_t n, int k, std::size_t cap, const std::function<void(std::span<const int>)>& fn);

// Fills r_m, average_r_m, cut and max_part_size. Counties with an undefined
// ratio are left out of the average.
void evaluate_partition(CountyPartition& partition, const CountyGraph& graph, const CounterfactualModel& model);

CountyPartition random_balanced_partition(std::size_t n, int k, std::uint64_t seed);

struct TradeoffRow {
  int k = 0;
  double average_part_size = 0.0;
  double cut = 0.0;
  Summary optimized;      // avg r_M over bootstrap trials
  Summary random;         // random balanced baseline, averaged over seeds per trial
  std::vector<int> parts;
};

struct TradeoffOptions {
  KcutOptions kcut;
  int random_partitions = 20;
};

TradeoffRow tradeoff_point(const CountyGraph& graph, int k, std::span<const CounterfactualModel> trials,
                           const TradeoffOptions& options = {});
std::vector<TradeoffRow> tradeoff_curve(const CountyGraph& graph, std::span<const int> ks,
                                        std::span<const CounterfactualModel> trials,
                                        const TradeoffOptions& options = {});

}  // namespace spill
