#include "spillover/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "spillover/error.hpp"
#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

namespace spill {

void CountyGraph::set_weight(int a, int b, double w) {
  if (a == b) throw ValidationError("county graph has no self-loops");
  if (!std::isfinite(w) || w < 0.0) throw ValidationError(fmt::format("invalid edge weight {}", w));
  w_[static_cast<std::size_t>(a) * n_ + b] = w;
  w_[static_cast<std::size_t>(b) * n_ + a] = w;
}

double CountyGraph::total_weight() const {
  double s = 0.0;
  for (auto [a, b] : edges()) s += weight(a, b);
  return s;
}

std::vector<std::pair<int, int>> CountyGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < static_cast<int>(n_); ++a) {
    for (int b = a + 1; b < static_cast<int>(n_); ++b) {
      if (weight(a, b) > 0.0) out.emplace_back(a, b);
    }
  }
  return out;
}

// ------------------------------------------------------------------ graph

std::optional<double> pair_weight(const CounterfactualModel& model, int a, int b) {
  const std::size_t n = model.phi.n_counties();
  const auto red = all_tier(n, Tier::kRed);
  const auto purple = all_tier(n, Tier::kPurple);
  const double da = expected_out_degree(model, a, red) - expected_out_degree(model, a, purple);
  const double db = expected_out_degree(model, b, red) - expected_out_degree(model, b, purple);
  if (!(da > 0.0) || !(db > 0.0)) return std::nullopt;
  const auto& p = model.params;
  const double c_ba = (expected_pair_visits(p, model.phi, a, b, Tier::kPurple, Tier::kPurple) -
                       expected_pair_visits(p, model.phi, a, b, Tier::kPurple, Tier::kRed)) /
                      da;
  const double c_ab = (expected_pair_visits(p, model.phi, b, a, Tier::kPurple, Tier::kPurple) -
                       expected_pair_visits(p, model.phi, b, a, Tier::kPurple, Tier::kRed)) /
                      db;
  return -c_ba - c_ab;
}

CountyGraph build_county_graph(const CounterfactualModel& model, bool allow_degenerate, GraphBuildReport* report) {
  const std::size_t n = model.phi.n_counties();
  CountyGraph graph(n);
  GraphBuildReport local;
  for (auto [a, b] : model.adjacency->pairs()) {
    const auto w = pair_weight(model, a, b);
    if (!w) {
      if (!allow_degenerate) {
        throw NumericalError(fmt::format("edge ({}, {}) is unbuildable: non-positive efficacy denominator", a, b));
      }
      local.unbuildable.emplace_back(a, b);
      continue;
    }
    if (*w < 0.0) {
      spdlog::warn("edge ({}, {}) has negative weight {:.6g}; clamped to 0", a, b, *w);
      local.clamped.emplace_back(a, b);
      continue;
    }
    if (*w > 0.0) graph.set_weight(a, b, *w);
  }
  if (report != nullptr) *report = std::move(local);
  return graph;
}

// ------------------------------------------------------------------ helpers

std::size_t part_size_cap(std::size_t n, int k, double epsilon) {
  if (k < 1) throw ValidationError("k must be at least 1");
  // Guard against 1.05 * 20 / 1 evaluating to 21.000000000000004.
  const double raw = (1.0 + epsilon) * static_cast<double>(n) / k;
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

double cut_weight(const CountyGraph& graph, std::span<const int> parts) {
  double cut = 0.0;
  const int n = static_cast<int>(graph.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (parts[a] != parts[b]) cut += graph.weight(a, b);
    }
  }
  return cut;
}

std::vector<int> canonical_parts(std::span<const int> parts) {
  std::vector<int> label;
  std::vector<int> out(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    auto it = std::find(label.begin(), label.end(), parts[i]);
    if (it == label.end()) {
      label.push_back(parts[i]);
      it = label.end() - 1;
    }
    out[i] = static_cast<int>(it - label.begin());
  }
  return out;
}

bool is_feasible(std::span<const int> parts, int k, std::size_t cap) {
  std::vector<std::size_t> size(k, 0);
  for (int p : parts) {
    if (p < 0 || p >= k) return false;
    ++size[p];
  }
  return std::all_of(size.begin(), size.end(), [&](std::size_t s) { return s >= 1 && s <= cap; });
}

namespace {

void check_k(std::size_t n, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw ValidationError(fmt::format("k = {} is outside [1, {}]", k, n));
  }
}

void finish(CountyPartition& p, const CountyGraph& graph) {
  p.parts = canonical_parts(p.parts);
  p.cut = cut_weight(graph, p.parts);
  std::vector<std::size_t> size(p.k, 0);
  for (int q : p.parts) ++size[q];
  p.max_part_size = *std::max_element(size.begin(), size.end());
}

bool better(double cut, std::span<const int> parts, double best_cut, std::span<const int> best_parts) {
  const double tol = 1e-12 * (1.0 + std::abs(best_cut));
  if (cut < best_cut - tol) return true;
  if (cut > best_cut + tol) return false;
  return std::lexicographical_compare(parts.begin(), parts.end(), best_parts.begin(), best_parts.end());
}

// One level of the multilevel hierarchy.
struct Level {
  std::size_t n = 0;
  std::vector<int> node_weight;
  std::vector<double> w;            // n x n
  std::vector<int> to_coarse;       // node -> node of the next coarser level

  double weight(int a, int b) const { return w[static_cast<std::size_t>(a) * n + b]; }
};

std::vector<int> shuffled(std::size_t n, CounterRng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Heavy-edge matching; returns false when the level barely shrinks.
bool coarsen(Level& fine, Level& coarse, int max_node_weight, CounterRng& rng) {
  const auto order = shuffled(fine.n, rng);
  std::vector<int> match(fine.n, -1);
  for (int u : order) {
    if (match[u] >= 0) continue;
    int best = -1;
    double best_w = 0.0;
    for (int v = 0; v < static_cast<int>(fine.n); ++v) {
      if (v == u || match[v] >= 0) continue;
      if (fine.node_weight[u] + fine.node_weight[v] > max_node_weight) continue;
      const double w = fine.weight(u, v);
      if (w > best_w) {
        best_w = w;
        best = v;
      }
    }
    match[u] = best >= 0 ? best : u;
    if (best >= 0) match[best] = u;
  }
  fine.to_coarse.assign(fine.n, -1);
  int next = 0;
  for (int u : order) {
    if (fine.to_coarse[u] >= 0) continue;
    fine.to_coarse[u] = next;
    fine.to_coarse[match[u]] = next;
    ++next;
  }
  coarse.n = static_cast<std::size_t>(next);
  if (coarse.n * 10 > fine.n * 9) return false;
  coarse.node_weight.assign(coarse.n, 0);
  coarse.w.assign(coarse.n * coarse.n, 0.0);
  for (int u = 0; u < static_cast<int>(fine.n); ++u) {
    const int cu = fine.to_coarse[u];
    coarse.node_weight[cu] += fine.node_weight[u];
    for (int v = 0; v < static_cast<int>(fine.n); ++v) {
      const int cv = fine.to_coarse[v];
      if (cu != cv) coarse.w[static_cast<std::size_t>(cu) * coarse.n + cv] += fine.weight(u, v);
    }
  }
  return true;
}

class Refiner {
 public:
  Refiner(const Level& level, std::vector<int>& parts, int k, int cap)
      : g_(level), parts_(parts), k_(k), cap_(cap), size_(k, 0), count_(k, 0), conn_(level.n * k, 0.0) {
    for (int u = 0; u < static_cast<int>(g_.n); ++u) {
      size_[parts_[u]] += g_.node_weight[u];
      ++count_[parts_[u]];
      for (int v = 0; v < static_cast<int>(g_.n); ++v) {
        if (v != u) conn_[static_cast<std::size_t>(u) * k_ + parts_[v]] += g_.weight(u, v);
      }
    }
  }

  double conn(int u, int p) const { return conn_[static_cast<std::size_t>(u) * k_ + p]; }

  void move(int u, int to) {
    const int from = parts_[u];
    for (int v = 0; v < static_cast<int>(g_.n); ++v) {
      if (v == u) continue;
      const double w = g_.weight(u, v);
      conn_[static_cast<std::size_t>(v) * k_ + from] -= w;
      conn_[static_cast<std::size_t>(v) * k_ + to] += w;
    }
    size_[from] -= g_.node_weight[u];
    count_[from] -= 1;
    size_[to] += g_.node_weight[u];
    count_[to] += 1;
    parts_[u] = to;
  }

  // Restores the size cap and non-emptiness where node weights allow it.
  void rebalance() {
    for (int guard = 0; guard < static_cast<int>(g_.n) * 4; ++guard) {
      int over = -1;
      for (int p = 0; p < k_; ++p) {
        if (size_[p] > cap_ && (over < 0 || size_[p] > size_[over])) over = p;
      }
      if (over < 0) break;
      if (!best_move_from(over, false)) break;
    }
    for (int guard = 0; guard < static_cast<int>(g_.n) * 4; ++guard) {
      int empty = -1;
      for (int p = 0; p < k_; ++p) {
        if (count_[p] == 0) {
          empty = p;
          break;
        }
      }
      if (empty < 0) break;
      int best_u = -1;
      double best_gain = -std::numeric_limits<double>::infinity();
      for (int u = 0; u < static_cast<int>(g_.n); ++u) {
        if (count_[parts_[u]] < 2 || g_.node_weight[u] > cap_) continue;
        const double gain = conn(u, empty) - conn(u, parts_[u]);
        if (gain > best_gain) {
          best_gain = gain;
          best_u = u;
        }
      }
      if (best_u < 0) break;
      move(best_u, empty);
    }
  }

  void refine(CounterRng& rng) {
    for (int round = 0; round < 64; ++round) {
      bool improved = false;
      for (int u : shuffled(g_.n, rng)) {
        const int from = parts_[u];
        if (count_[from] < 2) continue;
        int best = -1;
        double best_gain = 1e-12;
        for (int p = 0; p < k_; ++p) {
          if (p == from || size_[p] + g_.node_weight[u] > cap_) continue;
          const double gain = conn(u, p) - conn(u, from);
          if (gain > best_gain) {
            best_gain = gain;
            best = p;
          }
        }
        if (best >= 0) {
          move(u, best);
          improved = true;
        }
      }
      if (!improved) improved = best_swap();
      if (!improved) break;
    }
  }

 private:
  bool best_move_from(int from, bool require_gain) {
    int best_u = -1, best_p = -1;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (int u = 0; u < static_cast<int>(g_.n); ++u) {
      if (parts_[u] != from || count_[from] < 2) continue;
      for (int p = 0; p < k_; ++p) {
        if (p == from || size_[p] + g_.node_weight[u] > cap_) continue;
        const double gain = conn(u, p) - conn(u, from);
        if (gain > best_gain) {
          best_gain = gain;
          best_u = u;
          best_p = p;
        }
      }
    }
    if (best_u < 0 || (require_gain && best_gain <= 0.0)) return false;
    move(best_u, best_p);
    return true;
  }

  bool best_swap() {
    int bu = -1, bv = -1;
    double best_gain = 1e-12;
    for (int u = 0; u < static_cast<int>(g_.n); ++u) {
      for (int v = u + 1; v < static_cast<int>(g_.n); ++v) {
        const int pu = parts_[u], pv = parts_[v];
        if (pu == pv) continue;
        const int du = g_.node_weight[v] - g_.node_weight[u];
        if (size_[pu] + du > cap_ || size_[pv] - du > cap_) continue;
        const double gain = conn(u, pv) - conn(u, pu) + conn(v, pu) - conn(v, pv) - 2.0 * g_.weight(u, v);
        if (gain > best_gain) {
          best_gain = gain;
          bu = u;
          bv = v;
        }
      }
    }
    if (bu < 0) return false;
    const int pu = parts_[bu], pv = parts_[bv];
    move(bu, pv);
    move(bv, pu);
    return true;
  }

  const Level& g_;
  std::vector<int>& parts_;
  int k_;
  int cap_;
  std::vector<int> size_;
  std::vector<int> count_;
  std::vector<double> conn_;
};

std::vector<int> initial_split(const Level& level, int k, int cap, CounterRng& rng) {
  auto order = shuffled(level.n, rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return level.node_weight[a] > level.node_weight[b]; });
  std::vector<int> parts(level.n, -1);
  std::vector<int> size(k, 0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int u = order[r];
    int best = -1;
    if (r < static_cast<std::size_t>(k)) {
      best = static_cast<int>(r);
    } else {
      double best_conn = -1.0;
      for (int p = 0; p < k; ++p) {
        if (size[p] + level.node_weight[u] > cap) continue;
        double c = 0.0;
        for (int v = 0; v < static_cast<int>(level.n); ++v) {
          if (parts[v] == p) c += level.weight(u, v);
        }
        if (c > best_conn || (c == best_conn && size[p] < size[best])) {
          best_conn = c;
          best = p;
        }
      }
      if (best < 0) best = static_cast<int>(std::min_element(size.begin(), size.end()) - size.begin());
    }
    parts[u] = best;
    size[best] += level.node_weight[u];
  }
  return parts;
}

std::vector<int> multilevel_run(const CountyGraph& graph, int k, int cap, CounterRng& rng) {
  std::vector<Level> levels(1);
  levels[0].n = graph.size();
  levels[0].node_weight.assign(graph.size(), 1);
  levels[0].w.resize(graph.size() * graph.size());
  for (int a = 0; a < static_cast<int>(graph.size()); ++a) {
    for (int b = 0; b < static_cast<int>(graph.size()); ++b) levels[0].w[a * graph.size() + b] = graph.weight(a, b);
  }
  const int max_node_weight = std::max(1, (cap + 1) / 2);
  const std::size_t floor = std::max<std::size_t>(2 * static_cast<std::size_t>(k), 8);
  while (levels.back().n > floor) {
    Level coarse;
    if (!coarsen(levels.back(), coarse, max_node_weight, rng)) break;
    if (coarse.n < static_cast<std::size_t>(k)) break;
    levels.push_back(std::move(coarse));
  }
  std::vector<int> parts = initial_split(levels.back(), k, cap, rng);
  for (std::size_t l = levels.size(); l-- > 0;) {
    if (l + 1 < levels.size()) {
      std::vector<int> fine(levels[l].n);
      for (std::size_t u = 0; u < levels[l].n; ++u) fine[u] = parts[levels[l].to_coarse[u]];
      parts = std::move(fine);
    }
    Refiner refiner(levels[l], parts, k, cap);
    refiner.rebalance();
    refiner.refine(rng);
  }
  return parts;
}

}  // namespace

CountyPartition min_kcut(const CountyGraph& graph, int k, const KcutOptions& options) {
  const std::size_t n = graph.size();
  check_k(n, k);
  const std::size_t cap = part_size_cap(n, k, options.epsilon);
  if (cap * static_cast<std::size_t>(k) < n) throw ValidationError("balance constraint is infeasible");
  const int restarts = std::max(options.restarts, 1);
  std::vector<std::vector<int>> candidates(restarts);
  parallel_for(static_cast<std::size_t>(restarts), options.workers, [&](std::size_t r) {
    CounterRng rng(mix_seed(options.seed, r), RngPurpose::kPartition);
    candidates[r] = canonical_parts(multilevel_run(graph, k, static_cast<int>(cap), rng));
  });
  CountyPartition best;
  best.k = k;
  double best_cut = std::numeric_limits<double>::infinity();
  for (const auto& parts : candidates) {
    if (!is_feasible(parts, k, cap)) continue;
    const double cut = cut_weight(graph, parts);
    if (best.parts.empty() || better(cut, parts, best_cut, best.parts)) {
      best_cut = cut;
      best.parts = parts;
    }
  }
  if (best.parts.empty()) throw NumericalError(fmt::format("no restart produced a feasible {}-way partition", k));
  finish(best, graph);
  return best;
}

void for_each_partition(std::size_t n, int k, std::size_t cap, const std::function<void(std::span<const int>)>& fn) {
  std::vector<int> parts(n, 0);
  std::vector<std::size_t> size(k, 0);
  // Restricted-growth strings enumerate each set partition once, in
  // lexicographic order of the canonical labeling.
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int used) {
    if (n - i < static_cast<std::size_t>(k - used)) return;
    if (i == n) {
      if (used == k) fn(parts);
      return;
    }
    const int top = std::min(used, k - 1);
    for (int p = 0; p <= top; ++p) {
      if (size[p] + 1 > cap) continue;
      parts[i] = p;
      ++size[p];
      rec(i + 1, std::max(used, p + 1));
      --size[p];
    }
  };
  rec(0, 0);
}

CountyPartition brute_force_kcut(const CountyGraph& graph, int k, double epsilon) {
  const std::size_t n = graph.size();
  if (n > 12) throw ValidationError("brute-force k-cut is limited to 12 counties");
  check_k(n, k);
  const std::size_t cap = part_size_cap(n, k, epsilon);
  CountyPartition best;
  best.k = k;
  double best_cut = std::numeric_limits<double>::infinity();
  for_each_partition(n, k, cap, [&](std::span<const int> parts) {
    const double cut = cut_weight(graph, parts);
    if (best.parts.empty() || better(cut, parts, best_cut, best.parts)) {
      best_cut = cut;
      best.parts.assign(parts.begin(), parts.end());
    }
  });
  if (best.parts.empty()) throw ValidationError("balance constraint is infeasible");
  finish(best, graph);
  return best;
}

namespace {

// Average r_M over counties with a defined ratio; fills per-county values.
double average_efficacy(const CounterfactualModel& model, std::span<const int> parts,
                        std::vector<std::optional<double>>* per_county = nullptr) {
  const auto scenario = Scenario::macro_county(std::vector<int>(parts.begin(), parts.end()));
  const std::size_t n = parts.size();
  double sum = 0.0;
  std::size_t count = 0;
  if (per_county != nullptr) per_county->assign(n, std::nullopt);
  for (int a = 0; a < static_cast<int>(n); ++a) {
    const auto r = efficacy_ratio(model, a, scenario.treatment_for(a, n));
    if (per_county != nullptr) (*per_county)[a] = r;
    if (r) {
      sum += *r;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void evaluate_partition(CountyPartition& partition, const CountyGraph& graph, const CounterfactualModel& model) {
  if (partition.parts.size() != graph.size()) throw ValidationError("partition does not cover every county");
  partition.average_r_m = average_efficacy(model, partition.parts, &partition.r_m);
  partition.cut = cut_weight(graph, partition.parts);
  std::vector<std::size_t> size(std::max(partition.k, 1), 0);
  for (int p : partition.parts) {
    if (p >= static_cast<int>(size.size())) size.resize(p + 1, 0);
    ++size[p];
  }
  partition.max_part_size = *std::max_element(size.begin(), size.end());
}

CountyPartition random_balanced_partition(std::size_t n, int k, std::uint64_t seed) {
  check_k(n, k);
  CounterRng rng(seed, RngPurpose::kPartition, 1);
  const auto order = shuffled(n, rng);
  CountyPartition out;
  out.k = k;
  out.parts.assign(n, 0);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t pos = 0;
  for (int p = 0; p < k; ++p) {
    const std::size_t size = base + (static_cast<std::size_t>(p) < extra ? 1 : 0);
    for (std::size_t s = 0; s < size; ++s) out.parts[order[pos++]] = p;
  }
  out.max_part_size = base + (extra > 0 ? 1 : 0);
  return out;
}

TradeoffRow tradeoff_point(const CountyGraph& graph, int k, std::span<const CounterfactualModel> trials,
                           const TradeoffOptions& options) {
  if (trials.empty()) throw ValidationError("trade-off needs at least one parameter draw");
  const std::size_t n = graph.size();
  TradeoffRow row;
  row.k = k;
  row.average_part_size = static_cast<double>(n) / k;
  const auto best = min_kcut(graph, k, options.kcut);
  row.parts = best.parts;
  row.cut = best.cut;
  std::vector<std::vector<int>> baselines;
  for (int s = 0; s < options.random_partitions; ++s) {
    baselines.push_back(random_balanced_partition(n, k, mix_seed(options.kcut.seed, 1000 + s)).parts);
  }
  std::vector<double> opt(trials.size()), rnd(trials.size());
  parallel_for(trials.size(), options.kcut.workers, [&](std::size_t t) {
    opt[t] = average_efficacy(trials[t], row.parts);
    double sum = 0.0;
    for (const auto& b : baselines) sum += average_efficacy(trials[t], b);
    rnd[t] = baselines.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(baselines.size());
  });
  row.optimized = summarize(opt);
  row.random = summarize(rnd);
  return row;
}

std::vector<TradeoffRow> tradeoff_curve(const CountyGraph& graph, std::span<const int> ks,
                                        std::span<const CounterfactualModel> trials, const TradeoffOptions& options) {
  std::vector<TradeoffRow> out;
  for (int k : ks) out.push_back(tradeoff_point(graph, k, trials, options));
  return out;
}

}  // namespace spill
