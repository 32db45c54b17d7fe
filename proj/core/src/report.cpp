#include "spillover/report.hpp"

#include <cmath>
#include <map>

#include "spillover/error.hpp"

namespace spill {

namespace {

struct Moments {
  double n = 0, x = 0, y = 0, xx = 0, xy = 0;

  void add(double count, double z, double visits) {
    n += count;
    x += count * z;
    y += visits;
    xx += count * z * z;
    xy += z * visits;
  }

  LinearFit fit() const {
    LinearFit f;
    f.points = static_cast<std::int64_t>(n);
    if (n <= 0) return f;
    const double sxx = xx - x * x / n;
    f.slope = sxx > 0 ? (xy - x * y / n) / sxx : 0.0;
    f.intercept = (y - f.slope * x) / n;
    return f;
  }
};

}  // namespace

DiscontinuityPlot discontinuity_plot(const MobilityDataset& data, std::span<const AssignmentRecord> assignments,
                                     double bin_width, double source_max, double target_window) {
  if (!(bin_width > 0)) throw ValidationError("bin width must be positive");
  const std::size_t n = data.counties.size();
  std::vector<const AssignmentRecord*> by_cell(data.weeks.size() * n, nullptr);
  for (const auto& r : assignments) {
    const int w = data.week_index(r.week);
    if (w >= 0 && r.compliant) by_cell[static_cast<std::size_t>(w) * n + r.county] = &r;
  }

  DiscontinuityPlot plot;
  plot.bin_width = bin_width;
  std::map<long, std::pair<std::int64_t, double>> bins;
  Moments left, right;
  for (int w = 0; w < static_cast<int>(data.weeks.size()); ++w) {
    for (int a = 0; a < static_cast<int>(n); ++a) {
      const auto* src = by_cell[static_cast<std::size_t>(w) * n + a];
      if (!src || src->tier != Tier::kPurple || src->z < 0 || src->z > source_max) continue;
      for (int b : data.adjacency.neighbors(a)) {
        const auto* dst = by_cell[static_cast<std::size_t>(w) * n + b];
        if (!dst || std::abs(dst->z) > target_window) continue;
        double visits = 0;
        for (int c : data.cbgs_in(a)) {
          for (const auto& e : data.edges_from(w, c)) {
            if (data.pois[e.poi].county == b) visits += e.visits;
          }
        }
        const auto count = static_cast<std::int64_t>(data.cbgs_in(a).size() * data.pois_in(b).size());
        if (count == 0) continue;
        auto& bin = bins[static_cast<long>(std::floor(dst->z / bin_width))];
        bin.first += count;
        bin.second += visits;
        (dst->z < 0 ? left : right).add(static_cast<double>(count), dst->z, visits);
      }
    }
  }
  for (const auto& [index, agg] : bins) {
    DiscontinuityBin bin;
    bin.lo = static_cast<double>(index) * bin_width;
    bin.hi = bin.lo + bin_width;
    bin.points = agg.first;
    bin.mean_visits = agg.second / static_cast<double>(agg.first);
    plot.bins.push_back(bin);
  }
  plot.left = left.fit();
  plot.right = right.fit();
  return plot;
}

}  // namespace spill
