#pragma once

#include <vector>

#include "spillover/assignment.hpp"
#include "spillover/domain.hpp"

namespace spill {

struct DiscontinuityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t points = 0;  // dense (week, cbg, poi) triples
  double mean_visits = 0.0;
};

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  std::int64_t points = 0;
};

struct DiscontinuityPlot {
  double bin_width = 0.5;
  std::vector<DiscontinuityBin> bins;  // ascending, empty bins omitted
  LinearFit left;                      // Z < 0
  LinearFit right;                     // Z >= 0
};

// Cross-county visits against the POI county's Z, for source counties that
// were compliant Purple with 0 <= Z <= source_max. Targets are adjacent,
// compliant and within |Z| <= target_window. Each dense triple is one point.
DiscontinuityPlot discontinuity_plot(const MobilityDataset& data, std::span<const AssignmentRecord> assignments,
                                     double bin_width = 0.5, double source_max = 5.0, double target_window = 5.0);

}  // namespace spill
