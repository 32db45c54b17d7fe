#pragma once

#include <filesystem>

#include "spillover/domain.hpp"

namespace spill {

// Reads counties.csv, adjacency.csv, metrics.csv, tiers.csv, cbgs.csv,
// pois.csv, edges.csv and devices.csv from `dir` and validates the result.
MobilityDataset load_dataset(const std::filesystem::path& dir);

// Writes the same eight tables. Output is byte-stable for a given dataset.
void save_dataset(const MobilityDataset& data, const std::filesystem::path& dir);

inline constexpr const char* kDatasetFiles[] = {"counties.csv", "adjacency.csv", "metrics.csv", "tiers.csv",
                                                "cbgs.csv",     "pois.csv",      "edges.csv",   "devices.csv"};

}  // namespace spill
