#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "spillover/assignment.hpp"
#include "spillover/counterfactual.hpp"
#include "spillover/estimator.hpp"
#include "spillover/partition.hpp"
#include "spillover/synth.hpp"
#include "spillover/zipmodel.hpp"

namespace spill {

using Json = nlohmann::ordered_json;

// Model artifacts round-trip bit-exactly.
Json to_json(const ModelParams& params);
ModelParams model_from_json(const Json& j);

Json to_json(const Summary& s);
Json to_json(const FitResult& result);
Json to_json(const BootstrapResult& result);
BootstrapResult bootstrap_from_json(const Json& j);

Json to_json(const AssignmentRecord& r, const MobilityDataset& data);
Json to_json(const FilteredDataset& filtered, const MobilityDataset& data);
Json to_json(const TriggerHistogram& h);

Json to_json(const PhiTable& phi, const MobilityDataset& data);
Json to_json(const CountyPartition& p, const MobilityDataset& data);
Json to_json(const EfficacyReport& report, const MobilityDataset& data);

// Keys missing from `j` keep the values already in `config`.
void update_from_json(WorldConfig& config, const Json& j);
Json to_json(const WorldConfig& config);
void update_from_json(FilterConfig& config, const Json& j);
Json to_json(const FilterConfig& config);
void update_from_json(FitConfig& config, const Json& j);
Json to_json(const FitConfig& config);
Json to_json(const RegimeSchedule& schedule);
RegimeSchedule schedule_from_json(const Json& j);

Json ground_truth_json(const SyntheticWorld& world);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace spill
