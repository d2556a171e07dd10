#pragma once

#include "asyncdiff/costsim.hpp"
#include "asyncdiff/denoiser.hpp"
#include "asyncdiff/diffusion.hpp"
#include "asyncdiff/executor.hpp"
#include "asyncdiff/mixture.hpp"
#include "asyncdiff/plan.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace asyncdiff {

using Json = nlohmann::json;

// schedule JSON shape: {"T": int, "betas": [..]}
Json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const Json& j);

// mixture JSON shape: {"weights": [..], "means": [[..]..], "covariances": [[[..]..]..]}
Json mixture_to_json(const GaussianMixture& gm);
GaussianMixture mixture_from_json(const Json& j);

Json plan_to_json(const ExecutionPlan& plan);
ExecutionPlan plan_from_json(const Json& j);

Json run_stats_to_json(const RunStats& stats);
Json latency_report_to_json(const LatencyReport& rep);

// Checkpoint: <base>.json metadata plus <base>.bin with all parameters as
// row-major little-endian 64-bit floats, in metadata tensor order.
void save_checkpoint(const std::filesystem::path& base, const LayeredDenoiser& m);
LayeredDenoiser load_checkpoint(const std::filesystem::path& base);

// fixed-format float for CSV cells: '.' decimal separator, stable bytes
std::string csv_double(double v);

}  // namespace asyncdiff
