#pragma once

#include <string>

#include <json.hpp>

#include "tracer/router.hpp"

namespace tracer {

/// User-facing run configuration shared by the CLI and the service. Seeded
/// from defaults, then a config file, then flags; environment variables
/// (TRACER_*) override everything and are applied last.
struct RunConfig {
    double alpha = 0.95;
    double floor = 0.05;
    SplitFractions splits;
    std::uint64_t seed = 42;
    bool pool_lr = true;
    bool pool_mlp = true;
    bool pool_centroid = true;
    std::string teacher_oracle;  // trace file serving cached teacher labels
    std::string teacher_url;     // remote teacher endpoint
    std::string out_dir = "tracer-out";
    TrainConfig train;
    ArtifactConfig artifacts;

    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;

    RouterConfig router_config() const;
};

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config_file(const std::string& path, RunConfig base = {});

/// TRACER_ALPHA, TRACER_FLOOR, TRACER_SEED, TRACER_SPLITS (a,b,c,d),
/// TRACER_POOL (comma list of lr,mlp,centroid), TRACER_TEACHER_ORACLE,
/// TRACER_TEACHER_URL, TRACER_OUT.
void apply_env_overrides(RunConfig& cfg);

/// Appends one JSON line to the run log, creating directories as needed.
void append_run_log(const std::string& path, const nlohmann::json& entry);

}  // namespace tracer
