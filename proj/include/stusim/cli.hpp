#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stusim/corpus.hpp"
#include "stusim/grader.hpp"
#include "stusim/metrics.hpp"
#include "stusim/rollout.hpp"
#include "stusim/serializer.hpp"

namespace stusim {

struct PathsConfig {
    std::string logs;
    LogFormat log_format = LogFormat::Jsonl;
    ColumnMap columns = default_column_map();
    std::string assignments;
    std::string output_dir = "out";
    // Derived from output_dir unless set.
    std::string corpus;
    std::string train;
    std::string test;
    std::string rollouts;
    std::string metrics;
};

struct GraderConfig {
    std::string backend = "replay";  // replay | subprocess
    std::string interpreter = "python3";
    std::string runner;
    std::string suites;
    ExecLimits limits;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t concurrency = 1;
    PathsConfig paths;
    FilterRules filter;
    SplitPolicy split_policy;
    std::optional<SampleSpec> test_sample;
    SerializeMode serialize;
    std::size_t budget = 4096;
    double dpo_beta = 0.5;
    int grpo_group = 4;
    int grpo_prefixes = 2;
    std::uint64_t grpo_seed = 0;
    GraderConfig grader;
    EndpointConfig endpoint;
    int horizon = 5;
    double max_abort_fraction = 0.1;
    bool regrade_ground_truth = false;
    int bins = 20;
    std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
    Averaging averaging = Averaging::Micro;
    std::vector<std::string> report_formats{"json", "csv", "markdown"};
};

/// Fills defaults and resolves relative paths against `base_dir`. Throws
/// ConfigError on unknown sections, wrong types or invalid values.
PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir);
PipelineConfig load_config(const std::string& path);
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Entry point of the stusim tool. Returns 0 on success, 1 on data errors
/// and 2 on configuration or usage errors.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace stusim
