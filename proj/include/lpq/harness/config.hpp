#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpq/model.hpp"

namespace lpq::harness {

struct OptimizerConfig {
    double lr = 1e-3;
    int steps = 500;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global gradient-norm clip; 0 disables.
    double grad_clip = 1.0;
    int batch_size = 1;
};

struct DatasetConfig {
    int clips = 16;
    int max_objects = 2;
    std::uint64_t seed = 7;
    // Use a single clip repeated `clips` times (utilization contrast runs).
    bool repeat_first = false;
};

struct RunConfig {
    ModelConfig model;
    OptimizerConfig optimizer;
    DatasetConfig dataset;
    std::uint64_t train_seed = 11;
    // Step indices where a curriculum would switch stages; unused at desk scale.
    std::vector<int> curriculum_stages;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
// Missing keys keep their defaults; unknown keys are validation errors.
RunConfig from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Stable digest used in report headers.
std::string content_hash(const std::string& bytes);

}  // namespace lpq::harness
