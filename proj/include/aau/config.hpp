#pragma once

#include <string>

#include "aau/backbone.hpp"
#include "aau/losses.hpp"

namespace aau {

// Training hyperparameters; paper-scale defaults are overridden by the toy
// preset and the config file.
struct TrainConfig {
    double lr = 1e-3;
    double lr_context = 2e-3; // context adjustment layer trains at 2x
    double weight_decay = 1e-4;
    int steps = 500;
};

struct RunConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    TrainConfig train;
};

// JSON round-trip; unknown keys are rejected ("unknown-key"). A "preset"
// string inside "model" is applied before individual overrides.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_file(const std::string& path);

ModelConfig model_config_from_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& cfg);

} // namespace aau
