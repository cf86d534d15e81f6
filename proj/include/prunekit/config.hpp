#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "prunekit/criteria.hpp"
#include "prunekit/pruner.hpp"

namespace prunekit {

struct ModelConfig {
    std::vector<int> conv_channels = {8, 16}; // one conv+relu+pool block per entry
    int kernel = 3;
};

struct DatasetConfig {
    std::string source = "synthetic"; // "synthetic" | "idx"
    // synthetic
    int classes = 4;
    int per_class = 100;
    int test_per_class = 25;
    int hw = 16;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
};

struct TrainConfig {
    size_t updates = 3000;
    OptimParams optim{1e-2, 0.9, 1e-4, 32};
};

struct CorrelateConfig {
    std::vector<std::string> criteria = {"weight",      "activation_mean", "activation_std",
                                         "apoz",        "mutual_info",     "taylor",
                                         "obd",         "random"};
    int passes = 3; // epochs of statistics accumulation over the training set
    size_t batch_size = 32;
    int obd_probes = 10;
    int mi_bins = 10;
};

struct OracleConfig {
    size_t batch_size = 64;
};

struct BaselineConfig {
    int layer = -1; // conv layer index; -1 = last conv layer
    std::vector<double> gammas = {0.0, 0.1, 1.0, 10.0};
    double threshold = 1e-5;
    size_t updates = 500;
    OptimParams optim{1e-3, 0.9, 1e-4, 32};
};

// One JSON document describes the whole experiment; each CLI command runs
// its phase. Unknown keys are rejected with field-level messages.
struct ExperimentConfig {
    uint64_t seed = 1;
    std::string output_dir;
    std::optional<std::string> model_path; // load instead of training in-process
    ModelConfig model;
    DatasetConfig dataset;
    TrainConfig train;
    PruneConfig prune;
    OracleConfig oracle;
    CorrelateConfig correlate;
    BaselineConfig baseline;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const; // config echo for trace artifacts
};

} // namespace prunekit
