#pragma once

#include <string>

#include "prunekit/config.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/network.hpp"

namespace prunekit {

// Runs one CLI command end to end: builds datasets and model from the config
// (training in-process when no model_path is given) and writes the command's
// artifacts into the output directory. Everything except the timestamp field
// in JSON metrics is a pure function of (config, seed).
class Experiment {
public:
    explicit Experiment(ExperimentConfig config) : cfg_(std::move(config)) {}

    void set_seed(uint64_t seed) { cfg_.seed = seed; }
    void set_output_dir(std::string dir) { cfg_.output_dir = std::move(dir); }
    void set_force(bool force) { force_ = force; }

    const ExperimentConfig& config() const { return cfg_; }

    // command in {train, oracle, correlate, prune, baseline-reg}
    void run(const std::string& command);

    // exposed for tests
    Network build_model(int class_count, int hw) const;
    Dataset train_dataset() const;
    Dataset test_dataset() const;
    Network trained_model(const Dataset& train, const Dataset& test) const;

private:
    void prepare_output_dir() const;
    void cmd_train();
    void cmd_oracle();
    void cmd_correlate();
    void cmd_prune();
    void cmd_baseline_reg();
    Network obtain_model(const Dataset& train, const Dataset& test) const;

    ExperimentConfig cfg_;
    bool force_ = false;
};

} // namespace prunekit
