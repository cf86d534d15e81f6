#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/criteria.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/network.hpp"
#include "prunekit/oracle.hpp"
#include "prunekit/trace.hpp"

namespace prunekit {

struct StopRule {
    enum class Kind { TargetMaps, TargetFlops, MaxIterations, AccuracyFloor };
    Kind kind = Kind::MaxIterations;
    double value = 0.0;
};

struct OptimParams {
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    size_t batch_size = 32;
};

struct PruneConfig {
    std::string criterion = "taylor";
    NormKind normalization = NormKind::L2;
    double flops_lambda = 0.0;
    int updates_between_prunes = 30;
    OptimParams optim;
    StopRule stop;
    std::vector<int> layer_filter; // prunable conv layer indices; empty = all
    int obd_probes = 1;
    int obd_warmup_batches = 100; // extra probe batches before the first iteration
    int mi_bins = 10;

    void validate(const Network& net) const;
};

bool criterion_is_data_dependent(const std::string& name);

struct PruneResult {
    PruneTrace trace;
    bool stop_satisfied = false;
    std::string message; // set when the run ends without meeting the stop rule
    // regularization baseline only: mean kernel norm of the target layer
    // after fine-tuning, before any removal
    double final_mean_kernel_norm = 0.0;
};

// The iterative loop: fine-tune for updates_between_prunes steps while
// accumulating criterion statistics on those same minibatches, score, remove
// the single globally lowest-saliency channel structurally, log, repeat.
// Non-OBD accumulators reset every iteration; the OBD EMA persists.
PruneResult prune_run(Network& net, const Dataset& train, const Dataset& test,
                      const PruneConfig& config, uint64_t seed);

// Seeded shuffled minibatch stream over a dataset.
class BatchStream {
public:
    BatchStream(const Dataset& ds, size_t batch_size, Rng rng);
    void next(Tensor& batch, std::vector<int>& labels);

private:
    const Dataset& ds_;
    size_t batch_size_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t pos_ = 0;
};

// Exactly `updates` SGD steps on shuffled minibatches. Optional hooks gather
// criterion statistics from the same passes used for the updates.
std::vector<double> finetune(Network& net, const Dataset& ds, size_t updates,
                             const OptimParams& optim, BatchStream& stream,
                             StatsAccumulator* acc = nullptr, bool want_gate_grads = false,
                             ObdEstimator* obd = nullptr, int obd_probes = 1,
                             Rng* obd_rng = nullptr);

struct RegBaselineConfig {
    int layer = 0;          // conv layer whose maps are penalized and pruned
    double gamma = 0.0;     // extra l2 penalty on that layer's kernels
    double threshold = 1e-5; // kernel l2 norm below which a map is removed (strict <)
    size_t updates = 0;
    OptimParams optim;
};

// Fine-tunes with the extra per-map kernel penalty (biases untouched), then
// structurally removes every map whose kernel l2 norm fell below the
// threshold. At least one map is always kept.
PruneResult regularization_baseline(Network& net, const Dataset& train, const Dataset& test,
                                    const RegBaselineConfig& config, uint64_t seed);

// Kernel l2 norm of one feature map (bias excluded).
double kernel_norm(const Network& net, int layer_index, int channel);

} // namespace prunekit
