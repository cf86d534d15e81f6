#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "prunekit/network.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

enum class NormKind { None, L1, L2, MinMax };

NormKind norm_kind_from_string(const std::string& s);
const char* norm_kind_name(NormKind k);

struct SaliencyEntry {
    int layer = 0;   // layer index in the network
    int channel = 0; // output channel within that conv layer
    double raw = 0.0;
    double value = 0.0; // after normalization / regularization / combination
};

struct SaliencyTable {
    std::string criterion;
    NormKind norm = NormKind::None;
    std::vector<SaliencyEntry> entries; // ordered by (layer, channel)
};

// Data-free: mean squared kernel weight over the C_in*K*K weights producing
// each map, bias excluded.
SaliencyTable weight_criterion(const Network& net);

// i.i.d. uniform(0,1) scores from a seeded stream.
SaliencyTable random_criterion(const Network& net, uint64_t seed);

struct ActivationTables {
    SaliencyTable mean;
    SaliencyTable stddev;
    SaliencyTable apoz; // fraction of strictly positive activations
};

// Running statistics over fine-tuning minibatches. Observe one forward
// (and, for the Taylor criterion, its backward gate gradients) per batch.
// Resettable to the exact zero state between pruning iterations.
class StatsAccumulator {
public:
    void observe(const Network& net, const ForwardCache& cache,
                 const GateGrads* gate_grads = nullptr);
    void reset();

    bool empty() const { return batches_ == 0; }
    uint64_t batches() const { return batches_; }

    ActivationTables activation_criteria() const;
    SaliencyTable taylor_criterion() const;
    SaliencyTable mutual_info_criterion(int bins = 10) const;

private:
    struct ChannelStats {
        double sum = 0.0;
        double sum_sq = 0.0;
        uint64_t positive = 0;
        uint64_t count = 0;
        double taylor_sum = 0.0; // sum over examples of |(1/M) sum_m grad*act|
        uint64_t examples = 0;
        std::vector<std::pair<double, int>> mi_samples; // (spatial mean, label)
    };
    std::map<int, std::vector<ChannelStats>> stats_; // conv layer index -> per channel
    uint64_t batches_ = 0;
    uint64_t taylor_batches_ = 0;
};

// Hessian-diagonal estimate over the gate coordinates via Rademacher probes,
// diag(H) = E[v .. Hv], with Hv taken as a central difference of the gate
// gradient at g +- eps*v. Per-batch estimates are blended with an EMA.
// Saliency is |diag|/2 (gate value is 1, so w^2 h/2 reduces to h/2).
class ObdEstimator {
public:
    explicit ObdEstimator(double ema_coeff = 0.99, double epsilon = 1e-4)
        : ema_(ema_coeff), eps_(epsilon) {}

    // Runs 2*probes forward/backward passes on the batch. Restores gates and
    // zeroes parameter gradients before returning. Non-finite probe results
    // cause the batch to be skipped and counted.
    void observe_batch(Network& net, const Tensor& batch, const std::vector<int>& labels,
                       int probes, Rng& rng);

    // Keeps the EMA aligned with the network after a structural removal.
    void on_prune(int layer_index, int channel);

    SaliencyTable table(const Network& net) const;

    // Raw EMA diagonal, for estimator verification.
    const std::map<int, std::vector<double>>& diagonal() const { return diag_; }
    uint64_t batches() const { return batches_; }
    uint64_t skipped() const { return skipped_; }
    void reset();

private:
    double ema_;
    double eps_;
    std::map<int, std::vector<double>> diag_;
    bool initialized_ = false;
    uint64_t batches_ = 0;
    uint64_t skipped_ = 0;
};

// Per-layer rescaling of `value`. Degenerate layers (all-zero norm, or
// max == min for minmax) pass through unchanged.
SaliencyTable normalize(SaliencyTable table, NormKind kind);

// value <- value - lambda * per_neuron_flops[layer] / 1e6. The 1e6 unit makes
// lambda = 1e-3 balance against unit-norm layer scores.
SaliencyTable flops_regularize(SaliencyTable table, const FlopsTable& flops, double lambda);

// Convex combination (1-lambda)*a + lambda*b of two tables over the same
// channel set (typically l2-normalized Taylor and mean-activation).
SaliencyTable combine(const SaliencyTable& a, const SaliencyTable& b, double lambda);

// CSV columns: layer, channel, raw_score, normalized_score, rank.
void write_saliency_csv(const SaliencyTable& table, std::ostream& os);

} // namespace prunekit
