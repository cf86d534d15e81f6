#pragma once

#include <compare>
#include <utility>
#include <vector>

#include "prunekit/criteria.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/network.hpp"
#include "prunekit/trace.hpp"

namespace prunekit {

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Mean loss / top-1 accuracy over the whole dataset in fixed sequential
// batches; deterministic and side-effect free.
EvalResult evaluate(const Network& net, const Dataset& ds, size_t batch_size);

struct OracleRecord {
    int layer = 0;
    int channel = 0;
    double delta_loss = 0.0;     // C(gate=0) - C(base), signed (oracle-loss)
    double abs_delta_loss = 0.0; // |delta_loss| (oracle-abs)
    double base_loss = 0.0;
};

// Single-map ablation over every unpruned channel: gate to 0, evaluate mean
// loss over the dataset, restore. No parameter updates happen; the network
// is returned to its exact initial state.
std::vector<OracleRecord> compute_oracle(Network& net, const Dataset& ds, size_t batch_size);

struct ChannelKey {
    int layer = 0;
    int channel = 0;
    auto operator<=>(const ChannelKey&) const = default;
};

// Position 0 holds rank 1 (most important).
using Ranking = std::vector<ChannelKey>;

// Sorts by score (descending when high_is_important), ties broken by
// ascending (layer, channel) so the result is a deterministic permutation.
Ranking rank_from_scores(std::vector<std::pair<ChannelKey, double>> scores,
                         bool high_is_important = true);

Ranking ranking_from_table(const SaliencyTable& table);
Ranking oracle_ranking(const std::vector<OracleRecord>& records, bool use_abs);

// Restriction of a ranking to one layer's channels, preserving order.
Ranking restrict_to_layer(const Ranking& ranking, int layer);

// S = 1 - 6/(N(N^2-1)) * sum d_i^2 over the rank differences.
double spearman(const Ranking& a, const Ranking& b);

struct LayerRankStats {
    int layer = 0;
    int min_rank = 0;
    int max_rank = 0;
    double median_rank = 0.0;
    size_t count = 0;
};
std::vector<LayerRankStats> layer_rank_stats(const Ranking& ranking);

// Gate channels off from least important upward without recomputing the
// ranking or updating parameters, evaluating after each removal.
PruneTrace oracle_trajectory(Network net, const Ranking& ranking, const Dataset& eval_ds,
                             size_t removals, size_t batch_size);

void write_oracle_csv(const std::vector<OracleRecord>& records, std::ostream& os);

} // namespace prunekit
