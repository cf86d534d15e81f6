#include "prunekit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "prunekit/errors.hpp"

namespace prunekit {

EvalResult evaluate(const Network& net, const Dataset& ds, size_t batch_size) {
    if (ds.size() == 0) throw DataError("evaluate: empty dataset");
    double loss_sum = 0.0;
    size_t correct_weighted = 0;
    for (size_t begin = 0; begin < ds.size(); begin += batch_size) {
        const size_t count = std::min(batch_size, ds.size() - begin);
        ForwardCache cache = net.forward(ds.batch(begin, count), ds.label_slice(begin, count));
        loss_sum += cache.loss * static_cast<double>(count);
        correct_weighted += static_cast<size_t>(
            std::llround(cache.accuracy * static_cast<double>(count)));
    }
    EvalResult r;
    r.loss = loss_sum / static_cast<double>(ds.size());
    r.accuracy = static_cast<double>(correct_weighted) / static_cast<double>(ds.size());
    return r;
}

std::vector<OracleRecord> compute_oracle(Network& net, const Dataset& ds, size_t batch_size) {
    const double base_loss = evaluate(net, ds, batch_size).loss;
    std::vector<OracleRecord> records;
    for (int li : net.conv_layer_indices()) {
        const Layer& l = net.layers[static_cast<size_t>(li)];
        for (int ch = 0; ch < l.out_channels; ++ch) {
            if (l.gate[static_cast<size_t>(ch)] == 0.0) continue;
            net.set_gate(li, ch, 0.0);
            const double ablated = evaluate(net, ds, batch_size).loss;
            net.set_gate(li, ch, 1.0);
            OracleRecord r;
            r.layer = li;
            r.channel = ch;
            r.delta_loss = ablated - base_loss;
            r.abs_delta_loss = std::abs(r.delta_loss);
            r.base_loss = base_loss;
            records.push_back(r);
        }
    }
    return records;
}

Ranking rank_from_scores(std::vector<std::pair<ChannelKey, double>> scores,
                         bool high_is_important) {
    std::sort(scores.begin(), scores.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second)
            return high_is_important ? a.second > b.second : a.second < b.second;
        return a.first < b.first;
    });
    Ranking out;
    out.reserve(scores.size());
    for (const auto& [key, score] : scores) out.push_back(key);
    return out;
}

Ranking ranking_from_table(const SaliencyTable& table) {
    std::vector<std::pair<ChannelKey, double>> scores;
    scores.reserve(table.entries.size());
    for (const SaliencyEntry& e : table.entries)
        scores.emplace_back(ChannelKey{e.layer, e.channel}, e.value);
    return rank_from_scores(std::move(scores), true);
}

Ranking oracle_ranking(const std::vector<OracleRecord>& records, bool use_abs) {
    std::vector<std::pair<ChannelKey, double>> scores;
    scores.reserve(records.size());
    for (const OracleRecord& r : records)
        scores.emplace_back(ChannelKey{r.layer, r.channel},
                            use_abs ? r.abs_delta_loss : r.delta_loss);
    return rank_from_scores(std::move(scores), true);
}

Ranking restrict_to_layer(const Ranking& ranking, int layer) {
    Ranking out;
    for (const ChannelKey& k : ranking)
        if (k.layer == layer) out.push_back(k);
    return out;
}

double spearman(const Ranking& a, const Ranking& b) {
    const size_t n = a.size();
    if (n != b.size() || n < 2)
        throw UsageError("spearman: rankings must cover the same set, N >= 2");
    std::map<ChannelKey, size_t> rank_b;
    for (size_t i = 0; i < n; ++i) rank_b[b[i]] = i + 1;
    if (rank_b.size() != n) throw UsageError("spearman: duplicate channels in ranking");
    double sum_d2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
        auto it = rank_b.find(a[i]);
        if (it == rank_b.end()) throw UsageError("spearman: rankings cover different sets");
        const double d = static_cast<double>(i + 1) - static_cast<double>(it->second);
        sum_d2 += d * d;
    }
    const double nn = static_cast<double>(n);
    return 1.0 - 6.0 * sum_d2 / (nn * (nn * nn - 1.0));
}

std::vector<LayerRankStats> layer_rank_stats(const Ranking& ranking) {
    std::map<int, std::vector<int>> by_layer;
    for (size_t i = 0; i < ranking.size(); ++i)
        by_layer[ranking[i].layer].push_back(static_cast<int>(i + 1));
    std::vector<LayerRankStats> out;
    for (auto& [layer, ranks] : by_layer) {
        std::sort(ranks.begin(), ranks.end());
        LayerRankStats s;
        s.layer = layer;
        s.count = ranks.size();
        s.min_rank = ranks.front();
        s.max_rank = ranks.back();
        const size_t m = ranks.size();
        s.median_rank = (m % 2 == 1)
                            ? static_cast<double>(ranks[m / 2])
                            : 0.5 * (ranks[m / 2 - 1] + ranks[m / 2]);
        out.push_back(s);
    }
    return out;
}

PruneTrace oracle_trajectory(Network net, const Ranking& ranking, const Dataset& eval_ds,
                             size_t removals, size_t batch_size) {
    PruneTrace trace;
    trace.initial_maps = net.active_maps();
    trace.initial_flops = net.flops().total;
    const EvalResult base = evaluate(net, eval_ds, batch_size);
    trace.base_train_loss = base.loss;
    trace.base_train_accuracy = base.accuracy;
    trace.base_test_accuracy = base.accuracy;

    removals = std::min(removals, ranking.size());
    for (size_t i = 0; i < removals; ++i) {
        const ChannelKey key = ranking[ranking.size() - 1 - i]; // least important first
        net.set_gate(key.layer, key.channel, 0.0);
        const EvalResult r = evaluate(net, eval_ds, batch_size);
        TraceRow row;
        row.iteration = static_cast<int>(i + 1);
        row.layer = key.layer;
        row.channel = key.channel;
        row.saliency = 0.0;
        row.remaining_maps = net.active_maps();
        row.flops = net.flops().total;
        row.train_loss = r.loss;
        row.train_accuracy = r.accuracy;
        row.test_accuracy = r.accuracy;
        trace.append(row);
    }
    return trace;
}

void write_oracle_csv(const std::vector<OracleRecord>& records, std::ostream& os) {
    Ranking by_loss = oracle_ranking(records, false);
    Ranking by_abs = oracle_ranking(records, true);
    std::map<ChannelKey, int> rank_loss, rank_abs;
    for (size_t i = 0; i < by_loss.size(); ++i) rank_loss[by_loss[i]] = static_cast<int>(i + 1);
    for (size_t i = 0; i < by_abs.size(); ++i) rank_abs[by_abs[i]] = static_cast<int>(i + 1);

    csv_row(os, {"layer", "channel", "delta_loss", "abs_delta_loss", "global_rank_loss",
                 "global_rank_abs"});
    for (const OracleRecord& r : records) {
        const ChannelKey key{r.layer, r.channel};
        csv_row(os, {std::to_string(r.layer), std::to_string(r.channel),
                     csv_double(r.delta_loss), csv_double(r.abs_delta_loss),
                     std::to_string(rank_loss[key]), std::to_string(rank_abs[key])});
    }
}

void write_saliency_csv(const SaliencyTable& table, std::ostream& os) {
    Ranking ranking = ranking_from_table(table);
    std::map<ChannelKey, int> rank;
    for (size_t i = 0; i < ranking.size(); ++i) rank[ranking[i]] = static_cast<int>(i + 1);
    csv_row(os, {"layer", "channel", "raw_score", "normalized_score", "rank"});
    for (const SaliencyEntry& e : table.entries)
        csv_row(os, {std::to_string(e.layer), std::to_string(e.channel), csv_double(e.raw),
                     csv_double(e.value), std::to_string(rank[ChannelKey{e.layer, e.channel}])});
}

} // namespace prunekit
