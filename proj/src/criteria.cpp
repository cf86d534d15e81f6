#include "prunekit/criteria.hpp"

#include <algorithm>
#include <cmath>

#include "prunekit/errors.hpp"

namespace prunekit {

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "none") return NormKind::None;
    if (s == "l1") return NormKind::L1;
    if (s == "l2") return NormKind::L2;
    if (s == "minmax") return NormKind::MinMax;
    throw ConfigError("unknown normalization kind: " + s);
}

const char* norm_kind_name(NormKind k) {
    switch (k) {
        case NormKind::None: return "none";
        case NormKind::L1: return "l1";
        case NormKind::L2: return "l2";
        case NormKind::MinMax: return "minmax";
    }
    return "?";
}

SaliencyTable weight_criterion(const Network& net) {
    SaliencyTable table;
    table.criterion = "weight";
    for (int li : net.conv_layer_indices()) {
        const Layer& l = net.layers[static_cast<size_t>(li)];
        const size_t per_map = l.weight.value.size() / static_cast<size_t>(l.out_channels);
        for (int ch = 0; ch < l.out_channels; ++ch) {
            double acc = 0.0;
            const size_t base = static_cast<size_t>(ch) * per_map;
            for (size_t i = 0; i < per_map; ++i) {
                const double w = l.weight.value[base + i];
                acc += w * w;
            }
            const double score = acc / static_cast<double>(per_map);
            table.entries.push_back({li, ch, score, score});
        }
    }
    return table;
}

SaliencyTable random_criterion(const Network& net, uint64_t seed) {
    Rng rng = Rng::stream(seed, "random-criterion");
    SaliencyTable table;
    table.criterion = "random";
    for (int li : net.conv_layer_indices()) {
        const Layer& l = net.layers[static_cast<size_t>(li)];
        for (int ch = 0; ch < l.out_channels; ++ch) {
            const double score = rng.uniform();
            table.entries.push_back({li, ch, score, score});
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// StatsAccumulator

void StatsAccumulator::observe(const Network& net, const ForwardCache& cache,
                               const GateGrads* gate_grads) {
    for (int li : net.conv_layer_indices()) {
        const Tensor& act = conv_activation(net, cache, li);
        const size_t n = act.dim(0), c = act.dim(1), hw = act.dim(2) * act.dim(3);
        auto& chans = stats_[li];
        if (chans.empty()) chans.resize(c);
        if (chans.size() != c)
            throw UsageError("accumulator: channel count changed; reset() required");

        for (size_t k = 0; k < c; ++k) {
            ChannelStats& s = chans[k];
            for (size_t ni = 0; ni < n; ++ni) {
                const size_t base = (ni * c + k) * hw;
                double ex_sum = 0.0;
                for (size_t m = 0; m < hw; ++m) {
                    const double a = act[base + m];
                    ex_sum += a;
                    s.sum += a;
                    s.sum_sq += a * a;
                    if (a > 0.0) ++s.positive;
                }
                s.count += hw;
                s.mi_samples.emplace_back(ex_sum / static_cast<double>(hw), cache.labels[ni]);
            }
            if (gate_grads) {
                const Tensor& gg = gate_grads->per_layer[static_cast<size_t>(li)];
                // gg carries the batch-mean-loss gradient; scale by N to get
                // the per-example value Eq-style: |(1/M) sum_m dC_n/dz * z|
                for (size_t ni = 0; ni < n; ++ni) {
                    s.taylor_sum += std::abs(gg.at(ni, k)) * static_cast<double>(n) /
                                    static_cast<double>(hw);
                    ++s.examples;
                }
            }
        }
    }
    ++batches_;
    if (gate_grads) ++taylor_batches_;
}

void StatsAccumulator::reset() {
    stats_.clear();
    batches_ = 0;
    taylor_batches_ = 0;
}

ActivationTables StatsAccumulator::activation_criteria() const {
    if (batches_ == 0) throw UsageError("accumulator: no batches observed");
    ActivationTables t;
    t.mean.criterion = "activation_mean";
    t.stddev.criterion = "activation_std";
    t.apoz.criterion = "apoz";
    for (const auto& [li, chans] : stats_) {
        for (size_t k = 0; k < chans.size(); ++k) {
            const ChannelStats& s = chans[k];
            const double n = static_cast<double>(s.count);
            const double mean = s.sum / n;
            const double var = std::max(0.0, s.sum_sq / n - mean * mean);
            const double apoz = static_cast<double>(s.positive) / n;
            t.mean.entries.push_back({li, static_cast<int>(k), mean, mean});
            const double sd = std::sqrt(var);
            t.stddev.entries.push_back({li, static_cast<int>(k), sd, sd});
            t.apoz.entries.push_back({li, static_cast<int>(k), apoz, apoz});
        }
    }
    return t;
}

SaliencyTable StatsAccumulator::taylor_criterion() const {
    if (batches_ == 0) throw UsageError("accumulator: no batches observed");
    if (taylor_batches_ != batches_)
        throw UsageError("accumulator: taylor criterion requires gate gradients on every batch");
    SaliencyTable table;
    table.criterion = "taylor";
    for (const auto& [li, chans] : stats_) {
        for (size_t k = 0; k < chans.size(); ++k) {
            const ChannelStats& s = chans[k];
            const double score = s.taylor_sum / static_cast<double>(s.examples);
            table.entries.push_back({li, static_cast<int>(k), score, score});
        }
    }
    return table;
}

namespace {

double entropy_from_counts(const std::vector<double>& counts, double total) {
    double h = 0.0;
    for (double c : counts) {
        if (c <= 0.0) continue; // 0*log(0) := 0
        const double p = c / total;
        h -= p * std::log(p);
    }
    return h;
}

} // namespace

SaliencyTable StatsAccumulator::mutual_info_criterion(int bins) const {
    if (batches_ == 0) throw UsageError("accumulator: no batches observed");
    if (bins < 1) throw UsageError("mutual_info: bins must be >= 1");
    SaliencyTable table;
    table.criterion = "mutual_info";
    for (const auto& [li, chans] : stats_) {
        for (size_t k = 0; k < chans.size(); ++k) {
            const auto& samples = chans[k].mi_samples;
            if (samples.size() < 2)
                throw UsageError("mutual_info: need at least 2 examples");
            double lo = samples[0].first, hi = samples[0].first;
            int max_label = 0;
            for (const auto& [v, y] : samples) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                max_label = std::max(max_label, y);
            }
            const int classes = max_label + 1;
            const double width = hi - lo;
            std::vector<double> joint(static_cast<size_t>(bins) * classes, 0.0);
            std::vector<double> px(static_cast<size_t>(bins), 0.0);
            std::vector<double> py(static_cast<size_t>(classes), 0.0);
            for (const auto& [v, y] : samples) {
                int b = 0;
                if (width > 0.0)
                    b = std::min(bins - 1,
                                 static_cast<int>((v - lo) / width * static_cast<double>(bins)));
                joint[static_cast<size_t>(b) * classes + y] += 1.0;
                px[static_cast<size_t>(b)] += 1.0;
                py[static_cast<size_t>(y)] += 1.0;
            }
            const double total = static_cast<double>(samples.size());
            const double ig = entropy_from_counts(px, total) + entropy_from_counts(py, total) -
                              entropy_from_counts(joint, total);
            table.entries.push_back({li, static_cast<int>(k), ig, ig});
        }
    }
    return table;
}

// ---------------------------------------------------------------------------
// ObdEstimator

void ObdEstimator::observe_batch(Network& net, const Tensor& batch,
                                 const std::vector<int>& labels, int probes, Rng& rng) {
    if (probes < 1) throw UsageError("obd: probes must be >= 1");
    const auto convs = net.conv_layer_indices();

    std::map<int, std::vector<double>> saved;
    for (int li : convs) saved[li] = net.layers[static_cast<size_t>(li)].gate;

    std::map<int, std::vector<double>> est;
    for (int li : convs)
        est[li].assign(net.layers[static_cast<size_t>(li)].gate.size(), 0.0);

    auto gate_gradient = [&](void) {
        ForwardCache cache = net.forward(batch, labels);
        GateGrads gg = net.backward(cache);
        std::map<int, std::vector<double>> total;
        for (int li : convs) {
            const Tensor& t = gg.per_layer[static_cast<size_t>(li)];
            std::vector<double> sums(t.dim(1), 0.0);
            for (size_t ni = 0; ni < t.dim(0); ++ni)
                for (size_t k = 0; k < t.dim(1); ++k) sums[k] += t.at(ni, k);
            total[li] = std::move(sums);
        }
        return total;
    };

    bool finite = true;
    for (int p = 0; p < probes && finite; ++p) {
        std::map<int, std::vector<double>> v;
        for (int li : convs) {
            auto& vl = v[li];
            vl.resize(saved[li].size());
            for (double& x : vl) x = rng.rademacher();
        }
        for (int li : convs) {
            Layer& l = net.layers[static_cast<size_t>(li)];
            for (size_t k = 0; k < l.gate.size(); ++k) l.gate[k] = saved[li][k] + eps_ * v[li][k];
        }
        net.bump_revision();
        auto gplus = gate_gradient();
        for (int li : convs) {
            Layer& l = net.layers[static_cast<size_t>(li)];
            for (size_t k = 0; k < l.gate.size(); ++k) l.gate[k] = saved[li][k] - eps_ * v[li][k];
        }
        net.bump_revision();
        auto gminus = gate_gradient();

        for (int li : convs)
            for (size_t k = 0; k < est[li].size(); ++k) {
                const double hv = (gplus[li][k] - gminus[li][k]) / (2.0 * eps_);
                const double e = v[li][k] * hv;
                if (!std::isfinite(e)) finite = false;
                est[li][k] += e;
            }
    }

    // restore exactly
    for (int li : convs) net.layers[static_cast<size_t>(li)].gate = saved[li];
    net.bump_revision();
    net.zero_grads();

    if (!finite) {
        ++skipped_;
        return;
    }

    for (auto& [li, e] : est)
        for (double& x : e) x /= static_cast<double>(probes);

    if (!initialized_) {
        diag_ = std::move(est);
        initialized_ = true;
    } else {
        for (auto& [li, e] : est) {
            auto& d = diag_[li];
            if (d.size() != e.size())
                throw UsageError("obd: channel count changed without on_prune()");
            for (size_t k = 0; k < e.size(); ++k) d[k] = ema_ * d[k] + (1.0 - ema_) * e[k];
        }
    }
    ++batches_;
}

void ObdEstimator::on_prune(int layer_index, int channel) {
    auto it = diag_.find(layer_index);
    if (it == diag_.end()) return;
    if (channel >= 0 && static_cast<size_t>(channel) < it->second.size())
        it->second.erase(it->second.begin() + channel);
}

SaliencyTable ObdEstimator::table(const Network& net) const {
    if (!initialized_) throw UsageError("obd: no batches observed");
    SaliencyTable table;
    table.criterion = "obd";
    for (int li : net.conv_layer_indices()) {
        const auto it = diag_.find(li);
        if (it == diag_.end() ||
            it->second.size() != net.layers[static_cast<size_t>(li)].gate.size())
            throw UsageError("obd: estimator out of sync with network");
        for (size_t k = 0; k < it->second.size(); ++k) {
            const double score = 0.5 * std::abs(it->second[k]);
            table.entries.push_back({li, static_cast<int>(k), score, score});
        }
    }
    return table;
}

void ObdEstimator::reset() {
    diag_.clear();
    initialized_ = false;
    batches_ = 0;
    skipped_ = 0;
}

// ---------------------------------------------------------------------------
// Normalization / regularization / combination

SaliencyTable normalize(SaliencyTable table, NormKind kind) {
    if (kind == NormKind::None) {
        table.norm = kind;
        return table;
    }
    std::map<int, std::vector<size_t>> by_layer;
    for (size_t i = 0; i < table.entries.size(); ++i)
        by_layer[table.entries[i].layer].push_back(i);

    for (const auto& [li, idxs] : by_layer) {
        switch (kind) {
            case NormKind::L2: {
                double acc = 0.0;
                for (size_t i : idxs) acc += table.entries[i].value * table.entries[i].value;
                const double norm = std::sqrt(acc);
                if (norm > 0.0)
                    for (size_t i : idxs) table.entries[i].value /= norm;
                break;
            }
            case NormKind::L1: {
                double acc = 0.0;
                for (size_t i : idxs) acc += std::abs(table.entries[i].value);
                if (acc > 0.0)
                    for (size_t i : idxs) table.entries[i].value /= acc;
                break;
            }
            case NormKind::MinMax: {
                double lo = table.entries[idxs[0]].value, hi = lo;
                for (size_t i : idxs) {
                    lo = std::min(lo, table.entries[i].value);
                    hi = std::max(hi, table.entries[i].value);
                }
                if (hi > lo)
                    for (size_t i : idxs)
                        table.entries[i].value = (table.entries[i].value - lo) / (hi - lo);
                break;
            }
            case NormKind::None:
                break;
        }
    }
    table.norm = kind;
    return table;
}

SaliencyTable flops_regularize(SaliencyTable table, const FlopsTable& flops, double lambda) {
    for (SaliencyEntry& e : table.entries)
        e.value -= lambda * flops.neuron_flops(e.layer) / 1e6;
    return table;
}

SaliencyTable combine(const SaliencyTable& a, const SaliencyTable& b, double lambda) {
    if (a.entries.size() != b.entries.size())
        throw UsageError("combine: tables cover different channel sets");
    SaliencyTable out;
    out.criterion = a.criterion + "+" + b.criterion;
    out.norm = a.norm;
    out.entries.reserve(a.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i) {
        const SaliencyEntry& ea = a.entries[i];
        const SaliencyEntry& eb = b.entries[i];
        if (ea.layer != eb.layer || ea.channel != eb.channel)
            throw UsageError("combine: tables cover different channel sets");
        const double v = (1.0 - lambda) * ea.value + lambda * eb.value;
        out.entries.push_back({ea.layer, ea.channel, v, v});
    }
    return out;
}

} // namespace prunekit
