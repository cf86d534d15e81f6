#include "prunekit/pruner.hpp"

#include <algorithm>
#include <cmath>

#include "prunekit/errors.hpp"

namespace prunekit {

bool criterion_is_data_dependent(const std::string& name) {
    return name == "taylor" || name == "activation_mean" || name == "activation_std" ||
           name == "apoz" || name == "mutual_info" || name == "obd";
}

namespace {

bool criterion_known(const std::string& name) {
    return name == "weight" || name == "random" || criterion_is_data_dependent(name);
}

} // namespace

void PruneConfig::validate(const Network& net) const {
    if (!criterion_known(criterion)) throw ConfigError("unknown criterion: " + criterion);
    if (updates_between_prunes < 0)
        throw ConfigError("updates_between_prunes must be >= 0");
    if (updates_between_prunes == 0 && criterion_is_data_dependent(criterion))
        throw ConfigError("criterion '" + criterion +
                          "' is data-dependent and requires updates_between_prunes > 0");
    if (optim.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (obd_probes < 1) throw ConfigError("obd_probes must be >= 1");
    if (mi_bins < 1) throw ConfigError("mi_bins must be >= 1");

    const auto convs = net.conv_layer_indices();
    for (int li : layer_filter)
        if (std::find(convs.begin(), convs.end(), li) == convs.end())
            throw ConfigError("layer_filter entry " + std::to_string(li) +
                              " is not a conv layer");
    if (stop.kind == StopRule::Kind::TargetMaps &&
        stop.value < static_cast<double>(convs.size()))
        throw ConfigError("target_maps is below the network minimum of one map per layer");
    if (stop.kind == StopRule::Kind::MaxIterations && stop.value < 1)
        throw ConfigError("max_iterations must be >= 1");
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(const Dataset& ds, size_t batch_size, Rng rng)
    : ds_(ds), batch_size_(std::min(batch_size, ds.size())), rng_(rng) {
    if (ds_.size() == 0) throw DataError("batch stream: empty dataset");
    order_.resize(ds_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
}

void BatchStream::next(Tensor& batch, std::vector<int>& labels) {
    if (pos_ + batch_size_ > order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
    }
    batch = ds_.batch_indices(order_, pos_, batch_size_);
    labels = ds_.label_indices(order_, pos_, batch_size_);
    pos_ += batch_size_;
}

std::vector<double> finetune(Network& net, const Dataset& ds, size_t updates,
                             const OptimParams& optim, BatchStream& stream,
                             StatsAccumulator* acc, bool want_gate_grads, ObdEstimator* obd,
                             int obd_probes, Rng* obd_rng) {
    (void)ds;
    std::vector<double> losses;
    losses.reserve(updates);
    Tensor batch;
    std::vector<int> labels;
    for (size_t u = 0; u < updates; ++u) {
        stream.next(batch, labels);
        ForwardCache cache = net.forward(batch, labels);
        if (!std::isfinite(cache.loss))
            throw NumericError("finetune: non-finite loss (diverged)");
        GateGrads gg = net.backward(cache);
        if (acc) acc->observe(net, cache, want_gate_grads ? &gg : nullptr);
        losses.push_back(cache.loss);
        net.sgd(optim.lr, optim.momentum, optim.weight_decay);
        if (obd) {
            if (!obd_rng) throw UsageError("finetune: obd estimator requires a probe rng");
            obd->observe_batch(net, batch, labels, obd_probes, *obd_rng);
        }
    }
    return losses;
}

namespace {

struct Candidate {
    bool found = false;
    int layer = 0;
    int channel = 0;
    double value = 0.0;
};

Candidate select_prune_candidate(const Network& net, const SaliencyTable& table,
                                 const std::vector<int>& layer_filter) {
    Candidate best;
    for (const SaliencyEntry& e : table.entries) {
        if (!layer_filter.empty() &&
            std::find(layer_filter.begin(), layer_filter.end(), e.layer) == layer_filter.end())
            continue;
        if (net.layers[static_cast<size_t>(e.layer)].out_channels < 2) continue;
        // entries are (layer, channel)-ordered, so strict < gives the
        // deterministic tie-break
        if (!best.found || e.value < best.value) {
            best.found = true;
            best.layer = e.layer;
            best.channel = e.channel;
            best.value = e.value;
        }
    }
    return best;
}

} // namespace

PruneResult prune_run(Network& net, const Dataset& train, const Dataset& test,
                      const PruneConfig& config, uint64_t seed) {
    config.validate(net);

    BatchStream stream(train, config.optim.batch_size, Rng::stream(seed, "finetune"));
    Rng obd_rng = Rng::stream(seed, "obd-probes");
    const uint64_t random_seed = Rng::derive_seed(seed, "prune-random");

    const bool use_obd = config.criterion == "obd";
    const bool use_acc = criterion_is_data_dependent(config.criterion) && !use_obd;
    const bool want_gate_grads = config.criterion == "taylor";

    StatsAccumulator acc;
    ObdEstimator obd;
    if (use_obd && config.obd_warmup_batches > 0) {
        Tensor batch;
        std::vector<int> labels;
        for (int i = 0; i < config.obd_warmup_batches; ++i) {
            stream.next(batch, labels);
            obd.observe_batch(net, batch, labels, config.obd_probes, obd_rng);
        }
    }

    PruneResult result;
    PruneTrace& trace = result.trace;
    trace.initial_maps = net.active_maps();
    trace.initial_flops = net.flops().total;
    {
        const EvalResult tr = evaluate(net, train, config.optim.batch_size);
        const EvalResult te = evaluate(net, test, config.optim.batch_size);
        trace.base_train_loss = tr.loss;
        trace.base_train_accuracy = tr.accuracy;
        trace.base_test_accuracy = te.accuracy;
    }

    for (int iteration = 1;; ++iteration) {
        acc.reset();
        finetune(net, train, static_cast<size_t>(config.updates_between_prunes), config.optim,
                 stream, use_acc ? &acc : nullptr, want_gate_grads, use_obd ? &obd : nullptr,
                 config.obd_probes, &obd_rng);

        SaliencyTable table;
        if (config.criterion == "weight")
            table = weight_criterion(net);
        else if (config.criterion == "random")
            table = random_criterion(net, random_seed + static_cast<uint64_t>(iteration));
        else if (config.criterion == "taylor")
            table = acc.taylor_criterion();
        else if (config.criterion == "activation_mean")
            table = acc.activation_criteria().mean;
        else if (config.criterion == "activation_std")
            table = acc.activation_criteria().stddev;
        else if (config.criterion == "apoz")
            table = acc.activation_criteria().apoz;
        else if (config.criterion == "mutual_info")
            table = acc.mutual_info_criterion(config.mi_bins);
        else if (config.criterion == "obd")
            table = obd.table(net);

        table = normalize(std::move(table), config.normalization);
        if (config.flops_lambda != 0.0)
            table = flops_regularize(std::move(table), net.flops(), config.flops_lambda);

        const Candidate cand = select_prune_candidate(net, table, config.layer_filter);
        if (!cand.found) {
            result.stop_satisfied = false;
            result.message = "stop rule not reached: no prunable channel remains";
            return result;
        }

        net.prune_channel(cand.layer, cand.channel);
        if (use_obd) obd.on_prune(cand.layer, cand.channel);

        const EvalResult tr = evaluate(net, train, config.optim.batch_size);
        const EvalResult te = evaluate(net, test, config.optim.batch_size);
        TraceRow row;
        row.iteration = iteration;
        row.layer = cand.layer;
        row.channel = cand.channel;
        row.saliency = cand.value;
        row.remaining_maps = net.active_maps();
        row.flops = net.flops().total;
        row.train_loss = tr.loss;
        row.train_accuracy = tr.accuracy;
        row.test_accuracy = te.accuracy;
        trace.append(row);

        bool done = false;
        switch (config.stop.kind) {
            case StopRule::Kind::TargetMaps:
                done = net.active_maps() <= static_cast<int>(config.stop.value);
                break;
            case StopRule::Kind::TargetFlops:
                done = net.flops().total <= config.stop.value;
                break;
            case StopRule::Kind::MaxIterations:
                done = iteration >= static_cast<int>(config.stop.value);
                break;
            case StopRule::Kind::AccuracyFloor:
                done = te.accuracy < config.stop.value;
                break;
        }
        if (done) {
            result.stop_satisfied = true;
            return result;
        }
    }
}

double kernel_norm(const Network& net, int layer_index, int channel) {
    const Layer& l = net.layers.at(static_cast<size_t>(layer_index));
    if (l.kind != LayerKind::Conv2d) throw UsageError("kernel_norm: layer is not conv");
    const size_t per_map = l.weight.value.size() / static_cast<size_t>(l.out_channels);
    const size_t base = static_cast<size_t>(channel) * per_map;
    double acc = 0.0;
    for (size_t i = 0; i < per_map; ++i) {
        const double w = l.weight.value[base + i];
        acc += w * w;
    }
    return std::sqrt(acc);
}

PruneResult regularization_baseline(Network& net, const Dataset& train, const Dataset& test,
                                    const RegBaselineConfig& config, uint64_t seed) {
    if (config.gamma < 0.0) throw ConfigError("baseline: gamma must be >= 0");
    Layer& target = net.layers.at(static_cast<size_t>(config.layer));
    if (target.kind != LayerKind::Conv2d)
        throw ConfigError("baseline: target layer is not conv");

    BatchStream stream(train, config.optim.batch_size, Rng::stream(seed, "baseline-finetune"));
    Tensor batch;
    std::vector<int> labels;
    for (size_t u = 0; u < config.updates; ++u) {
        stream.next(batch, labels);
        ForwardCache cache = net.forward(batch, labels);
        if (!std::isfinite(cache.loss))
            throw NumericError("baseline: non-finite loss (diverged)");
        net.backward(cache);
        // extra per-map kernel penalty; biases are kept to preserve the
        // expected output of a map driven to zero
        for (size_t i = 0; i < target.weight.value.size(); ++i)
            target.weight.grad[i] += config.gamma * target.weight.value[i];
        net.sgd(config.optim.lr, config.optim.momentum, config.optim.weight_decay);
    }

    PruneResult result;
    PruneTrace& trace = result.trace;
    trace.initial_maps = net.active_maps();
    trace.initial_flops = net.flops().total;
    {
        const EvalResult tr = evaluate(net, train, config.optim.batch_size);
        const EvalResult te = evaluate(net, test, config.optim.batch_size);
        trace.base_train_loss = tr.loss;
        trace.base_train_accuracy = tr.accuracy;
        trace.base_test_accuracy = te.accuracy;
    }

    // collect below-threshold maps (strict <), keep at least one per layer
    std::vector<int> to_remove;
    double norm_sum = 0.0;
    for (int ch = 0; ch < target.out_channels; ++ch) {
        const double norm = kernel_norm(net, config.layer, ch);
        norm_sum += norm;
        if (norm < config.threshold) to_remove.push_back(ch);
    }
    result.final_mean_kernel_norm = norm_sum / static_cast<double>(target.out_channels);
    if (to_remove.size() == static_cast<size_t>(target.out_channels)) to_remove.pop_back();

    int iteration = 1;
    // descending order keeps remaining channel indices valid
    for (auto it = to_remove.rbegin(); it != to_remove.rend(); ++it, ++iteration) {
        net.prune_channel(config.layer, *it);
        const EvalResult tr = evaluate(net, train, config.optim.batch_size);
        const EvalResult te = evaluate(net, test, config.optim.batch_size);
        TraceRow row;
        row.iteration = iteration;
        row.layer = config.layer;
        row.channel = *it;
        row.saliency = 0.0;
        row.remaining_maps = net.active_maps();
        row.flops = net.flops().total;
        row.train_loss = tr.loss;
        row.train_accuracy = tr.accuracy;
        row.test_accuracy = te.accuracy;
        trace.append(row);
    }
    result.stop_satisfied = true;
    return result;
}

} // namespace prunekit
