#include "prunekit/config.hpp"

#include <fstream>
#include <set>

#include "prunekit/errors.hpp"

namespace prunekit {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& j, const std::string& key, const std::string& where, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

OptimParams parse_optim(const json& j, const std::string& where, OptimParams defaults) {
    OptimParams p = defaults;
    p.lr = get_or(j, "lr", where, p.lr);
    p.momentum = get_or(j, "momentum", where, p.momentum);
    p.weight_decay = get_or(j, "weight_decay", where, p.weight_decay);
    p.batch_size = get_or(j, "batch_size", where, p.batch_size);
    if (p.lr <= 0.0) throw ConfigError(where + ".lr: must be > 0");
    if (p.momentum < 0.0 || p.momentum >= 1.0)
        throw ConfigError(where + ".momentum: must be in [0, 1)");
    if (p.weight_decay < 0.0) throw ConfigError(where + ".weight_decay: must be >= 0");
    if (p.batch_size == 0) throw ConfigError(where + ".batch_size: must be >= 1");
    return p;
}

StopRule parse_stop(const json& j, const std::string& where) {
    check_keys(j, where, {"target_maps", "target_flops", "max_iterations", "accuracy_floor"});
    if (j.size() != 1) throw ConfigError(where + ": exactly one stop rule must be set");
    StopRule s;
    if (j.contains("target_maps")) {
        s.kind = StopRule::Kind::TargetMaps;
        s.value = j.at("target_maps").get<double>();
    } else if (j.contains("target_flops")) {
        s.kind = StopRule::Kind::TargetFlops;
        s.value = j.at("target_flops").get<double>();
    } else if (j.contains("max_iterations")) {
        s.kind = StopRule::Kind::MaxIterations;
        s.value = j.at("max_iterations").get<double>();
    } else {
        s.kind = StopRule::Kind::AccuracyFloor;
        s.value = j.at("accuracy_floor").get<double>();
    }
    return s;
}

json stop_to_json(const StopRule& s) {
    switch (s.kind) {
        case StopRule::Kind::TargetMaps: return {{"target_maps", s.value}};
        case StopRule::Kind::TargetFlops: return {{"target_flops", s.value}};
        case StopRule::Kind::MaxIterations: return {{"max_iterations", s.value}};
        case StopRule::Kind::AccuracyFloor: return {{"accuracy_floor", s.value}};
    }
    return {};
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    check_keys(j, "config",
               {"seed", "output_dir", "model_path", "model", "dataset", "train", "prune",
                "oracle", "correlate", "baseline"});
    ExperimentConfig c;
    c.seed = get_or<uint64_t>(j, "seed", "config", c.seed);
    c.output_dir = get_or<std::string>(j, "output_dir", "config", "");
    if (j.contains("model_path")) c.model_path = j.at("model_path").get<std::string>();

    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model", {"conv_channels", "kernel"});
        c.model.conv_channels =
            get_or(m, "conv_channels", "model", c.model.conv_channels);
        c.model.kernel = get_or(m, "kernel", "model", c.model.kernel);
        if (c.model.conv_channels.empty())
            throw ConfigError("model.conv_channels: must name at least one conv layer");
        for (int ch : c.model.conv_channels)
            if (ch < 1) throw ConfigError("model.conv_channels: entries must be >= 1");
        if (c.model.kernel < 1 || c.model.kernel % 2 == 0)
            throw ConfigError("model.kernel: must be odd and >= 1");
    }

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, "dataset",
                   {"source", "classes", "per_class", "test_per_class", "hw", "train_images",
                    "train_labels", "test_images", "test_labels"});
        c.dataset.source = get_or<std::string>(d, "source", "dataset", c.dataset.source);
        if (c.dataset.source == "synthetic") {
            c.dataset.classes = get_or(d, "classes", "dataset", c.dataset.classes);
            c.dataset.per_class = get_or(d, "per_class", "dataset", c.dataset.per_class);
            c.dataset.test_per_class =
                get_or(d, "test_per_class", "dataset", c.dataset.test_per_class);
            c.dataset.hw = get_or(d, "hw", "dataset", c.dataset.hw);
            if (c.dataset.classes < 1) throw ConfigError("dataset.classes: must be >= 1");
            if (c.dataset.per_class < 1) throw ConfigError("dataset.per_class: must be >= 1");
            if (c.dataset.hw < 8) throw ConfigError("dataset.hw: must be >= 8");
        } else if (c.dataset.source == "idx") {
            c.dataset.train_images =
                get_or<std::string>(d, "train_images", "dataset", "");
            c.dataset.train_labels =
                get_or<std::string>(d, "train_labels", "dataset", "");
            c.dataset.test_images = get_or<std::string>(d, "test_images", "dataset", "");
            c.dataset.test_labels = get_or<std::string>(d, "test_labels", "dataset", "");
            if (c.dataset.train_images.empty() || c.dataset.train_labels.empty())
                throw ConfigError("dataset: idx source requires train_images and train_labels");
        } else {
            throw ConfigError("dataset.source: must be 'synthetic' or 'idx'");
        }
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train", {"updates", "lr", "momentum", "weight_decay", "batch_size"});
        c.train.updates = get_or(t, "updates", "train", c.train.updates);
        c.train.optim = parse_optim(t, "train", c.train.optim);
    }

    if (j.contains("prune")) {
        const json& p = j.at("prune");
        check_keys(p, "prune",
                   {"criterion", "normalization", "flops_lambda", "updates_between_prunes",
                    "lr", "momentum", "weight_decay", "batch_size", "stop", "layers",
                    "obd_probes", "obd_warmup_batches", "mi_bins"});
        c.prune.criterion = get_or<std::string>(p, "criterion", "prune", c.prune.criterion);
        if (p.contains("normalization"))
            c.prune.normalization =
                norm_kind_from_string(p.at("normalization").get<std::string>());
        c.prune.flops_lambda = get_or(p, "flops_lambda", "prune", c.prune.flops_lambda);
        c.prune.updates_between_prunes =
            get_or(p, "updates_between_prunes", "prune", c.prune.updates_between_prunes);
        c.prune.optim = parse_optim(p, "prune", c.prune.optim);
        if (p.contains("stop")) c.prune.stop = parse_stop(p.at("stop"), "prune.stop");
        c.prune.layer_filter = get_or(p, "layers", "prune", c.prune.layer_filter);
        c.prune.obd_probes = get_or(p, "obd_probes", "prune", c.prune.obd_probes);
        c.prune.obd_warmup_batches =
            get_or(p, "obd_warmup_batches", "prune", c.prune.obd_warmup_batches);
        c.prune.mi_bins = get_or(p, "mi_bins", "prune", c.prune.mi_bins);
    }

    if (j.contains("oracle")) {
        const json& o = j.at("oracle");
        check_keys(o, "oracle", {"batch_size"});
        c.oracle.batch_size = get_or(o, "batch_size", "oracle", c.oracle.batch_size);
        if (c.oracle.batch_size == 0) throw ConfigError("oracle.batch_size: must be >= 1");
    }

    if (j.contains("correlate")) {
        const json& co = j.at("correlate");
        check_keys(co, "correlate", {"criteria", "passes", "batch_size", "obd_probes",
                                     "mi_bins"});
        c.correlate.criteria = get_or(co, "criteria", "correlate", c.correlate.criteria);
        c.correlate.passes = get_or(co, "passes", "correlate", c.correlate.passes);
        c.correlate.batch_size = get_or(co, "batch_size", "correlate", c.correlate.batch_size);
        c.correlate.obd_probes = get_or(co, "obd_probes", "correlate", c.correlate.obd_probes);
        c.correlate.mi_bins = get_or(co, "mi_bins", "correlate", c.correlate.mi_bins);
        if (c.correlate.passes < 1) throw ConfigError("correlate.passes: must be >= 1");
        for (const std::string& name : c.correlate.criteria)
            if (name != "weight" && name != "random" && !criterion_is_data_dependent(name))
                throw ConfigError("correlate.criteria: unknown criterion '" + name + "'");
    }

    if (j.contains("baseline")) {
        const json& b = j.at("baseline");
        check_keys(b, "baseline", {"layer", "gammas", "threshold", "updates", "lr", "momentum",
                                   "weight_decay", "batch_size"});
        c.baseline.layer = get_or(b, "layer", "baseline", c.baseline.layer);
        c.baseline.gammas = get_or(b, "gammas", "baseline", c.baseline.gammas);
        c.baseline.threshold = get_or(b, "threshold", "baseline", c.baseline.threshold);
        c.baseline.updates = get_or(b, "updates", "baseline", c.baseline.updates);
        c.baseline.optim = parse_optim(b, "baseline", c.baseline.optim);
        if (c.baseline.gammas.empty())
            throw ConfigError("baseline.gammas: must list at least one value");
        for (double g : c.baseline.gammas)
            if (g < 0.0) throw ConfigError("baseline.gammas: entries must be >= 0");
    }

    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    if (model_path) j["model_path"] = *model_path;
    j["model"] = {{"conv_channels", model.conv_channels}, {"kernel", model.kernel}};
    if (dataset.source == "synthetic")
        j["dataset"] = {{"source", dataset.source},
                        {"classes", dataset.classes},
                        {"per_class", dataset.per_class},
                        {"test_per_class", dataset.test_per_class},
                        {"hw", dataset.hw}};
    else
        j["dataset"] = {{"source", dataset.source},
                        {"train_images", dataset.train_images},
                        {"train_labels", dataset.train_labels},
                        {"test_images", dataset.test_images},
                        {"test_labels", dataset.test_labels}};
    j["train"] = {{"updates", train.updates},
                  {"lr", train.optim.lr},
                  {"momentum", train.optim.momentum},
                  {"weight_decay", train.optim.weight_decay},
                  {"batch_size", train.optim.batch_size}};
    j["prune"] = {{"criterion", prune.criterion},
                  {"normalization", norm_kind_name(prune.normalization)},
                  {"flops_lambda", prune.flops_lambda},
                  {"updates_between_prunes", prune.updates_between_prunes},
                  {"lr", prune.optim.lr},
                  {"momentum", prune.optim.momentum},
                  {"weight_decay", prune.optim.weight_decay},
                  {"batch_size", prune.optim.batch_size},
                  {"stop", stop_to_json(prune.stop)},
                  {"layers", prune.layer_filter},
                  {"obd_probes", prune.obd_probes},
                  {"obd_warmup_batches", prune.obd_warmup_batches},
                  {"mi_bins", prune.mi_bins}};
    return j;
}

} // namespace prunekit
