#include "prunekit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>

#include "prunekit/errors.hpp"
#include "prunekit/oracle.hpp"
#include "prunekit/pruner.hpp"

namespace prunekit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open output file: " + path.string());
    os << text;
    if (!os) throw DataError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

int resolve_baseline_layer(const Network& net, int layer) {
    const auto convs = net.conv_layer_indices();
    if (layer < 0) return convs.back();
    if (std::find(convs.begin(), convs.end(), layer) == convs.end())
        throw ConfigError("baseline.layer: not a conv layer index");
    return layer;
}

} // namespace

Network Experiment::build_model(int class_count, int hw) const {
    NetworkBuilder b(1, static_cast<size_t>(hw), static_cast<size_t>(hw));
    const int k = cfg_.model.kernel;
    for (int channels : cfg_.model.conv_channels)
        b.conv(channels, k, (k - 1) / 2).relu().maxpool();
    b.flatten().dense(class_count);
    return b.build();
}

Dataset Experiment::train_dataset() const {
    if (cfg_.dataset.source == "synthetic") {
        Dataset ds = synth_dataset(cfg_.dataset.classes, cfg_.dataset.per_class,
                                   cfg_.dataset.hw, Rng::derive_seed(cfg_.seed, "data-train"));
        ds.split = "train";
        return ds;
    }
    return load_idx(cfg_.dataset.train_images, cfg_.dataset.train_labels);
}

Dataset Experiment::test_dataset() const {
    if (cfg_.dataset.source == "synthetic") {
        Dataset ds = synth_dataset(cfg_.dataset.classes, cfg_.dataset.test_per_class,
                                   cfg_.dataset.hw, Rng::derive_seed(cfg_.seed, "data-test"));
        ds.split = "test";
        return ds;
    }
    if (cfg_.dataset.test_images.empty()) {
        Dataset ds = load_idx(cfg_.dataset.train_images, cfg_.dataset.train_labels);
        ds.split = "test";
        return ds;
    }
    Dataset ds = load_idx(cfg_.dataset.test_images, cfg_.dataset.test_labels);
    ds.split = "test";
    return ds;
}

Network Experiment::trained_model(const Dataset& train, const Dataset& test) const {
    (void)test;
    Network net = build_model(train.class_count, static_cast<int>(train.images.dim(2)));
    Rng init_rng = Rng::stream(cfg_.seed, "init");
    net.init_params(init_rng);
    BatchStream stream(train, cfg_.train.optim.batch_size,
                       Rng::stream(cfg_.seed, "train-shuffle"));
    finetune(net, train, cfg_.train.updates, cfg_.train.optim, stream);
    return net;
}

Network Experiment::obtain_model(const Dataset& train, const Dataset& test) const {
    if (cfg_.model_path) return Network::load(*cfg_.model_path);
    return trained_model(train, test);
}

void Experiment::prepare_output_dir() const {
    if (cfg_.output_dir.empty()) throw ConfigError("output_dir is required");
    const fs::path dir(cfg_.output_dir);
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            throw ConfigError("output path exists and is not a directory: " + cfg_.output_dir);
        if (!fs::is_empty(dir) && !force_)
            throw ConfigError("output directory is not empty (use --force): " +
                              cfg_.output_dir);
    } else {
        fs::create_directories(dir);
    }
}

void Experiment::run(const std::string& command) {
    prepare_output_dir();
    if (command == "train")
        cmd_train();
    else if (command == "oracle")
        cmd_oracle();
    else if (command == "correlate")
        cmd_correlate();
    else if (command == "prune")
        cmd_prune();
    else if (command == "baseline-reg")
        cmd_baseline_reg();
    else
        throw ConfigError("unknown command: " + command);
}

void Experiment::cmd_train() {
    const Dataset train = train_dataset();
    const Dataset test = test_dataset();
    Network net = build_model(train.class_count, static_cast<int>(train.images.dim(2)));
    Rng init_rng = Rng::stream(cfg_.seed, "init");
    net.init_params(init_rng);
    BatchStream stream(train, cfg_.train.optim.batch_size,
                       Rng::stream(cfg_.seed, "train-shuffle"));
    const std::vector<double> losses =
        finetune(net, train, cfg_.train.updates, cfg_.train.optim, stream);

    const fs::path dir(cfg_.output_dir);
    net.save((dir / "model.prnb").string());

    const EvalResult tr = evaluate(net, train, cfg_.train.optim.batch_size);
    const EvalResult te = evaluate(net, test, cfg_.train.optim.batch_size);
    json metrics;
    metrics["final_train_loss"] = tr.loss;
    metrics["final_train_accuracy"] = tr.accuracy;
    metrics["final_test_accuracy"] = te.accuracy;
    metrics["updates"] = cfg_.train.updates;
    metrics["loss_history"] = losses;
    metrics["timestamp"] = timestamp_now();
    write_json(dir / "train_metrics.json", metrics);
}

void Experiment::cmd_oracle() {
    const Dataset train = train_dataset();
    const Dataset test = test_dataset();
    Network net = obtain_model(train, test);

    const std::vector<OracleRecord> records =
        compute_oracle(net, train, cfg_.oracle.batch_size);

    const fs::path dir(cfg_.output_dir);
    {
        std::ofstream os(dir / "oracle.csv", std::ios::binary);
        write_oracle_csv(records, os);
    }

    json stats;
    for (const bool use_abs : {false, true}) {
        const Ranking ranking = oracle_ranking(records, use_abs);
        json layers = json::array();
        for (const LayerRankStats& s : layer_rank_stats(ranking))
            layers.push_back({{"layer", s.layer},
                              {"min_rank", s.min_rank},
                              {"max_rank", s.max_rank},
                              {"median_rank", s.median_rank},
                              {"maps", s.count}});
        stats[use_abs ? "oracle_abs" : "oracle_loss"] = layers;
    }
    stats["channels"] = records.size();
    stats["timestamp"] = timestamp_now();
    write_json(dir / "rank_stats.json", stats);
}

void Experiment::cmd_correlate() {
    const Dataset train = train_dataset();
    const Dataset test = test_dataset();
    Network net = obtain_model(train, test);

    const std::vector<OracleRecord> records =
        compute_oracle(net, train, cfg_.correlate.batch_size);
    const Ranking oracle_abs = oracle_ranking(records, true);

    bool need_acc = false, need_taylor = false, need_obd = false;
    for (const std::string& name : cfg_.correlate.criteria) {
        if (name == "obd") need_obd = true;
        else if (criterion_is_data_dependent(name)) need_acc = true;
        if (name == "taylor") need_taylor = true;
    }

    StatsAccumulator acc;
    ObdEstimator obd;
    Rng obd_rng = Rng::stream(cfg_.seed, "correlate-obd");
    const size_t bs = cfg_.correlate.batch_size;
    for (int pass = 0; pass < cfg_.correlate.passes; ++pass) {
        for (size_t begin = 0; begin < train.size(); begin += bs) {
            const size_t count = std::min(bs, train.size() - begin);
            const Tensor batch = train.batch(begin, count);
            const std::vector<int> labels = train.label_slice(begin, count);
            if (need_acc && pass == 0) {
                ForwardCache cache = net.forward(batch, labels);
                if (need_taylor) {
                    GateGrads gg = net.backward(cache);
                    acc.observe(net, cache, &gg);
                    net.zero_grads();
                } else {
                    acc.observe(net, cache, nullptr);
                }
            }
            if (need_obd)
                obd.observe_batch(net, batch, labels, cfg_.correlate.obd_probes, obd_rng);
        }
    }

    const auto convs = net.conv_layer_indices();
    const fs::path dir(cfg_.output_dir);
    std::ofstream os(dir / "correlation.csv", std::ios::binary);
    csv_row(os, {"criterion", "scope", "spearman"});

    for (const std::string& name : cfg_.correlate.criteria) {
        SaliencyTable table;
        if (name == "weight")
            table = weight_criterion(net);
        else if (name == "random")
            table = random_criterion(net, Rng::derive_seed(cfg_.seed, "correlate-random"));
        else if (name == "taylor")
            table = acc.taylor_criterion();
        else if (name == "activation_mean")
            table = acc.activation_criteria().mean;
        else if (name == "activation_std")
            table = acc.activation_criteria().stddev;
        else if (name == "apoz")
            table = acc.activation_criteria().apoz;
        else if (name == "mutual_info")
            table = acc.mutual_info_criterion(cfg_.correlate.mi_bins);
        else if (name == "obd")
            table = obd.table(net);

        const Ranking raw_rank = ranking_from_table(table);
        double per_layer_sum = 0.0;
        for (int li : convs) {
            const double s = spearman(restrict_to_layer(oracle_abs, li),
                                      restrict_to_layer(raw_rank, li));
            per_layer_sum += s;
            csv_row(os, {name, "layer_" + std::to_string(li), csv_double(s)});
        }
        csv_row(os, {name, "per_layer_mean",
                     csv_double(per_layer_sum / static_cast<double>(convs.size()))});
        csv_row(os, {name, "all_raw", csv_double(spearman(oracle_abs, raw_rank))});
        const Ranking l2_rank = ranking_from_table(normalize(table, NormKind::L2));
        csv_row(os, {name, "all_l2", csv_double(spearman(oracle_abs, l2_rank))});

        std::ofstream sos(dir / ("saliency_" + name + ".csv"), std::ios::binary);
        write_saliency_csv(normalize(table, NormKind::L2), sos);
    }
}

void Experiment::cmd_prune() {
    const Dataset train = train_dataset();
    const Dataset test = test_dataset();
    Network net = obtain_model(train, test);

    PruneResult result = prune_run(net, train, test, cfg_.prune, cfg_.seed);

    const fs::path dir(cfg_.output_dir);
    {
        std::ofstream os(dir / "prune_trace.csv", std::ios::binary);
        result.trace.write_csv(os);
    }
    json j;
    j["config"] = cfg_.to_json();
    j["stop_satisfied"] = result.stop_satisfied;
    if (!result.message.empty()) j["message"] = result.message;
    j["trace"] = result.trace.to_json();
    j["timestamp"] = timestamp_now();
    write_json(dir / "prune_trace.json", j);
    net.save((dir / "model_pruned.prnb").string());
}

void Experiment::cmd_baseline_reg() {
    const Dataset train = train_dataset();
    const Dataset test = test_dataset();
    const Network trained = obtain_model(train, test);
    const int layer = resolve_baseline_layer(trained, cfg_.baseline.layer);
    const int layer_maps = trained.layers[static_cast<size_t>(layer)].out_channels;

    const fs::path dir(cfg_.output_dir);
    std::ofstream os(dir / "baseline_reg.csv", std::ios::binary);
    csv_row(os, {"method", "gamma", "layer_remaining_maps", "test_accuracy",
                 "mean_kernel_norm"});

    for (double gamma : cfg_.baseline.gammas) {
        Network net = trained;
        RegBaselineConfig rc;
        rc.layer = layer;
        rc.gamma = gamma;
        rc.threshold = cfg_.baseline.threshold;
        rc.updates = cfg_.baseline.updates;
        rc.optim = cfg_.baseline.optim;
        const PruneResult r = regularization_baseline(net, train, test, rc, cfg_.seed);
        const EvalResult te = evaluate(net, test, cfg_.baseline.optim.batch_size);
        csv_row(os, {"reg", csv_double(gamma),
                     std::to_string(net.layers[static_cast<size_t>(layer)].out_channels),
                     csv_double(te.accuracy), csv_double(r.final_mean_kernel_norm)});
    }

    // iterative Taylor pruning of the same layer, one map per iteration,
    // matching total fine-tuning budget roughly via updates_between_prunes
    {
        Network net = trained;
        PruneConfig pc = cfg_.prune;
        pc.criterion = "taylor";
        pc.layer_filter = {layer};
        pc.stop.kind = StopRule::Kind::MaxIterations;
        pc.stop.value = static_cast<double>(layer_maps - 1);
        const PruneResult r = prune_run(net, train, test, pc, cfg_.seed);
        // the kernel-norm column only describes the penalty mechanism, so it
        // is left empty for the taylor rows
        for (const TraceRow& row : r.trace.rows)
            csv_row(os, {"taylor", "", std::to_string(layer_maps - row.iteration),
                         csv_double(row.test_accuracy), ""});
    }
}

} // namespace prunekit
