#include "doctest.h"

#include <cmath>
#include <sstream>

#include "prunekit/pruner.hpp"

using namespace prunekit;

namespace {

Network trained_small_net(uint64_t seed, const Dataset& ds, size_t updates = 400) {
    Network net = NetworkBuilder(1, 8, 8)
                      .conv(4, 3, 1)
                      .relu()
                      .maxpool()
                      .conv(5, 3, 1)
                      .relu()
                      .maxpool()
                      .flatten()
                      .dense(ds.class_count)
                      .build();
    Rng rng = Rng::stream(seed, "init");
    net.init_params(rng);
    OptimParams optim{1e-2, 0.9, 1e-4, 16};
    BatchStream stream(ds, optim.batch_size, Rng::stream(seed, "train"));
    finetune(net, ds, updates, optim, stream);
    return net;
}

void zero_map(Network& net, int layer, int channel) {
    Layer& l = net.layers[static_cast<size_t>(layer)];
    const size_t per = l.weight.value.size() / static_cast<size_t>(l.out_channels);
    for (size_t i = 0; i < per; ++i)
        l.weight.value.data[static_cast<size_t>(channel) * per + i] = 0.0;
    l.bias.value.data[static_cast<size_t>(channel)] = 0.0;
    net.bump_revision();
}

} // namespace

TEST_CASE("batch stream walks shuffled epochs without repeats") {
    const Dataset ds = synth_dataset(2, 8, 8, 1); // 16 examples
    BatchStream stream(ds, 4, Rng(9));
    Tensor batch;
    std::vector<int> labels;
    std::vector<int> seen_labels;
    for (int i = 0; i < 4; ++i) {
        stream.next(batch, labels);
        CHECK(batch.dim(0) == 4);
        seen_labels.insert(seen_labels.end(), labels.begin(), labels.end());
    }
    // one full epoch covers every example exactly once
    int zeros = 0;
    for (int l : seen_labels) zeros += (l == 0);
    CHECK(seen_labels.size() == 16);
    CHECK(zeros == 8);

    // oversized batch clamps to the dataset
    BatchStream big(ds, 999, Rng(10));
    big.next(batch, labels);
    CHECK(batch.dim(0) == 16);
}

TEST_CASE("finetune reduces training loss on the synthetic task") {
    const Dataset ds = synth_dataset(3, 30, 8, 21);
    Network net = NetworkBuilder(1, 8, 8)
                      .conv(4, 3, 1)
                      .relu()
                      .maxpool()
                      .flatten()
                      .dense(3)
                      .build();
    Rng rng(21);
    net.init_params(rng);
    OptimParams optim{1e-2, 0.9, 1e-4, 16};
    BatchStream stream(ds, optim.batch_size, Rng(22));
    const std::vector<double> losses = finetune(net, ds, 300, optim, stream);
    REQUIRE(losses.size() == 300);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
        head += losses[static_cast<size_t>(i)];
        tail += losses[losses.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(tail < 0.25 * head);
}

TEST_CASE("a dead map is pruned first under the weight criterion") {
    const Dataset train = synth_dataset(3, 20, 8, 31);
    const Dataset test = synth_dataset(3, 5, 8, 32);
    Network net = trained_small_net(31, train);
    zero_map(net, 3, 2);

    PruneConfig pc;
    pc.criterion = "weight";
    pc.updates_between_prunes = 0;
    pc.stop = {StopRule::Kind::MaxIterations, 1};
    const PruneResult r = prune_run(net, train, test, pc, 31);
    REQUIRE(r.trace.rows.size() == 1);
    CHECK(r.trace.rows[0].layer == 3);
    CHECK(r.trace.rows[0].channel == 2);
    CHECK(r.stop_satisfied);
}

TEST_CASE("a dead map is pruned first under the taylor criterion") {
    const Dataset train = synth_dataset(3, 20, 8, 33);
    const Dataset test = synth_dataset(3, 5, 8, 34);
    Network net = trained_small_net(33, train);
    zero_map(net, 0, 1); // dead map: zero activation and zero gradient

    PruneConfig pc;
    pc.criterion = "taylor";
    pc.updates_between_prunes = 8;
    pc.optim.lr = 1e-3;
    pc.stop = {StopRule::Kind::MaxIterations, 1};
    const PruneResult r = prune_run(net, train, test, pc, 33);
    REQUIRE(r.trace.rows.size() == 1);
    CHECK(r.trace.rows[0].layer == 0);
    CHECK(r.trace.rows[0].channel == 1);
}

TEST_CASE("prune runs are deterministic in the seed") {
    const Dataset train = synth_dataset(3, 15, 8, 41);
    const Dataset test = synth_dataset(3, 4, 8, 42);
    auto run_once = [&] {
        Network net = trained_small_net(41, train, 150);
        PruneConfig pc;
        pc.criterion = "taylor";
        pc.updates_between_prunes = 5;
        pc.optim.lr = 1e-3;
        pc.stop = {StopRule::Kind::TargetMaps, 5};
        return prune_run(net, train, test, pc, 41);
    };
    const PruneResult a = run_once();
    const PruneResult b = run_once();
    REQUIRE(a.trace.rows.size() == b.trace.rows.size());
    for (size_t i = 0; i < a.trace.rows.size(); ++i) {
        CHECK(a.trace.rows[i].layer == b.trace.rows[i].layer);
        CHECK(a.trace.rows[i].channel == b.trace.rows[i].channel);
        CHECK(a.trace.rows[i].saliency == b.trace.rows[i].saliency);
        CHECK(a.trace.rows[i].train_loss == b.trace.rows[i].train_loss);
    }
    std::ostringstream csv_a, csv_b;
    a.trace.write_csv(csv_a);
    b.trace.write_csv(csv_b);
    CHECK(csv_a.str() == csv_b.str());
}

TEST_CASE("stop rules terminate the run at the right point") {
    const Dataset train = synth_dataset(2, 12, 8, 51);
    const Dataset test = synth_dataset(2, 4, 8, 52);

    SUBCASE("target maps") {
        Network net = trained_small_net(51, train, 100);
        PruneConfig pc;
        pc.criterion = "weight";
        pc.updates_between_prunes = 0;
        pc.stop = {StopRule::Kind::TargetMaps, 4};
        const PruneResult r = prune_run(net, train, test, pc, 51);
        CHECK(net.active_maps() == 4);
        CHECK(r.stop_satisfied);
    }
    SUBCASE("target flops") {
        Network net = trained_small_net(51, train, 100);
        const double goal = 0.6 * net.flops().total;
        PruneConfig pc;
        pc.criterion = "weight";
        pc.updates_between_prunes = 0;
        pc.stop = {StopRule::Kind::TargetFlops, goal};
        const PruneResult r = prune_run(net, train, test, pc, 51);
        CHECK(net.flops().total <= goal);
        CHECK(r.stop_satisfied);
        // minimality: the run stopped at the first crossing
        REQUIRE(r.trace.rows.size() >= 2);
        CHECK(r.trace.rows[r.trace.rows.size() - 2].flops > goal);
    }
    SUBCASE("layer filter exhaustion ends without satisfying the rule") {
        Network net = trained_small_net(51, train, 100);
        PruneConfig pc;
        pc.criterion = "weight";
        pc.updates_between_prunes = 0;
        pc.layer_filter = {0};
        pc.stop = {StopRule::Kind::TargetMaps, 2}; // unreachable: layer 3 keeps 5 maps
        const PruneResult r = prune_run(net, train, test, pc, 51);
        CHECK(!r.stop_satisfied);
        CHECK(!r.message.empty());
        CHECK(net.layers[0].out_channels == 1); // pruned down to the floor
        CHECK(net.layers[3].out_channels == 5); // untouched
    }
}

TEST_CASE("prune trace enforces its monotonicity invariants") {
    PruneTrace trace;
    trace.initial_maps = 5;
    trace.initial_flops = 100.0;
    TraceRow row;
    row.iteration = 1;
    row.remaining_maps = 4;
    row.flops = 90.0;
    row.train_accuracy = 0.5;
    row.test_accuracy = 0.5;
    trace.append(row);

    TraceRow bad = row;
    bad.iteration = 2;
    bad.remaining_maps = 4; // must decrease by one
    CHECK_THROWS_AS(trace.append(bad), UsageError);

    bad.remaining_maps = 3;
    bad.flops = 95.0; // must strictly decrease
    CHECK_THROWS_AS(trace.append(bad), UsageError);

    bad.flops = 80.0;
    bad.test_accuracy = 1.5; // accuracy out of range
    CHECK_THROWS_AS(trace.append(bad), UsageError);

    bad.test_accuracy = 0.4;
    CHECK_NOTHROW(trace.append(bad));
}

TEST_CASE("trace csv and json carry the derived columns") {
    PruneTrace trace;
    trace.initial_maps = 10;
    trace.initial_flops = 2e6;
    TraceRow row;
    row.iteration = 1;
    row.layer = 0;
    row.channel = 3;
    row.saliency = 0.25;
    row.remaining_maps = 9;
    row.flops = 1.5e6;
    row.train_loss = 0.5;
    row.train_accuracy = 0.875;
    row.test_accuracy = 0.75;
    trace.append(row);

    std::ostringstream os;
    trace.write_csv(os);
    const std::string s = os.str();
    CHECK(s.find("iteration,layer,channel,saliency,remaining_maps,maps_pruned_fraction,"
                  "flops,gflops,train_loss,train_accuracy,test_accuracy\r\n") == 0);
    CHECK(s.find("1,0,3,0.25,9,0.10000000000000001,1500000,0.0015,0.5,0.875,0.75\r\n") !=
          std::string::npos);

    const nlohmann::json j = trace.to_json();
    CHECK(j["initial_maps"] == 10);
    CHECK(j["rows"].size() == 1);
    CHECK(j["rows"][0]["remaining_maps"] == 9);
    CHECK(j["rows"][0]["test_accuracy"] == 0.75);
}

TEST_CASE("regularization baseline removes maps the penalty killed") {
    const Dataset train = synth_dataset(2, 15, 8, 61);
    const Dataset test = synth_dataset(2, 4, 8, 62);
    Network net = trained_small_net(61, train, 150);

    // force two maps under the threshold by hand, run with zero updates
    zero_map(net, 3, 1);
    zero_map(net, 3, 3);
    RegBaselineConfig rc;
    rc.layer = 3;
    rc.gamma = 0.0;
    rc.threshold = 1e-5;
    rc.updates = 0;
    const PruneResult r = regularization_baseline(net, train, test, rc, 61);
    CHECK(net.layers[3].out_channels == 3);
    CHECK(r.trace.rows.size() == 2);
    CHECK(r.final_mean_kernel_norm > 0.0);
}

TEST_CASE("regularization baseline threshold is strict and keeps one map") {
    const Dataset train = synth_dataset(2, 10, 8, 63);
    const Dataset test = synth_dataset(2, 3, 8, 64);
    Network net = trained_small_net(63, train, 50);

    // a map whose norm equals the threshold exactly must survive
    zero_map(net, 0, 0);
    net.layers[0].weight.value.data[0] = 0.5;
    net.bump_revision();
    RegBaselineConfig rc;
    rc.layer = 0;
    rc.gamma = 0.0;
    rc.threshold = 0.5;
    rc.updates = 0;
    Network copy = net;
    regularization_baseline(copy, train, test, rc, 63);
    CHECK(copy.layers[0].out_channels == net.layers[0].out_channels);

    // all maps dead: one survivor remains
    for (int ch = 0; ch < net.layers[0].out_channels; ++ch) zero_map(net, 0, ch);
    rc.threshold = 1e-5;
    regularization_baseline(net, train, test, rc, 63);
    CHECK(net.layers[0].out_channels == 1);
}

TEST_CASE("strong kernel penalty collapses map norms") {
    const Dataset train = synth_dataset(2, 15, 8, 65);
    const Dataset test = synth_dataset(2, 4, 8, 66);
    Network base = trained_small_net(65, train, 150);

    auto norms_after = [&](double gamma) {
        Network net = base;
        RegBaselineConfig rc;
        rc.layer = 3;
        rc.gamma = gamma;
        rc.threshold = 0.0; // measure norms only, remove nothing
        rc.updates = 200;
        rc.optim = OptimParams{1e-3, 0.9, 0.0, 16};
        const PruneResult r = regularization_baseline(net, train, test, rc, 65);
        return r.final_mean_kernel_norm;
    };
    const double none = norms_after(0.0);
    const double strong = norms_after(10.0);
    CHECK(strong < 0.2 * none);
}

TEST_CASE("obd criterion drives a full prune run") {
    const Dataset train = synth_dataset(2, 10, 8, 71);
    const Dataset test = synth_dataset(2, 3, 8, 72);
    Network net = trained_small_net(71, train, 100);
    PruneConfig pc;
    pc.criterion = "obd";
    pc.updates_between_prunes = 5;
    pc.optim.lr = 1e-3;
    pc.obd_probes = 2;
    pc.obd_warmup_batches = 5;
    pc.stop = {StopRule::Kind::MaxIterations, 3};
    const PruneResult r = prune_run(net, train, test, pc, 71);
    CHECK(r.trace.rows.size() == 3);
    CHECK(net.active_maps() == 6);
}
