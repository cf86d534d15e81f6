#include "doctest.h"

#include <cmath>
#include <vector>

#include "prunekit/criteria.hpp"
#include "prunekit/network.hpp"

using namespace prunekit;

namespace {

// conv(1->1, 1x1) -> relu -> flatten -> dense(2) over a single pixel. The
// conv activation equals the input value, which makes every statistic exact.
Network pixel_net(double conv_w = 1.0, double dense_w0 = 1.0, double dense_w1 = -1.0) {
    Network net = NetworkBuilder(1, 1, 1).conv(1, 1, 0).relu().flatten().dense(2).build();
    net.layers[0].weight.value.data = {conv_w};
    net.layers[0].bias.value.data = {0.0};
    net.layers[3].weight.value.data = {dense_w0, dense_w1};
    net.layers[3].bias.value.data = {0.0, 0.0};
    net.bump_revision();
    return net;
}

Tensor pixel_batch(const std::vector<double>& values) {
    return Tensor({values.size(), 1, 1, 1}, std::vector<double>(values));
}

double find_value(const SaliencyTable& t, int layer, int channel) {
    for (const SaliencyEntry& e : t.entries)
        if (e.layer == layer && e.channel == channel) return e.value;
    throw std::runtime_error("entry not found");
}

} // namespace

TEST_CASE("weight criterion is the mean squared kernel weight") {
    Network net = NetworkBuilder(1, 4, 4).conv(1, 1, 0).flatten().dense(2).build();
    // kernel weights {1,-1,2,0} over a map: (1+1+4+0)/4 = 1.5
    Network net4 = NetworkBuilder(4, 4, 4).conv(1, 1, 0).flatten().dense(2).build();
    net4.layers[0].weight.value.data = {1.0, -1.0, 2.0, 0.0};
    const SaliencyTable t = weight_criterion(net4);
    CHECK(t.entries.size() == 1);
    CHECK(t.entries[0].value == doctest::Approx(1.5).epsilon(1e-15));

    net.layers[0].bias.value.data = {100.0}; // bias must not contribute
    net.layers[0].weight.value.data = {3.0};
    CHECK(weight_criterion(net).entries[0].value == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("random criterion is seeded and in (0,1)") {
    Network net = NetworkBuilder(1, 8, 8).conv(5, 3, 1).flatten().dense(2).build();
    const SaliencyTable a = random_criterion(net, 99);
    const SaliencyTable b = random_criterion(net, 99);
    const SaliencyTable c = random_criterion(net, 100);
    REQUIRE(a.entries.size() == 5);
    bool any_differs = false;
    for (size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].value == b.entries[i].value);
        CHECK(a.entries[i].value >= 0.0);
        CHECK(a.entries[i].value < 1.0);
        if (a.entries[i].value != c.entries[i].value) any_differs = true;
    }
    CHECK(any_differs);
}

TEST_CASE("activation statistics are exact on crafted inputs") {
    Network net = pixel_net();
    StatsAccumulator acc;
    // activations after relu: 0.2, 0.4, 0.0 (input -0.5 clamps), 0.6
    const Tensor batch = pixel_batch({0.2, 0.4, -0.5, 0.6});
    const std::vector<int> labels = {0, 1, 0, 1};
    acc.observe(net, net.forward(batch, labels));

    const ActivationTables t = acc.activation_criteria();
    const double mean = (0.2 + 0.4 + 0.0 + 0.6) / 4.0;
    CHECK(find_value(t.mean, 0, 0) == doctest::Approx(mean).epsilon(1e-15));
    const double ex2 = (0.04 + 0.16 + 0.0 + 0.36) / 4.0;
    CHECK(find_value(t.stddev, 0, 0) ==
          doctest::Approx(std::sqrt(ex2 - mean * mean)).epsilon(1e-12));
    CHECK(find_value(t.apoz, 0, 0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("accumulator pools statistics across batches and resets cleanly") {
    Network net = pixel_net();
    StatsAccumulator acc;
    acc.observe(net, net.forward(pixel_batch({0.2, 0.4}), {0, 1}));
    acc.observe(net, net.forward(pixel_batch({0.6, 0.8}), {0, 1}));
    CHECK(acc.batches() == 2);
    CHECK(find_value(acc.activation_criteria().mean, 0, 0) ==
          doctest::Approx(0.5).epsilon(1e-15));
    acc.reset();
    CHECK(acc.empty());
    CHECK_THROWS_AS(acc.activation_criteria(), UsageError);
}

TEST_CASE("taylor criterion averages absolute per-example values") {
    Network net = pixel_net();
    StatsAccumulator acc;
    // symmetric pair: the signed per-example gate gradients cancel but the
    // criterion must not
    const Tensor batch = pixel_batch({0.5, 0.5});
    const std::vector<int> labels = {0, 1};
    ForwardCache cache = net.forward(batch, labels);
    GateGrads gg = net.backward(cache);
    const double g0 = gg.per_layer[0].at(0, 0);
    const double g1 = gg.per_layer[0].at(1, 0);
    REQUIRE(g0 * g1 < 0.0); // opposite signs by construction
    net.zero_grads();

    acc.observe(net, cache, &gg);
    const SaliencyTable t = acc.taylor_criterion();
    // N=2, M=1: expected mean(|g_n| * N / M)
    const double expected = (std::abs(g0) * 2.0 + std::abs(g1) * 2.0) / 2.0;
    CHECK(find_value(t, 0, 0) == doctest::Approx(expected).epsilon(1e-12));
    // abs before mean: the criterion dominates the signed average
    CHECK(find_value(t, 0, 0) > std::abs(g0 + g1));
}

TEST_CASE("taylor criterion demands gate gradients on every observed batch") {
    Network net = pixel_net();
    StatsAccumulator acc;
    ForwardCache c1 = net.forward(pixel_batch({0.3}), {0});
    GateGrads gg = net.backward(c1);
    net.zero_grads();
    acc.observe(net, c1, &gg);
    acc.observe(net, net.forward(pixel_batch({0.4}), {1}), nullptr);
    CHECK_THROWS_AS(acc.taylor_criterion(), UsageError);
}

TEST_CASE("mutual information of a perfectly predictive map is ln 2") {
    Network net = pixel_net();
    StatsAccumulator acc;
    // low activation always label 0, high activation always label 1
    acc.observe(net, net.forward(pixel_batch({0.1, 0.9, 0.1, 0.9}), {0, 1, 0, 1}));
    acc.observe(net, net.forward(pixel_batch({0.1, 0.9, 0.1, 0.9}), {0, 1, 0, 1}));
    const SaliencyTable t = acc.mutual_info_criterion(10);
    CHECK(find_value(t, 0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mutual information of an uninformative map is zero") {
    Network net = pixel_net();
    StatsAccumulator acc;
    // each activation level appears equally often with both labels
    acc.observe(net, net.forward(pixel_batch({0.1, 0.1, 0.9, 0.9}), {0, 1, 0, 1}));
    const SaliencyTable t = acc.mutual_info_criterion(10);
    CHECK(find_value(t, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));

    // constant activation carries no information either
    StatsAccumulator acc2;
    acc2.observe(net, net.forward(pixel_batch({0.5, 0.5, 0.5, 0.5}), {0, 1, 0, 1}));
    CHECK(find_value(acc2.mutual_info_criterion(10), 0, 0) ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("obd estimate matches a finite-difference hessian diagonal") {
    // single gate: the Rademacher probe is exact, v*Hv = H
    Network net = pixel_net(1.0, 2.0, -1.0);
    const Tensor batch = pixel_batch({0.7, 0.4, 0.9});
    const std::vector<int> labels = {0, 1, 0};

    ObdEstimator obd(0.99, 1e-4);
    Rng rng(3);
    obd.observe_batch(net, batch, labels, 1, rng);
    REQUIRE(obd.batches() == 1);
    const double est = obd.diagonal().at(0)[0];

    auto loss_at_gate = [&](double g) {
        net.set_gate(0, 0, g);
        const double l = net.forward(batch, labels).loss;
        net.set_gate(0, 0, 1.0);
        return l;
    };
    const double h = 1e-4;
    const double numeric =
        (loss_at_gate(1.0 + h) - 2.0 * loss_at_gate(1.0) + loss_at_gate(1.0 - h)) / (h * h);
    CHECK(est == doctest::Approx(numeric).epsilon(1e-4));

    const SaliencyTable t = obd.table(net);
    CHECK(t.entries[0].value == doctest::Approx(0.5 * std::abs(est)).epsilon(1e-12));
}

TEST_CASE("obd rademacher averaging recovers the diagonal with several gates") {
    Network net = NetworkBuilder(1, 2, 2).conv(3, 1, 0).relu().flatten().dense(2).build();
    Rng init(17);
    net.init_params(init);
    Rng data(18);
    Tensor batch({4, 1, 2, 2});
    for (double& v : batch.data) v = data.uniform();
    const std::vector<int> labels = {0, 1, 1, 0};

    ObdEstimator obd(0.99, 1e-4);
    Rng rng(19);
    obd.observe_batch(net, batch, labels, 4000, rng);
    const auto& diag = obd.diagonal().at(0);

    for (int k = 0; k < 3; ++k) {
        auto loss_at = [&](double g) {
            net.set_gate(0, k, g);
            const double l = net.forward(batch, labels).loss;
            net.set_gate(0, k, 1.0);
            return l;
        };
        const double h = 1e-4;
        const double numeric =
            (loss_at(1.0 + h) - 2.0 * loss_at(1.0) + loss_at(1.0 - h)) / (h * h);
        CHECK(std::abs(diag[static_cast<size_t>(k)] - numeric) <=
              0.05 * std::max(0.5, std::abs(numeric)));
    }
}

TEST_CASE("obd ema blends batches and stays fixed on repeated input") {
    Network net = pixel_net();
    const Tensor batch = pixel_batch({0.3, 0.8});
    const std::vector<int> labels = {1, 0};
    ObdEstimator obd(0.99, 1e-4);
    Rng rng(5);
    obd.observe_batch(net, batch, labels, 1, rng);
    const double first = obd.diagonal().at(0)[0];
    for (int i = 0; i < 5; ++i) obd.observe_batch(net, batch, labels, 1, rng);
    // same batch, single gate: every estimate is identical, so the EMA is too
    CHECK(obd.diagonal().at(0)[0] == doctest::Approx(first).epsilon(1e-9));
    CHECK(obd.batches() == 6);
    CHECK(obd.skipped() == 0);

    // gates are restored and parameter grads zeroed
    CHECK(net.gate(0, 0) == 1.0);
    for (double g : net.layers[0].weight.grad.data) CHECK(g == 0.0);
}

TEST_CASE("obd on_prune keeps the estimator aligned") {
    Network net = NetworkBuilder(1, 2, 2).conv(3, 1, 0).flatten().dense(2).build();
    Rng init(20);
    net.init_params(init);
    Tensor batch({2, 1, 2, 2});
    for (double& v : batch.data) v = 0.5;
    ObdEstimator obd;
    Rng rng(21);
    obd.observe_batch(net, batch, {0, 1}, 2, rng);
    net.prune_channel(0, 1);
    obd.on_prune(0, 1);
    const SaliencyTable t = obd.table(net);
    CHECK(t.entries.size() == 2);
    // without on_prune the table must refuse the mismatch
    ObdEstimator stale;
    Rng rng2(22);
    Network net2 = NetworkBuilder(1, 2, 2).conv(3, 1, 0).flatten().dense(2).build();
    Rng init2(20);
    net2.init_params(init2);
    stale.observe_batch(net2, batch, {0, 1}, 1, rng2);
    net2.prune_channel(0, 0);
    CHECK_THROWS_AS(stale.table(net2), UsageError);
}

TEST_CASE("layer-wise l2 normalization") {
    SaliencyTable t;
    t.entries = {{0, 0, 3.0, 3.0}, {0, 1, 4.0, 4.0}, {2, 0, 5.0, 5.0}};
    const SaliencyTable n = normalize(t, NormKind::L2);
    CHECK(n.entries[0].value == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n.entries[1].value == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(n.entries[2].value == doctest::Approx(1.0).epsilon(1e-15));
    // raw scores are preserved
    CHECK(n.entries[0].raw == 3.0);
}

TEST_CASE("l1 and minmax normalization with degenerate layers") {
    SaliencyTable t;
    t.entries = {{0, 0, 1.0, 1.0}, {0, 1, 3.0, 3.0}, {1, 0, 0.0, 0.0}, {1, 1, 0.0, 0.0}};
    const SaliencyTable l1 = normalize(t, NormKind::L1);
    CHECK(l1.entries[0].value == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(l1.entries[1].value == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(l1.entries[2].value == 0.0); // all-zero layer passes through

    const SaliencyTable mm = normalize(t, NormKind::MinMax);
    CHECK(mm.entries[0].value == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(mm.entries[1].value == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(mm.entries[2].value == 0.0); // max == min passes through

    const SaliencyTable none = normalize(t, NormKind::None);
    CHECK(none.entries[1].value == 3.0);
}

TEST_CASE("flops regularization subtracts scaled per-map cost") {
    SaliencyTable t;
    t.entries = {{0, 0, 0.5, 0.5}, {2, 0, 0.5, 0.5}};
    FlopsTable f;
    f.per_neuron = {{0, 57.8e6}, {2, 1.8e6}};
    const SaliencyTable r = flops_regularize(t, f, 1e-3);
    CHECK(r.entries[0].value == doctest::Approx(0.4422).epsilon(1e-12));
    CHECK(r.entries[1].value == doctest::Approx(0.4982).epsilon(1e-12));
    // lambda 0 is the identity
    const SaliencyTable id = flops_regularize(t, f, 0.0);
    CHECK(id.entries[0].value == 0.5);
}

TEST_CASE("convex combination of two tables") {
    SaliencyTable a, b;
    a.entries = {{0, 0, 1.0, 1.0}, {0, 1, 0.0, 0.0}};
    b.entries = {{0, 0, 0.0, 0.0}, {0, 1, 1.0, 1.0}};
    const SaliencyTable c = combine(a, b, 0.25);
    CHECK(c.entries[0].value == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(c.entries[1].value == doctest::Approx(0.25).epsilon(1e-15));

    SaliencyTable mismatched;
    mismatched.entries = {{1, 0, 0.0, 0.0}, {1, 1, 0.0, 0.0}};
    CHECK_THROWS_AS(combine(a, mismatched, 0.5), UsageError);
}

TEST_CASE("norm kind names round-trip") {
    for (const char* s : {"none", "l1", "l2", "minmax"})
        CHECK(std::string(norm_kind_name(norm_kind_from_string(s))) == s);
    CHECK_THROWS_AS(norm_kind_from_string("l3"), ConfigError);
}
