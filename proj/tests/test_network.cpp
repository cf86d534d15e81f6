#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "prunekit/network.hpp"
#include "prunekit/rng.hpp"

using namespace prunekit;

namespace {

Network testbed_net(uint64_t seed, int classes = 3, size_t hw = 8) {
    Network net = NetworkBuilder(1, hw, hw)
                      .conv(4, 3, 1)
                      .relu()
                      .maxpool()
                      .conv(6, 3, 1)
                      .relu()
                      .maxpool()
                      .flatten()
                      .dense(classes)
                      .build();
    Rng rng(seed);
    net.init_params(rng);
    return net;
}

Tensor random_batch(size_t n, size_t hw, Rng& rng) {
    Tensor t({n, 1, hw, hw});
    for (double& v : t.data) v = rng.uniform();
    return t;
}

std::vector<int> random_labels(size_t n, int classes, Rng& rng) {
    std::vector<int> l(n);
    for (int& v : l) v = static_cast<int>(rng.index(static_cast<size_t>(classes)));
    return l;
}

std::filesystem::path temp_model_path(const char* stem) {
    return std::filesystem::temp_directory_path() / (std::string(stem) + ".prnb");
}

} // namespace

TEST_CASE("whole-network parameter gradients match finite differences") {
    Rng rng(5);
    Network net = testbed_net(5);
    const Tensor batch = random_batch(4, 8, rng);
    const std::vector<int> labels = random_labels(4, 3, rng);

    ForwardCache cache = net.forward(batch, labels);
    net.backward(cache);

    auto loss_at = [&] { return net.forward(batch, labels).loss; };
    for (Parameter* p : net.parameters()) {
        for (size_t i = 0; i < p->value.size(); i += 13) {
            const double analytic = p->grad[i];
            double& theta = p->value.data[i];
            const double eps = 1e-6 * std::max(1.0, std::abs(theta));
            const double saved = theta;
            theta = saved + eps;
            const double up = loss_at();
            theta = saved - eps;
            const double down = loss_at();
            theta = saved;
            const double numeric = (up - down) / (2.0 * eps);
            CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
        }
    }
}

TEST_CASE("gate gradients match finite differences in the gate coordinates") {
    Rng rng(6);
    Network net = testbed_net(6);
    const Tensor batch = random_batch(3, 8, rng);
    const std::vector<int> labels = random_labels(3, 3, rng);

    ForwardCache cache = net.forward(batch, labels);
    const GateGrads gg = net.backward(cache);
    net.zero_grads();

    for (int li : net.conv_layer_indices()) {
        const Layer& l = net.layers[static_cast<size_t>(li)];
        for (int ch = 0; ch < l.out_channels; ++ch) {
            double analytic = 0.0;
            for (size_t n = 0; n < 3; ++n)
                analytic += gg.per_layer[static_cast<size_t>(li)].at(n, static_cast<size_t>(ch));
            const double eps = 1e-6;
            net.set_gate(li, ch, 1.0 + eps);
            const double up = net.forward(batch, labels).loss;
            net.set_gate(li, ch, 1.0 - eps);
            const double down = net.forward(batch, labels).loss;
            net.set_gate(li, ch, 1.0);
            const double numeric = (up - down) / (2.0 * eps);
            CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
        }
    }
}

TEST_CASE("gating a map to zero equals structural removal bit for bit") {
    Rng rng(7);
    const Tensor batch = random_batch(5, 8, rng);
    const std::vector<int> labels = random_labels(5, 3, rng);

    for (int li : {0, 3}) {
        Network gated = testbed_net(7);
        Network pruned = testbed_net(7);
        const int ch = 1;
        gated.set_gate(li, ch, 0.0);
        pruned.prune_channel(li, ch);
        const double a = gated.forward(batch, labels).loss;
        const double b = pruned.forward(batch, labels).loss;
        CHECK(a == b); // exact: the removed map contributes exactly 0.0
    }
}

TEST_CASE("prune_channel updates shapes, parameters and downstream consumers") {
    Network net = testbed_net(8);
    const size_t params_before = net.parameter_count();

    // prune first conv layer channel 2: conv0 loses a kernel+bias+gate,
    // conv at index 3 loses an input slice
    net.prune_channel(0, 2);
    CHECK(net.layers[0].out_channels == 3);
    CHECK(net.layers[0].weight.value.dim(0) == 3);
    CHECK(net.layers[0].bias.value.size() == 3);
    CHECK(net.layers[0].gate.size() == 3);
    CHECK(net.layers[3].in_channels == 3);
    CHECK(net.layers[3].weight.value.dim(1) == 3);
    const size_t removed = 1 * 3 * 3 + 1 + 6 * 3 * 3;
    CHECK(net.parameter_count() == params_before - removed);

    // the forward pass still works and dense input shrinks when the last
    // conv layer is pruned
    net.prune_channel(3, 0);
    CHECK(net.layers[3].out_channels == 5);
    const Layer& dense = net.layers.back();
    CHECK(dense.in_features == 5 * 2 * 2);
    CHECK(dense.weight.value.dim(1) == static_cast<size_t>(dense.in_features));

    Rng rng(8);
    const Tensor batch = random_batch(2, 8, rng);
    const ForwardCache cache = net.forward(batch, {0, 1});
    CHECK(std::isfinite(cache.loss));
    CHECK(net.active_maps() == 3 + 5);
}

TEST_CASE("pruning the dense consumer drops the channel-major column block") {
    // removing last-conv channel ch must keep dense outputs identical for
    // inputs where that channel's activation is zero anyway
    Network net = testbed_net(9);
    Network copy = net;
    const int li = 3, ch = 4;
    net.set_gate(li, ch, 0.0);
    copy.prune_channel(li, ch);
    Rng rng(9);
    const Tensor batch = random_batch(3, 8, rng);
    const ForwardCache a = net.forward(batch, {0, 1, 2});
    const ForwardCache b = copy.forward(batch, {0, 1, 2});
    const Tensor& la = a.layer_out.back();
    const Tensor& lb = b.layer_out.back();
    REQUIRE(la.size() == lb.size());
    for (size_t i = 0; i < la.size(); ++i) CHECK(la[i] == lb[i]);
}

TEST_CASE("prune_channel refuses to remove the last map of a layer") {
    Network net = testbed_net(10);
    for (int i = 0; i < 3; ++i) net.prune_channel(0, 0);
    CHECK(net.layers[0].out_channels == 1);
    CHECK_THROWS_AS(net.prune_channel(0, 0), UsageError);
    CHECK_THROWS_AS(net.prune_channel(1, 0), UsageError);  // not a conv layer
    CHECK_THROWS_AS(net.prune_channel(3, 99), UsageError); // bad channel
}

TEST_CASE("stale forward caches are rejected after structural changes") {
    Network net = testbed_net(11);
    Rng rng(11);
    const Tensor batch = random_batch(2, 8, rng);
    ForwardCache cache = net.forward(batch, {0, 1});
    net.prune_channel(0, 0);
    CHECK_THROWS_AS(net.backward(cache), UsageError);
}

TEST_CASE("flops counts active maps only and matches the closed form") {
    Network net = testbed_net(12);
    const FlopsTable before = net.flops();
    // conv0: 2*8*8*(1*9+1) per map, 4 maps; conv3: 2*4*4*(4*9+1) per map, 6 maps
    const double n0 = 2.0 * 8 * 8 * (1 * 9 + 1);
    const double n3 = 2.0 * 4 * 4 * (4 * 9 + 1);
    const double dense = (2.0 * (6 * 2 * 2) - 1) * 3;
    CHECK(before.neuron_flops(0) == n0);
    CHECK(before.neuron_flops(3) == n3);
    CHECK(before.total == doctest::Approx(4 * n0 + 6 * n3 + dense).epsilon(1e-12));

    net.prune_channel(0, 1);
    const FlopsTable after = net.flops();
    // one conv0 map gone; conv3 per-map cost drops with its input channels
    const double n3b = 2.0 * 4 * 4 * (3 * 9 + 1);
    CHECK(after.total == doctest::Approx(3 * n0 + 6 * n3b + dense).epsilon(1e-12));
    CHECK(after.total < before.total);
}

TEST_CASE("model serialization round-trips bit for bit") {
    Network net = testbed_net(13);
    net.prune_channel(3, 2); // non-trivial structure
    Rng rng(13);
    const Tensor batch = random_batch(3, 8, rng);
    const std::vector<int> labels = {0, 1, 2};
    // give momentum buffers non-zero content
    ForwardCache cache = net.forward(batch, labels);
    net.backward(cache);
    net.sgd(0.01, 0.9, 1e-4);

    const auto path = temp_model_path("roundtrip");
    net.save(path.string());
    const Network loaded = Network::load(path.string());
    std::filesystem::remove(path);

    REQUIRE(loaded.layers.size() == net.layers.size());
    CHECK(loaded.input_shape == net.input_shape);
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& a = net.layers[i];
        const Layer& b = loaded.layers[i];
        CHECK(a.kind == b.kind);
        CHECK(a.gate == b.gate);
        CHECK(a.weight.value.data == b.weight.value.data);
        CHECK(a.bias.value.data == b.bias.value.data);
        CHECK(a.weight.momentum.data == b.weight.momentum.data);
    }
    const double l1 = net.forward(batch, labels).loss;
    const double l2 = loaded.forward(batch, labels).loss;
    CHECK(l1 == l2);
}

TEST_CASE("model loading rejects corrupted files") {
    Network net = testbed_net(14);
    const auto path = temp_model_path("corrupt");
    net.save(path.string());

    auto bytes = [&] {
        std::ifstream is(path, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    }();

    auto write_variant = [&](const std::string& payload) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << payload;
    };

    // bad magic
    std::string bad = bytes;
    bad[0] = 'X';
    write_variant(bad);
    CHECK_THROWS_AS(Network::load(path.string()), DataError);

    // truncation
    write_variant(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(Network::load(path.string()), DataError);

    // trailing garbage
    write_variant(bytes + "zzzz");
    CHECK_THROWS_AS(Network::load(path.string()), DataError);

    // unsupported version (bytes 4..7, little-endian u32)
    bad = bytes;
    bad[4] = 99;
    write_variant(bad);
    CHECK_THROWS_AS(Network::load(path.string()), DataError);

    std::filesystem::remove(path);
    CHECK_THROWS_AS(Network::load(path.string()), DataError);
}

TEST_CASE("builder validates layer compatibility") {
    CHECK_THROWS_AS(NetworkBuilder(1, 8, 8).dense(3), UsageError); // dense before flatten
    CHECK_THROWS_AS(NetworkBuilder(1, 7, 7).conv(2, 3, 1).maxpool().build(), ShapeError);
    CHECK_THROWS_AS(NetworkBuilder(1, 8, 8).flatten().conv(2, 3, 1), UsageError);
}

TEST_CASE("kaiming init scales with fan-in and zeroes biases") {
    Network net = NetworkBuilder(1, 16, 16).conv(64, 3, 1).flatten().dense(4).build();
    Rng rng(77);
    net.init_params(rng);
    const Layer& conv = net.layers[0];
    for (double b : conv.bias.value.data) CHECK(b == 0.0);
    double sq = 0.0;
    for (double w : conv.weight.value.data) sq += w * w;
    const double std_hat = std::sqrt(sq / static_cast<double>(conv.weight.value.size()));
    const double want = std::sqrt(2.0 / (1 * 3 * 3));
    CHECK(std_hat == doctest::Approx(want).epsilon(0.1));
}
