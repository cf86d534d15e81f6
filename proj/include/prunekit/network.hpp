#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/layers.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class LayerKind : uint8_t { Conv2d = 0, Relu = 1, MaxPool2x2 = 2, Flatten = 3, Dense = 4 };

const char* layer_kind_name(LayerKind k);

struct Layer {
    LayerKind kind;
    // conv2d
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int padding = 0;
    // dense
    int in_features = 0;
    int out_features = 0;

    Parameter weight;
    Parameter bias;
    // Per-output-channel multiplier applied to the conv output after
    // bias-add. Pruning state keeps these in {0,1}; the OBD estimator
    // perturbs them transiently.
    std::vector<double> gate;

    bool has_params() const { return kind == LayerKind::Conv2d || kind == LayerKind::Dense; }
};

struct ForwardCache {
    Tensor input;
    std::vector<int> labels;
    std::vector<Tensor> layer_out;              // post-gate output of every layer
    std::vector<Tensor> conv_pregate;           // conv layers only, pre-gate output
    std::vector<std::vector<size_t>> pool_argmax;
    Tensor grad_logits;
    double loss = 0.0;
    double accuracy = 0.0;
    uint64_t net_revision = 0;
};

// Per-example gate gradients: for each conv layer index, a [N, C_out] tensor
// holding sum over spatial positions of d(batch loss)/d(output) * pre-gate
// activation. Summing over examples gives the exact dC/dg_k.
struct GateGrads {
    std::vector<Tensor> per_layer; // indexed by layer position; empty for non-conv
};

struct FlopsTable {
    std::vector<std::pair<int, double>> per_layer;  // layer index -> layer total
    std::vector<std::pair<int, double>> per_neuron; // conv layer index -> per output map
    double total = 0.0;

    double neuron_flops(int layer_index) const;
};

class Network {
public:
    std::vector<size_t> input_shape; // {C, H, W}
    std::vector<Layer> layers;

    // Structure/parameter revision; caches carry the revision they were
    // computed against so stale-cache misuse is caught.
    uint64_t revision() const { return revision_; }

    ForwardCache forward(const Tensor& batch, const std::vector<int>& labels) const;
    GateGrads backward(const ForwardCache& cache);

    std::vector<Parameter*> parameters();
    void zero_grads();
    void sgd(double lr, double momentum, double weight_decay);

    std::vector<int> conv_layer_indices() const;
    int conv_count() const;
    // total unpruned feature maps across conv layers
    int active_maps() const;
    size_t parameter_count() const;

    double gate(int layer_index, int channel) const;
    void set_gate(int layer_index, int channel, double value);
    void bump_revision() { ++revision_; }

    // Structurally removes one output channel of a conv layer along with the
    // matching input slice of the downstream conv/dense consumer. Rejects
    // removing the last remaining channel of a layer.
    void prune_channel(int layer_index, int channel);

    FlopsTable flops() const;

    // (C, H, W) entering each layer; flatten output reported as (features,1,1)
    std::vector<std::array<size_t, 3>> shape_trace() const;

    void init_params(Rng& rng); // Kaiming fan-in init, biases zero

    void save(const std::string& path) const;
    static Network load(const std::string& path);

private:
    uint64_t revision_ = 0;
};

// Fluent construction with shape propagation and compatibility checks.
class NetworkBuilder {
public:
    NetworkBuilder(size_t channels, size_t height, size_t width);
    NetworkBuilder& conv(int out_channels, int kernel, int padding);
    NetworkBuilder& relu();
    NetworkBuilder& maxpool();
    NetworkBuilder& flatten();
    NetworkBuilder& dense(int out_features);
    Network build();

private:
    Network net_;
    size_t c_, h_, w_;
    bool flat_ = false;
    size_t features_ = 0;
};

// Post-ReLU activation tensor for a conv layer: the following ReLU's output
// when one directly follows, otherwise the conv's own (gated) output.
const Tensor& conv_activation(const Network& net, const ForwardCache& cache, int conv_layer_index);

} // namespace prunekit
