#include "prunekit/network.hpp"

#include <algorithm>
#include <cmath>

#include "prunekit/errors.hpp"

namespace prunekit {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2x2: return "maxpool2x2";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Dense: return "dense";
    }
    return "?";
}

double FlopsTable::neuron_flops(int layer_index) const {
    for (const auto& [idx, v] : per_neuron)
        if (idx == layer_index) return v;
    throw UsageError("flops: no per-neuron entry for layer");
}

// ---------------------------------------------------------------------------
// NetworkBuilder

NetworkBuilder::NetworkBuilder(size_t channels, size_t height, size_t width)
    : c_(channels), h_(height), w_(width) {
    net_.input_shape = {channels, height, width};
}

NetworkBuilder& NetworkBuilder::conv(int out_channels, int kernel, int padding) {
    if (flat_) throw ShapeError("builder: conv after flatten");
    if (kernel % 2 == 0) throw ShapeError("builder: kernel must be odd");
    if (padding != 0 && padding != (kernel - 1) / 2)
        throw ShapeError("builder: padding must be 0 or (K-1)/2");
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.in_channels = static_cast<int>(c_);
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.padding = padding;
    l.weight = Parameter(Tensor({static_cast<size_t>(out_channels), c_,
                                 static_cast<size_t>(kernel), static_cast<size_t>(kernel)}));
    l.bias = Parameter(Tensor({static_cast<size_t>(out_channels)}));
    l.gate.assign(static_cast<size_t>(out_channels), 1.0);
    const size_t ho = h_ + 2 * padding - kernel + 1;
    const size_t wo = w_ + 2 * padding - kernel + 1;
    if (ho == 0 || wo == 0 || ho > h_ + 2 * padding)
        throw ShapeError("builder: conv output would be empty");
    c_ = static_cast<size_t>(out_channels);
    h_ = ho;
    w_ = wo;
    net_.layers.push_back(std::move(l));
    return *this;
}

NetworkBuilder& NetworkBuilder::relu() {
    Layer l;
    l.kind = LayerKind::Relu;
    net_.layers.push_back(std::move(l));
    return *this;
}

NetworkBuilder& NetworkBuilder::maxpool() {
    if (flat_) throw ShapeError("builder: maxpool after flatten");
    if (h_ % 2 != 0 || w_ % 2 != 0)
        throw ShapeError("builder: maxpool needs even spatial dimensions");
    Layer l;
    l.kind = LayerKind::MaxPool2x2;
    net_.layers.push_back(std::move(l));
    h_ /= 2;
    w_ /= 2;
    return *this;
}

NetworkBuilder& NetworkBuilder::flatten() {
    if (flat_) throw ShapeError("builder: duplicate flatten");
    Layer l;
    l.kind = LayerKind::Flatten;
    net_.layers.push_back(std::move(l));
    flat_ = true;
    features_ = c_ * h_ * w_;
    return *this;
}

NetworkBuilder& NetworkBuilder::dense(int out_features) {
    if (!flat_) throw ShapeError("builder: dense requires flatten first");
    Layer l;
    l.kind = LayerKind::Dense;
    l.in_features = static_cast<int>(features_);
    l.out_features = out_features;
    l.weight = Parameter(Tensor({static_cast<size_t>(out_features), features_}));
    l.bias = Parameter(Tensor({static_cast<size_t>(out_features)}));
    features_ = static_cast<size_t>(out_features);
    net_.layers.push_back(std::move(l));
    return *this;
}

Network NetworkBuilder::build() { return std::move(net_); }

// ---------------------------------------------------------------------------
// Network

ForwardCache Network::forward(const Tensor& batch, const std::vector<int>& labels) const {
    if (batch.rank() != 4 || batch.dim(1) != input_shape[0] ||
        batch.dim(2) != input_shape[1] || batch.dim(3) != input_shape[2])
        throw ShapeError("forward: batch shape does not match network input shape");

    ForwardCache cache;
    cache.input = batch;
    cache.labels = labels;
    cache.layer_out.resize(layers.size());
    cache.conv_pregate.resize(layers.size());
    cache.pool_argmax.resize(layers.size());
    cache.net_revision = revision_;

    const Tensor* x = &cache.input;
    for (size_t li = 0; li < layers.size(); ++li) {
        const Layer& l = layers[li];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                Tensor pre = conv2d_forward(*x, l.weight.value, l.bias.value, l.padding);
                Tensor out(pre.shape);
                const size_t n = pre.dim(0), c = pre.dim(1), hw = pre.dim(2) * pre.dim(3);
                for (size_t ni = 0; ni < n; ++ni)
                    for (size_t k = 0; k < c; ++k) {
                        const double g = l.gate[k];
                        const size_t base = (ni * c + k) * hw;
                        for (size_t m = 0; m < hw; ++m) out[base + m] = g * pre[base + m];
                    }
                cache.conv_pregate[li] = std::move(pre);
                cache.layer_out[li] = std::move(out);
                break;
            }
            case LayerKind::Relu:
                cache.layer_out[li] = relu_forward(*x);
                break;
            case LayerKind::MaxPool2x2: {
                PoolResult r = maxpool2x2_forward(*x);
                cache.layer_out[li] = std::move(r.output);
                cache.pool_argmax[li] = std::move(r.argmax);
                break;
            }
            case LayerKind::Flatten:
                cache.layer_out[li] =
                    x->reshaped({x->dim(0), x->size() / x->dim(0)});
                break;
            case LayerKind::Dense:
                cache.layer_out[li] = dense_forward(*x, l.weight.value, l.bias.value);
                break;
        }
        x = &cache.layer_out[li];
    }

    const Tensor& logits = *x;
    XentResult xr = softmax_cross_entropy(logits, labels);
    cache.loss = xr.loss;
    cache.grad_logits = std::move(xr.grad_logits);

    size_t correct = 0;
    const size_t n = logits.dim(0), c = logits.dim(1);
    for (size_t ni = 0; ni < n; ++ni) {
        size_t best = 0;
        for (size_t ci = 1; ci < c; ++ci)
            if (logits.at(ni, ci) > logits.at(ni, best)) best = ci;
        if (static_cast<int>(best) == labels[ni]) ++correct;
    }
    cache.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    return cache;
}

GateGrads Network::backward(const ForwardCache& cache) {
    if (cache.net_revision != revision_)
        throw UsageError("backward: forward cache is stale (network was modified)");
    if (cache.layer_out.size() != layers.size())
        throw UsageError("backward: cache does not belong to this network");

    GateGrads gg;
    gg.per_layer.resize(layers.size());

    Tensor grad = cache.grad_logits;
    for (size_t ri = layers.size(); ri-- > 0;) {
        Layer& l = layers[ri];
        const Tensor& in = (ri == 0) ? cache.input : cache.layer_out[ri - 1];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const Tensor& pre = cache.conv_pregate[ri];
                const size_t n = pre.dim(0), c = pre.dim(1), hw = pre.dim(2) * pre.dim(3);
                Tensor per_example({n, c});
                Tensor dpre(pre.shape);
                for (size_t ni = 0; ni < n; ++ni)
                    for (size_t k = 0; k < c; ++k) {
                        const size_t base = (ni * c + k) * hw;
                        double acc = 0.0;
                        const double g = l.gate[k];
                        for (size_t m = 0; m < hw; ++m) {
                            acc += grad[base + m] * pre[base + m];
                            dpre[base + m] = grad[base + m] * g;
                        }
                        per_example.at(ni, k) = acc;
                    }
                gg.per_layer[ri] = std::move(per_example);
                Conv2dGrads cg = conv2d_backward(dpre, in, l.weight.value, l.padding);
                for (size_t i = 0; i < cg.weights.size(); ++i) l.weight.grad[i] += cg.weights[i];
                for (size_t i = 0; i < cg.bias.size(); ++i) l.bias.grad[i] += cg.bias[i];
                grad = std::move(cg.input);
                break;
            }
            case LayerKind::Relu:
                grad = relu_backward(grad, in);
                break;
            case LayerKind::MaxPool2x2:
                grad = maxpool2x2_backward(grad, cache.pool_argmax[ri], in.shape);
                break;
            case LayerKind::Flatten:
                grad = grad.reshaped(in.shape);
                break;
            case LayerKind::Dense: {
                DenseGrads dg = dense_backward(grad, in, l.weight.value);
                for (size_t i = 0; i < dg.weights.size(); ++i) l.weight.grad[i] += dg.weights[i];
                for (size_t i = 0; i < dg.bias.size(); ++i) l.bias.grad[i] += dg.bias[i];
                grad = std::move(dg.input);
                break;
            }
        }
    }
    return gg;
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (Layer& l : layers)
        if (l.has_params()) {
            out.push_back(&l.weight);
            out.push_back(&l.bias);
        }
    return out;
}

void Network::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

void Network::sgd(double lr, double momentum, double weight_decay) {
    sgd_step(parameters(), lr, momentum, weight_decay);
    ++revision_;
}

std::vector<int> Network::conv_layer_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].kind == LayerKind::Conv2d) out.push_back(static_cast<int>(i));
    return out;
}

int Network::conv_count() const { return static_cast<int>(conv_layer_indices().size()); }

int Network::active_maps() const {
    int n = 0;
    for (const Layer& l : layers)
        if (l.kind == LayerKind::Conv2d)
            for (double g : l.gate)
                if (g != 0.0) ++n;
    return n;
}

size_t Network::parameter_count() const {
    size_t n = 0;
    for (const Layer& l : layers)
        if (l.has_params()) n += l.weight.value.size() + l.bias.value.size();
    return n;
}

double Network::gate(int layer_index, int channel) const {
    const Layer& l = layers.at(static_cast<size_t>(layer_index));
    if (l.kind != LayerKind::Conv2d) throw UsageError("gate: layer is not conv");
    return l.gate.at(static_cast<size_t>(channel));
}

void Network::set_gate(int layer_index, int channel, double value) {
    Layer& l = layers.at(static_cast<size_t>(layer_index));
    if (l.kind != LayerKind::Conv2d) throw UsageError("set_gate: layer is not conv");
    l.gate.at(static_cast<size_t>(channel)) = value;
    ++revision_;
}

std::vector<std::array<size_t, 3>> Network::shape_trace() const {
    std::vector<std::array<size_t, 3>> trace;
    size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    bool flat = false;
    for (const Layer& l : layers) {
        trace.push_back({c, h, w});
        switch (l.kind) {
            case LayerKind::Conv2d:
                c = static_cast<size_t>(l.out_channels);
                h = h + 2 * static_cast<size_t>(l.padding) - static_cast<size_t>(l.kernel) + 1;
                w = w + 2 * static_cast<size_t>(l.padding) - static_cast<size_t>(l.kernel) + 1;
                break;
            case LayerKind::MaxPool2x2:
                h /= 2;
                w /= 2;
                break;
            case LayerKind::Flatten:
                c = c * h * w;
                h = 1;
                w = 1;
                flat = true;
                break;
            case LayerKind::Dense:
                c = static_cast<size_t>(l.out_features);
                break;
            case LayerKind::Relu:
                break;
        }
    }
    (void)flat;
    trace.push_back({c, h, w});
    return trace;
}

namespace {

// Removes index `ch` along dimension `dim` (0 or 1) of a rank-2/4 parameter.
Tensor drop_slice(const Tensor& t, size_t dim, size_t ch) {
    std::vector<size_t> shape = t.shape;
    shape[dim] -= 1;
    Tensor out(shape);
    const size_t outer = dim == 0 ? 1 : t.dim(0);
    size_t inner = 1;
    for (size_t d = dim + 1; d < t.rank(); ++d) inner *= t.dim(d);
    const size_t n_dim = t.dim(dim);
    size_t oi = 0;
    for (size_t o = 0; o < outer; ++o)
        for (size_t d = 0; d < n_dim; ++d) {
            if (d == ch) continue;
            const size_t base = (o * n_dim + d) * inner;
            for (size_t i = 0; i < inner; ++i) out[oi++] = t.data[base + i];
        }
    return out;
}

void drop_param_slice(Parameter& p, size_t dim, size_t ch) {
    p.value = drop_slice(p.value, dim, ch);
    p.grad = drop_slice(p.grad, dim, ch);
    p.momentum = drop_slice(p.momentum, dim, ch);
}

// Removes a contiguous block of input columns [start, start+count) of a
// dense parameter [O, I].
Tensor drop_columns(const Tensor& t, size_t start, size_t count) {
    const size_t rows = t.dim(0), cols = t.dim(1);
    Tensor out({rows, cols - count});
    size_t oi = 0;
    for (size_t r = 0; r < rows; ++r)
        for (size_t ci = 0; ci < cols; ++ci) {
            if (ci >= start && ci < start + count) continue;
            out[oi++] = t.at(r, ci);
        }
    return out;
}

void drop_param_columns(Parameter& p, size_t start, size_t count) {
    p.value = drop_columns(p.value, start, count);
    p.grad = drop_columns(p.grad, start, count);
    p.momentum = drop_columns(p.momentum, start, count);
}

} // namespace

void Network::prune_channel(int layer_index, int channel) {
    Layer& l = layers.at(static_cast<size_t>(layer_index));
    if (l.kind != LayerKind::Conv2d) throw UsageError("prune_channel: layer is not conv");
    if (channel < 0 || channel >= l.out_channels)
        throw UsageError("prune_channel: channel out of range");
    if (l.out_channels < 2)
        throw UsageError("prune_channel: cannot remove the last channel of a layer");

    const auto shapes = shape_trace();

    drop_param_slice(l.weight, 0, static_cast<size_t>(channel));
    drop_param_slice(l.bias, 0, static_cast<size_t>(channel));
    l.gate.erase(l.gate.begin() + channel);
    l.out_channels -= 1;

    // Remove the matching input slice from the first downstream consumer.
    for (size_t j = static_cast<size_t>(layer_index) + 1; j < layers.size(); ++j) {
        Layer& d = layers[j];
        if (d.kind == LayerKind::Conv2d) {
            drop_param_slice(d.weight, 1, static_cast<size_t>(channel));
            d.in_channels -= 1;
            break;
        }
        if (d.kind == LayerKind::Dense) {
            // Row-major flatten maps channel c at spatial (h, w) to column
            // c*H*W + h*W + w, with H, W the spatial dims entering flatten.
            const auto& s = shapes[j]; // (features, 1, 1) after flatten
            (void)s;
            // find the flatten input shape: walk back to the flatten layer
            size_t fh = 1, fw = 1;
            for (size_t b = j; b-- > 0;) {
                if (layers[b].kind == LayerKind::Flatten) {
                    fh = shapes[b][1];
                    fw = shapes[b][2];
                    break;
                }
            }
            const size_t hw = fh * fw;
            drop_param_columns(d.weight, static_cast<size_t>(channel) * hw, hw);
            d.in_features -= static_cast<int>(hw);
            break;
        }
    }
    ++revision_;
}

FlopsTable Network::flops() const {
    FlopsTable table;
    // propagate active (unpruned-gate) channel counts for cost accounting
    size_t c_active = input_shape[0];
    size_t h = input_shape[1], w = input_shape[2];
    for (size_t li = 0; li < layers.size(); ++li) {
        const Layer& l = layers[li];
        switch (l.kind) {
            case LayerKind::Conv2d: {
                const size_t k2 = static_cast<size_t>(l.kernel) * static_cast<size_t>(l.kernel);
                h = h + 2 * static_cast<size_t>(l.padding) - static_cast<size_t>(l.kernel) + 1;
                w = w + 2 * static_cast<size_t>(l.padding) - static_cast<size_t>(l.kernel) + 1;
                size_t active = 0;
                for (double g : l.gate)
                    if (g != 0.0) ++active;
                const double per_neuron =
                    2.0 * static_cast<double>(h) * static_cast<double>(w) *
                    (static_cast<double>(c_active) * static_cast<double>(k2) + 1.0);
                const double layer_total = per_neuron * static_cast<double>(active);
                table.per_neuron.emplace_back(static_cast<int>(li), per_neuron);
                table.per_layer.emplace_back(static_cast<int>(li), layer_total);
                table.total += layer_total;
                c_active = active;
                break;
            }
            case LayerKind::MaxPool2x2:
                h /= 2;
                w /= 2;
                break;
            case LayerKind::Flatten:
                c_active = c_active * h * w;
                h = 1;
                w = 1;
                break;
            case LayerKind::Dense: {
                const double in = static_cast<double>(c_active);
                const double out = static_cast<double>(l.out_features);
                const double layer_total = (2.0 * in - 1.0) * out;
                table.per_layer.emplace_back(static_cast<int>(li), layer_total);
                table.total += layer_total;
                c_active = static_cast<size_t>(l.out_features);
                break;
            }
            case LayerKind::Relu:
                break; // nonlinearities are free
        }
    }
    return table;
}

void Network::init_params(Rng& rng) {
    for (Layer& l : layers) {
        if (!l.has_params()) continue;
        size_t fan_in;
        if (l.kind == LayerKind::Conv2d)
            fan_in = static_cast<size_t>(l.in_channels) * static_cast<size_t>(l.kernel) *
                     static_cast<size_t>(l.kernel);
        else
            fan_in = static_cast<size_t>(l.in_features);
        const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : l.weight.value.data) v = std * rng.normal();
        l.bias.value.fill(0.0);
        l.weight.momentum.fill(0.0);
        l.bias.momentum.fill(0.0);
    }
    ++revision_;
}

const Tensor& conv_activation(const Network& net, const ForwardCache& cache,
                              int conv_layer_index) {
    const size_t li = static_cast<size_t>(conv_layer_index);
    if (li + 1 < net.layers.size() && net.layers[li + 1].kind == LayerKind::Relu)
        return cache.layer_out[li + 1];
    return cache.layer_out[li];
}

} // namespace prunekit
