#include "prunekit/layers.hpp"

#include <algorithm>
#include <cmath>

#include "prunekit/errors.hpp"

namespace prunekit {

namespace {

void check_conv_args(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     int padding) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be rank 4 (N,C,H,W)");
    if (weights.rank() != 4) throw ShapeError("conv2d: weights must be rank 4 (Cout,Cin,K,K)");
    if (weights.dim(2) != weights.dim(3)) throw ShapeError("conv2d: kernel must be square");
    const int k = static_cast<int>(weights.dim(2));
    if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
    if (padding != 0 && padding != (k - 1) / 2)
        throw ShapeError("conv2d: padding must be 0 (valid) or (K-1)/2 (same)");
    if (input.dim(1) != weights.dim(1))
        throw ShapeError("conv2d: input channel count does not match weights");
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
        throw ShapeError("conv2d: bias length must equal output channel count");
    const int h = static_cast<int>(input.dim(2));
    const int w = static_cast<int>(input.dim(3));
    if (h + 2 * padding - k + 1 <= 0 || w + 2 * padding - k + 1 <= 0)
        throw ShapeError("conv2d: kernel larger than padded input");
}

} // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      int padding) {
    check_conv_args(input, weights, bias, padding);
    const size_t n_batch = input.dim(0), c_in = input.dim(1);
    const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
    const size_t c_out = weights.dim(0);
    const int k = static_cast<int>(weights.dim(2)), p = padding;
    const int ho = h + 2 * p - k + 1, wo = w + 2 * p - k + 1;

    Tensor out({n_batch, c_out, static_cast<size_t>(ho), static_cast<size_t>(wo)});
    for (size_t n = 0; n < n_batch; ++n)
        for (size_t co = 0; co < c_out; ++co)
            for (int y = 0; y < ho; ++y)
                for (int x = 0; x < wo; ++x) {
                    double acc = bias[co];
                    for (size_t ci = 0; ci < c_in; ++ci)
                        for (int i = 0; i < k; ++i) {
                            const int iy = y + i - p;
                            if (iy < 0 || iy >= h) continue;
                            for (int j = 0; j < k; ++j) {
                                const int ix = x + j - p;
                                if (ix < 0 || ix >= w) continue;
                                acc += input.at(n, ci, iy, ix) * weights.at(co, ci, i, j);
                            }
                        }
                    out.at(n, co, y, x) = acc;
                }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights, int padding) {
    if (grad_out.rank() != 4) throw ShapeError("conv2d_backward: grad_out must be rank 4");
    const size_t n_batch = input.dim(0), c_in = input.dim(1);
    const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
    const size_t c_out = weights.dim(0);
    const int k = static_cast<int>(weights.dim(2)), p = padding;
    const int ho = h + 2 * p - k + 1, wo = w + 2 * p - k + 1;
    if (grad_out.dim(0) != n_batch || grad_out.dim(1) != c_out ||
        grad_out.dim(2) != static_cast<size_t>(ho) || grad_out.dim(3) != static_cast<size_t>(wo))
        throw ShapeError("conv2d_backward: grad_out shape does not match forward output");

    Conv2dGrads g;
    g.input = Tensor(input.shape);
    g.weights = Tensor(weights.shape);
    g.bias = Tensor({c_out});

    for (size_t n = 0; n < n_batch; ++n)
        for (size_t co = 0; co < c_out; ++co)
            for (int y = 0; y < ho; ++y)
                for (int x = 0; x < wo; ++x) {
                    const double go = grad_out.at(n, co, y, x);
                    if (go == 0.0) continue;
                    g.bias[co] += go;
                    for (size_t ci = 0; ci < c_in; ++ci)
                        for (int i = 0; i < k; ++i) {
                            const int iy = y + i - p;
                            if (iy < 0 || iy >= h) continue;
                            for (int j = 0; j < k; ++j) {
                                const int ix = x + j - p;
                                if (ix < 0 || ix >= w) continue;
                                g.weights.at(co, ci, i, j) += go * input.at(n, ci, iy, ix);
                                g.input.at(n, ci, iy, ix) += go * weights.at(co, ci, i, j);
                            }
                        }
                }
    return g;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape);
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
    if (!grad_out.same_shape(x)) throw ShapeError("relu_backward: shape mismatch");
    Tensor g(x.shape);
    for (size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return g;
}

PoolResult maxpool2x2_forward(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("maxpool2x2: input must be rank 4");
    const size_t n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("maxpool2x2: spatial dimensions must be even");
    PoolResult r;
    r.output = Tensor({n_batch, c, h / 2, w / 2});
    r.argmax.resize(r.output.size());
    size_t oi = 0;
    for (size_t n = 0; n < n_batch; ++n)
        for (size_t ch = 0; ch < c; ++ch)
            for (size_t y = 0; y < h; y += 2)
                for (size_t x0 = 0; x0 < w; x0 += 2) {
                    double best = x.at(n, ch, y, x0);
                    size_t best_idx = ((n * c + ch) * h + y) * w + x0;
                    // strict > keeps the first (row-major) max on ties
                    for (size_t dy = 0; dy < 2; ++dy)
                        for (size_t dx = 0; dx < 2; ++dx) {
                            const double v = x.at(n, ch, y + dy, x0 + dx);
                            if (v > best) {
                                best = v;
                                best_idx = ((n * c + ch) * h + (y + dy)) * w + (x0 + dx);
                            }
                        }
                    r.output[oi] = best;
                    r.argmax[oi] = best_idx;
                    ++oi;
                }
    return r;
}

Tensor maxpool2x2_backward(const Tensor& grad_out, const std::vector<size_t>& argmax,
                           const std::vector<size_t>& input_shape) {
    if (grad_out.size() != argmax.size())
        throw UsageError("maxpool2x2_backward: grad_out does not match cached argmax");
    Tensor g(input_shape);
    for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
    return g;
}

Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
    if (x.rank() != 2 || weights.rank() != 2)
        throw ShapeError("dense: input and weights must be rank 2");
    if (x.dim(1) != weights.dim(1))
        throw ShapeError("dense: input features do not match weights");
    if (bias.rank() != 1 || bias.dim(0) != weights.dim(0))
        throw ShapeError("dense: bias length must equal output count");
    const size_t n_batch = x.dim(0), in = x.dim(1), out = weights.dim(0);
    Tensor y({n_batch, out});
    for (size_t n = 0; n < n_batch; ++n)
        for (size_t o = 0; o < out; ++o) {
            double acc = bias[o];
            for (size_t i = 0; i < in; ++i) acc += x.at(n, i) * weights.at(o, i);
            y.at(n, o) = acc;
        }
    return y;
}

DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weights) {
    const size_t n_batch = x.dim(0), in = x.dim(1), out = weights.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != n_batch || grad_out.dim(1) != out)
        throw ShapeError("dense_backward: grad_out shape does not match forward output");
    DenseGrads g;
    g.input = Tensor(x.shape);
    g.weights = Tensor(weights.shape);
    g.bias = Tensor({out});
    for (size_t n = 0; n < n_batch; ++n)
        for (size_t o = 0; o < out; ++o) {
            const double go = grad_out.at(n, o);
            if (go == 0.0) continue;
            g.bias[o] += go;
            for (size_t i = 0; i < in; ++i) {
                g.weights.at(o, i) += go * x.at(n, i);
                g.input.at(n, i) += go * weights.at(o, i);
            }
        }
    return g;
}

XentResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be rank 2");
    const size_t n_batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != n_batch)
        throw ShapeError("softmax_cross_entropy: label count does not match batch");
    XentResult r;
    r.grad_logits = Tensor(logits.shape);
    double total = 0.0;
    for (size_t n = 0; n < n_batch; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<size_t>(label) >= classes)
            throw DataError("softmax_cross_entropy: label out of range");
        double m = logits.at(n, 0);
        for (size_t c = 1; c < classes; ++c) m = std::max(m, logits.at(n, c));
        double z = 0.0;
        for (size_t c = 0; c < classes; ++c) z += std::exp(logits.at(n, c) - m);
        const double logz = std::log(z);
        total += -(logits.at(n, static_cast<size_t>(label)) - m - logz);
        for (size_t c = 0; c < classes; ++c) {
            const double p = std::exp(logits.at(n, c) - m - logz);
            r.grad_logits.at(n, c) =
                (p - (static_cast<size_t>(label) == c ? 1.0 : 0.0)) / static_cast<double>(n_batch);
        }
    }
    r.loss = total / static_cast<double>(n_batch);
    return r;
}

void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum,
              double weight_decay) {
    for (Parameter* p : params) {
        if (!p || p->empty()) continue;
        for (size_t i = 0; i < p->value.size(); ++i) {
            double buf = momentum * p->momentum[i] + p->grad[i] + weight_decay * p->value[i];
            p->momentum[i] = buf;
            p->value[i] -= lr * buf;
        }
        p->zero_grad();
    }
}

} // namespace prunekit
