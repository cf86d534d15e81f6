#pragma once

#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

// Explicit forward/backward pairs for every layer type. No autodiff tape:
// the network module composes these and owns the caches.
//
// Conventions fixed for exact testability:
//   - conv stride 1, odd kernel, padding 0 (valid) or (K-1)/2 (same)
//   - ReLU subgradient at 0 is 0
//   - maxpool 2x2 stride 2, ties route gradient to the first element
//     in row-major window order

// input [N,Cin,H,W], weights [Cout,Cin,K,K], bias [Cout] -> [N,Cout,H',W']
Tensor conv2d_forward(const Tensor& input, const Tensor& weights,
                      const Tensor& bias, int padding);

struct Conv2dGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                            const Tensor& weights, int padding);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);

struct PoolResult {
    Tensor output;
    std::vector<size_t> argmax; // flat index into the input, one per output element
};
PoolResult maxpool2x2_forward(const Tensor& x);
Tensor maxpool2x2_backward(const Tensor& grad_out, const std::vector<size_t>& argmax,
                           const std::vector<size_t>& input_shape);

// x [N,I], weights [O,I], bias [O] -> [N,O]; y = x W^T + b
Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};
DenseGrads dense_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weights);

struct XentResult {
    double loss = 0.0;
    Tensor grad_logits; // (softmax - onehot) / N
};
// Mean negative log-likelihood over the batch, max-shifted for stability.
XentResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// buf <- momentum*buf + grad + weight_decay*value; value <- value - lr*buf;
// gradients are zeroed afterwards.
void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum,
              double weight_decay);

} // namespace prunekit
