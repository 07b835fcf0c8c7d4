#pragma once

#include "robsal/rng.hpp"
#include "robsal/tensor.hpp"

// Layer primitives. All of them operate on single images (C x H x W); the
// model layer batches and parallelizes on top of these. Backward functions
// take the saved forward input and the gradient flowing from above, return
// the gradient with respect to the layer input, and accumulate parameter
// gradients into caller-owned buffers (pass nullptr to skip them, e.g. for
// attack gradients where only the input gradient is needed).
namespace robsal::nn {

struct Conv2d {
    Tensor weight;  // out_ch x in_ch x k x k
    Tensor bias;    // out_ch
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad);

    int out_channels() const { return weight.dim(0); }
    int in_channels() const { return weight.dim(1); }
    int kernel() const { return weight.dim(2); }

    void init_kaiming(Rng& rng);

    std::vector<int> output_shape(const std::vector<int>& in_shape) const;
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& grad_out, Tensor* weight_grad,
                    Tensor* bias_grad) const;
};

struct Linear {
    Tensor weight;  // out x in
    Tensor bias;    // out

    Linear() = default;
    Linear(int in_features, int out_features);

    int in_features() const { return weight.dim(1); }
    int out_features() const { return weight.dim(0); }

    void init_kaiming(Rng& rng);

    Tensor forward(const Tensor& x) const;  // flat vector in -> vector out
    Tensor backward(const Tensor& x, const Tensor& grad_out, Tensor* weight_grad,
                    Tensor* bias_grad) const;
};

// ReLU. Derivative at exactly zero is taken as zero.
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out);

// 2x2 max pooling with stride 2; argmax indices are saved for the backward
// pass. Ties resolve to the first maximal element in scan order.
Tensor maxpool2x2(const Tensor& x, std::vector<int>* argmax);
Tensor maxpool2x2_backward(const std::vector<int>& in_shape, const std::vector<int>& argmax,
                           const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& x);  // C x H x W -> C
Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& grad_out);

// Row-stable softmax / cross-entropy on a logit vector.
std::vector<double> softmax(const double* logits, int k);
double cross_entropy(const double* logits, int k, int label);

}  // namespace robsal::nn
