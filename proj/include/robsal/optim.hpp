#pragma once

#include <vector>

#include "robsal/tensor.hpp"

namespace robsal {

// Adaptive-moment optimizer (classic formulation: L2 weight decay is folded
// into the gradient before the moment updates, bias-corrected moments).
class Adam {
public:
    struct Options {
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    Adam() = default;
    Adam(const std::vector<std::vector<int>>& param_shapes, Options opts);

    void set_learning_rate(double lr) { opts_.learning_rate = lr; }
    double learning_rate() const { return opts_.learning_rate; }

    // One update. `params[i]` is modified in place from `grads[i]` unless
    // `frozen[i]` (frozen slots also keep their moments untouched, so a
    // frozen parameter is bitwise stable across any number of steps).
    void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
              const std::vector<bool>& frozen);

private:
    Options opts_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

}  // namespace robsal
