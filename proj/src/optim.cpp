#include "robsal/optim.hpp"

#include <cmath>

#include "robsal/errors.hpp"

namespace robsal {

Adam::Adam(const std::vector<std::vector<int>>& param_shapes, Options opts) : opts_(opts) {
    for (const auto& s : param_shapes) {
        m_.emplace_back(s);
        v_.emplace_back(s);
    }
}

void Adam::step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                const std::vector<bool>& frozen) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw ArgumentError("optimizer state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (frozen[p]) continue;
        Tensor& w = *params[p];
        Tensor& m = m_[p];
        Tensor& v = v_[p];
        const Tensor& g = grads[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + opts_.weight_decay * w[i];
            m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
            v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= opts_.learning_rate * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

}  // namespace robsal
