#include "robsal/nn.hpp"

#include <algorithm>
#include <cmath>

#include "robsal/errors.hpp"

namespace robsal::nn {

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride_, int pad_)
    : weight({out_ch, in_ch, kernel, kernel}), bias({out_ch}), stride(stride_), pad(pad_) {}

void Conv2d::init_kaiming(Rng& rng) {
    const int fan_in = in_channels() * kernel() * kernel();
    const double std = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    bias.fill(0.0);
}

std::vector<int> Conv2d::output_shape(const std::vector<int>& in_shape) const {
    const int h = (in_shape[1] + 2 * pad - kernel()) / stride + 1;
    const int w = (in_shape[2] + 2 * pad - kernel()) / stride + 1;
    return {out_channels(), h, w};
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(0) != in_channels())
        throw ShapeError("conv input shape mismatch");
    const int ih = x.dim(1), iw = x.dim(2);
    const int k = kernel();
    const int oh = (ih + 2 * pad - k) / stride + 1;
    const int ow = (iw + 2 * pad - k) / stride + 1;
    Tensor out({out_channels(), oh, ow});

    for (int oc = 0; oc < out_channels(); ++oc) {
        double* out_plane = out.data() + static_cast<std::size_t>(oc) * oh * ow;
        const double b = bias[static_cast<std::size_t>(oc)];
        for (int i = 0; i < oh * ow; ++i) out_plane[i] = b;
        for (int ic = 0; ic < in_channels(); ++ic) {
            const double* in_plane = x.data() + static_cast<std::size_t>(ic) * ih * iw;
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    const double w = weight.at(oc, ic, kh, kw);
                    for (int y = 0; y < oh; ++y) {
                        const int sy = y * stride + kh - pad;
                        if (sy < 0 || sy >= ih) continue;
                        const double* in_row = in_plane + static_cast<std::size_t>(sy) * iw;
                        double* out_row = out_plane + static_cast<std::size_t>(y) * ow;
                        for (int xo = 0; xo < ow; ++xo) {
                            const int sx = xo * stride + kw - pad;
                            if (sx < 0 || sx >= iw) continue;
                            out_row[xo] += w * in_row[sx];
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out, Tensor* weight_grad,
                        Tensor* bias_grad) const {
    const int ih = x.dim(1), iw = x.dim(2);
    const int k = kernel();
    const int oh = grad_out.dim(1), ow = grad_out.dim(2);
    Tensor grad_in({in_channels(), ih, iw});

    for (int oc = 0; oc < out_channels(); ++oc) {
        const double* go_plane = grad_out.data() + static_cast<std::size_t>(oc) * oh * ow;
        if (bias_grad) {
            double s = 0.0;
            for (int i = 0; i < oh * ow; ++i) s += go_plane[i];
            (*bias_grad)[static_cast<std::size_t>(oc)] += s;
        }
        for (int ic = 0; ic < in_channels(); ++ic) {
            const double* in_plane = x.data() + static_cast<std::size_t>(ic) * ih * iw;
            double* gi_plane = grad_in.data() + static_cast<std::size_t>(ic) * ih * iw;
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    const double w = weight.at(oc, ic, kh, kw);
                    double wg = 0.0;
                    for (int y = 0; y < oh; ++y) {
                        const int sy = y * stride + kh - pad;
                        if (sy < 0 || sy >= ih) continue;
                        const double* in_row = in_plane + static_cast<std::size_t>(sy) * iw;
                        double* gi_row = gi_plane + static_cast<std::size_t>(sy) * iw;
                        const double* go_row = go_plane + static_cast<std::size_t>(y) * ow;
                        for (int xo = 0; xo < ow; ++xo) {
                            const int sx = xo * stride + kw - pad;
                            if (sx < 0 || sx >= iw) continue;
                            const double g = go_row[xo];
                            gi_row[sx] += w * g;
                            wg += in_row[sx] * g;
                        }
                    }
                    if (weight_grad) weight_grad->at(oc, ic, kh, kw) += wg;
                }
            }
        }
    }
    return grad_in;
}

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}), bias({out_features}) {}

void Linear::init_kaiming(Rng& rng) {
    const double std = std::sqrt(2.0 / in_features());
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    bias.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) const {
    if (static_cast<int>(x.size()) != in_features()) throw ShapeError("linear input size mismatch");
    Tensor out({out_features()});
    for (int o = 0; o < out_features(); ++o) {
        const double* w_row = weight.data() + static_cast<std::size_t>(o) * in_features();
        double s = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_features(); ++i) s += w_row[i] * x[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = s;
    }
    return out;
}

Tensor Linear::backward(const Tensor& x, const Tensor& grad_out, Tensor* weight_grad,
                        Tensor* bias_grad) const {
    Tensor grad_in({in_features()});
    for (int o = 0; o < out_features(); ++o) {
        const double g = grad_out[static_cast<std::size_t>(o)];
        const double* w_row = weight.data() + static_cast<std::size_t>(o) * in_features();
        for (int i = 0; i < in_features(); ++i)
            grad_in[static_cast<std::size_t>(i)] += w_row[i] * g;
        if (bias_grad) (*bias_grad)[static_cast<std::size_t>(o)] += g;
        if (weight_grad) {
            double* wg_row = weight_grad->data() + static_cast<std::size_t>(o) * in_features();
            for (int i = 0; i < in_features(); ++i) wg_row[i] += x[static_cast<std::size_t>(i)] * g;
        }
    }
    return grad_in;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] = 0.0;
    return out;
}

Tensor relu_backward(const Tensor& pre_activation, const Tensor& grad_out) {
    Tensor grad_in = grad_out;
    for (std::size_t i = 0; i < grad_in.size(); ++i)
        if (pre_activation[i] <= 0.0) grad_in[i] = 0.0;
    return grad_in;
}

Tensor maxpool2x2(const Tensor& x, std::vector<int>* argmax) {
    const int c = x.dim(0), ih = x.dim(1), iw = x.dim(2);
    const int oh = ih / 2, ow = iw / 2;
    Tensor out({c, oh, ow});
    if (argmax) argmax->assign(static_cast<std::size_t>(c) * oh * ow, 0);
    std::size_t oi = 0;
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = x.data() + static_cast<std::size_t>(ch) * ih * iw;
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo, ++oi) {
                int best = (2 * y) * iw + 2 * xo;
                double bv = plane[best];
                const int cand[3] = {(2 * y) * iw + 2 * xo + 1, (2 * y + 1) * iw + 2 * xo,
                                     (2 * y + 1) * iw + 2 * xo + 1};
                for (int idx : cand) {
                    if (plane[idx] > bv) {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                out[oi] = bv;
                if (argmax) (*argmax)[oi] = best;
            }
        }
    }
    return out;
}

Tensor maxpool2x2_backward(const std::vector<int>& in_shape, const std::vector<int>& argmax,
                           const Tensor& grad_out) {
    Tensor grad_in(in_shape);
    const int c = in_shape[0], ih = in_shape[1], iw = in_shape[2];
    const int oh = ih / 2, ow = iw / 2;
    std::size_t oi = 0;
    for (int ch = 0; ch < c; ++ch) {
        double* plane = grad_in.data() + static_cast<std::size_t>(ch) * ih * iw;
        for (int i = 0; i < oh * ow; ++i, ++oi) plane[argmax[oi]] += grad_out[oi];
    }
    return grad_in;
}

Tensor global_avg_pool(const Tensor& x) {
    const int c = x.dim(0);
    const int area = x.dim(1) * x.dim(2);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = x.data() + static_cast<std::size_t>(ch) * area;
        double s = 0.0;
        for (int i = 0; i < area; ++i) s += plane[i];
        out[static_cast<std::size_t>(ch)] = s / area;
    }
    return out;
}

Tensor global_avg_pool_backward(const std::vector<int>& in_shape, const Tensor& grad_out) {
    Tensor grad_in(in_shape);
    const int c = in_shape[0];
    const int area = in_shape[1] * in_shape[2];
    for (int ch = 0; ch < c; ++ch) {
        const double g = grad_out[static_cast<std::size_t>(ch)] / area;
        double* plane = grad_in.data() + static_cast<std::size_t>(ch) * area;
        for (int i = 0; i < area; ++i) plane[i] = g;
    }
    return grad_in;
}

std::vector<double> softmax(const double* logits, int k) {
    double m = logits[0];
    for (int i = 1; i < k; ++i) m = std::max(m, logits[i]);
    std::vector<double> p(static_cast<std::size_t>(k));
    double z = 0.0;
    for (int i = 0; i < k; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp(logits[i] - m);
        z += p[static_cast<std::size_t>(i)];
    }
    for (auto& v : p) v /= z;
    return p;
}

double cross_entropy(const double* logits, int k, int label) {
    double m = logits[0];
    for (int i = 1; i < k; ++i) m = std::max(m, logits[i]);
    double z = 0.0;
    for (int i = 0; i < k; ++i) z += std::exp(logits[i] - m);
    return std::log(z) + m - logits[label];
}

}  // namespace robsal::nn
