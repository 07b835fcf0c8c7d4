#pragma once

// Independent re-implementation of the classifier forward pass, used as the
// golden-value oracle. Deliberately different mechanics from the library:
// explicit zero-padded buffers and per-output gather loops instead of the
// bounds-checked accumulate kernels.

#include <map>
#include <string>

#include "robsal/model.hpp"
#include "robsal/tensor.hpp"

namespace testutil {

using robsal::Tensor;

struct RefParams {
    std::map<std::string, Tensor> by_key;
    robsal::ArchConfig cfg;
    robsal::Normalization norm;

    static RefParams from(const robsal::ClassifierModel& m) {
        RefParams p;
        p.cfg = m.config();
        p.norm = m.normalization();
        m.for_each_param([&](int, int, const std::string& key, const Tensor& t) {
            p.by_key.emplace(key, t);
        });
        return p;
    }
};

inline Tensor ref_pad(const Tensor& x, int pad) {
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, h + 2 * pad, w + 2 * pad});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) out.at(ch, y + pad, xx + pad) = x.at(ch, y, xx);
    return out;
}

inline Tensor ref_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const Tensor padded = ref_pad(x, pad);
    const int oc = w.dim(0), ic = w.dim(1), k = w.dim(2);
    const int oh = (x.dim(1) + 2 * pad - k) / stride + 1;
    const int ow = (x.dim(2) + 2 * pad - k) / stride + 1;
    Tensor out({oc, oh, ow});
    for (int o = 0; o < oc; ++o)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                double s = b.at(o);
                for (int i = 0; i < ic; ++i)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx)
                            s += w.at(o, i, ky, kx) * padded.at(i, y * stride + ky, xx * stride + kx);
                out.at(o, y, xx) = s;
            }
    return out;
}

inline Tensor ref_relu(Tensor x) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
    return x;
}

inline Tensor ref_maxpool(const Tensor& x) {
    const int c = x.dim(0), oh = x.dim(1) / 2, ow = x.dim(2) / 2;
    Tensor out({c, oh, ow});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) {
                double m = x.at(ch, 2 * y, 2 * xx);
                m = std::max(m, x.at(ch, 2 * y, 2 * xx + 1));
                m = std::max(m, x.at(ch, 2 * y + 1, 2 * xx));
                m = std::max(m, x.at(ch, 2 * y + 1, 2 * xx + 1));
                out.at(ch, y, xx) = m;
            }
    return out;
}

inline Tensor ref_block(const RefParams& p, int block_1based, const Tensor& in) {
    const std::string g = "group" + std::to_string(block_1based) + "/block" +
                          std::to_string(block_1based);
    const int stride = p.cfg.block_strides[static_cast<std::size_t>(block_1based - 1)];
    Tensor h = ref_conv(in, p.by_key.at(g + "_conv1/weight"), p.by_key.at(g + "_conv1/bias"),
                        stride, 1);
    h = ref_relu(std::move(h));
    h = ref_conv(h, p.by_key.at(g + "_conv2/weight"), p.by_key.at(g + "_conv2/bias"), 1, 1);
    Tensor skip = in;
    if (p.by_key.count(g + "_proj/weight"))
        skip = ref_conv(in, p.by_key.at(g + "_proj/weight"), p.by_key.at(g + "_proj/bias"),
                        stride, 0);
    h += skip;
    return ref_relu(std::move(h));
}

// Logits from a group output volume onward (group = 1..4); feeds the
// finite-difference oracle for captured activation gradients.
inline Tensor ref_tail_logits(const RefParams& p, int group, const Tensor& activation) {
    Tensor cur = activation;
    for (int b = group + 1; b <= 4; ++b) cur = ref_block(p, b, cur);
    const int c = cur.dim(0), area = cur.dim(1) * cur.dim(2);
    Tensor pooled({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = 0; i < area; ++i) s += cur.data()[static_cast<std::size_t>(ch) * area + i];
        pooled.at(ch) = s / area;
    }
    const Tensor& w = p.by_key.at("group5/fc/weight");
    const Tensor& b = p.by_key.at("group5/fc/bias");
    Tensor out({w.dim(0)});
    for (int o = 0; o < w.dim(0); ++o) {
        double s = b.at(o);
        for (int i = 0; i < w.dim(1); ++i) s += w.at(o, i) * pooled.at(i);
        out.at(o) = s;
    }
    return out;
}

inline Tensor ref_logits(const RefParams& p, const Tensor& image) {
    Tensor x = image;
    const int area = x.dim(1) * x.dim(2);
    for (int c = 0; c < x.dim(0); ++c)
        for (int i = 0; i < area; ++i) {
            double& v = x.data()[static_cast<std::size_t>(c) * area + i];
            v = (v - p.norm.mean[static_cast<std::size_t>(c)]) / p.norm.std[static_cast<std::size_t>(c)];
        }
    x = ref_conv(x, p.by_key.at("group1/stem/weight"), p.by_key.at("group1/stem/bias"),
                 p.cfg.stem_stride, 1);
    x = ref_relu(std::move(x));
    if (p.cfg.stem_pool) x = ref_maxpool(x);
    x = ref_block(p, 1, x);
    return ref_tail_logits(p, 1, x);
}

}  // namespace testutil
