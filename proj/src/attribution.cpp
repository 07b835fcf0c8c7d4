#include "robsal/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "robsal/errors.hpp"
#include "robsal/nn.hpp"
#include "robsal/rng.hpp"

namespace robsal {

BaselineKind BaselineSpec::parse_kind(const std::string& name) {
    if (name == "black") return BaselineKind::BLACK;
    if (name == "uniform") return BaselineKind::UNIFORM;
    if (name == "gaussian") return BaselineKind::GAUSSIAN;
    throw ArgumentError("unknown baseline kind: " + name);
}

std::string BaselineSpec::kind_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::BLACK: return "black";
        case BaselineKind::UNIFORM: return "uniform";
        case BaselineKind::GAUSSIAN: return "gaussian";
    }
    return "?";
}

Tensor realize_baseline(const BaselineSpec& spec, const Tensor& image) {
    Tensor out(image.shape());
    switch (spec.kind) {
        case BaselineKind::BLACK:
            break;
        case BaselineKind::UNIFORM: {
            Rng rng(Rng::derive(spec.seed, 0x7a1));
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform();
            break;
        }
        case BaselineKind::GAUSSIAN: {
            if (spec.sigma <= 0.0) throw ArgumentError("gaussian baseline sigma must be positive");
            Rng rng(Rng::derive(spec.seed, 0x7a2));
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = image[i] + rng.normal(0.0, spec.sigma);
            break;
        }
    }
    return out;
}

namespace {

Tensor as_batch1(const Tensor& image) {
    std::vector<int> s{1};
    for (int d : image.shape()) s.push_back(d);
    return image.reshaped(s);
}

}  // namespace

AttributionRaw gradient_saliency(const DifferentiableModel& model, const Tensor& image,
                                 int target_class) {
    Tensor grad = model.input_gradient(as_batch1(image), {target_class});
    AttributionRaw raw;
    raw.values = grad.reshaped(image.shape());
    raw.method = "gradient";
    raw.target_class = target_class;
    return raw;
}

AttributionRaw integrated_gradients(const DifferentiableModel& model, const Tensor& image,
                                    const Tensor& baseline_image, int target_class, int steps,
                                    const std::string& baseline_label) {
    if (steps < 1) throw ArgumentError("integrated_gradients needs steps >= 1");
    if (!baseline_image.same_shape(image)) throw ShapeError("baseline shape mismatch");

    // All path points in one batch; the model parallelizes across them.
    const int points = steps + 1;
    std::vector<int> bshape{points};
    for (int d : image.shape()) bshape.push_back(d);
    Tensor path(bshape);
    const std::size_t plane = image.size();
    for (int p = 0; p < points; ++p) {
        const double alpha = static_cast<double>(p) / steps;
        double* dst = path.data() + static_cast<std::size_t>(p) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            dst[i] = baseline_image[i] + alpha * (image[i] - baseline_image[i]);
    }

    Tensor grads = model.input_gradient(path, std::vector<int>(static_cast<std::size_t>(points),
                                                               target_class));

    AttributionRaw raw;
    raw.values = Tensor(image.shape());
    for (int p = 0; p < points; ++p) {
        const double w = (p == 0 || p == steps) ? 0.5 : 1.0;
        const double* g = grads.data() + static_cast<std::size_t>(p) * plane;
        for (std::size_t i = 0; i < plane; ++i) raw.values[i] += w * g[i];
    }
    for (std::size_t i = 0; i < plane; ++i)
        raw.values[i] *= (image[i] - baseline_image[i]) / steps;

    raw.method = "integrated_gradients";
    raw.target_class = target_class;
    raw.params = {{"steps", steps}, {"baseline", baseline_label}};
    return raw;
}

AttributionRaw integrated_gradients(const DifferentiableModel& model, const Tensor& image,
                                    const BaselineSpec& baseline, int target_class, int steps) {
    Tensor base = realize_baseline(baseline, image);
    AttributionRaw raw = integrated_gradients(model, image, base, target_class, steps,
                                              BaselineSpec::kind_name(baseline.kind));
    if (baseline.kind == BaselineKind::GAUSSIAN) raw.params["sigma"] = baseline.sigma;
    if (baseline.kind != BaselineKind::BLACK) raw.params["baseline_seed"] = baseline.seed;
    return raw;
}

std::vector<int> occlusion_starts(int size, int patch, int stride) {
    std::vector<int> starts;
    for (int s = 0; s + patch <= size; s += stride) starts.push_back(s);
    if (starts.empty() || starts.back() + patch < size) starts.push_back(size - patch);
    return starts;
}

AttributionRaw occlusion(const DifferentiableModel& model, const Tensor& image, int target_class,
                         const std::vector<double>& fill, int patch, int stride,
                         OcclusionMode mode) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (patch <= 0 || patch > h || patch > w) throw ArgumentError("patch must fit in the image");
    if (stride < 1) throw ArgumentError("stride must be >= 1");
    const std::vector<double>& fill_value = fill;
    if (static_cast<int>(fill_value.size()) != c)
        throw ArgumentError("fill must provide one value per channel");

    const auto ys = occlusion_starts(h, patch, stride);
    const auto xs = occlusion_starts(w, patch, stride);
    const int n_windows = static_cast<int>(ys.size() * xs.size());

    // Evaluate the base image and all occluded variants in one batch.
    std::vector<int> bshape{n_windows + 1, c, h, w};
    Tensor batch(bshape);
    set_batch_row(batch, 0, image);
    int row = 1;
    for (int sy : ys) {
        for (int sx : xs) {
            Tensor occluded = image;
            for (int ch = 0; ch < c; ++ch) {
                double* plane = occluded.data() + static_cast<std::size_t>(ch) * h * w;
                for (int y = sy; y < sy + patch; ++y)
                    for (int x = sx; x < sx + patch; ++x)
                        plane[static_cast<std::size_t>(y) * w + x] =
                            fill_value[static_cast<std::size_t>(ch)];
            }
            set_batch_row(batch, row++, occluded);
        }
    }

    Tensor lg = model.logits(batch);
    const int k = lg.dim(1);
    auto score = [&](int i) {
        const double* lrow = lg.data() + static_cast<std::size_t>(i) * k;
        if (mode == OcclusionMode::LOGIT) return lrow[target_class];
        return nn::softmax(lrow, k)[static_cast<std::size_t>(target_class)];
    };
    const double base_score = score(0);

    Tensor sum({1, h, w});
    Tensor count({1, h, w});
    row = 1;
    for (int sy : ys) {
        for (int sx : xs) {
            const double drop = base_score - score(row++);
            for (int y = sy; y < sy + patch; ++y) {
                for (int x = sx; x < sx + patch; ++x) {
                    sum.at(0, y, x) += drop;
                    count.at(0, y, x) += 1.0;
                }
            }
        }
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];

    AttributionRaw raw;
    raw.values = std::move(sum);
    raw.method = "occlusion";
    raw.target_class = target_class;
    raw.params = {{"patch", patch},
                  {"stride", stride},
                  {"fill", fill_value},
                  {"mode", mode == OcclusionMode::LOGIT ? "logit" : "probability"},
                  {"windows", n_windows}};
    return raw;
}

AttributionRaw grad_cam(const ClassifierModel& model, const Tensor& image, int target_class,
                        const std::string& layer_group_name) {
    auto [acts, grads] = model.capture(as_batch1(image), layer_group_name, {target_class});
    const int k = acts.dim(1), h = acts.dim(2), w = acts.dim(3);
    const int area = h * w;

    Tensor cam({1, h, w});
    for (int ch = 0; ch < k; ++ch) {
        const double* g = grads.data() + static_cast<std::size_t>(ch) * area;
        const double* a = acts.data() + static_cast<std::size_t>(ch) * area;
        double alpha = 0.0;
        for (int i = 0; i < area; ++i) alpha += g[i];
        alpha /= area;
        for (int i = 0; i < area; ++i) cam[static_cast<std::size_t>(i)] += alpha * a[i];
    }
    for (std::size_t i = 0; i < cam.size(); ++i)
        if (cam[i] < 0.0) cam[i] = 0.0;

    AttributionRaw raw;
    raw.values = std::move(cam);
    raw.method = "grad_cam";
    raw.target_class = target_class;
    raw.params = {{"group", layer_group_name}};
    return raw;
}

namespace {

// Percentile with linear interpolation between order statistics
// (index q/100 * (n-1)).
double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

SaliencyMap postprocess(const AttributionRaw& raw, int out_h, int out_w) {
    const int c = raw.values.dim(0), h = raw.values.dim(1), w = raw.values.dim(2);

    Tensor mag({h, w});
    for (int ch = 0; ch < c; ++ch) {
        const double* plane = raw.values.data() + static_cast<std::size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) mag[static_cast<std::size_t>(i)] += std::abs(plane[i]);
    }

    Tensor up({out_h, out_w});
    if (h == out_h && w == out_w) {
        up = mag;
    } else {
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(h - 1, y * h / out_h);
            for (int x = 0; x < out_w; ++x) {
                const int sx = std::min(w - 1, x * w / out_w);
                up.at(y, x) = mag.at(sy, sx);
            }
        }
    }

    SaliencyMap map;
    std::vector<double> vals(up.data(), up.data() + up.size());
    map.cap_value = percentile(vals, 99.0);
    for (std::size_t i = 0; i < up.size(); ++i)
        if (up[i] > map.cap_value) up[i] = map.cap_value;

    const double m = up.max();
    if (m > 0.0)
        for (std::size_t i = 0; i < up.size(); ++i) up[i] /= m;
    map.values = std::move(up);
    return map;
}

}  // namespace robsal
