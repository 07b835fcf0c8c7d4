#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "robsal/model.hpp"
#include "robsal/tensor.hpp"

namespace robsal {

// Reference image expressing "absence of features" for the path-integral
// attribution. GAUSSIAN is centered at the input and deliberately not
// clipped to [0,1]; clipping would change the stated distribution.
enum class BaselineKind { BLACK, UNIFORM, GAUSSIAN };

struct BaselineSpec {
    BaselineKind kind = BaselineKind::UNIFORM;
    double sigma = 1.0;          // GAUSSIAN only
    std::uint64_t seed = 0;      // stochastic kinds

    static BaselineKind parse_kind(const std::string& name);
    static std::string kind_name(BaselineKind kind);
};

Tensor realize_baseline(const BaselineSpec& spec, const Tensor& image);

// Signed per-feature attribution, before any visualization post-processing.
// `values` is C x H x W for input-space methods and 1 x h x w for methods
// that attribute to a grid (Grad-CAM cells, occlusion output).
struct AttributionRaw {
    Tensor values;
    std::string method;
    int target_class = 0;
    nlohmann::json params;
};

// Displayable per-pixel heatmap: H x W, in [0,1], max 1 unless identically 0.
struct SaliencyMap {
    Tensor values;
    double cap_value = 0.0;  // 99th-percentile cap that was applied
};

// d(logit of target)/d(input feature) on the raw pixels.
AttributionRaw gradient_saliency(const DifferentiableModel& model, const Tensor& image,
                                 int target_class);

// Path integral of gradients from the realized baseline to the input,
// estimated with the trapezoidal rule over `steps` intervals:
//   phi_i = (x_i - x'_i) * (1/steps) * sum of weighted gradients at
//           alpha = 0, 1/steps, ..., 1   (endpoint weights 1/2).
AttributionRaw integrated_gradients(const DifferentiableModel& model, const Tensor& image,
                                    const BaselineSpec& baseline, int target_class,
                                    int steps = 128);

// Variant taking an already realized baseline image.
AttributionRaw integrated_gradients(const DifferentiableModel& model, const Tensor& image,
                                    const Tensor& baseline_image, int target_class, int steps,
                                    const std::string& baseline_label);

enum class OcclusionMode { PROBABILITY, LOGIT };

// Window start offsets along one axis: 0, stride, 2*stride, ... plus a final
// edge-aligned start so all pixels are covered.
std::vector<int> occlusion_starts(int size, int patch, int stride);

// Prediction drop when patches are replaced by the fill color; pixels in
// several windows get the mean of their windows' drops. `fill` is one value
// per channel; the experiment layer defaults it to the dataset channel mean
// (a black fill would under-attribute dark lesions for the same reason a
// black IG baseline does).
AttributionRaw occlusion(const DifferentiableModel& model, const Tensor& image, int target_class,
                         const std::vector<double>& fill, int patch = 50, int stride = 25,
                         OcclusionMode mode = OcclusionMode::PROBABILITY);

// ReLU of the activation volume weighted by spatially averaged gradients,
// on the named group's output (1 x h x w grid).
AttributionRaw grad_cam(const ClassifierModel& model, const Tensor& image, int target_class,
                        const std::string& layer_group_name);

// Channel-absolute sum -> nearest-neighbor upsample to (out_h, out_w) when
// the grid is coarser -> cap at the 99th percentile -> rescale so the max is
// 1 (identity on the all-zero map).
SaliencyMap postprocess(const AttributionRaw& raw, int out_h, int out_w);

}  // namespace robsal
