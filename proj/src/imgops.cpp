#include "robsal/imgops.hpp"

#include <algorithm>
#include <cmath>

#include "robsal/errors.hpp"

namespace robsal::img {

namespace {
constexpr double kPi = 3.14159265358979323846;

double sample_clamped(const double* plane, int h, int w, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return plane[static_cast<std::size_t>(y) * w + x];
}

double bilinear(const double* plane, int h, int w, double sy, double sx) {
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double fy = sy - y0;
    const double fx = sx - x0;
    const double v00 = sample_clamped(plane, h, w, y0, x0);
    const double v01 = sample_clamped(plane, h, w, y0, x0 + 1);
    const double v10 = sample_clamped(plane, h, w, y0 + 1, x0);
    const double v11 = sample_clamped(plane, h, w, y0 + 1, x0 + 1);
    return v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) +
           v11 * fy * fx;
}
}  // namespace

Tensor center_crop(const Tensor& image, int side) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (side > h || side > w) throw DataError("image smaller than crop size");
    const int oy = (h - side) / 2;
    const int ox = (w - side) / 2;
    Tensor out({c, side, side});
    for (int ch = 0; ch < c; ++ch) {
        const double* src = image.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * side * side;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                dst[static_cast<std::size_t>(y) * side + x] =
                    src[static_cast<std::size_t>(y + oy) * w + (x + ox)];
    }
    return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h == out_h && w == out_w) return image;
    Tensor out({c, out_h, out_w});
    const double sy_scale = static_cast<double>(h) / out_h;
    const double sx_scale = static_cast<double>(w) / out_w;
    for (int ch = 0; ch < c; ++ch) {
        const double* src = image.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const double sy = (y + 0.5) * sy_scale - 0.5;
            for (int x = 0; x < out_w; ++x) {
                const double sx = (x + 0.5) * sx_scale - 0.5;
                dst[static_cast<std::size_t>(y) * out_w + x] = bilinear(src, h, w, sy, sx);
            }
        }
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
    return out;
}

Tensor flip_vertical(const Tensor& image) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, h - 1 - y, x);
    return out;
}

Tensor affine(const Tensor& image, double rotate_deg, double shear_deg) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const double th = rotate_deg * kPi / 180.0;
    const double sh = std::tan(shear_deg * kPi / 180.0);
    // Forward map A = R(theta) * Shear(sh); sample with the inverse.
    const double a00 = std::cos(th) + sh * -std::sin(th);
    const double a01 = -std::sin(th);
    const double a10 = std::sin(th) + sh * std::cos(th);
    const double a11 = std::cos(th);
    const double det = a00 * a11 - a01 * a10;
    const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;

    Tensor out(image.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* src = image.data() + static_cast<std::size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double sy = cy + i10 * dx + i11 * dy;
                const double sx = cx + i00 * dx + i01 * dy;
                dst[static_cast<std::size_t>(y) * w + x] = bilinear(src, h, w, sy, sx);
            }
        }
    }
    return out;
}

double luma_mean(const Tensor& image) {
    const int c = image.dim(0);
    const int area = image.dim(1) * image.dim(2);
    double s = 0.0;
    if (c == 3) {
        const double* r = image.data();
        const double* g = r + area;
        const double* b = g + area;
        for (int i = 0; i < area; ++i) s += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    } else {
        for (std::size_t i = 0; i < image.size(); ++i) s += image[i];
        return s / static_cast<double>(image.size());
    }
    return s / area;
}

void adjust_brightness(Tensor& image, double factor) {
    for (std::size_t i = 0; i < image.size(); ++i) image[i] *= factor;
}

void adjust_contrast(Tensor& image, double factor) {
    const double m = luma_mean(image);
    for (std::size_t i = 0; i < image.size(); ++i) image[i] = m + factor * (image[i] - m);
}

void adjust_saturation(Tensor& image, double factor) {
    if (image.dim(0) != 3) return;
    const int area = image.dim(1) * image.dim(2);
    double* r = image.data();
    double* g = r + area;
    double* b = g + area;
    for (int i = 0; i < area; ++i) {
        const double gray = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        r[i] = gray + factor * (r[i] - gray);
        g[i] = gray + factor * (g[i] - gray);
        b[i] = gray + factor * (b[i] - gray);
    }
}

void clamp01(Tensor& image) {
    for (std::size_t i = 0; i < image.size(); ++i)
        image[i] = std::clamp(image[i], 0.0, 1.0);
}

}  // namespace robsal::img
