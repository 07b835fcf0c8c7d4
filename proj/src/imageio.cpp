#include "robsal/imageio.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "robsal/errors.hpp"

namespace robsal::img {

namespace {
unsigned char quantize(double v) {
    const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
}
}  // namespace

std::optional<Tensor> load_image(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
    if (mat.empty()) return std::nullopt;
    const int h = mat.rows, w = mat.cols;
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y) {
        const auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            // OpenCV stores BGR.
            out.at(0, y, x) = row[x][2] / 255.0;
            out.at(1, y, x) = row[x][1] / 255.0;
            out.at(2, y, x) = row[x][0] / 255.0;
        }
    }
    return out;
}

void save_image_gray(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("grayscale save expects H x W");
    const int h = map.dim(0), w = map.dim(1);
    cv::Mat mat(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mat.at<unsigned char>(y, x) = quantize(map.at(y, x));
    if (!cv::imwrite(path, mat)) throw DataError("failed to write image: " + path);
}

void save_image_rgb(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("rgb save expects 3 x H x W");
    const int h = image.dim(1), w = image.dim(2);
    cv::Mat mat(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < w; ++x) {
            row[x][2] = quantize(image.at(0, y, x));
            row[x][1] = quantize(image.at(1, y, x));
            row[x][0] = quantize(image.at(2, y, x));
        }
    }
    if (!cv::imwrite(path, mat)) throw DataError("failed to write image: " + path);
}

}  // namespace robsal::img
