#include "robsal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "robsal/errors.hpp"

namespace robsal {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

double& Tensor::at(int i0, int i1) {
    return data_[static_cast<std::size_t>(i0) * shape_[1] + i1];
}

double& Tensor::at(int i0, int i1, int i2) {
    return data_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
}

double& Tensor::at(int i0, int i1, int i2, int i3) {
    return data_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] +
                 i3];
}

double Tensor::at(int i0, int i1) const {
    return data_[static_cast<std::size_t>(i0) * shape_[1] + i1];
}

double Tensor::at(int i0, int i1, int i2) const {
    return data_[(static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2];
}

double Tensor::at(int i0, int i1, int i2, int i3) const {
    return data_[((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] +
                 i3];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (numel(shape) != data_.size()) throw ShapeError("reshape changes element count");
    Tensor out(std::move(shape));
    out.data_ = data_;
    return out;
}

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    if (!same_shape(other)) throw ShapeError("shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
}

double Tensor::min() const {
    return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
    return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end());
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Tensor::l2_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor operator+(Tensor a, const Tensor& b) {
    a += b;
    return a;
}

Tensor operator-(Tensor a, const Tensor& b) {
    a -= b;
    return a;
}

Tensor operator*(Tensor a, double s) {
    a *= s;
    return a;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace robsal
