#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace robsal {

// Dense row-major double tensor. Rank is dynamic (we use 1..4 dims:
// vectors, N x K logit matrices, C x H x W images, N x C x H x W batches).
// Double precision throughout: the verification suites compare analytic
// gradients against finite differences and need the headroom.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexed access; used in tests and cold paths, hot loops use data().
    double& at(int i0) { return data_[static_cast<std::size_t>(i0)]; }
    double& at(int i0, int i1);
    double& at(int i0, int i1, int i2);
    double& at(int i0, int i1, int i2, int i3);
    double at(int i0) const { return data_[static_cast<std::size_t>(i0)]; }
    double at(int i0, int i1) const;
    double at(int i0, int i1, int i2) const;
    double at(int i0, int i1, int i2, int i3) const;

    void fill(double v);
    Tensor reshaped(std::vector<int> shape) const;  // same element count

    Tensor& operator+=(const Tensor& other);
    Tensor& operator-=(const Tensor& other);
    Tensor& operator*=(double s);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double min() const;
    double max() const;
    double sum() const;
    double l2_norm() const;
    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

// Checks exact equality of shape and every element (bitwise reproducibility
// checks lean on this).
bool bitwise_equal(const Tensor& a, const Tensor& b);

std::size_t numel(const std::vector<int>& shape);

}  // namespace robsal
