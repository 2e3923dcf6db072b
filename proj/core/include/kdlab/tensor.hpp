#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdlab {

// Dense row-major tensor. `grad` is empty unless the tensor is a trainable
// parameter that has had gradients accumulated into it.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    Tensor() = default;

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) {
                throw std::invalid_argument("Tensor: extents must be positive");
            }
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shape) {
        Tensor t;
        const int64_t n = count(shape);
        t.shape = std::move(shape);
        t.data.assign(static_cast<size_t>(n), T(0));
        return t;
    }

    static Tensor full(std::vector<int> shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    static Tensor from_vector(std::vector<int> shape, std::vector<T> values) {
        const int64_t n = count(shape);
        if (static_cast<int64_t>(values.size()) != n) {
            throw std::invalid_argument("Tensor: values length does not match shape");
        }
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::move(values);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
        return true;
    }

    void ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), T(0));
        }
    }

    void zero_grad() {
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), T(0));
        }
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.requires_grad = requires_grad;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) {
            out.data[i] = static_cast<U>(data[i]);
        }
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace kdlab
