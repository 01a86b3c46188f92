#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace coca {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major array. Deliberately thin: the kernels work on spans.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_size(shape))
            throw std::invalid_argument("tensor data size does not match shape " + shape_string(shape));
    }

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }
    std::span<T> view() { return data; }
    std::span<const T> view() const { return data; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void resize(Shape s) {
        shape = std::move(s);
        data.assign(shape_size(shape), T(0));
    }

    // Row i of the leading dimension.
    std::span<T> row(std::size_t i) {
        const std::size_t stride = data.size() / shape.at(0);
        return std::span<T>(data).subspan(i * stride, stride);
    }
    std::span<const T> row(std::size_t i) const {
        const std::size_t stride = data.size() / shape.at(0);
        return std::span<const T>(data).subspan(i * stride, stride);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

}  // namespace coca
