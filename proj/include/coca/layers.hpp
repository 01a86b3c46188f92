#pragma once

#include <cstddef>
#include <vector>

namespace coca::nn {

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t in_size = 0;  // square inputs
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    std::size_t out_size() const { return (in_size + 2 * padding - kernel) / stride + 1; }
    std::size_t patch() const { return in_channels * kernel * kernel; }
    std::size_t in_volume() const { return in_channels * in_size * in_size; }
    std::size_t out_volume() const { return out_channels * out_size() * out_size(); }
};

// Column layout: row k = (c * kernel + ki) * kernel + kj, column = oy * out + ox.
template <typename T>
void im2col(const T* image, T* col, std::size_t col_stride, const ConvGeometry& g);

template <typename T>
void col2im_add(const T* col, std::size_t col_stride, T* image, const ConvGeometry& g);

// x: [B][Cin][H][W], weights: [Cout][Cin][k][k], bias: [Cout] or null; y: [B][Cout][Ho][Wo].
template <typename T>
void conv2d_forward(const T* x, std::size_t batch, const T* weights, const T* bias, T* y, const ConvGeometry& g,
                    std::vector<T>& scratch);

// Accumulates into grad_weights / grad_bias. grad_x (nullable) is overwritten.
template <typename T>
void conv2d_backward(const T* x, std::size_t batch, const T* weights, const T* grad_y, T* grad_x, T* grad_weights,
                     T* grad_bias, const ConvGeometry& g, std::vector<T>& scratch);

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

// Normalizes with batch statistics, writing xhat and 1/sigma for the reverse pass.
// Running statistics move toward the batch statistics only when update_running is set
// (running variance uses the unbiased estimate).
template <typename T>
void batchnorm_train_forward(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                             const T* gamma, const T* beta, T* running_mean, T* running_var, bool update_running,
                             const BatchNormOptions& opt, T* xhat, T* inv_std, T* y);

template <typename T>
void batchnorm_eval_forward(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                            const T* gamma, const T* beta, const T* running_mean, const T* running_var,
                            const BatchNormOptions& opt, T* xhat, T* inv_std, T* y);

// grad_x overwritten; grad_gamma / grad_beta accumulated. In eval mode the statistics are constants.
template <typename T>
void batchnorm_backward(const T* grad_y, const T* xhat, const T* inv_std, std::size_t batch, std::size_t channels,
                        std::size_t spatial, const T* gamma, bool train_mode, T* grad_x, T* grad_gamma,
                        T* grad_beta);

}  // namespace coca::nn
