#include "coca/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coca::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Images per GEMM so the column buffer stays around 16 MB.
std::size_t chunk_images(const ConvGeometry& g, std::size_t batch) {
    const std::size_t per_image = g.patch() * g.out_size() * g.out_size();
    return std::clamp<std::size_t>((std::size_t{4} << 20) / std::max<std::size_t>(per_image, 1), 1, batch);
}

}  // namespace

template <typename T>
void im2col(const T* image, T* col, std::size_t col_stride, const ConvGeometry& g) {
    const std::size_t out = g.out_size(), n = g.in_size, k = g.kernel;
    const long pad = static_cast<long>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const T* plane = image + c * n * n;
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                T* row = col + ((c * k + ki) * k + kj) * col_stride;
                for (std::size_t oy = 0; oy < out; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - pad;
                    T* dst = row + oy * out;
                    if (iy < 0 || iy >= static_cast<long>(n)) {
                        std::fill(dst, dst + out, T(0));
                        continue;
                    }
                    const T* src = plane + iy * n;
                    for (std::size_t ox = 0; ox < out; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - pad;
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(n)) ? T(0) : src[ix];
                    }
                }
            }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t col_stride, T* image, const ConvGeometry& g) {
    const std::size_t out = g.out_size(), n = g.in_size, k = g.kernel;
    const long pad = static_cast<long>(g.padding);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        T* plane = image + c * n * n;
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const T* row = col + ((c * k + ki) * k + kj) * col_stride;
                for (std::size_t oy = 0; oy < out; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - pad;
                    if (iy < 0 || iy >= static_cast<long>(n)) continue;
                    T* dst = plane + iy * n;
                    const T* src = row + oy * out;
                    for (std::size_t ox = 0; ox < out; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - pad;
                        if (ix >= 0 && ix < static_cast<long>(n)) dst[ix] += src[ox];
                    }
                }
            }
    }
}

template <typename T>
void conv2d_forward(const T* x, std::size_t batch, const T* weights, const T* bias, T* y, const ConvGeometry& g,
                    std::vector<T>& scratch) {
    const std::size_t K = g.patch(), P = g.out_size() * g.out_size(), Cout = g.out_channels;
    const std::size_t chunk = chunk_images(g, batch);
    scratch.resize(K * chunk * P + Cout * chunk * P);
    Eigen::Map<const RowMat<T>> W(weights, Cout, K);

    for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
        const std::size_t nb = std::min(chunk, batch - b0);
        const std::size_t cols = nb * P;
        T* col = scratch.data();
        T* out = col + K * cols;
        for (std::size_t b = 0; b < nb; ++b) im2col(x + (b0 + b) * g.in_volume(), col + b * P, cols, g);
        Eigen::Map<const RowMat<T>> C(col, K, cols);
        Eigen::Map<RowMat<T>> Y(out, Cout, cols);
        Y.noalias() = W * C;
        for (std::size_t b = 0; b < nb; ++b) {
            T* yb = y + (b0 + b) * Cout * P;
            for (std::size_t co = 0; co < Cout; ++co) {
                const T* src = out + co * cols + b * P;
                const T add = bias ? bias[co] : T(0);
                for (std::size_t p = 0; p < P; ++p) yb[co * P + p] = src[p] + add;
            }
        }
    }
}

template <typename T>
void conv2d_backward(const T* x, std::size_t batch, const T* weights, const T* grad_y, T* grad_x, T* grad_weights,
                     T* grad_bias, const ConvGeometry& g, std::vector<T>& scratch) {
    const std::size_t K = g.patch(), P = g.out_size() * g.out_size(), Cout = g.out_channels;
    const std::size_t chunk = chunk_images(g, batch);
    scratch.resize(2 * K * chunk * P + Cout * chunk * P);
    Eigen::Map<const RowMat<T>> W(weights, Cout, K);
    Eigen::Map<RowMat<T>> GW(grad_weights, Cout, K);

    for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
        const std::size_t nb = std::min(chunk, batch - b0);
        const std::size_t cols = nb * P;
        T* col = scratch.data();
        T* gcol = col + K * cols;
        T* gy = gcol + K * cols;
        for (std::size_t b = 0; b < nb; ++b) {
            im2col(x + (b0 + b) * g.in_volume(), col + b * P, cols, g);
            const T* gyb = grad_y + (b0 + b) * Cout * P;
            for (std::size_t co = 0; co < Cout; ++co) std::copy_n(gyb + co * P, P, gy + co * cols + b * P);
        }
        Eigen::Map<const RowMat<T>> C(col, K, cols);
        Eigen::Map<const RowMat<T>> GY(gy, Cout, cols);
        GW.noalias() += GY * C.transpose();
        if (grad_bias)
            for (std::size_t co = 0; co < Cout; ++co) 
                grad_bias[co] = std::accumulate(gy + co * cols, gy + (co + 1) * cols, grad_bias[co]);
        if (grad_x) {
            Eigen::Map<RowMat<T>> GC(gcol, K, cols);
            GC.noalias() = W.transpose() * GY;
            for (std::size_t b = 0; b < nb; ++b) {
                T* gxb = grad_x + (b0 + b) * g.in_volume();
                std::fill(gxb, gxb + g.in_volume(), T(0));
                col2im_add(gcol + b * P, cols, gxb, g);
            }
        }
    }
}

template <typename T>
void batchnorm_train_forward(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                             const T* gamma, const T* beta, T* running_mean, T* running_var, bool update_running,
                             const BatchNormOptions& opt, T* xhat, T* inv_std, T* y) {
    const std::size_t count = batch * spatial;
    if (batch < 2) throw std::invalid_argument("train-mode batch norm needs a batch of at least 2");
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* p = x + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
        }
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* p = x + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double d = p[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / count;
        const double istd = 1.0 / std::sqrt(var + opt.eps);
        inv_std[c] = static_cast<T>(istd);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const T xh = static_cast<T>((x[off + i] - mean) * istd);
                xhat[off + i] = xh;
                y[off + i] = gamma[c] * xh + beta[c];
            }
        }
        if (update_running) {
            const double unbiased = count > 1 ? sq / (count - 1) : var;
            running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mean);
            running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
        }
    }
}

template <typename T>
void batchnorm_eval_forward(const T* x, std::size_t batch, std::size_t channels, std::size_t spatial,
                            const T* gamma, const T* beta, const T* running_mean, const T* running_var,
                            const BatchNormOptions& opt, T* xhat, T* inv_std, T* y) {
    for (std::size_t c = 0; c < channels; ++c) {
        const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.eps));
        const T mean = running_mean[c];
        inv_std[c] = istd;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const T xh = (x[off + i] - mean) * istd;
                xhat[off + i] = xh;
                y[off + i] = gamma[c] * xh + beta[c];
            }
        }
    }
}

template <typename T>
void batchnorm_backward(const T* grad_y, const T* xhat, const T* inv_std, std::size_t batch, std::size_t channels,
                        std::size_t spatial, const T* gamma, bool train_mode, T* grad_x, T* grad_gamma,
                        T* grad_beta) {
    const double count = static_cast<double>(batch * spatial);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_g += grad_y[off + i];
                sum_gx += static_cast<double>(grad_y[off + i]) * xhat[off + i];
            }
        }
        grad_gamma[c] += static_cast<T>(sum_gx);
        grad_beta[c] += static_cast<T>(sum_g);
        if (!grad_x) continue;
        const double scale = static_cast<double>(gamma[c]) * inv_std[c];
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double g = grad_y[off + i];
                grad_x[off + i] = static_cast<T>(
                    train_mode ? scale * (g - sum_g / count - xhat[off + i] * sum_gx / count) : scale * g);
            }
        }
    }
}

#define COCA_INSTANTIATE(T)                                                                                     \
    template void im2col<T>(const T*, T*, std::size_t, const ConvGeometry&);                                    \
    template void col2im_add<T>(const T*, std::size_t, T*, const ConvGeometry&);                                \
    template void conv2d_forward<T>(const T*, std::size_t, const T*, const T*, T*, const ConvGeometry&,         \
                                    std::vector<T>&);                                                           \
    template void conv2d_backward<T>(const T*, std::size_t, const T*, const T*, T*, T*, T*, const ConvGeometry&, \
                                     std::vector<T>&);                                                          \
    template void batchnorm_train_forward<T>(const T*, std::size_t, std::size_t, std::size_t, const T*,         \
                                             const T*, T*, T*, bool, const BatchNormOptions&, T*, T*, T*);      \
    template void batchnorm_eval_forward<T>(const T*, std::size_t, std::size_t, std::size_t, const T*,          \
                                            const T*, const T*, const T*, const BatchNormOptions&, T*, T*, T*); \
    template void batchnorm_backward<T>(const T*, const T*, const T*, std::size_t, std::size_t, std::size_t,    \
                                        const T*, bool, T*, T*, T*);

COCA_INSTANTIATE(float)
COCA_INSTANTIATE(double)
#undef COCA_INSTANTIATE

}  // namespace coca::nn
