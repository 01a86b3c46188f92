#include "coca/nt_xent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace coca::loss {

template <typename T>
void validate_embeddings(const Tensor<T>& z, double temperature, double norm_tolerance) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (z.rank() != 2 || z.dim(0) == 0 || z.dim(0) % 2 != 0)
        throw std::invalid_argument("embedding batch must be [2N][D] with N >= 1, got " + shape_string(z.shape));
    for (std::size_t r = 0; r < z.dim(0); ++r) {
        double sq = 0.0;
        for (auto v : z.row(r)) sq += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(sq) - 1.0) > norm_tolerance)
            throw std::invalid_argument("embedding row " + std::to_string(r) + " is not unit-norm (norm " +
                                        std::to_string(std::sqrt(sq)) + ")");
    }
}

namespace {

template <typename T>
std::vector<double> similarities(const Tensor<T>& z) {
    const std::size_t R = z.dim(0), D = z.dim(1);
    std::vector<double> s(R * R);
    for (std::size_t a = 0; a < R; ++a)
        for (std::size_t k = a; k < R; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < D; ++i) dot += static_cast<double>(z[a * D + i]) * z[k * D + i];
            s[a * R + k] = s[k * R + a] = dot;
        }
    return s;
}

}  // namespace

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& z, double norm_tolerance) {
    validate_embeddings(z, 1.0, norm_tolerance);
    const std::size_t R = z.dim(0);
    const auto s = similarities(z);
    Tensor<T> out({R, R});
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<T>(s[i]);
    return out;
}

template <typename T>
NtXentResult<T> nt_xent_with_grad(const Tensor<T>& z, double temperature) {
    validate_embeddings(z, temperature);
    const std::size_t R = z.dim(0), N = R / 2, D = z.dim(1);
    const auto s = similarities(z);

    // dL/dS, unscaled by 1/tau
    std::vector<double> gs(R * R, 0.0);
    std::vector<double> p(R);
    double total = 0.0;
    for (std::size_t a = 0; a < R; ++a) {
        const std::size_t pos = (a + N) % R;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < R; ++k)
            if (k != a) mx = std::max(mx, s[a * R + k] / temperature);
        double denom = 0.0;
        for (std::size_t k = 0; k < R; ++k) {
            p[k] = k == a ? 0.0 : std::exp(s[a * R + k] / temperature - mx);
            denom += p[k];
        }
        total += -(s[a * R + pos] / temperature - mx) + std::log(denom);
        for (std::size_t k = 0; k < R; ++k) {
            if (k == a) continue;
            gs[a * R + k] = (p[k] / denom - (k == pos ? 1.0 : 0.0)) / (static_cast<double>(R) * temperature);
        }
    }

    NtXentResult<T> r;
    r.loss = total / static_cast<double>(R);
    r.grad.resize(z.shape);
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t k = 0; k < R; ++k) {
            const double w = gs[i * R + k] + gs[k * R + i];
            if (w == 0.0) continue;
            for (std::size_t d = 0; d < D; ++d) r.grad[i * D + d] += static_cast<T>(w * z[k * D + d]);
        }
    }
    return r;
}

template <typename T>
double nt_xent(const Tensor<T>& z, double temperature) {
    return nt_xent_with_grad(z, temperature).loss;
}

#define COCA_INSTANTIATE(T)                                                               \
    template void validate_embeddings<T>(const Tensor<T>&, double, double);              \
    template Tensor<T> similarity_matrix<T>(const Tensor<T>&, double);                   \
    template double nt_xent<T>(const Tensor<T>&, double);                                \
    template NtXentResult<T> nt_xent_with_grad<T>(const Tensor<T>&, double);

COCA_INSTANTIATE(float)
COCA_INSTANTIATE(double)
#undef COCA_INSTANTIATE

}  // namespace coca::loss
