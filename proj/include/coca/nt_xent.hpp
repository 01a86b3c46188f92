#pragma once

#include "coca/tensor.hpp"

namespace coca::loss {

// z: [2N][D]; rows 0..N-1 are first views, row a + N is the positive of row a.
// Rows must be unit-norm within `norm_tolerance`.
template <typename T>
void validate_embeddings(const Tensor<T>& z, double temperature, double norm_tolerance = 1e-5);

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& z, double norm_tolerance = 1e-5);

// Mean over all 2N anchors of -log(exp(s_ap / tau) / sum_{k != a} exp(s_ak / tau)).
template <typename T>
double nt_xent(const Tensor<T>& z, double temperature);

template <typename T>
struct NtXentResult {
    double loss = 0.0;
    Tensor<T> grad;  // d loss / d z, [2N][D]
};

template <typename T>
NtXentResult<T> nt_xent_with_grad(const Tensor<T>& z, double temperature);

template <typename T>
Tensor<T> nt_xent_backward(const Tensor<T>& z, double temperature) {
    return nt_xent_with_grad(z, temperature).grad;
}

}  // namespace coca::loss
