#pragma once

#include <cstddef>
#include <vector>

#include "coca/tensor.hpp"

namespace coca::caps {

// Raw kernels over contiguous buffers. These are what the network runs; the Tensor
// overloads below wrap them for tests and bindings.

// v = |s| s / (1 + |s|^2). No division by |s|, so s = 0 maps to 0.
template <typename T>
void squash(const T* s, T* v, std::size_t dim);

// grad_s = J(s)^T grad_v. Overwrites grad_s.
template <typename T>
void squash_backward(const T* s, const T* grad_v, T* grad_s, std::size_t dim);

struct VoteDims {
    std::size_t children;  // M
    std::size_t parents;   // N
    std::size_t in_dim;    // I
    std::size_t out_dim;   // O
};

// votes[m][n][o] = sum_i W[n][m][i][o] * u[m][i]
template <typename T>
void predict_votes(const T* u, const T* weights, T* votes, const VoteDims& d);

// Accumulates into grad_weights; overwrites grad_u.
template <typename T>
void predict_votes_backward(const T* u, const T* weights, const T* grad_votes, T* grad_u, T* grad_weights,
                            const VoteDims& d);

struct RoutingDims {
    std::size_t children;    // M
    std::size_t parents;     // N
    std::size_t dim;         // D
    std::size_t iterations;  // epsilon
};

// Per-iteration record of routing by agreement, enough to run the reverse pass.
//   couplings[t]: [M][N]   sums[t], outputs[t]: [N][D]
template <typename T>
struct RoutingTrace {
    std::vector<T> couplings;
    std::vector<T> sums;
    std::vector<T> outputs;
    std::vector<T> logits;  // b after the final iteration, [M][N]

    void resize(const RoutingDims& d);
    const T* coupling(std::size_t t, const RoutingDims& d) const { return couplings.data() + t * d.children * d.parents; }
    const T* output(std::size_t t, const RoutingDims& d) const { return outputs.data() + t * d.parents * d.dim; }
};

// b starts at zero; every iteration: c = softmax over parents of b, s_n = sum_m c_mn vote_mn,
// y_n = squash(s_n), b_mn += vote_mn . y_n. Writes the last y_n to `out`.
template <typename T>
void dynamic_routing(const T* votes, T* out, RoutingTrace<T>& trace, const RoutingDims& d);

// Gradient with respect to the votes through all iterations. Overwrites grad_votes.
template <typename T>
void dynamic_routing_backward(const T* votes, const RoutingTrace<T>& trace, const T* grad_out, T* grad_votes,
                              const RoutingDims& d);

// ---- Tensor-level operations ----

// Squash along the last dimension.
template <typename T>
Tensor<T> squash(const Tensor<T>& s);

// u: [M][I], W: [N][M][I][O] -> votes [M][N][O]
template <typename T>
Tensor<T> predict_votes(const Tensor<T>& u, const Tensor<T>& weights);

template <typename T>
struct RoutingState {
    Tensor<T> logits;     // b, [M][N]
    Tensor<T> couplings;  // c used for the final output, [M][N]
};

template <typename T>
struct RoutingResult {
    Tensor<T> output;  // y, [N][D]
    RoutingState<T> state;
    RoutingTrace<T> trace;
    RoutingDims dims;

    // Couplings of iteration t as a [M][N] tensor.
    Tensor<T> couplings_at(std::size_t t) const;
};

// votes: [M][N][D]
template <typename T>
RoutingResult<T> dynamic_routing(const Tensor<T>& votes, std::size_t iterations);

template <typename T>
Tensor<T> dynamic_routing_backward(const Tensor<T>& votes, const RoutingResult<T>& result, const Tensor<T>& grad_out);

}  // namespace coca::caps
