#include "coca/capsule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coca::caps {

template <typename T>
void squash(const T* s, T* v, std::size_t dim) {
    T sq = 0;
    for (std::size_t i = 0; i < dim; ++i) sq += s[i] * s[i];
    const T scale = std::sqrt(sq) / (T(1) + sq);
    for (std::size_t i = 0; i < dim; ++i) v[i] = scale * s[i];
}

template <typename T>
void squash_backward(const T* s, const T* grad_v, T* grad_s, std::size_t dim) {
    // v = f(r) s with f(r) = r / (1 + r^2); dv/ds = f I + f'(r) s s^T / r.
    T sq = 0, dot = 0;
    for (std::size_t i = 0; i < dim; ++i) {
        sq += s[i] * s[i];
        dot += s[i] * grad_v[i];
    }
    const T r = std::sqrt(sq);
    const T denom = T(1) + sq;
    const T f = r / denom;
    // f'(r)/r * (s . g) s; finite as r -> 0 because (s . g) s = O(r^2).
    const T radial = r > T(0) ? (T(1) - sq) / (denom * denom) * dot / r : T(0);
    for (std::size_t i = 0; i < dim; ++i) grad_s[i] = f * grad_v[i] + radial * s[i];
}

template <typename T>
void predict_votes(const T* u, const T* weights, T* votes, const VoteDims& d) {
    const std::size_t M = d.children, N = d.parents, I = d.in_dim, O = d.out_dim;
    for (std::size_t m = 0; m < M; ++m) {
        const T* um = u + m * I;
        for (std::size_t n = 0; n < N; ++n) {
            const T* w = weights + (n * M + m) * I * O;
            T* out = votes + (m * N + n) * O;
            std::fill(out, out + O, T(0));
            for (std::size_t i = 0; i < I; ++i) {
                const T ui = um[i];
                const T* wi = w + i * O;
                for (std::size_t o = 0; o < O; ++o) out[o] += wi[o] * ui;
            }
        }
    }
}

template <typename T>
void predict_votes_backward(const T* u, const T* weights, const T* grad_votes, T* grad_u, T* grad_weights,
                            const VoteDims& d) {
    const std::size_t M = d.children, N = d.parents, I = d.in_dim, O = d.out_dim;
    for (std::size_t m = 0; m < M; ++m) {
        const T* um = u + m * I;
        T* gum = grad_u + m * I;
        std::fill(gum, gum + I, T(0));
        for (std::size_t n = 0; n < N; ++n) {
            const T* w = weights + (n * M + m) * I * O;
            T* gw = grad_weights + (n * M + m) * I * O;
            const T* g = grad_votes + (m * N + n) * O;
            for (std::size_t i = 0; i < I; ++i) {
                const T ui = um[i];
                const T* wi = w + i * O;
                T* gwi = gw + i * O;
                T acc = 0;
                for (std::size_t o = 0; o < O; ++o) {
                    gwi[o] += ui * g[o];
                    acc += wi[o] * g[o];
                }
                gum[i] += acc;
            }
        }
    }
}

template <typename T>
void RoutingTrace<T>::resize(const RoutingDims& d) {
    couplings.resize(d.iterations * d.children * d.parents);
    sums.resize(d.iterations * d.parents * d.dim);
    outputs.resize(d.iterations * d.parents * d.dim);
    logits.resize(d.children * d.parents);
}

namespace {

template <typename T>
void softmax_rows(const T* logits, T* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* b = logits + r * cols;
        T* c = out + r * cols;
        const T mx = *std::max_element(b, b + cols);
        T total = 0;
        for (std::size_t k = 0; k < cols; ++k) total += (c[k] = std::exp(b[k] - mx));
        for (std::size_t k = 0; k < cols; ++k) c[k] /= total;
    }
}

void check_routing(const RoutingDims& d) {
    if (d.iterations == 0) throw std::invalid_argument("routing needs at least one iteration");
    if (d.children == 0 || d.parents == 0 || d.dim == 0) throw std::invalid_argument("empty routing dimensions");
}

}  // namespace

template <typename T>
void dynamic_routing(const T* votes, T* out, RoutingTrace<T>& trace, const RoutingDims& d) {
    check_routing(d);
    const std::size_t M = d.children, N = d.parents, D = d.dim;
    trace.resize(d);
    T* b = trace.logits.data();
    std::fill(b, b + M * N, T(0));
    for (std::size_t t = 0; t < d.iterations; ++t) {
        T* c = trace.couplings.data() + t * M * N;
        T* s = trace.sums.data() + t * N * D;
        T* y = trace.outputs.data() + t * N * D;
        softmax_rows(b, c, M, N);
        std::fill(s, s + N * D, T(0));
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const T cmn = c[m * N + n];
                const T* v = votes + (m * N + n) * D;
                T* sn = s + n * D;
                for (std::size_t k = 0; k < D; ++k) sn[k] += cmn * v[k];
            }
        for (std::size_t n = 0; n < N; ++n) squash(s + n * D, y + n * D, D);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const T* v = votes + (m * N + n) * D;
                const T* yn = y + n * D;
                T agree = 0;
                for (std::size_t k = 0; k < D; ++k) agree += v[k] * yn[k];
                b[m * N + n] += agree;
            }
    }
    const T* last = trace.outputs.data() + (d.iterations - 1) * N * D;
    std::copy(last, last + N * D, out);
}

template <typename T>
void dynamic_routing_backward(const T* votes, const RoutingTrace<T>& trace, const T* grad_out, T* grad_votes,
                              const RoutingDims& d) {
    check_routing(d);
    const std::size_t M = d.children, N = d.parents, D = d.dim;
    std::fill(grad_votes, grad_votes + M * N * D, T(0));
    std::vector<T> grad_b(M * N, T(0));  // dL/db_{t+1}; the final b feeds nothing
    std::vector<T> gy(N * D), gs(N * D), gc(M * N);

    for (std::size_t t = d.iterations; t-- > 0;) {
        const T* c = trace.couplings.data() + t * M * N;
        const T* s = trace.sums.data() + t * N * D;
        const T* y = trace.outputs.data() + t * N * D;

        // b_{t+1} = b_t + vote . y_t
        if (t + 1 == d.iterations) std::copy(grad_out, grad_out + N * D, gy.begin());
        else std::fill(gy.begin(), gy.end(), T(0));
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const T g = grad_b[m * N + n];
                if (g == T(0)) continue;
                const T* v = votes + (m * N + n) * D;
                T* gv = grad_votes + (m * N + n) * D;
                const T* yn = y + n * D;
                T* gyn = gy.data() + n * D;
                for (std::size_t k = 0; k < D; ++k) {
                    gyn[k] += g * v[k];
                    gv[k] += g * yn[k];
                }
            }

        for (std::size_t n = 0; n < N; ++n) squash_backward(s + n * D, gy.data() + n * D, gs.data() + n * D, D);

        // s_n = sum_m c_mn vote_mn
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const T* v = votes + (m * N + n) * D;
                T* gv = grad_votes + (m * N + n) * D;
                const T* gsn = gs.data() + n * D;
                const T cmn = c[m * N + n];
                T acc = 0;
                for (std::size_t k = 0; k < D; ++k) {
                    acc += gsn[k] * v[k];
                    gv[k] += cmn * gsn[k];
                }
                gc[m * N + n] = acc;
            }

        // c = softmax(b_t) per child; b_t also passes straight through to b_{t+1}.
        for (std::size_t m = 0; m < M; ++m) {
            const T* cm = c + m * N;
            const T* gcm = gc.data() + m * N;
            T dot = 0;
            for (std::size_t n = 0; n < N; ++n) dot += cm[n] * gcm[n];
            for (std::size_t n = 0; n < N; ++n) grad_b[m * N + n] += cm[n] * (gcm[n] - dot);
        }
    }
}

// ---- Tensor wrappers ----

template <typename T>
Tensor<T> squash(const Tensor<T>& s) {
    if (s.rank() == 0 || s.shape.back() == 0) throw std::invalid_argument("squash needs a non-empty last dimension");
    Tensor<T> v(s.shape);
    const std::size_t dim = s.shape.back();
    for (std::size_t off = 0; off < s.size(); off += dim) squash(s.ptr() + off, v.ptr() + off, dim);
    return v;
}

template <typename T>
Tensor<T> predict_votes(const Tensor<T>& u, const Tensor<T>& weights) {
    if (u.rank() != 2 || weights.rank() != 4)
        throw std::invalid_argument("predict_votes expects u [M][I] and W [N][M][I][O]");
    const VoteDims d{u.dim(0), weights.dim(0), u.dim(1), weights.dim(3)};
    if (weights.dim(1) != d.children || weights.dim(2) != d.in_dim)
        throw std::invalid_argument("vote weight shape " + shape_string(weights.shape) +
                                    " does not match child poses " + shape_string(u.shape));
    Tensor<T> votes({d.children, d.parents, d.out_dim});
    predict_votes(u.ptr(), weights.ptr(), votes.ptr(), d);
    return votes;
}

template <typename T>
Tensor<T> RoutingResult<T>::couplings_at(std::size_t t) const {
    if (t >= dims.iterations) throw std::out_of_range("routing iteration out of range");
    const std::size_t n = dims.children * dims.parents;
    Tensor<T> c({dims.children, dims.parents});
    std::copy_n(trace.couplings.begin() + t * n, n, c.data.begin());
    return c;
}

template <typename T>
RoutingResult<T> dynamic_routing(const Tensor<T>& votes, std::size_t iterations) {
    if (votes.rank() != 3) throw std::invalid_argument("routing expects votes [M][N][D]");
    RoutingResult<T> r;
    r.dims = {votes.dim(0), votes.dim(1), votes.dim(2), iterations};
    r.output.resize({r.dims.parents, r.dims.dim});
    dynamic_routing(votes.ptr(), r.output.ptr(), r.trace, r.dims);
    r.state.logits = Tensor<T>({r.dims.children, r.dims.parents}, r.trace.logits);
    r.state.couplings = r.couplings_at(iterations - 1);
    return r;
}

template <typename T>
Tensor<T> dynamic_routing_backward(const Tensor<T>& votes, const RoutingResult<T>& result, const Tensor<T>& grad_out) {
    if (grad_out.size() != result.dims.parents * result.dims.dim)
        throw std::invalid_argument("routing gradient has the wrong size");
    Tensor<T> g(votes.shape);
    dynamic_routing_backward(votes.ptr(), result.trace, grad_out.ptr(), g.ptr(), result.dims);
    return g;
}

#define COCA_INSTANTIATE(T)                                                                                   \
    template void squash<T>(const T*, T*, std::size_t);                                                       \
    template void squash_backward<T>(const T*, const T*, T*, std::size_t);                                    \
    template void predict_votes<T>(const T*, const T*, T*, const VoteDims&);                                  \
    template void predict_votes_backward<T>(const T*, const T*, const T*, T*, T*, const VoteDims&);           \
    template struct RoutingTrace<T>;                                                                          \
    template struct RoutingResult<T>;                                                                         \
    template void dynamic_routing<T>(const T*, T*, RoutingTrace<T>&, const RoutingDims&);                     \
    template void dynamic_routing_backward<T>(const T*, const RoutingTrace<T>&, const T*, T*,                 \
                                              const RoutingDims&);                                            \
    template Tensor<T> squash<T>(const Tensor<T>&);                                                           \
    template Tensor<T> predict_votes<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template RoutingResult<T> dynamic_routing<T>(const Tensor<T>&, std::size_t);                              \
    template Tensor<T> dynamic_routing_backward<T>(const Tensor<T>&, const RoutingResult<T>&, const Tensor<T>&);

COCA_INSTANTIATE(float)
COCA_INSTANTIATE(double)
#undef COCA_INSTANTIATE

}  // namespace coca::caps
