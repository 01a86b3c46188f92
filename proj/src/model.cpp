#include "coca/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "coca/rng.hpp"

namespace coca {

void ModelConfig::validate() const {
    if (conv_channels.empty() || conv_channels.size() != conv_strides.size())
        throw std::invalid_argument("conv_channels and conv_strides must be non-empty and of equal length");
    if (input_channels == 0 || image_size == 0 || kernel == 0) throw std::invalid_argument("empty input geometry");
    for (auto s : conv_strides)
        if (s == 0) throw std::invalid_argument("conv strides must be positive");
    for (auto c : conv_channels)
        if (c == 0) throw std::invalid_argument("conv channel counts must be positive");
    if (primary_types == 0 || primary_dim == 0 || parents == 0 || out_dim == 0)
        throw std::invalid_argument("capsule dimensions must be positive");
    if (routing_iterations == 0) throw std::invalid_argument("routing needs at least one iteration");
    if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0))
        throw std::invalid_argument("invalid batch-norm options");
    std::size_t size = image_size;
    for (std::size_t l = 0; l < conv_layers(); ++l) {
        if (size + 2 * padding < kernel) throw std::invalid_argument("input too small for the conv stack");
        size = conv_geometry(l).out_size();
    }
}

nn::ConvGeometry ModelConfig::conv_geometry(std::size_t layer) const {
    std::size_t size = image_size;
    std::size_t in = input_channels;
    for (std::size_t l = 0; l < layer; ++l) {
        size = (size + 2 * padding - kernel) / conv_strides[l] + 1;
        in = conv_channels[l];
    }
    return {in, conv_channels[layer], size, kernel, conv_strides[layer], padding};
}

std::size_t ModelConfig::feature_size() const { return conv_geometry(conv_layers() - 1).out_size(); }

nn::ConvGeometry ModelConfig::primary_geometry() const {
    // kernel 3, stride 1, padding 1: spatial size preserved
    return {feature_channels(), primary_types * primary_dim, feature_size(), 3, 1, 1};
}

template <typename T>
Parameters<T> Parameters<T>::zeros(const ModelConfig& c) {
    c.validate();
    Parameters<T> p;
    for (std::size_t l = 0; l < c.conv_layers(); ++l) {
        const auto g = c.conv_geometry(l);
        ConvStage<T> s;
        s.weight.resize({g.out_channels, g.in_channels, g.kernel, g.kernel});
        s.gamma.resize({g.out_channels});
        s.beta.resize({g.out_channels});
        s.running_mean.resize({g.out_channels});
        s.running_var.resize({g.out_channels});
        p.stages.push_back(std::move(s));
    }
    const auto pg = c.primary_geometry();
    p.primary_weight.resize({pg.out_channels, pg.in_channels, pg.kernel, pg.kernel});
    if (c.primary_bias) p.primary_bias.resize({pg.out_channels});
    p.vote_weight.resize({c.parents, c.child_capsules(), c.primary_dim, c.out_dim});
    return p;
}

template <typename T>
std::size_t Parameters<T>::trainable_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor<T>& t, bool trainable) {
        if (trainable) n += t.size();
    });
    return n;
}

namespace {

// Box-Muller on the library-independent uniform stream.
double standard_normal(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
    for (auto& v : t.data) v = static_cast<T>(stddev * standard_normal(rng));
}

}  // namespace

template <typename T>
Parameters<T> initialize_parameters(const ModelConfig& c, std::uint64_t seed) {
    auto p = Parameters<T>::zeros(c);
    Rng rng = make_rng(seed, {0x1417u});
    for (std::size_t l = 0; l < c.conv_layers(); ++l) {
        auto& s = p.stages[l];
        fill_normal(s.weight, std::sqrt(2.0 / c.conv_geometry(l).patch()), rng);
        s.gamma.fill(T(1));
        s.running_var.fill(T(1));
    }
    fill_normal(p.primary_weight, std::sqrt(1.0 / c.primary_geometry().patch()), rng);
    fill_normal(p.vote_weight, std::sqrt(1.0 / c.primary_dim), rng);
    return p;
}

template <typename T>
void primary_map_to_capsules(const T* map, T* capsules, std::size_t types, std::size_t dim, std::size_t positions) {
    for (std::size_t t = 0; t < types; ++t)
        for (std::size_t d = 0; d < dim; ++d) {
            const T* src = map + (t * dim + d) * positions;
            for (std::size_t p = 0; p < positions; ++p) capsules[(t * positions + p) * dim + d] = src[p];
        }
}

template <typename T>
void capsules_to_primary_map(const T* capsules, T* map, std::size_t types, std::size_t dim, std::size_t positions) {
    for (std::size_t t = 0; t < types; ++t)
        for (std::size_t d = 0; d < dim; ++d) {
            T* dst = map + (t * dim + d) * positions;
            for (std::size_t p = 0; p < positions; ++p) dst[p] = capsules[(t * positions + p) * dim + d];
        }
}

template <typename T>
void l2_normalize_rows(const T* in, T* out, T* norms, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = in + r * cols;
        double sq = 0.0;
        for (std::size_t i = 0; i < cols; ++i) sq += static_cast<double>(x[i]) * x[i];
        const double norm = std::max(std::sqrt(sq), 1e-12);
        norms[r] = static_cast<T>(norm);
        for (std::size_t i = 0; i < cols; ++i) out[r * cols + i] = static_cast<T>(x[i] / norm);
    }
}

template <typename T>
void l2_normalize_backward(const T* out, const T* norms, const T* grad_out, T* grad_in, std::size_t rows,
                           std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = out + r * cols;
        const T* g = grad_out + r * cols;
        double dot = 0.0;
        for (std::size_t i = 0; i < cols; ++i) dot += static_cast<double>(z[i]) * g[i];
        const double inv = 1.0 / static_cast<double>(norms[r]);
        for (std::size_t i = 0; i < cols; ++i) grad_in[r * cols + i] = static_cast<T>((g[i] - z[i] * dot) * inv);
    }
}

template <typename T>
CapsuleNetwork<T>::CapsuleNetwork(ModelConfig config, Parameters<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto expected = Parameters<T>::zeros(config_);
    std::vector<Shape> want, got;
    expected.visit([&](const std::string&, const Tensor<T>& t, bool) { want.push_back(t.shape); });
    params_.visit([&](const std::string&, const Tensor<T>& t, bool) { got.push_back(t.shape); });
    if (want != got) throw std::invalid_argument("parameter shapes do not match the model config");
}

template <typename T>
CapsuleNetwork<T> CapsuleNetwork<T>::initialized(const ModelConfig& config, std::uint64_t seed) {
    return CapsuleNetwork(config, initialize_parameters<T>(config, seed));
}

template <typename T>
void CapsuleNetwork<T>::check_input(const Tensor<T>& x, Mode mode) const {
    const auto& c = config_;
    if (x.rank() != 4 || x.dim(1) != c.input_channels || x.dim(2) != c.image_size || x.dim(3) != c.image_size)
        throw std::invalid_argument("input must be [B][" + std::to_string(c.input_channels) + "][" +
                                    std::to_string(c.image_size) + "][" + std::to_string(c.image_size) + "], got " +
                                    shape_string(x.shape));
    if (x.dim(0) == 0) throw std::invalid_argument("empty batch");
    if (mode == Mode::train && x.dim(0) < 2)
        throw std::invalid_argument("train mode needs a batch of at least 2 (batch-norm variance undefined)");
}

template <typename T>
Tensor<T> CapsuleNetwork<T>::conv_block_forward(const Tensor<T>& x, Mode mode, bool update_running_stats) {
    ForwardCache<T> cache;
    forward(x, mode, &cache, update_running_stats);
    return cache.activations.back();
}

template <typename T>
Tensor<T> CapsuleNetwork<T>::primary_caps_forward(const Tensor<T>& h_map) const {
    const auto& c = config_;
    const auto g = c.primary_geometry();
    if (h_map.rank() != 4 || h_map.dim(1) != g.in_channels || h_map.dim(2) != g.in_size || h_map.dim(3) != g.in_size)
        throw std::invalid_argument("PrimaryCaps input shape mismatch: " + shape_string(h_map.shape));
    const std::size_t B = h_map.dim(0), M = c.child_capsules(), I = c.primary_dim;
    const std::size_t positions = g.out_size() * g.out_size();
    Tensor<T> map({B, g.out_channels, g.out_size(), g.out_size()});
    nn::conv2d_forward(h_map.ptr(), B, params_.primary_weight.ptr(),
                       params_.primary_bias.empty() ? nullptr : params_.primary_bias.ptr(), map.ptr(), g, scratch_);
    Tensor<T> u({B, M, I});
    std::vector<T> pre(M * I);
    for (std::size_t b = 0; b < B; ++b) {
        primary_map_to_capsules(map.ptr() + b * g.out_volume(), pre.data(), c.primary_types, I, positions);
        for (std::size_t m = 0; m < M; ++m) caps::squash(pre.data() + m * I, u.ptr() + (b * M + m) * I, I);
    }
    return u;
}

template <typename T>
ForwardOutput<T> CapsuleNetwork<T>::forward(const Tensor<T>& x, Mode mode, ForwardCache<T>* cache,
                                            bool update_running_stats) {
    check_input(x, mode);
    const auto& c = config_;
    const std::size_t B = x.dim(0), L = c.conv_layers();
    const nn::BatchNormOptions bn{c.bn_momentum, c.bn_eps};

    ForwardCache<T> local;
    ForwardCache<T>& fc = cache ? *cache : local;
    fc = ForwardCache<T>{};
    fc.mode = mode;
    fc.batch = B;
    fc.activations.resize(L + 1);
    fc.xhat.resize(L);
    fc.inv_std.resize(L);
    fc.activations[0] = x;

    for (std::size_t l = 0; l < L; ++l) {
        const auto g = c.conv_geometry(l);
        auto& stage = params_.stages[l];
        const Shape out_shape{B, g.out_channels, g.out_size(), g.out_size()};
        Tensor<T> conv(out_shape);
        nn::conv2d_forward(fc.activations[l].ptr(), B, stage.weight.ptr(), static_cast<const T*>(nullptr), conv.ptr(),
                           g, scratch_);
        fc.xhat[l].resize(out_shape);
        fc.inv_std[l].resize(g.out_channels);
        Tensor<T> y(out_shape);
        const std::size_t spatial = g.out_size() * g.out_size();
        if (mode == Mode::train)
            nn::batchnorm_train_forward(conv.ptr(), B, g.out_channels, spatial, stage.gamma.ptr(), stage.beta.ptr(),
                                        stage.running_mean.ptr(), stage.running_var.ptr(), update_running_stats, bn,
                                        fc.xhat[l].ptr(), fc.inv_std[l].data(), y.ptr());
        else
            nn::batchnorm_eval_forward(conv.ptr(), B, g.out_channels, spatial, stage.gamma.ptr(), stage.beta.ptr(),
                                       stage.running_mean.ptr(), stage.running_var.ptr(), bn, fc.xhat[l].ptr(),
                                       fc.inv_std[l].data(), y.ptr());
        for (auto& v : y.data) v = v > T(0) ? v : T(0);
        fc.activations[l + 1] = std::move(y);
    }

    // PrimaryCaps
    const auto pg = c.primary_geometry();
    const std::size_t M = c.child_capsules(), I = c.primary_dim, N = c.parents, O = c.out_dim;
    const std::size_t positions = pg.out_size() * pg.out_size();
    Tensor<T> map({B, pg.out_channels, pg.out_size(), pg.out_size()});
    nn::conv2d_forward(fc.activations[L].ptr(), B, params_.primary_weight.ptr(),
                       params_.primary_bias.empty() ? nullptr : params_.primary_bias.ptr(), map.ptr(), pg, scratch_);
    fc.primary_pre.resize({B, M, I});
    fc.primary_u.resize({B, M, I});
    fc.votes.resize({B, M, N, O});
    fc.routing.resize(B);

    ForwardOutput<T> out;
    out.y.resize({B, N, O});
    const auto vd = c.vote_dims();
    const auto rd = c.routing_dims();
    for (std::size_t b = 0; b < B; ++b) {
        T* pre = fc.primary_pre.ptr() + b * M * I;
        T* u = fc.primary_u.ptr() + b * M * I;
        primary_map_to_capsules(map.ptr() + b * pg.out_volume(), pre, c.primary_types, I, positions);
        for (std::size_t m = 0; m < M; ++m) caps::squash(pre + m * I, u + m * I, I);
        T* votes = fc.votes.ptr() + b * M * N * O;
        caps::predict_votes(u, params_.vote_weight.ptr(), votes, vd);
        caps::dynamic_routing(votes, out.y.ptr() + b * N * O, fc.routing[b], rd);
    }

    const std::size_t Z = c.embedding_dim(), H = c.feature_dim();
    out.z.resize({B, Z});
    out.h.resize({B, H});
    fc.z_norm.resize(B);
    fc.h_norm.resize(B);
    l2_normalize_rows(out.y.ptr(), out.z.ptr(), fc.z_norm.data(), B, Z);
    l2_normalize_rows(fc.activations[L].ptr(), out.h.ptr(), fc.h_norm.data(), B, H);
    fc.z = out.z;
    fc.h = out.h;
    fc.valid = true;
    if (!cache) fc = ForwardCache<T>{};
    return out;
}

template <typename T>
void CapsuleNetwork<T>::backward(const ForwardCache<T>& fc, const Tensor<T>* grad_z, const Tensor<T>* grad_h,
                                 Parameters<T>& grads) const {
    if (!fc.valid) throw std::logic_error("backward called without a recorded forward pass");
    const auto& c = config_;
    const std::size_t B = fc.batch, L = c.conv_layers();
    const std::size_t M = c.child_capsules(), I = c.primary_dim, N = c.parents, O = c.out_dim;
    const std::size_t Z = c.embedding_dim(), H = c.feature_dim();
    if (grad_z && grad_z->size() != B * Z) throw std::invalid_argument("grad_z has the wrong size");
    if (grad_h && grad_h->size() != B * H) throw std::invalid_argument("grad_h has the wrong size");

    const auto pg = c.primary_geometry();
    Tensor<T> grad_feat(fc.activations[L].shape);  // gradient at the ConvBlock output

    if (grad_z) {
        const std::size_t positions = pg.out_size() * pg.out_size();
        Tensor<T> gy({B, N, O});
        l2_normalize_backward(fc.z.ptr(), fc.z_norm.data(), grad_z->ptr(), gy.ptr(), B, Z);
        Tensor<T> gmap({B, pg.out_channels, pg.out_size(), pg.out_size()});
        std::vector<T> gvotes(M * N * O), gu(M * I), gpre(M * I);
        const auto vd = c.vote_dims();
        const auto rd = c.routing_dims();
        for (std::size_t b = 0; b < B; ++b) {
            const T* votes = fc.votes.ptr() + b * M * N * O;
            caps::dynamic_routing_backward(votes, fc.routing[b], gy.ptr() + b * N * O, gvotes.data(), rd);
            const T* u = fc.primary_u.ptr() + b * M * I;
            caps::predict_votes_backward(u, params_.vote_weight.ptr(), gvotes.data(), gu.data(),
                                         grads.vote_weight.ptr(), vd);
            const T* pre = fc.primary_pre.ptr() + b * M * I;
            for (std::size_t m = 0; m < M; ++m)
                caps::squash_backward(pre + m * I, gu.data() + m * I, gpre.data() + m * I, I);
            capsules_to_primary_map(gpre.data(), gmap.ptr() + b * pg.out_volume(), c.primary_types, I, positions);
        }
        nn::conv2d_backward(fc.activations[L].ptr(), B, params_.primary_weight.ptr(), gmap.ptr(), grad_feat.ptr(),
                            grads.primary_weight.ptr(), grads.primary_bias.empty() ? nullptr : grads.primary_bias.ptr(),
                            pg, scratch_);
    }
    if (grad_h) {
        Tensor<T> gh(grad_feat.shape);
        l2_normalize_backward(fc.h.ptr(), fc.h_norm.data(), grad_h->ptr(), gh.ptr(), B, H);
        for (std::size_t i = 0; i < gh.size(); ++i) grad_feat[i] += gh[i];
    }
    if (!grad_z && !grad_h) return;

    Tensor<T> grad = std::move(grad_feat);
    for (std::size_t l = L; l-- > 0;) {
        const auto g = c.conv_geometry(l);
        const std::size_t spatial = g.out_size() * g.out_size();
        const auto& act = fc.activations[l + 1];
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!(act[i] > T(0))) grad[i] = T(0);
        Tensor<T> gconv(grad.shape);
        nn::batchnorm_backward(grad.ptr(), fc.xhat[l].ptr(), fc.inv_std[l].data(), B, g.out_channels, spatial,
                               params_.stages[l].gamma.ptr(), fc.mode == Mode::train, gconv.ptr(),
                               grads.stages[l].gamma.ptr(), grads.stages[l].beta.ptr());
        Tensor<T> gin;
        if (l > 0) gin.resize(fc.activations[l].shape);
        nn::conv2d_backward(fc.activations[l].ptr(), B, params_.stages[l].weight.ptr(), gconv.ptr(),
                            l > 0 ? gin.ptr() : nullptr, grads.stages[l].weight.ptr(), static_cast<T*>(nullptr), g,
                            scratch_);
        grad = std::move(gin);
    }
}

#define COCA_INSTANTIATE(T)                                                                                 \
    template struct Parameters<T>;                                                                          \
    template Parameters<T> initialize_parameters<T>(const ModelConfig&, std::uint64_t);                     \
    template void primary_map_to_capsules<T>(const T*, T*, std::size_t, std::size_t, std::size_t);          \
    template void capsules_to_primary_map<T>(const T*, T*, std::size_t, std::size_t, std::size_t);          \
    template void l2_normalize_rows<T>(const T*, T*, T*, std::size_t, std::size_t);                         \
    template void l2_normalize_backward<T>(const T*, const T*, const T*, T*, std::size_t, std::size_t);     \
    template class CapsuleNetwork<T>;

COCA_INSTANTIATE(float)
COCA_INSTANTIATE(double)
#undef COCA_INSTANTIATE

}  // namespace coca
