#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coca/capsule.hpp"
#include "coca/layers.hpp"
#include "coca/tensor.hpp"

namespace coca {

// Architecture description. Defaults are the CIFAR-10 network: six conv/BN/ReLU
// stages (3->16->32->32->64->64->128, strides 1,2,1,2,1,2), a 128->512 PrimaryCaps
// convolution read as 32 capsule types of 16 dims, and 10 ClassCaps of out_dim.
struct ModelConfig {
    std::size_t input_channels = 3;
    std::size_t image_size = 32;
    std::vector<std::size_t> conv_channels{16, 32, 32, 64, 64, 128};
    std::vector<std::size_t> conv_strides{1, 2, 1, 2, 1, 2};
    std::size_t kernel = 3;
    std::size_t padding = 1;
    std::size_t primary_types = 32;
    std::size_t primary_dim = 16;
    bool primary_bias = true;
    std::size_t parents = 10;
    std::size_t out_dim = 16;
    std::size_t routing_iterations = 3;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    void validate() const;

    std::size_t conv_layers() const { return conv_channels.size(); }
    nn::ConvGeometry conv_geometry(std::size_t layer) const;
    nn::ConvGeometry primary_geometry() const;
    std::size_t feature_channels() const { return conv_channels.back(); }
    std::size_t feature_size() const;  // spatial side of the ConvBlock output
    std::size_t feature_dim() const { return feature_channels() * feature_size() * feature_size(); }
    std::size_t child_capsules() const { return primary_types * feature_size() * feature_size(); }
    std::size_t embedding_dim() const { return parents * out_dim; }
    std::size_t input_volume() const { return input_channels * image_size * image_size; }
    caps::VoteDims vote_dims() const { return {child_capsules(), parents, primary_dim, out_dim}; }
    caps::RoutingDims routing_dims() const { return {child_capsules(), parents, out_dim, routing_iterations}; }

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ConvStage {
    Tensor<T> weight;  // [Cout][Cin][k][k], no bias
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
};

template <typename T>
struct Parameters {
    std::vector<ConvStage<T>> stages;
    Tensor<T> primary_weight;  // [types*dim][Cfeat][k][k]
    Tensor<T> primary_bias;    // [types*dim] (empty when the config has no bias)
    Tensor<T> vote_weight;     // [parents][children][primary_dim][out_dim]

    // Shapes from the config, every array zero (gradient buffers).
    static Parameters zeros(const ModelConfig& config);

    // Visits every array with its checkpoint name and whether it is trained.
    template <typename F>
    void visit(F&& f) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string conv = "conv" + std::to_string(i + 1), bn = "bn" + std::to_string(i + 1);
            f(conv + ".weight", stages[i].weight, true);
            f(bn + ".weight", stages[i].gamma, true);
            f(bn + ".bias", stages[i].beta, true);
            f(bn + ".running_mean", stages[i].running_mean, false);
            f(bn + ".running_var", stages[i].running_var, false);
        }
        f(std::string("primary.weight"), primary_weight, true);
        if (!primary_bias.empty()) f(std::string("primary.bias"), primary_bias, true);
        f(std::string("classcaps.weight"), vote_weight, true);
    }
    template <typename F>
    void visit(F&& f) const {
        const_cast<Parameters*>(this)->visit(
            [&](const std::string& name, Tensor<T>& t, bool trainable) { f(name, static_cast<const Tensor<T>&>(t), trainable); });
    }

    std::size_t trainable_count() const;

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> out;
        for (const auto& s : stages)
            out.stages.push_back({s.weight.template cast<U>(), s.gamma.template cast<U>(), s.beta.template cast<U>(),
                                  s.running_mean.template cast<U>(), s.running_var.template cast<U>()});
        out.primary_weight = primary_weight.template cast<U>();
        out.primary_bias = primary_bias.template cast<U>();
        out.vote_weight = vote_weight.template cast<U>();
        return out;
    }
};

// Zero-mean normal weights scaled by fan-in; BN scale 1, shift 0; running var 1.
template <typename T>
Parameters<T> initialize_parameters(const ModelConfig& config, std::uint64_t seed);

enum class Mode { train, eval };

// PrimaryCaps map [types*dim][S][S] <-> capsules [types*S*S][dim].
// Channel t*dim + d at position p becomes pose entry d of capsule t*S*S + p.
template <typename T>
void primary_map_to_capsules(const T* map, T* capsules, std::size_t types, std::size_t dim, std::size_t positions);
template <typename T>
void capsules_to_primary_map(const T* capsules, T* map, std::size_t types, std::size_t dim, std::size_t positions);

// Everything the reverse pass needs from one forward call.
template <typename T>
struct ForwardCache {
    bool valid = false;
    Mode mode = Mode::eval;
    std::size_t batch = 0;
    std::vector<Tensor<T>> activations;  // [0] = input, [l+1] = output of stage l (post-ReLU)
    std::vector<Tensor<T>> xhat;         // normalized conv outputs per stage
    std::vector<std::vector<T>> inv_std;
    Tensor<T> primary_pre;  // capsules before squash [B][M][I]
    Tensor<T> primary_u;    // [B][M][I]
    Tensor<T> votes;        // [B][M][N][O]
    std::vector<caps::RoutingTrace<T>> routing;
    Tensor<T> z, h;         // normalized outputs
    std::vector<T> z_norm, h_norm;
};

template <typename T>
struct ForwardOutput {
    Tensor<T> h;  // [B][feature_dim], unit rows
    Tensor<T> y;  // [B][parents][out_dim]
    Tensor<T> z;  // [B][parents*out_dim], unit rows
};

template <typename T>
class CapsuleNetwork {
public:
    CapsuleNetwork(ModelConfig config, Parameters<T> params);
    static CapsuleNetwork initialized(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    Parameters<T>& params() { return params_; }
    const Parameters<T>& params() const { return params_; }

    // x: [B][C][H][W]. Train mode uses batch statistics (B >= 2) and, when
    // update_running_stats is set, moves the running statistics.
    ForwardOutput<T> forward(const Tensor<T>& x, Mode mode, ForwardCache<T>* cache = nullptr,
                             bool update_running_stats = true);

    // Accumulates parameter gradients of a loss whose gradient w.r.t. z and/or h is given.
    void backward(const ForwardCache<T>& cache, const Tensor<T>* grad_z, const Tensor<T>* grad_h,
                  Parameters<T>& grads) const;

    // Stage-level entry points.
    Tensor<T> conv_block_forward(const Tensor<T>& x, Mode mode, bool update_running_stats = true);
    Tensor<T> primary_caps_forward(const Tensor<T>& h_map) const;

private:
    void check_input(const Tensor<T>& x, Mode mode) const;

    ModelConfig config_;
    Parameters<T> params_;
    mutable std::vector<T> scratch_;
};

// Row-wise L2 normalization and its reverse pass.
template <typename T>
void l2_normalize_rows(const T* in, T* out, T* norms, std::size_t rows, std::size_t cols);
template <typename T>
void l2_normalize_backward(const T* out, const T* norms, const T* grad_out, T* grad_in, std::size_t rows,
                           std::size_t cols);

}  // namespace coca
