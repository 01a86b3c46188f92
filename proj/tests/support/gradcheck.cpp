#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "coca/nt_xent.hpp"
#include "coca/rng.hpp"

namespace coca::testing {

ModelConfig tiny_model_config() {
    ModelConfig c;
    c.input_channels = 3;
    c.image_size = 4;
    c.conv_channels = {4, 4};
    c.conv_strides = {1, 2};
    c.primary_types = 2;
    c.primary_dim = 4;
    c.parents = 3;
    c.out_dim = 4;
    c.routing_iterations = 3;
    return c;
}

namespace {

struct Siamese {
    CapsuleNetwork<double>& net;
    const Tensor<double>& xi;
    const Tensor<double>& xj;
    double tau;

    Tensor<double> embed(ForwardCache<double>* ci, ForwardCache<double>* cj) {
        const auto a = net.forward(xi, Mode::train, ci, false);
        const auto b = net.forward(xj, Mode::train, cj, false);
        const std::size_t B = xi.dim(0), Z = a.z.dim(1);
        Tensor<double> z({2 * B, Z});
        std::copy(a.z.data.begin(), a.z.data.end(), z.data.begin());
        std::copy(b.z.data.begin(), b.z.data.end(), z.data.begin() + B * Z);
        return z;
    }
    double loss() { return loss::nt_xent(embed(nullptr, nullptr), tau); }
};

}  // namespace

GradCheckReport siamese_gradient_check(std::uint64_t seed, std::size_t pairs, double step, double tolerance,
                                       double floor, double temperature) {
    const auto cfg = tiny_model_config();
    auto net = CapsuleNetwork<double>::initialized(cfg, seed);
    // Perturb the batch-norm affine terms away from (1, 0) so their gradients are generic.
    Rng rng = make_rng(seed, {0x6c});
    for (auto& s : net.params().stages) {
        for (auto& g : s.gamma.data) g = uniform(rng, 0.5, 1.5);
        for (auto& b : s.beta.data) b = uniform(rng, -0.3, 0.3);
    }
    for (auto& b : net.params().primary_bias.data) b = uniform(rng, -0.2, 0.2);

    const std::size_t side = cfg.image_size;
    Tensor<double> xi({pairs, cfg.input_channels, side, side}), xj = xi;
    for (auto& v : xi.data) v = uniform(rng, -1, 1);
    for (std::size_t k = 0; k < xj.size(); ++k) xj[k] = xi[k] + uniform(rng, -0.3, 0.3);

    Siamese model{net, xi, xj, temperature};
    ForwardCache<double> ci, cj;
    const auto z = model.embed(&ci, &cj);
    const auto lg = loss::nt_xent_with_grad(z, temperature);
    const std::size_t Z = z.dim(1);
    Tensor<double> gi({pairs, Z}), gj({pairs, Z});
    std::copy_n(lg.grad.data.begin(), pairs * Z, gi.data.begin());
    std::copy_n(lg.grad.data.begin() + pairs * Z, pairs * Z, gj.data.begin());
    auto grads = Parameters<double>::zeros(cfg);
    net.backward(ci, &gi, nullptr, grads);
    net.backward(cj, &gj, nullptr, grads);

    // Pair each trainable parameter tensor with its gradient, by name.
    std::vector<std::pair<std::string, Tensor<double>*>> params;
    net.params().visit([&](const std::string& name, Tensor<double>& t, bool trainable) {
        if (trainable) params.emplace_back(name, &t);
    });
    std::vector<const Tensor<double>*> gtensors;
    grads.visit([&](const std::string&, Tensor<double>& t, bool trainable) {
        if (trainable) gtensors.push_back(&t);
    });

    GradCheckReport rep;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& t = *params[p].second;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double keep = t[i];
            t[i] = keep + step;
            const double up = model.loss();
            t[i] = keep - step;
            const double down = model.loss();
            t[i] = keep;
            const double numeric = (up - down) / (2 * step);
            const double analytic = (*gtensors[p])[i];
            const double rel =
                std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
            ++rep.coordinates;
            if (rel <= tolerance) ++rep.passing;
            if (rel > rep.worst_relative_error) {
                rep.worst_relative_error = rel;
                rep.worst_coordinate = params[p].first + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace coca::testing
