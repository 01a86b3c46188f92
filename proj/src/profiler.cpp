#include "coca/profiler.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace coca::profile {

FlopConvention parse_convention(const std::string& name) {
    if (name == "macs") return FlopConvention::macs;
    if (name == "2macs") return FlopConvention::two_flops_per_mac;
    throw std::invalid_argument("unknown FLOP convention '" + name + "' (expected macs or 2macs)");
}

const char* to_string(FlopConvention c) {
    return c == FlopConvention::macs ? "1 FLOP = 1 multiply-accumulate" : "1 multiply-accumulate = 2 FLOPs";
}

std::uint64_t ProfileReport::total_params() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.params;
    return n;
}

std::uint64_t ProfileReport::block_params(const std::string& block) const {
    std::uint64_t n = 0;
    for (const auto& l : layers)
        if (l.block == block) n += l.params;
    return n;
}

std::uint64_t ProfileReport::headline_flops() const {
    return convention == FlopConvention::macs ? conv_macs : 2 * conv_macs;
}

std::uint64_t ProfileReport::network_flops() const {
    const std::uint64_t macs = conv_macs + vote_macs + routing_macs();
    return convention == FlopConvention::macs ? macs : 2 * macs;
}

ProfileReport count_params(const ModelConfig& c) { return count_flops(c, "macs"); }

ProfileReport count_flops(const ModelConfig& c, const std::string& convention) {
    c.validate();
    ProfileReport r;
    r.convention = parse_convention(convention);

    for (std::size_t l = 0; l < c.conv_layers(); ++l) {
        const auto g = c.conv_geometry(l);
        const std::uint64_t out = g.out_size();
        const std::string idx = std::to_string(l + 1);
        LayerReport conv{"Conv2d-" + idx, "ConvBlock", g.out_channels * g.patch(),
                         g.out_channels * g.patch() * out * out, {g.out_channels, out, out}, {"conv" + idx + ".weight"}};
        LayerReport bn{"BatchNorm2d-" + idx + " + ReLU", "ConvBlock", 2 * g.out_channels, 0,
                       {g.out_channels, out, out}, {"bn" + idx + ".weight", "bn" + idx + ".bias"}};
        r.conv_macs += conv.macs;
        r.auxiliary_ops += 3 * g.out_channels * out * out;  // scale, shift, clamp
        r.layers.push_back(std::move(conv));
        r.layers.push_back(std::move(bn));
    }

    const auto pg = c.primary_geometry();
    const std::uint64_t pout = pg.out_size();
    LayerReport primary{"PrimaryCaps Conv2d", "PrimaryCaps",
                        pg.out_channels * pg.patch() + (c.primary_bias ? pg.out_channels : 0),
                        pg.out_channels * pg.patch() * pout * pout, {c.child_capsules(), c.primary_dim},
                        {"primary.weight"}};
    if (c.primary_bias) primary.param_arrays.push_back("primary.bias");
    r.conv_macs += primary.macs;
    r.auxiliary_ops += 3 * c.child_capsules() * c.primary_dim;  // squash
    r.layers.push_back(std::move(primary));

    const std::uint64_t M = c.child_capsules(), N = c.parents, I = c.primary_dim, O = c.out_dim;
    LayerReport votes{"ClassCaps votes", "ClassCaps", N * M * I * O, M * N * I * O, {M, N, O}, {"classcaps.weight"}};
    r.vote_macs = votes.macs;
    r.layers.push_back(std::move(votes));
    r.layers.push_back({"Dynamic routing", "ClassCaps", 0, 2 * M * N * O * c.routing_iterations, {N, O}, {}});
    r.routing_macs_per_iteration = 2 * M * N * O;
    r.routing_iterations = c.routing_iterations;
    r.auxiliary_ops += c.routing_iterations * (2 * M * N + 3 * N * O);  // softmax, squash
    return r;
}

bool Audit::conv_block_exact() const {
    if (conv_block.size() != kReferenceConvBlockParams.size()) return false;
    for (const auto& l : conv_block)
        if (l.difference() != 0) return false;
    return true;
}

Audit audit_against_reference(const ProfileReport& r) {
    Audit a;
    std::size_t row = 0;
    for (const auto& l : r.layers) {
        if (l.block != "ConvBlock" || row >= kReferenceConvBlockParams.size()) continue;
        a.conv_block.push_back({l.name, static_cast<double>(l.params), static_cast<double>(kReferenceConvBlockParams[row++])});
    }
    a.classcaps_params = r.block_params("ClassCaps");
    const double total = static_cast<double>(r.total_params());
    const double without = total - static_cast<double>(a.classcaps_params);
    a.totals = {
        {"total parameters vs 734,800", total, static_cast<double>(kReferenceParamTotal)},
        {"total parameters vs 780K", total, static_cast<double>(kReferenceParamTotalRounded)},
        {"parameters excluding ClassCaps vs 734,800", without, static_cast<double>(kReferenceParamTotal)},
        {"parameters excluding ClassCaps vs 780K", without, static_cast<double>(kReferenceParamTotalRounded)},
    };
    a.conv_flops = {std::string("convolution FLOPs (") + to_string(r.convention) + ") vs 18.34M",
                    static_cast<double>(r.headline_flops()), kReferenceConvFlops};
    return a;
}

namespace {

std::string shape_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

}  // namespace

std::string format_table(const ProfileReport& r) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %-12s %-14s %12s %14s\n", "Layer", "Block", "Output", "Params", "MACs");
    os << line;
    for (const auto& l : r.layers) {
        std::snprintf(line, sizeof(line), "%-24s %-12s %-14s %12llu %14llu\n", l.name.c_str(), l.block.c_str(),
                      shape_text(l.output_shape).c_str(), static_cast<unsigned long long>(l.params),
                      static_cast<unsigned long long>(l.macs));
        os << line;
    }
    auto total = [&](const char* label, std::uint64_t v) {
        std::snprintf(line, sizeof(line), "%-52s %12llu\n", label, static_cast<unsigned long long>(v));
        os << line;
    };
    total("ConvBlock parameters", r.block_params("ConvBlock"));
    total("PrimaryCaps parameters", r.block_params("PrimaryCaps"));
    total("ClassCaps parameters", r.block_params("ClassCaps"));
    total("Total parameters", r.total_params());
    os << "FLOP convention: " << to_string(r.convention) << "\n";
    total("Convolution FLOPs (headline)", r.headline_flops());
    total("Vote prediction MACs", r.vote_macs);
    total("Routing MACs per iteration", r.routing_macs_per_iteration);
    total("Routing MACs (all iterations)", r.routing_macs());
    total("Network FLOPs incl. votes and routing", r.network_flops());
    total("Auxiliary elementwise ops (BN, ReLU, squash, softmax)", r.auxiliary_ops);
    return os.str();
}

std::string format_csv(const ProfileReport& r) {
    std::ostringstream os;
    os << "layer,block,output_shape,params,macs\n";
    for (const auto& l : r.layers)
        os << l.name << ',' << l.block << ',' << shape_text(l.output_shape) << ',' << l.params << ',' << l.macs << '\n';
    os << "total,,," << r.total_params() << ',' << r.conv_macs + r.vote_macs + r.routing_macs() << '\n';
    return os.str();
}

std::string format_audit(const Audit& a) {
    std::ostringstream os;
    char line[256];
    os << "ConvBlock per-layer parameters vs reference table:\n";
    for (const auto& l : a.conv_block) {
        std::snprintf(line, sizeof(line), "  %-24s computed %8.0f reference %8.0f diff %+.0f\n", l.label.c_str(),
                      l.computed, l.reference, l.difference());
        os << line;
    }
    os << "  => " << (a.conv_block_exact() ? "exact match on all rows" : "MISMATCH") << "\n";
    std::snprintf(line, sizeof(line), "ClassCaps parameter term (isolated): %llu\n",
                  static_cast<unsigned long long>(a.classcaps_params));
    os << line;
    for (const auto& l : a.totals) {
        std::snprintf(line, sizeof(line), "  %-44s computed %10.0f reference %10.0f diff %+11.0f (%+.2f%%)\n",
                      l.label.c_str(), l.computed, l.reference, l.difference(), l.percent());
        os << line;
    }
    std::snprintf(line, sizeof(line), "  %s: computed %.0f reference %.0f diff %+.0f (%+.3f%%)\n",
                  a.conv_flops.label.c_str(), a.conv_flops.computed, a.conv_flops.reference,
                  a.conv_flops.difference(), a.conv_flops.percent());
    os << line;
    return os.str();
}

}  // namespace coca::profile
