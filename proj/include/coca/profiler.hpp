#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coca/model.hpp"

namespace coca::profile {

// Exact counts derived from the config; nothing here is measured.
struct LayerReport {
    std::string name;
    std::string block;  // ConvBlock, PrimaryCaps, ClassCaps
    std::uint64_t params = 0;
    std::uint64_t macs = 0;  // per 3x32x32 image (or the configured input size)
    Shape output_shape;
    std::vector<std::string> param_arrays;  // checkpoint names covered by this row
};

enum class FlopConvention { macs, two_flops_per_mac };

FlopConvention parse_convention(const std::string& name);  // "macs" | "2macs"
const char* to_string(FlopConvention c);

struct ProfileReport {
    std::vector<LayerReport> layers;
    FlopConvention convention = FlopConvention::macs;
    std::uint64_t conv_macs = 0;                // ConvBlock + PrimaryCaps convolutions
    std::uint64_t vote_macs = 0;                // vote prediction
    std::uint64_t routing_macs_per_iteration = 0;
    std::size_t routing_iterations = 0;
    std::uint64_t auxiliary_ops = 0;            // batch-norm, ReLU, squash, softmax (excluded from headline)

    std::uint64_t total_params() const;
    std::uint64_t block_params(const std::string& block) const;
    std::uint64_t routing_macs() const { return routing_macs_per_iteration * routing_iterations; }
    // Headline FLOPs under the report's convention: convolutions only.
    std::uint64_t headline_flops() const;
    std::uint64_t network_flops() const;  // convolutions + votes + routing, same convention
};

ProfileReport count_params(const ModelConfig& config);
ProfileReport count_flops(const ModelConfig& config, const std::string& convention = "macs");

// Reference figures the audit compares against.
inline constexpr std::array<std::uint64_t, 12> kReferenceConvBlockParams = {432,   32,  4608,  64,    9216,  64,
                                                                18432, 128, 36864, 128, 73728, 256};
inline constexpr std::uint64_t kReferenceParamTotal = 734800;
inline constexpr std::uint64_t kReferenceParamTotalRounded = 780000;
inline constexpr double kReferenceConvFlops = 18.34e6;

struct AuditLine {
    std::string label;
    double computed = 0;
    double reference = 0;
    double difference() const { return computed - reference; }
    double percent() const { return reference != 0 ? 100.0 * difference() / reference : 0.0; }
};

struct Audit {
    std::vector<AuditLine> conv_block;  // twelve ConvBlock rows
    std::uint64_t classcaps_params = 0;
    std::vector<AuditLine> totals;  // full and ClassCaps-excluded totals vs both reference figures
    AuditLine conv_flops;           // convolution MACs vs the reference FLOP figure

    bool conv_block_exact() const;
};

Audit audit_against_reference(const ProfileReport& report);

std::string format_table(const ProfileReport& report);
std::string format_csv(const ProfileReport& report);
std::string format_audit(const Audit& audit);

}  // namespace coca::profile
