#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coca/rng.hpp"

namespace coca::augment {

// Stochastic view generator for the contrastive positive pair. Operates in [0,1]
// pixel space on channel-planar RGB images; standardization happens afterwards.
struct AugmentConfig {
    std::pair<double, double> crop_scale{0.2, 1.0};
    double flip_probability = 0.5;
    // brightness, contrast, saturation, hue
    std::array<double, 4> jitter_strengths{0.4, 0.4, 0.4, 0.1};
    double jitter_probability = 0.8;
    double grayscale_probability = 0.2;
    std::uint64_t seed = 0;

    void validate() const;

    // All probabilities 0 and a full-image crop: every view equals its input.
    static AugmentConfig identity();
};

// Stage names in application order. There is no blur stage.
const std::vector<std::string>& pipeline_stages();

void apply_pipeline(std::span<const float> image, std::span<float> out, const AugmentConfig& config,
                    Rng& rng);
std::vector<float> apply_pipeline(std::span<const float> image, const AugmentConfig& config, Rng& rng);

std::pair<std::vector<float>, std::vector<float>> two_views(std::span<const float> image,
                                                            const AugmentConfig& config, Rng& rng);

// Individual stages, exposed for testing.
void horizontal_flip(std::span<float> image, std::size_t side);
void to_grayscale(std::span<float> image, std::size_t side);

}  // namespace coca::augment
