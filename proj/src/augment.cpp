#include "coca/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace coca::augment {

namespace {

constexpr double kMinRatio = 3.0 / 4.0;
constexpr double kMaxRatio = 4.0 / 3.0;

std::size_t side_of(std::size_t values) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(values / 3.0)));
    if (side == 0 || side * side * 3 != values)
        throw std::invalid_argument("augmentation expects a square 3-channel image");
    return side;
}

struct Crop {
    std::size_t top, left, height, width;
};

Crop sample_crop(std::size_t side, const AugmentConfig& cfg, Rng& rng) {
    const double area = static_cast<double>(side * side);
    const double log_lo = std::log(kMinRatio), log_hi = std::log(kMaxRatio);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * uniform(rng, cfg.crop_scale.first, cfg.crop_scale.second);
        const double ratio = std::exp(uniform(rng, log_lo, log_hi));
        const auto w = static_cast<long>(std::lround(std::sqrt(target * ratio)));
        const auto h = static_cast<long>(std::lround(std::sqrt(target / ratio)));
        if (w > 0 && h > 0 && w <= static_cast<long>(side) && h <= static_cast<long>(side)) {
            const std::size_t top = rng() % (side - h + 1);
            const std::size_t left = rng() % (side - w + 1);
            return {top, left, static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
        }
    }
    return {0, 0, side, side};
}

// Bilinear, half-pixel centers. A crop the size of the output maps every sample
// exactly onto a source pixel, so the full-image crop is an exact identity.
void resized_crop(std::span<const float> in, std::span<float> out, std::size_t side, const Crop& crop) {
    const std::size_t plane = side * side;
    const double sy = static_cast<double>(crop.height) / side;
    const double sx = static_cast<double>(crop.width) / side;
    for (std::size_t y = 0; y < side; ++y) {
        double fy = crop.top + (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, static_cast<double>(crop.top), static_cast<double>(crop.top + crop.height - 1));
        const auto y0 = static_cast<std::size_t>(std::floor(fy));
        const std::size_t y1 = std::min(y0 + 1, crop.top + crop.height - 1);
        const double wy = fy - y0;
        for (std::size_t x = 0; x < side; ++x) {
            double fx = crop.left + (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, static_cast<double>(crop.left), static_cast<double>(crop.left + crop.width - 1));
            const auto x0 = static_cast<std::size_t>(std::floor(fx));
            const std::size_t x1 = std::min(x0 + 1, crop.left + crop.width - 1);
            const double wx = fx - x0;
            for (std::size_t c = 0; c < 3; ++c) {
                const float* p = in.data() + c * plane;
                const double top = p[y0 * side + x0] * (1 - wx) + p[y0 * side + x1] * wx;
                const double bot = p[y1 * side + x0] * (1 - wx) + p[y1 * side + x1] * wx;
                out[c * plane + y * side + x] = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double gray_at(std::span<const float> img, std::size_t plane, std::size_t p) {
    return 0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p];
}

void adjust_brightness(std::span<float> img, double factor) {
    for (auto& v : img) v = clamp01(v * factor);
}

void adjust_contrast(std::span<float> img, std::size_t plane, double factor) {
    double mean = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mean += gray_at(img, plane, p);
    mean /= plane;
    for (auto& v : img) v = clamp01((v - mean) * factor + mean);
}

void adjust_saturation(std::span<float> img, std::size_t plane, double factor) {
    for (std::size_t p = 0; p < plane; ++p) {
        const double g = gray_at(img, plane, p);
        for (std::size_t c = 0; c < 3; ++c) {
            auto& v = img[c * plane + p];
            v = clamp01((v - g) * factor + g);
        }
    }
}

void adjust_hue(std::span<float> img, std::size_t plane, double shift) {
    for (std::size_t p = 0; p < plane; ++p) {
        const double r = img[p], g = img[plane + p], b = img[2 * plane + p];
        const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
        const double delta = mx - mn;
        if (delta <= 0.0) continue;  // achromatic: hue undefined, unchanged
        double h;
        if (mx == r) h = std::fmod((g - b) / delta, 6.0);
        else if (mx == g) h = (b - r) / delta + 2.0;
        else h = (r - g) / delta + 4.0;
        h /= 6.0;
        h += shift;
        h -= std::floor(h);
        const double s = delta / mx, v = mx;
        const double hh = h * 6.0;
        const int sector = static_cast<int>(std::floor(hh)) % 6;
        const double f = hh - std::floor(hh);
        const double pp = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
        double rr, gg, bb;
        switch (sector) {
            case 0: rr = v, gg = t, bb = pp; break;
            case 1: rr = q, gg = v, bb = pp; break;
            case 2: rr = pp, gg = v, bb = t; break;
            case 3: rr = pp, gg = q, bb = v; break;
            case 4: rr = t, gg = pp, bb = v; break;
            default: rr = v, gg = pp, bb = q; break;
        }
        img[p] = clamp01(rr);
        img[plane + p] = clamp01(gg);
        img[2 * plane + p] = clamp01(bb);
    }
}

double jitter_factor(double strength, Rng& rng) {
    return uniform(rng, std::max(0.0, 1.0 - strength), 1.0 + strength);
}

}  // namespace

void AugmentConfig::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0,1]");
    };
    prob(flip_probability, "flip_probability");
    prob(jitter_probability, "jitter_probability");
    prob(grayscale_probability, "grayscale_probability");
    const auto [lo, hi] = crop_scale;
    if (!(lo > 0.0 && hi <= 1.0 && lo <= hi)) throw std::invalid_argument("crop_scale must satisfy 0 < low <= high <= 1");
    for (std::size_t i = 0; i < 3; ++i)
        if (!(jitter_strengths[i] >= 0.0)) throw std::invalid_argument("jitter strengths must be non-negative");
    if (!(jitter_strengths[3] >= 0.0 && jitter_strengths[3] <= 0.5))
        throw std::invalid_argument("hue jitter must lie in [0, 0.5]");
}

AugmentConfig AugmentConfig::identity() {
    AugmentConfig c;
    c.crop_scale = {1.0, 1.0};
    c.flip_probability = 0.0;
    c.jitter_probability = 0.0;
    c.grayscale_probability = 0.0;
    return c;
}

const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages = {"random_resized_crop", "horizontal_flip", "color_jitter",
                                                    "grayscale"};
    return stages;
}

void horizontal_flip(std::span<float> image, std::size_t side) {
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < side; ++y) {
            float* row = image.data() + c * side * side + y * side;
            std::reverse(row, row + side);
        }
}

void to_grayscale(std::span<float> image, std::size_t side) {
    const std::size_t plane = side * side;
    for (std::size_t p = 0; p < plane; ++p) {
        const auto g = static_cast<float>(gray_at(image, plane, p));
        image[p] = image[plane + p] = image[2 * plane + p] = g;
    }
}

void apply_pipeline(std::span<const float> image, std::span<float> out, const AugmentConfig& cfg, Rng& rng) {
    const std::size_t side = side_of(image.size());
    if (out.size() != image.size()) throw std::invalid_argument("output buffer size mismatch");
    const std::size_t plane = side * side;

    resized_crop(image, out, side, sample_crop(side, cfg, rng));

    if (uniform01(rng) < cfg.flip_probability) horizontal_flip(out, side);

    if (uniform01(rng) < cfg.jitter_probability) {
        const auto& s = cfg.jitter_strengths;
        const double brightness = jitter_factor(s[0], rng);
        const double contrast = jitter_factor(s[1], rng);
        const double saturation = jitter_factor(s[2], rng);
        const double hue = uniform(rng, -s[3], s[3]);
        adjust_brightness(out, brightness);
        adjust_contrast(out, plane, contrast);
        adjust_saturation(out, plane, saturation);
        if (s[3] > 0.0) adjust_hue(out, plane, hue);
    }

    if (uniform01(rng) < cfg.grayscale_probability) to_grayscale(out, side);
}

std::vector<float> apply_pipeline(std::span<const float> image, const AugmentConfig& cfg, Rng& rng) {
    std::vector<float> out(image.size());
    apply_pipeline(image, out, cfg, rng);
    return out;
}

std::pair<std::vector<float>, std::vector<float>> two_views(std::span<const float> image,
                                                            const AugmentConfig& cfg, Rng& rng) {
    auto first = apply_pipeline(image, cfg, rng);
    auto second = apply_pipeline(image, cfg, rng);
    return {std::move(first), std::move(second)};
}

}  // namespace coca::augment
