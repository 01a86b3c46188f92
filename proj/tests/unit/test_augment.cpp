#include <doctest.h>

#include <algorithm>

#include "coca/augment.hpp"

using namespace coca;
using namespace coca::augment;

namespace {

std::vector<float> random_image(std::uint64_t seed) {
    Rng rng = make_rng(seed, {1});
    std::vector<float> img(3 * 32 * 32);
    for (auto& v : img) v = static_cast<float>(uniform01(rng));
    return img;
}

std::vector<float> mirrored(const std::vector<float>& img) {
    std::vector<float> out(img.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) out[(c * 32 + y) * 32 + x] = img[(c * 32 + y) * 32 + 31 - x];
    return out;
}

}  // namespace

TEST_CASE("identity configuration returns the input for both views") {
    const auto img = random_image(1);
    auto cfg = AugmentConfig::identity();
    CHECK(cfg.crop_scale == std::pair<double, double>{1.0, 1.0});
    Rng rng(5);
    const auto [a, b] = two_views(img, cfg, rng);
    CHECK(a == img);
    CHECK(b == img);
}

TEST_CASE("same rng state gives bitwise identical pairs") {
    const auto img = random_image(2);
    AugmentConfig cfg;
    Rng r1(77), r2(77);
    const auto p1 = two_views(img, cfg, r1);
    const auto p2 = two_views(img, cfg, r2);
    CHECK(p1.first == p2.first);
    CHECK(p1.second == p2.second);
    CHECK(p1.first != p1.second);  // two independent draws
}

TEST_CASE("flip probability 1 mirrors and is an involution") {
    const auto img = random_image(3);
    auto cfg = AugmentConfig::identity();
    cfg.flip_probability = 1.0;
    Rng rng(1);
    const auto once = apply_pipeline(img, cfg, rng);
    CHECK(once == mirrored(img));
    const auto twice = apply_pipeline(once, cfg, rng);
    CHECK(twice == img);
}

TEST_CASE("flip rate over 10000 draws is near one half") {
    std::vector<float> img(3 * 32 * 32, 0.0f);
    for (std::size_t c = 0; c < 3; ++c) img[c * 1024] = 1.0f;  // marks the left column of row 0
    auto cfg = AugmentConfig::identity();
    cfg.flip_probability = 0.5;
    Rng rng(2024);
    int flips = 0;
    for (int i = 0; i < 10000; ++i) flips += apply_pipeline(img, cfg, rng)[31] == 1.0f;
    const double rate = flips / 10000.0;
    CHECK(rate >= 0.47);
    CHECK(rate <= 0.53);
}

TEST_CASE("grayscale probability 1 makes the channels equal") {
    const auto img = random_image(4);
    auto cfg = AugmentConfig::identity();
    cfg.grayscale_probability = 1.0;
    Rng rng(3);
    const auto out = apply_pipeline(img, cfg, rng);
    for (std::size_t p = 0; p < 1024; ++p) {
        CHECK(out[p] == out[1024 + p]);
        CHECK(out[p] == out[2048 + p]);
    }
}

TEST_CASE("pixels stay in [0,1] for random configs") {
    Rng meta(99);
    for (int trial = 0; trial < 1000; ++trial) {
        AugmentConfig cfg;
        const double lo = uniform(meta, 0.05, 1.0);
        cfg.crop_scale = {lo, uniform(meta, lo, 1.0)};
        cfg.flip_probability = uniform01(meta);
        cfg.jitter_strengths = {uniform(meta, 0, 1.5), uniform(meta, 0, 1.5), uniform(meta, 0, 1.5),
                                uniform(meta, 0, 0.5)};
        cfg.jitter_probability = uniform01(meta);
        cfg.grayscale_probability = uniform01(meta);
        const auto img = random_image(static_cast<std::uint64_t>(trial));
        Rng rng(static_cast<std::uint64_t>(trial));
        const auto out = apply_pipeline(img, cfg, rng);
        REQUIRE(out.size() == img.size());
        CHECK(std::all_of(out.begin(), out.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
    }
}

TEST_CASE("pipeline order is fixed and has no blur") {
    const std::vector<std::string> expected{"random_resized_crop", "horizontal_flip", "color_jitter", "grayscale"};
    CHECK(pipeline_stages() == expected);
    for (const auto& s : pipeline_stages()) CHECK(s.find("blur") == std::string::npos);
}

TEST_CASE("config validation") {
    AugmentConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.flip_probability = 1.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = AugmentConfig();
    cfg.crop_scale = {0.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.crop_scale = {0.8, 0.5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
