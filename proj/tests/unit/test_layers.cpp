#include <doctest.h>

#include <cmath>

#include "coca/layers.hpp"
#include "coca/rng.hpp"
#include "oracles.hpp"

using namespace coca;
using namespace coca::nn;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(rng, -1, 1);
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d forward matches the direct loop") {
    Rng rng(1);
    for (std::size_t stride : {1, 2}) {
        const ConvGeometry g{3, 5, 7, 3, stride, 1};
        const std::size_t B = 2;
        const auto x = random_vec(B * g.in_volume(), rng);
        const auto w = random_vec(g.out_channels * g.patch(), rng);
        std::vector<double> y(B * g.out_volume()), scratch;
        conv2d_forward(x.data(), B, w.data(), static_cast<const double*>(nullptr), y.data(), g, scratch);
        const auto ref = oracle::conv2d(x, B, 3, 7, w, 5, 3, stride, 1);
        REQUIRE(ref.size() == y.size());
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("conv2d output sizes follow the stride pattern") {
    std::size_t size = 32;
    const std::size_t strides[] = {1, 2, 1, 2, 1, 2};
    const std::size_t expect[] = {32, 16, 16, 8, 8, 4};
    for (int l = 0; l < 6; ++l) {
        ConvGeometry g{1, 1, size, 3, strides[l], 1};
        size = g.out_size();
        CHECK(size == expect[l]);
    }
}

TEST_CASE("conv2d backward matches finite differences") {
    Rng rng(2);
    const ConvGeometry g{2, 3, 5, 3, 2, 1};
    const std::size_t B = 2;
    auto x = random_vec(B * g.in_volume(), rng);
    auto w = random_vec(g.out_channels * g.patch(), rng);
    auto bias = random_vec(g.out_channels, rng);
    const auto gy = random_vec(B * g.out_volume(), rng);
    std::vector<double> scratch;
    auto f = [&]() {
        std::vector<double> y(B * g.out_volume());
        conv2d_forward(x.data(), B, w.data(), bias.data(), y.data(), g, scratch);
        return dot(y, gy);
    };
    std::vector<double> gx(x.size()), gw(w.size(), 0.0), gb(bias.size(), 0.0);
    conv2d_backward(x.data(), B, w.data(), gy.data(), gx.data(), gw.data(), gb.data(), g, scratch);
    auto check = [&](std::vector<double>& v, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double keep = v[i];
            v[i] = keep + 1e-6;
            const double up = f();
            v[i] = keep - 1e-6;
            const double down = f();
            v[i] = keep;
            CHECK(grad[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-7));
        }
    };
    check(x, gx);
    check(w, gw);
    check(bias, gb);
}

TEST_CASE("batch norm train forward matches the oracle and moves running stats") {
    Rng rng(3);
    const std::size_t B = 4, C = 3, S = 5;
    const auto x = random_vec(B * C * S, rng);
    const auto gamma = random_vec(C, rng), beta = random_vec(C, rng);
    std::vector<double> rm(C, 0.0), rv(C, 1.0), xhat(x.size()), inv(C), y(x.size());
    BatchNormOptions opt;
    batchnorm_train_forward(x.data(), B, C, S, gamma.data(), beta.data(), rm.data(), rv.data(), true, opt,
                            xhat.data(), inv.data(), y.data());
    const auto ref = oracle::batchnorm(x, B, C, S, gamma, beta, opt.eps);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) mean += x[(b * C + c) * S + s];
        mean /= B * S;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) var += std::pow(x[(b * C + c) * S + s] - mean, 2);
        var /= B * S - 1;  // running variance tracks the unbiased estimate
        CHECK(rm[c] == doctest::Approx(0.1 * mean).epsilon(1e-12));
        CHECK(rv[c] == doctest::Approx(0.9 + 0.1 * var).epsilon(1e-12));
    }
    SUBCASE("update flag off leaves running stats alone") {
        std::vector<double> rm2(C, 0.25), rv2(C, 2.0);
        batchnorm_train_forward(x.data(), B, C, S, gamma.data(), beta.data(), rm2.data(), rv2.data(), false, opt,
                                xhat.data(), inv.data(), y.data());
        for (std::size_t c = 0; c < C; ++c) {
            CHECK(rm2[c] == 0.25);
            CHECK(rv2[c] == 2.0);
        }
    }
    SUBCASE("batch of one rejected") {
        CHECK_THROWS_AS(batchnorm_train_forward(x.data(), 1, C, 1, gamma.data(), beta.data(), rm.data(), rv.data(),
                                                true, opt, xhat.data(), inv.data(), y.data()),
                        std::invalid_argument);
    }
}

TEST_CASE("batch norm backward matches finite differences in both modes") {
    Rng rng(4);
    const std::size_t B = 3, C = 2, S = 4;
    auto x = random_vec(B * C * S, rng);
    auto gamma = random_vec(C, rng), beta = random_vec(C, rng);
    const auto gy = random_vec(x.size(), rng);
    const std::vector<double> rm{0.1, -0.2}, rv{0.8, 1.3};
    BatchNormOptions opt;
    for (bool train : {true, false}) {
        auto f = [&]() {
            std::vector<double> xhat(x.size()), inv(C), y(x.size()), m = rm, v = rv;
            if (train)
                batchnorm_train_forward(x.data(), B, C, S, gamma.data(), beta.data(), m.data(), v.data(), false, opt,
                                        xhat.data(), inv.data(), y.data());
            else
                batchnorm_eval_forward(x.data(), B, C, S, gamma.data(), beta.data(), rm.data(), rv.data(), opt,
                                       xhat.data(), inv.data(), y.data());
            return std::make_pair(dot(y, gy), std::make_pair(xhat, inv));
        };
        const auto [_, cache] = f();
        std::vector<double> gx(x.size()), gg(C, 0.0), gb(C, 0.0);
        batchnorm_backward(gy.data(), cache.first.data(), cache.second.data(), B, C, S, gamma.data(), train, gx.data(),
                           gg.data(), gb.data());
        auto check = [&](std::vector<double>& v, const std::vector<double>& grad) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double keep = v[i];
                v[i] = keep + 1e-6;
                const double up = f().first;
                v[i] = keep - 1e-6;
                const double down = f().first;
                v[i] = keep;
                CHECK(grad[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
            }
        };
        check(x, gx);
        check(gamma, gg);
        check(beta, gb);
    }
}
