#include <doctest.h>

#include <cmath>
#include <numeric>

#include "coca/capsule.hpp"
#include "coca/rng.hpp"
#include "oracles.hpp"

using namespace coca;
using namespace coca::caps;

namespace {

double gauss(Rng& rng) {
    const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
    return std::sqrt(-2 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = scale * gauss(rng);
    return t;
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("squash special values") {
    const Tensor<double> zero({1, 16});
    for (double v : squash(zero).data) CHECK(v == 0.0);

    Tensor<double> unit({1, 4}, std::vector<double>{0.5, 0.5, 0.5, 0.5});
    const auto v = squash(unit);
    CHECK(std::sqrt(dot(v.ptr(), v.ptr(), 4)) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor<double> big({1, 2}, std::vector<double>{600.0, 800.0});
    const auto w = squash(big);
    CHECK(std::abs(std::sqrt(dot(w.ptr(), w.ptr(), 2)) - 0.999999) < 1e-6);
}

TEST_CASE("squash range, direction and identity with the original form") {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t dim = 1 + trial % 16;
        const double scale = std::pow(10.0, uniform(rng, -3, 3));
        const auto s = random_tensor({dim}, rng, scale);
        const auto v = squash(s);
        const double ns = std::sqrt(dot(s.ptr(), s.ptr(), dim)), nv = std::sqrt(dot(v.ptr(), v.ptr(), dim));
        CHECK(nv >= 0.0);
        CHECK(nv < 1.0);
        CHECK(std::abs(nv - ns * ns / (1 + ns * ns)) < 1e-12);
        CHECK(dot(v.ptr(), s.ptr(), dim) > 0.0);
        const auto ref = oracle::squash_original(s.data);
        for (std::size_t i = 0; i < dim; ++i) CHECK(std::abs(v[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("squash backward matches central differences") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = random_tensor({6}, rng, uniform(rng, 0.1, 3));
        const auto g = random_tensor({6}, rng);
        std::vector<double> gs(6);
        squash_backward(s.ptr(), g.ptr(), gs.data(), 6);
        for (std::size_t i = 0; i < 6; ++i) {
            auto sp = s, sm = s;
            sp[i] += 1e-6;
            sm[i] -= 1e-6;
            const auto vp = squash(sp), vm = squash(sm);
            const double num = (dot(vp.ptr(), g.ptr(), 6) - dot(vm.ptr(), g.ptr(), 6)) / 2e-6;
            CHECK(gs[i] == doctest::Approx(num).epsilon(1e-6));
        }
    }
    // at the origin the Jacobian is zero
    std::vector<double> zero(4, 0.0), g{1, 2, 3, 4}, out(4, 7.0);
    squash_backward(zero.data(), g.data(), out.data(), 4);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("vote prediction") {
    Rng rng(13);
    SUBCASE("identity blocks copy u to every parent") {
        const std::size_t M = 5, N = 3, D = 4;
        const auto u = random_tensor({M, D}, rng);
        Tensor<double> W({N, M, D, D});
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t i = 0; i < D; ++i) W[((n * M + m) * D + i) * D + i] = 1.0;
        const auto v = predict_votes(u, W);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < D; ++o) CHECK(v[(m * N + n) * D + o] == u[m * D + o]);
    }
    SUBCASE("zero poses give zero votes") {
        const Tensor<double> u({6, 3});
        const auto W = random_tensor({2, 6, 3, 5}, rng);
        for (double x : predict_votes(u, W).data) CHECK(x == 0.0);
    }
    SUBCASE("random case matches the loop oracle") {
        const std::size_t M = 7, N = 4, I = 5, O = 3;
        const auto u = random_tensor({M, I}, rng);
        const auto W = random_tensor({N, M, I, O}, rng);
        const auto v = predict_votes(u, W);
        const auto ref = oracle::votes(u.data, W.data, M, N, I, O);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(v[i] - ref[i]) < 1e-10);
    }
    SUBCASE("dimension mismatch rejected") {
        CHECK_THROWS_AS(predict_votes(random_tensor({4, 3}, rng), random_tensor({2, 4, 5, 3}, rng)),
                        std::invalid_argument);
    }
    SUBCASE("backward matches finite differences") {
        const VoteDims d{3, 2, 4, 3};
        const auto u = random_tensor({3, 4}, rng);
        const auto W = random_tensor({2, 3, 4, 3}, rng);
        const auto g = random_tensor({3, 2, 3}, rng);
        std::vector<double> gu(u.size()), gW(W.size(), 0.0);
        predict_votes_backward(u.ptr(), W.ptr(), g.ptr(), gu.data(), gW.data(), d);
        auto f = [&](const Tensor<double>& uu, const Tensor<double>& WW) {
            const auto v = predict_votes(uu, WW);
            return dot(v.ptr(), g.ptr(), v.size());
        };
        for (std::size_t i = 0; i < u.size(); ++i) {
            auto up = u, um = u;
            up[i] += 1e-5, um[i] -= 1e-5;
            CHECK(gu[i] == doctest::Approx((f(up, W) - f(um, W)) / 2e-5).epsilon(1e-8));
        }
        for (std::size_t i = 0; i < W.size(); ++i) {
            auto Wp = W, Wm = W;
            Wp[i] += 1e-5, Wm[i] -= 1e-5;
            CHECK(gW[i] == doctest::Approx((f(u, Wp) - f(u, Wm)) / 2e-5).epsilon(1e-8));
        }
    }
}

TEST_CASE("routing couplings stay on the simplex after every iteration") {
    Rng rng(14);
    const auto votes = random_tensor({20, 10, 8}, rng, 0.5);
    const auto r = dynamic_routing(votes, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        const auto c = r.couplings_at(t);
        for (std::size_t m = 0; m < 20; ++m) {
            double sum = 0;
            for (std::size_t n = 0; n < 10; ++n) {
                CHECK(c[m * 10 + n] >= 0.0);
                sum += c[m * 10 + n];
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("one iteration gives uniform couplings") {
    Rng rng(15);
    const auto r = dynamic_routing(random_tensor({12, 10, 4}, rng), 1);
    for (double c : r.state.couplings.data) CHECK(c == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("parent-identical votes keep couplings uniform") {
    Rng rng(16);
    const std::size_t M = 6, N = 5, D = 4;
    const auto base = random_tensor({M, D}, rng);
    Tensor<double> votes({M, N, D});
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < D; ++o) votes[(m * N + n) * D + o] = base[m * D + o];
    const auto r = dynamic_routing(votes, 4);
    for (std::size_t t = 0; t < 4; ++t)
        for (double c : r.couplings_at(t).data) CHECK(std::abs(c - 0.2) < 1e-12);
}

TEST_CASE("parent permutation permutes outputs and couplings") {
    Rng rng(17);
    const std::size_t M = 9, N = 5, D = 3;
    const auto votes = random_tensor({M, N, D}, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor<double> pv({M, N, D});
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t o = 0; o < D; ++o) pv[(m * N + n) * D + o] = votes[(m * N + perm[n]) * D + o];
    const auto a = dynamic_routing(votes, 3), b = dynamic_routing(pv, 3);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < D; ++o) CHECK(std::abs(b.output[n * D + o] - a.output[perm[n] * D + o]) < 1e-12);
        for (std::size_t m = 0; m < M; ++m) {
            CHECK(std::abs(b.state.couplings[m * N + n] - a.state.couplings[m * N + perm[n]]) < 1e-12);
            CHECK(std::abs(b.state.logits[m * N + n] - a.state.logits[m * N + perm[n]]) < 1e-12);
        }
    }
}

TEST_CASE("toy routing matches the straight-line oracle") {
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        const auto votes = random_tensor({4, 3, 5}, rng, 0.8);
        const auto r = dynamic_routing(votes, 3);
        const auto ref = oracle::routing_4x3(votes.data, 5, 3);
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t o = 0; o < 5; ++o) CHECK(std::abs(r.output[n * 5 + o] - ref.y[n][o]) < 1e-10);
        for (std::size_t m = 0; m < 4; ++m)
            for (std::size_t n = 0; n < 3; ++n) {
                CHECK(std::abs(r.state.couplings[m * 3 + n] - ref.c[m][n]) < 1e-10);
                CHECK(std::abs(r.state.logits[m * 3 + n] - ref.b[m][n]) < 1e-10);
            }
    }
}

TEST_CASE("zero iterations rejected") {
    CHECK_THROWS_AS(dynamic_routing(Tensor<double>({2, 2, 2}), 0), std::invalid_argument);
}

TEST_CASE("routing backward matches finite differences through all iterations") {
    Rng rng(19);
    const auto votes = random_tensor({5, 3, 4}, rng, 0.7);
    const auto g = random_tensor({3, 4}, rng);
    const auto r = dynamic_routing(votes, 3);
    const auto gv = dynamic_routing_backward(votes, r, g);
    auto f = [&](const Tensor<double>& v) {
        const auto out = dynamic_routing(v, 3).output;
        return dot(out.ptr(), g.ptr(), out.size());
    };
    for (std::size_t i = 0; i < votes.size(); ++i) {
        auto p = votes, m = votes;
        p[i] += 1e-6, m[i] -= 1e-6;
        const double num = (f(p) - f(m)) / 2e-6;
        CHECK(std::abs(gv[i] - num) <= 1e-6 * std::max(1.0, std::abs(num)));
    }
}
