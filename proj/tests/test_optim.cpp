// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include <catch_amalgamated.hpp>

#include <Eigen/Eigenvalues>

#include <random>

#include "otafl/optim.hpp"
#include "test_support.hpp"

using namespace otafl;
using Catch::Approx;

namespace {

double direction_match(const CVec& a, const CVec& b) { return std::abs(a.dot(b)) / (a.norm() * b.norm()); }

RoundContext unit_context()
{
    ChannelState ch;
    ch.h = {CVec::Ones(1)};
    return make_context(ch, NoiseParams{1, 1}, PowerBudget{1.0, {1.0}}, 2.0, {2.0}, 10.0, 0.96, 2);
}

RVec& block_of(PhiPoint& pt, Block b)
{
    switch (b) {
    case Block::dl: return pt.x_dl;
    case Block::ul: return pt.x_ul;
    default: return pt.p;
    }
}

} // namespace

TEST_CASE("block gradients match finite differences", "[optim][gradient]")
{
    std::mt19937_64 eng(101);
    for (int rep = 0; rep < 100; ++rep) {
        const auto ctx = testing::random_context(eng, 1 + rep % 4, 1 + rep % 5, 0.5, 2.0);
        const PhiPoint pt = testing::random_point(eng, ctx);
        for (Block b : {Block::dl, Block::ul, Block::p}) {
            PhiPoint work = pt;
            auto f = [&](const RVec& v) {
                block_of(work, b) = v;
                return phi_at(work, ctx);
            };
            const RVec& x = block_of(const_cast<PhiPoint&>(pt), b);
            const RVec fd = testing::fd_gradient(f, x, 1e-6 * std::max(1.0, x.norm()));
            const RVec g = grad_phi(b, pt, ctx);
            INFO("block " << block_name(b) << " rep " << rep);
            CHECK(testing::rel_err(g, fd) < 1e-5);
        }
    }
}

TEST_CASE("gradient vanishes without noise", "[optim]")
{
    std::mt19937_64 eng(3);
    const auto ctx = testing::random_context(eng, 3, 4, 0.0, 0.0);
    const auto pt = testing::random_point(eng, ctx);
    for (Block b : {Block::dl, Block::ul, Block::p}) CHECK(grad_phi(b, pt, ctx).norm() == 0.0);
}

TEST_CASE("unit instance gradient matches the symbolic derivative", "[optim]")
{
    // K = N = 1: Phi = c sigma_d (w + 1) / g + c sigma_u / (2 p u) = 12.5 / g + 5 / (p u)
    const auto ctx = unit_context();
    PhiPoint pt{RVec::Unit(2, 0), RVec::Unit(2, 0), RVec::Ones(1)};
    CHECK(phi_at(pt, ctx) == Approx(17.5).epsilon(1e-14));
    const RVec gdl = grad_phi(Block::dl, pt, ctx);
    const RVec gul = grad_phi(Block::ul, pt, ctx);
    const RVec gp = grad_phi(Block::p, pt, ctx);
    CHECK(gdl[0] == Approx(-25.0).epsilon(1e-13));
    CHECK(gdl[1] == 0.0);
    CHECK(gul[0] == Approx(-10.0).epsilon(1e-13));
    CHECK(gul[1] == 0.0);
    CHECK(gp[0] == Approx(-5.0).epsilon(1e-13));
}

TEST_CASE("closed-form projections", "[optim]")
{
    ChannelState ch;
    ch.h = {CVec::Ones(1)};
    // dl radius^2 = D P / ||theta||^2 = 2 * 0.5 / 1 = 1; p cap = 2 * 1 / 1 = 2
    const auto ctx = make_context(ch, NoiseParams{1, 1}, PowerBudget{0.5, {1.0}}, 1.0, {1.0}, 1.0, 0.96, 2);
    RVec x(2);
    x << 2.0, 0.0;
    CHECK(project_dl(x, ctx).norm() == Approx(1.0).epsilon(1e-15));
    RVec inside(2);
    inside << 0.3, 0.4;
    CHECK(project_dl(inside, ctx) == inside);
    RVec u(2);
    u << 3.0, 4.0;
    const RVec pu = project_ul(u);
    CHECK(pu[0] == Approx(0.6).epsilon(1e-15));
    CHECK(pu[1] == Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(project_ul(RVec::Zero(2)), DomainError);
    RVec p(1);
    p << 5.0;
    CHECK(project_p(p, ctx)[0] == 2.0);
    p << 1.0;
    CHECK(project_p(p, ctx)[0] == 1.0);
    p << -1.0;
    CHECK(project_p(p, ctx)[0] == 0.0);
}

TEST_CASE("projections are idempotent", "[optim][property]")
{
    std::mt19937_64 eng(4);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int rep = 0; rep < 200; ++rep) {
        const auto ctx = testing::random_context(eng, 3, 3);
        RVec x(6), p(3);
        for (auto& v : x) v = nd(eng);
        for (auto& v : p) v = nd(eng);
        const RVec d1 = project_dl(x, ctx);
        CHECK((project_dl(d1, ctx) - d1).norm() <= 1e-12 * d1.norm());
        CHECK(d1.squaredNorm() <= ctx.dl_radius2() * (1 + 1e-12));
        const RVec u1 = project_ul(x);
        CHECK(project_ul(u1) == u1);
        const RVec p1 = project_p(p, ctx);
        CHECK(project_p(p1, ctx) == p1);
    }
}

TEST_CASE("PGD reference problems", "[optim]")
{
    const PgdConfig cfg;
    SECTION("projection of the unconstrained optimum onto the ball")
    {
        RVec c(2);
        c << 2.0, 0.0;
        auto f = [&](const RVec& x) { return (x - c).squaredNorm(); };
        auto g = [&](const RVec& x) { return RVec(2.0 * (x - c)); };
        auto pr = [](const RVec& x) { return x.norm() <= 1.0 ? x : RVec(x / x.norm()); };
        const auto r = pgd_minimize(f, g, pr, RVec::Zero(2), cfg);
        CHECK(std::abs(r.x[0] - 1.0) < 1e-6);
        CHECK(std::abs(r.x[1]) < 1e-6);
    }
    SECTION("Rayleigh quotient on the unit sphere")
    {
        Eigen::Matrix2d A;
        A << 1.0, 0.0, 0.0, 3.0;
        auto f = [&](const RVec& x) { return x.dot(A * x); };
        auto g = [&](const RVec& x) { return RVec(2.0 * A * x); };
        auto pr = [](const RVec& x) { return project_ul(x); };
        RVec x0(2);
        x0 << 0.6, 0.8;
        const auto r = pgd_minimize(f, g, pr, x0, cfg);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
        CHECK(std::abs(r.value - es.eigenvalues()[0]) < 1e-6);
        CHECK(std::abs(std::abs(r.x[0]) - 1.0) < 1e-6);
        CHECK(r.value <= f(x0));
        for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
    }
    SECTION("already optimal")
    {
        RVec c(2);
        c << 0.3, -0.2;
        auto f = [&](const RVec& x) { return (x - c).squaredNorm(); };
        auto g = [&](const RVec& x) { return RVec(2.0 * (x - c)); };
        auto pr = [](const RVec& x) { return x; };
        const auto r = pgd_minimize(f, g, pr, c, cfg);
        CHECK(r.iterations <= 2);
        CHECK(r.x == c);
    }
}

TEST_CASE("JDU-BF single device matches the closed-form optimum", "[optim]")
{
    // K = 1: Phi = c sigma_d (w + 1)/g + c sigma_u/(2 p u), minimised by aligning both
    // beamformers with h at full power: g = r2 ||h||^2, u = ||h||^2, p = cap.
    std::mt19937_64 eng(5);
    for (int rep = 0; rep < 10; ++rep) {
        const auto ctx = testing::random_context(eng, 2, 1, 0.3, 0.8);
        const double h2 = ctx.ch.h[0].squaredNorm();
        const auto pc = ctx.phi_constants();
        const double expect = pc.scale() * pc.noise.sigma2_dl * (pc.dl_weight() + 1.0) / (ctx.dl_radius2() * h2) +
                              pc.scale() * pc.noise.sigma2_ul / (2.0 * ctx.p_cap(0) * h2);
        const auto r = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
        CHECK(std::abs(r.phi - expect) / expect < 1e-4);
        CHECK(direction_match(r.sol.w_dl, ctx.ch.h[0]) == Approx(1.0).epsilon(1e-6));
        CHECK(direction_match(r.sol.w_ul, ctx.ch.h[0]) == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("JDU-BF beats the baselines on its own objective", "[optim]")
{
    std::mt19937_64 eng(6);
    for (int rep = 0; rep < 20; ++rep) {
        const auto ctx = testing::random_context(eng, 2, 2, 0.5, 1.0);
        const auto jdu = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
        const auto sdu = sdu_bf_round(ctx, PgdConfig{});
        const auto rbf = random_beamforming(ctx, RngSpec{static_cast<std::uint64_t>(rep)});
        const double phi_sdu = h_of(sdu, ctx.ch, ctx.noise, ctx.L, ctx.Q, ctx.D);
        const double phi_rbf = h_of(rbf, ctx.ch, ctx.noise, ctx.L, ctx.Q, ctx.D);
        CHECK(jdu.phi <= phi_sdu * (1 + 1e-9));
        CHECK(jdu.phi <= phi_rbf * (1 + 1e-9));
        CHECK(jdu.phi == Approx(h_of(jdu.sol, ctx.ch, ctx.noise, ctx.L, ctx.Q, ctx.D)).epsilon(1e-10));
    }
}

TEST_CASE("random restarts never lose to the single start and are reproducible", "[optim][property]")
{
    std::mt19937_64 eng(61);
    for (int rep = 0; rep < 20; ++rep) {
        const auto ctx = testing::random_context(eng, 3, 3, 0.4, 0.9);
        AoConfig single;
        single.restarts = 0;
        AoConfig multi;
        multi.restarts = 6;
        const auto a = jdu_bf_round(ctx, std::nullopt, single, PgdConfig{});
        const auto b = jdu_bf_round(ctx, std::nullopt, multi, PgdConfig{}, {}, RngSpec{9});
        const auto c = jdu_bf_round(ctx, std::nullopt, multi, PgdConfig{}, {}, RngSpec{9});
        CHECK(b.phi <= a.phi);
        CHECK(b.phi == c.phi);
        CHECK(b.sol.w_dl == c.sol.w_dl);
    }
}

TEST_CASE("JDU-BF exits immediately without noise", "[optim]")
{
    std::mt19937_64 eng(7);
    const auto ctx = testing::random_context(eng, 3, 3, 0.0, 0.0);
    const auto r = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
    CHECK(r.phi == 0.0);
    CHECK(r.outer_iterations == 1);
    CHECK(r.trace.size() == 1);
}

TEST_CASE("JDU-BF trace is monotone and the result feasible", "[optim][property]")
{
    std::mt19937_64 eng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const auto ctx = testing::random_context(eng, 4, 5, 0.2, 1.5);
        int calls = 0;
        TraceSink sink = [&](int, Block, double, double) { ++calls; };
        const auto r = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{}, sink);
        CHECK(calls == static_cast<int>(r.trace.size()) - 1);
        for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-12);
        CHECK(r.sol.w_ul.norm() == Approx(1.0).epsilon(1e-9));
        CHECK(r.sol.w_dl.squaredNorm() <= ctx.dl_radius2() * (1 + 1e-9));
        for (std::size_t k = 0; k < ctx.K(); ++k) {
            CHECK(r.sol.p[k] >= 0.0);
            CHECK(r.sol.p[k] <= ctx.p_cap(k));
        }
    }
}

TEST_CASE("uplink refinement keeps the downlink and does not increase Phi", "[optim]")
{
    std::mt19937_64 eng(9);
    auto ctx = testing::random_context(eng, 3, 4, 0.2, 1.5);
    const auto first = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
    for (auto& n : ctx.norm_local) n *= 1.7;
    const auto ref = jdu_uplink_refine(ctx, first.sol, AoConfig{}, PgdConfig{});
    CHECK(ref.sol.w_dl == first.sol.w_dl);
    for (std::size_t k = 0; k < ctx.K(); ++k) CHECK(ref.sol.p[k] <= ctx.p_cap(k));
    for (std::size_t i = 1; i < ref.trace.size(); ++i) CHECK(ref.trace[i] <= ref.trace[i - 1]);
}

TEST_CASE("argmin directions are invariant to a common channel scale", "[optim][property]")
{
    std::mt19937_64 eng(10);
    for (int rep = 0; rep < 10; ++rep) {
        const auto ctx = testing::random_context(eng, 3, 3, 0.4, 1.0);
        ChannelState scaled = ctx.ch;
        for (auto& h : scaled.h) h *= 7.5;
        const auto ctx2 = make_context(scaled, ctx.noise, ctx.budget, ctx.norm_theta, ctx.norm_local, ctx.L, ctx.Q, ctx.D);
        const auto a = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
        const auto b = jdu_bf_round(ctx2, std::nullopt, AoConfig{}, PgdConfig{});
        CHECK(b.phi == Approx(a.phi / (7.5 * 7.5)).epsilon(1e-4));
        CHECK(direction_match(a.sol.w_dl, b.sol.w_dl) > 1.0 - 1e-4);
        CHECK(direction_match(a.sol.w_ul, b.sol.w_ul) > 1.0 - 1e-4);
    }
}

TEST_CASE("SDU downlink max-min", "[optim]")
{
    SECTION("single device")
    {
        std::mt19937_64 eng(11);
        const auto ctx = testing::random_context(eng, 4, 1);
        const CVec w = sdu_downlink(ctx, PgdConfig{});
        CHECK(direction_match(w, ctx.ch.h[0]) == Approx(1.0).epsilon(1e-8));
        CHECK(w.squaredNorm() == Approx(ctx.dl_radius2()).epsilon(1e-12));
    }
    SECTION("orthonormal channels share the power equally")
    {
        ChannelState ch;
        CVec h1(2), h2(2);
        h1 << 1.0, 0.0;
        h2 << 0.0, std::complex<double>(0.0, 1.0);
        ch.h = {h1, h2};
        const auto ctx = make_context(ch, NoiseParams{1, 1}, PowerBudget{1.0, {1.0, 1.0}}, 4.0, {1.0, 1.0}, 1, 0.96, 2);
        const CVec w = sdu_downlink(ctx, PgdConfig{});
        const double target = ctx.dl_radius2() / 2.0;
        CHECK(std::norm(h1.dot(w)) == Approx(target).epsilon(0.01));
        CHECK(std::norm(h2.dot(w)) == Approx(target).epsilon(0.01));
    }
    SECTION("duplicate channels")
    {
        std::mt19937_64 eng(12);
        const auto one = testing::random_context(eng, 3, 1);
        ChannelState ch = one.ch;
        ch.h.push_back(ch.h[0]);
        const auto two = make_context(ch, one.noise, PowerBudget{1.0, {1.0, 1.0}}, one.norm_theta, {1.0, 1.0}, 1, 0.96, 2);
        const CVec w = sdu_downlink(two, PgdConfig{});
        CHECK(direction_match(w, ch.h[0]) == Approx(1.0).epsilon(1e-8));
    }
    SECTION("N = 2 grid oracle")
    {
        std::mt19937_64 eng(13);
        for (int rep = 0; rep < 5; ++rep) {
            const auto ctx = testing::random_context(eng, 2, 3);
            const CVec w = sdu_downlink(ctx, PgdConfig{});
            auto min_gain = [&](const CVec& v) {
                double m = std::numeric_limits<double>::infinity();
                for (const auto& h : ctx.ch.h) m = std::min(m, std::norm(h.dot(v)));
                return m;
            };
            double grid = 0.0;
            const double r = std::sqrt(ctx.dl_radius2());
            const int na = 400, np = 400;
            for (int i = 0; i <= na; ++i)
                for (int j = 0; j < np; ++j) {
                    const double a = 0.5 * std::numbers::pi * i / na;
                    const double ph = 2.0 * std::numbers::pi * j / np;
                    CVec v(2);
                    v << r * std::cos(a), r * std::sin(a) * std::polar(1.0, ph);
                    grid = std::max(grid, min_gain(v));
                }
            CHECK(min_gain(w) >= grid * (1.0 - 0.01));
        }
    }
}

TEST_CASE("SDU uplink", "[optim]")
{
    SECTION("single device matched filter")
    {
        std::mt19937_64 eng(14);
        const auto ctx = testing::random_context(eng, 4, 1);
        const auto sol = sdu_uplink(ctx);
        CHECK(direction_match(sol.w_ul, ctx.ch.h[0]) == Approx(1.0).epsilon(1e-10));
        CHECK(sol.w_ul.norm() == Approx(1.0).epsilon(1e-12));
        CHECK(sol.p[0] == ctx.p_cap(0));
    }
    SECTION("orthogonal channels pick the stronger one")
    {
        ChannelState ch;
        CVec h1(2), h2(2);
        h1 << 2.0, 0.0;
        h2 << 0.0, 1.0;
        ch.h = {h1, h2};
        const auto ctx = make_context(ch, NoiseParams{1, 1}, PowerBudget{1.0, {1.0, 1.0}}, 1.0, {1.0, 1.0}, 1, 0.96, 2);
        CHECK(direction_match(sdu_uplink(ctx).w_ul, h1) == Approx(1.0).epsilon(1e-10));
    }
    SECTION("eigendecomposition oracle")
    {
        std::mt19937_64 eng(15);
        for (int rep = 0; rep < 20; ++rep) {
            const auto ctx = testing::random_context(eng, 6, 4);
            const auto sol = sdu_uplink(ctx);
            const Eigen::MatrixXcd M = weighted_gram(ctx.ch, sol.p);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(M);
            const double top = es.eigenvalues().maxCoeff();
            const double got = sol.w_ul.dot(M * sol.w_ul).real();
            CHECK(std::abs(got - top) / top < 1e-8);
        }
    }
}

TEST_CASE("random beamforming", "[optim]")
{
    std::mt19937_64 eng(16);
    auto ctx = testing::random_context(eng, 3, 2);
    CVec mean = CVec::Zero(3);
    const int draws = 10000;
    for (int t = 0; t < draws; ++t) {
        ctx.ch.round_index = static_cast<std::size_t>(t);
        const auto sol = random_beamforming(ctx, RngSpec{99});
        if (t < 50) {
            CHECK(sol.w_ul.norm() == Approx(1.0).epsilon(1e-14));
            CHECK(sol.w_dl.squaredNorm() == Approx(ctx.dl_radius2()).epsilon(1e-12));
        }
        mean += sol.w_ul;
    }
    mean /= draws;
    // each coordinate of a uniform unit vector in C^3 has E|v_i|^2 = 1/3
    CHECK(mean.norm() < 3.0 * std::sqrt(1.0 / draws));
}
