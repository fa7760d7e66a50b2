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

#pragma once

// Quick installation checks run by `otafl selftest`.

#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "otafl/airlink.hpp"
#include "otafl/bound.hpp"
#include "otafl/optim.hpp"
#include "otafl/rng.hpp"

namespace otafl {

struct SelftestCase {
    std::string name;
    std::function<bool()> run;
};

namespace detail {

inline RoundContext selftest_context(std::mt19937_64& eng, Eigen::Index N, std::size_t K)
{
    ChannelState ch;
    std::uniform_real_distribution<double> gain(0.3, 2.0);
    for (std::size_t k = 0; k < K; ++k) {
        CVec h(N);
        const double a = gain(eng);
        for (Eigen::Index n = 0; n < N; ++n) h[n] = a * complex_normal(eng);
        ch.h.push_back(h);
    }
    std::vector<double> norms(K);
    for (auto& n : norms) n = 2.0 * gain(eng);
    return make_context(ch, NoiseParams{0.5, 0.8}, PowerBudget{1.0, std::vector<double>(K, 1.0)}, 2.0, norms,
                        10.0, 0.96, 2);
}

inline bool gradients_match()
{
    std::mt19937_64 eng(3);
    const auto ctx = selftest_context(eng, 3, 4);
    PhiPoint pt = default_initial_point(ctx);
    for (Block b : {Block::dl, Block::ul, Block::p}) {
        const RVec g = grad_phi(b, pt, ctx);
        RVec& x = b == Block::dl ? pt.x_dl : b == Block::ul ? pt.x_ul : pt.p;
        RVec fd(x.size());
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double xi = x[i];
            x[i] = xi + h;
            const double fp = phi_at(pt, ctx);
            x[i] = xi - h;
            const double fm = phi_at(pt, ctx);
            x[i] = xi;
            fd[i] = (fp - fm) / (2.0 * h);
        }
        if ((g - fd).norm() > 1e-5 * std::max(1.0, fd.norm())) return false;
    }
    return true;
}

inline bool projections_feasible()
{
    std::mt19937_64 eng(4);
    const auto ctx = selftest_context(eng, 4, 3);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int rep = 0; rep < 20; ++rep) {
        RVec a(2 * ctx.N()), b(2 * ctx.N()), p(static_cast<Eigen::Index>(ctx.K()));
        for (auto& v : a) v = nd(eng);
        for (auto& v : b) v = nd(eng);
        for (auto& v : p) v = nd(eng);
        const RVec pa = project_dl(a, ctx), pb = project_ul(b), pp = project_p(p, ctx);
        if (pa.squaredNorm() > ctx.dl_radius2() * (1 + 1e-12)) return false;
        if (std::abs(pb.norm() - 1.0) > 1e-12) return false;
        if ((pp.array() < 0.0).any() || (pp.array() > ctx.p_caps().array() * (1 + 1e-12)).any()) return false;
        if ((project_dl(pa, ctx) - pa).norm() > 1e-12 || (project_ul(pb) - pb).norm() > 1e-12) return false;
    }
    return true;
}

inline bool packing_round_trip()
{
    std::mt19937_64 eng(5);
    std::normal_distribution<double> nd;
    RVec th(10);
    for (auto& v : th) v = nd(eng);
    const auto c = pack_complex(th);
    return unpack_real(c) == th && c[2] == std::complex<double>(th[2], th[7]);
}

inline bool bound_anchors()
{
    const double L = 2.0;
    const int J = 5;
    const double eta = 0.1 / (J * L);
    if (std::abs(q_t(eta, J, L) - 0.96) > 1e-12) return false;
    ChannelState ch;
    CVec e(1);
    e[0] = 1.0;
    ch.h = {e};
    const BeamformingSolution sol{e, e, {1.0}};
    // unit instance with L = 10, D = 2, Q = 0.96: 10 * 0.25 + 10 * 1.5
    return std::abs(h_of(sol, ch, NoiseParams{1, 1}, 10.0, 0.96, 2) - 17.5) < 1e-10;
}

inline bool single_device_optimum()
{
    std::mt19937_64 eng(6);
    const auto ctx = selftest_context(eng, 2, 1);
    const double h2 = ctx.ch.h[0].squaredNorm();
    const auto pc = ctx.phi_constants();
    const double expect = pc.scale() * pc.noise.sigma2_dl * (pc.dl_weight() + 1.0) / (ctx.dl_radius2() * h2) +
                          pc.scale() * pc.noise.sigma2_ul / (2.0 * ctx.p_cap(0) * h2);
    const auto r = jdu_bf_round(ctx, std::nullopt, AoConfig{}, PgdConfig{});
    return std::abs(r.phi - expect) / expect < 1e-4;
}

inline bool noiseless_aggregation_is_weighted_mean()
{
    ChannelState ch;
    CVec h(1);
    h[0] = 1.0;
    ch.h = {h, h};
    const BeamformingSolution sol{h, h, {1.0, 1.0}};
    RVec a(2), b(2);
    a << 1.0, 3.0;
    b << 3.0, 5.0;
    const std::vector<RVec> models{a, b};
    const auto r = uplink_aggregate(models, sol, ch, NoiseParams{}, RngSpec{1}, AggregationMode::aligned);
    return (r.theta - (a + b) / 2.0).norm() < 1e-15;
}

inline bool streams_are_counter_based()
{
    const RngSpec r{42};
    auto e1 = r.engine(Stream::fading, 3, 2);
    auto e2 = r.engine(Stream::fading, 3, 2);
    auto e3 = r.engine(Stream::fading, 3, 1);
    const auto a = e1(), b = e2(), c = e3();
    return a == b && a != c && r.child(0).master_seed != r.child(1).master_seed;
}

} // namespace detail

inline std::vector<SelftestCase> selftest_cases()
{
    return {{"gradient of the round objective", detail::gradients_match},
            {"projections", detail::projections_feasible},
            {"complex packing", detail::packing_round_trip},
            {"bound anchors", detail::bound_anchors},
            {"single-device closed form", detail::single_device_optimum},
            {"noise-free aggregation", detail::noiseless_aggregation_is_weighted_mean},
            {"random streams", detail::streams_are_counter_based}};
}

/// Runs every case, prints one PASS/FAIL line each, returns true when all pass.
inline bool run_selftest(std::ostream& os)
{
    bool ok = true;
    for (const auto& c : selftest_cases()) {
        bool pass = false;
        try {
            pass = c.run();
        } catch (const std::exception& e) {
            os << "  error: " << e.what() << '\n';
        }
        os << (pass ? "PASS " : "FAIL ") << c.name << '\n';
        ok = ok && pass;
    }
    return ok;
}

} // namespace otafl
