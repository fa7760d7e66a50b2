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

// Per-round beamforming design.
//
//  - JDU-BF: alternating minimisation of Phi over (x_dl, x_ul, p), each block solved by
//    projected gradient descent with a closed-form projection.
//  - SDU-BF: max-min fair multicast downlink plus max-power / max-SNR uplink.
//  - RBF: isotropic random beamformers, no device phase alignment.

#include <Eigen/Core>
#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "otafl/airlink.hpp"
#include "otafl/bound.hpp"
#include "otafl/channel.hpp"
#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

using Clock = std::chrono::steady_clock;

struct PgdConfig {
    double beta0 = 1.0;   ///< first trial step, relative: beta = beta0 * ||x|| / ||grad||
    double shrink = 0.5;  ///< backtracking factor
    double armijo = 1e-4; ///< sufficient-decrease constant
    int max_iters = 500;
    int max_backtracks = 60;
    double tol = 1e-8; ///< relative objective change
    std::optional<Clock::time_point> deadline;
};

struct AoConfig {
    int max_outer = 50;
    double tol = 1e-6; ///< relative Phi change between outer iterations
    int restarts = 8;  ///< extra random starts for the full solve; the lowest Phi is kept
};

enum class Block { dl, ul, p };

inline const char* block_name(Block b)
{
    switch (b) {
    case Block::dl: return "dl";
    case Block::ul: return "ul";
    case Block::p: return "p";
    }
    return "?";
}

/// Called after every accepted PGD step: (iteration, block, objective, step size).
using TraceSink = std::function<void(int, Block, double, double)>;

/// Everything the per-round problem depends on.
struct RoundContext {
    ChannelState ch;
    NoiseParams noise;
    PowerBudget budget;
    double norm_theta = 1.0;        ///< ||theta_t||^2
    std::vector<double> norm_local; ///< ||theta^J_k||^2 (or a proxy before local training)
    double L = 1.0;
    double Q = 0.96;
    Eigen::Index D = 2;
    std::vector<Eigen::MatrixXd> Hk; ///< lifted channels, filled by make_context

    [[nodiscard]] std::size_t K() const { return ch.num_devices(); }
    [[nodiscard]] Eigen::Index N() const { return ch.num_antennas(); }
    [[nodiscard]] PhiConstants phi_constants() const { return {noise, L, Q, D}; }
    /// Largest ||x_dl||^2 allowed by the downlink budget.
    [[nodiscard]] double dl_radius2() const { return static_cast<double>(D) * budget.P_dl / norm_theta; }
    [[nodiscard]] double p_cap(std::size_t k) const
    {
        return static_cast<double>(D) * budget.P_ul[k] / norm_local[k];
    }
    [[nodiscard]] RVec p_caps() const
    {
        RVec c(static_cast<Eigen::Index>(K()));
        for (std::size_t k = 0; k < K(); ++k) c[static_cast<Eigen::Index>(k)] = p_cap(k);
        return c;
    }
};

inline RoundContext make_context(ChannelState ch, NoiseParams noise, PowerBudget budget, double norm_theta,
                                 std::vector<double> norm_local, double L, double Q, Eigen::Index D)
{
    if (!(norm_theta > 0.0)) throw DomainError("make_context: ||theta_t||^2 must be positive");
    if (norm_local.size() != ch.num_devices() || budget.P_ul.size() != ch.num_devices())
        throw DomainError("make_context: per-device vectors must have length K");
    for (double n : norm_local)
        if (!(n > 0.0)) throw DomainError("make_context: local model norms must be positive");
    RoundContext ctx{std::move(ch), noise, std::move(budget), norm_theta, std::move(norm_local), L, Q, D, {}};
    for (const auto& h : ctx.ch.h) ctx.Hk.push_back(lift_channel(h));
    return ctx;
}

/// Lifted optimisation point.
struct PhiPoint {
    RVec x_dl;
    RVec x_ul;
    RVec p;
};

inline double phi_at(const PhiPoint& pt, const RoundContext& ctx)
{
    return phi_of(pt.x_dl, pt.x_ul, std::span<const double>(pt.p.data(), static_cast<std::size_t>(pt.p.size())),
                  ctx.Hk, ctx.phi_constants());
}

inline PhiPoint to_point(const BeamformingSolution& sol)
{
    return {lift_vector(sol.w_dl), lift_vector(sol.w_ul),
            Eigen::Map<const RVec>(sol.p.data(), static_cast<Eigen::Index>(sol.p.size()))};
}

inline BeamformingSolution to_solution(const PhiPoint& pt)
{
    return {unlift_vector(pt.x_dl), unlift_vector(pt.x_ul), std::vector<double>(pt.p.data(), pt.p.data() + pt.p.size())};
}

// ------------------------------------------------------------------------
// Gradient of Phi

/**
 * Analytic gradient of Phi for one block. With g_k = x_dl^T H_k x_dl,
 * u_k = x_ul^T H_k x_ul, s_k = sqrt(p_k u_k), S = sum s, A = sum s/g, B = sum s^2/g,
 * E = sigma_d^2 B + sigma_u^2/2 and Phi = c w sigma_d^2 A/S + c E/S^2:
 *
 *   dPhi/dg_k = -c sigma_d^2 s_k (w / S + s_k / S^2) / g_k^2
 *   dPhi/ds_k = c w sigma_d^2 (1/(g_k S) - A/S^2) + 2 c sigma_d^2 s_k/(g_k S^2) - 2 c E/S^3
 *
 * chained through dg_k/dx_dl = 2 H_k x_dl, ds_k/dx_ul = sqrt(p_k) H_k x_ul / sqrt(u_k),
 * ds_k/dp_k = sqrt(u_k) / (2 sqrt(p_k)).
 */
inline RVec grad_phi(Block block, const PhiPoint& pt, const RoundContext& ctx)
{
    const std::size_t K = ctx.K();
    const PhiConstants pc = ctx.phi_constants();
    const double c = pc.scale();
    const double w = pc.dl_weight();
    const double sd = pc.noise.sigma2_dl;
    const double su = pc.noise.sigma2_ul;
    constexpr double floor2 = kChannelFloor * kChannelFloor;

    std::vector<RVec> Hxd(K), Hxu(K);
    std::vector<double> g(K), u(K), s(K);
    double S = 0.0, A = 0.0, B = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        Hxd[k] = ctx.Hk[k] * pt.x_dl;
        Hxu[k] = ctx.Hk[k] * pt.x_ul;
        g[k] = pt.x_dl.dot(Hxd[k]);
        u[k] = std::max(0.0, pt.x_ul.dot(Hxu[k]));
        if (!(g[k] > floor2)) throw DomainError("grad_phi: downlink gain of device " + std::to_string(k) + " below floor");
        s[k] = std::sqrt(pt.p[static_cast<Eigen::Index>(k)]) * std::sqrt(u[k]);
        S += s[k];
        A += s[k] / g[k];
        B += s[k] * s[k] / g[k];
    }
    if (!(S > kChannelFloor)) throw DomainError("grad_phi: total uplink effective gain below floor");
    const double E = sd * B + su / 2.0;

    auto dphi_ds = [&](std::size_t k) {
        return c * w * sd * (1.0 / (g[k] * S) - A / (S * S)) + 2.0 * c * sd * s[k] / (g[k] * S * S) -
               2.0 * c * E / (S * S * S);
    };

    switch (block) {
    case Block::dl: {
        RVec grad = RVec::Zero(pt.x_dl.size());
        for (std::size_t k = 0; k < K; ++k) {
            const double dg = -c * sd * s[k] * (w / S + s[k] / (S * S)) / (g[k] * g[k]);
            grad += 2.0 * dg * Hxd[k];
        }
        return grad;
    }
    case Block::ul: {
        RVec grad = RVec::Zero(pt.x_ul.size());
        for (std::size_t k = 0; k < K; ++k) {
            if (!(u[k] > floor2)) continue; // s_k is not differentiable at u_k = 0
            grad += dphi_ds(k) * std::sqrt(pt.p[static_cast<Eigen::Index>(k)]) / std::sqrt(u[k]) * Hxu[k];
        }
        return grad;
    }
    case Block::p: {
        RVec grad = RVec::Zero(static_cast<Eigen::Index>(K));
        for (std::size_t k = 0; k < K; ++k) {
            // p_k -> 0 is a boundary of the domain; evaluate the one-sided slope at a tiny floor
            const double pk = std::max(pt.p[static_cast<Eigen::Index>(k)], 1e-30 * ctx.p_cap(k));
            grad[static_cast<Eigen::Index>(k)] = dphi_ds(k) * std::sqrt(u[k]) / (2.0 * std::sqrt(pk));
        }
        return grad;
    }
    }
    return {};
}

// ------------------------------------------------------------------------
// Projections

/// Scale onto ||x||^2 <= D P_dl / ||theta_t||^2 when outside; identity inside.
inline RVec project_dl(const RVec& x, const RoundContext& ctx)
{
    const double n2 = x.squaredNorm();
    const double r2 = ctx.dl_radius2();
    if (n2 <= r2) return x;
    return std::sqrt(r2 / n2) * x;
}

/// x / ||x||. Points already on the sphere (within rounding) are returned unchanged.
inline RVec project_ul(const RVec& x)
{
    const double n2 = x.squaredNorm();
    if (!(n2 > 0.0)) throw DomainError("project_ul: projection of the zero vector onto the unit sphere is undefined");
    if (std::abs(n2 - 1.0) <= 64.0 * std::numeric_limits<double>::epsilon()) return x;
    return x / std::sqrt(n2);
}

/// Clamp each p_k to [0, D P_ul_k / ||theta^J_k||^2].
inline RVec project_p(const RVec& p, const RoundContext& ctx)
{
    RVec out = p;
    for (Eigen::Index k = 0; k < p.size(); ++k)
        out[k] = std::clamp(p[k], 0.0, ctx.p_cap(static_cast<std::size_t>(k)));
    return out;
}

inline RVec project(Block block, const RVec& v, const RoundContext& ctx)
{
    switch (block) {
    case Block::dl: return project_dl(v, ctx);
    case Block::ul: return project_ul(v);
    case Block::p: return project_p(v, ctx);
    }
    return v;
}

// ------------------------------------------------------------------------
// Projected gradient descent

struct PgdResult {
    RVec x;
    double value = 0.0;
    int iterations = 0;
    bool stalled = false;
    std::vector<double> trace; ///< objective after every accepted step (starting with f(x0))
};

/**
 * x_{j+1} = Pi(x_j - beta_j grad f(x_j)). The trial step is the Barzilai-Borwein step
 * when available, else beta0 ||x|| / ||grad|| (beta0 / ||grad|| at x = 0); it is halved until the Armijo condition
 * f(x+) <= f(x) + armijo grad^T (x+ - x) holds and f does not increase, so the returned
 * value never exceeds f(x0). Objective evaluations that throw DomainError count as
 * failed trials. Stops on relative change < tol, on a fixed point, or at max_iters.
 */
template <class F, class G, class P>
PgdResult pgd_minimize(F&& f, G&& grad, P&& proj, RVec x0, const PgdConfig& cfg,
                       const std::function<void(int, double, double)>& on_step = {})
{
    PgdResult res;
    res.x = std::move(x0);
    res.value = f(res.x);
    res.trace.push_back(res.value);
    RVec prev_x, prev_g;
    double beta = 0.0;
    for (int it = 0; it < cfg.max_iters; ++it) {
        if (cfg.deadline && Clock::now() > *cfg.deadline) {
            res.stalled = true;
            break;
        }
        const RVec g = grad(res.x);
        const double gn = g.norm();
        if (!(gn > 0.0) || !std::isfinite(gn)) break;
        if (prev_x.size() > 0) {
            const RVec sv = res.x - prev_x;
            const RVec yv = g - prev_g;
            const double sy = sv.dot(yv);
            beta = sy > 0.0 ? sv.squaredNorm() / sy : 2.0 * beta;
        } else {
            const double xn0 = res.x.norm();
            beta = cfg.beta0 * (xn0 > 0.0 ? xn0 : 1.0) / gn;
        }

        bool accepted = false;
        bool fixed_point = false;
        RVec xn;
        double fn = 0.0;
        for (int bt = 0; bt < cfg.max_backtracks; ++bt, beta *= cfg.shrink) {
            xn = proj(RVec(res.x - beta * g));
            const RVec d = xn - res.x;
            if (d.squaredNorm() == 0.0) {
                fixed_point = true;
                break;
            }
            try {
                fn = f(xn);
            } catch (const DomainError&) {
                continue;
            }
            if (std::isfinite(fn) && fn <= res.value + cfg.armijo * g.dot(d) && fn <= res.value) {
                accepted = true;
                break;
            }
        }
        if (fixed_point) break;
        if (!accepted) {
            res.stalled = true;
            break;
        }
        prev_x = res.x;
        prev_g = g;
        const double before = res.value;
        res.x = std::move(xn);
        res.value = fn;
        res.iterations = it + 1;
        res.trace.push_back(fn);
        if (on_step) on_step(res.iterations, fn, beta);
        if (before - fn <= cfg.tol * std::abs(before)) break;
    }
    return res;
}

// ------------------------------------------------------------------------
// Linear algebra helpers

/**
 * Dominant eigenvector of a Hermitian PSD matrix by power iteration until
 * ||M v - lambda v|| <= tol * lambda. Returns e_1 for the zero matrix.
 */
inline CVec dominant_eigenvector(const Eigen::MatrixXcd& M, double tol = 1e-10, int max_iter = 200000)
{
    const auto N = M.rows();
    CVec v = CVec::Zero(N);
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < N; ++j)
        if (M.col(j).norm() > M.col(best).norm()) best = j;
    if (!(M.col(best).norm() > 0.0)) {
        v[0] = 1.0;
        return v;
    }
    v = M.col(best).normalized();
    for (int it = 0; it < max_iter; ++it) {
        const CVec Mv = M * v;
        const double lam = v.dot(Mv).real();
        if ((Mv - lam * v).norm() <= tol * std::abs(lam)) break;
        v = Mv.normalized();
    }
    // fix the global phase so results are reproducible
    Eigen::Index big = 0;
    for (Eigen::Index j = 1; j < N; ++j)
        if (std::abs(v[j]) > std::abs(v[big])) big = j;
    v *= std::conj(v[big]) / std::abs(v[big]);
    return v;
}

/// sum_k weight_k h_k h_k^H.
inline Eigen::MatrixXcd weighted_gram(const ChannelState& ch, std::span<const double> weights = {})
{
    const auto N = ch.num_antennas();
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(N, N);
    for (std::size_t k = 0; k < ch.num_devices(); ++k)
        M += (weights.empty() ? 1.0 : weights[k]) * ch.h[k] * ch.h[k].adjoint();
    return M;
}

// ------------------------------------------------------------------------
// JDU-BF

struct JduResult {
    BeamformingSolution sol;
    double phi = 0.0;
    int outer_iterations = 0;
    bool stalled = false;        ///< some inner solve hit the backtracking limit or the deadline
    std::vector<double> trace;   ///< Phi after every accepted inner step, in order
};

/// Dominant-eigenvector start: w_ul along the strongest common direction, w_dl the same
/// direction on the power boundary, every device at full power.
inline PhiPoint default_initial_point(const RoundContext& ctx)
{
    const CVec v = dominant_eigenvector(weighted_gram(ctx.ch));
    PhiPoint pt;
    pt.x_ul = lift_vector(v);
    pt.x_dl = std::sqrt(ctx.dl_radius2()) * pt.x_ul;
    pt.p = ctx.p_caps();
    return pt;
}

namespace detail {

inline PgdResult solve_block(Block block, PhiPoint& pt, const RoundContext& ctx, const PgdConfig& pgd,
                             const TraceSink& sink, int& step_counter)
{
    PhiPoint work = pt;
    auto select = [&](PhiPoint& q) -> RVec& {
        switch (block) {
        case Block::dl: return q.x_dl;
        case Block::ul: return q.x_ul;
        default: return q.p;
        }
    };
    auto f = [&](const RVec& v) {
        select(work) = v;
        return phi_at(work, ctx);
    };
    auto g = [&](const RVec& v) {
        select(work) = v;
        return grad_phi(block, work, ctx);
    };
    auto pr = [&](const RVec& v) { return project(block, v, ctx); };
    std::function<void(int, double, double)> on_step;
    if (sink) on_step = [&](int, double val, double beta) { sink(++step_counter, block, val, beta); };
    PgdResult r = pgd_minimize(f, g, pr, select(pt), pgd, on_step);
    select(pt) = r.x;
    return r;
}

} // namespace detail

/**
 * Alternating minimisation of Phi over the blocks in `blocks` (in order) until the
 * relative change of Phi over one sweep drops below ao.tol. The starting point must be
 * feasible; Phi never increases.
 */
inline JduResult alternate_blocks(const RoundContext& ctx, PhiPoint pt, std::span<const Block> blocks,
                                  const AoConfig& ao, const PgdConfig& pgd, const TraceSink& sink = {})
{
    JduResult res;
    double phi = phi_at(pt, ctx);
    res.trace.push_back(phi);
    int steps = 0;
    for (int outer = 0; outer < ao.max_outer; ++outer) {
        const double before = phi;
        for (Block b : blocks) {
            PgdResult r = detail::solve_block(b, pt, ctx, pgd, sink, steps);
            res.stalled = res.stalled || (r.stalled && pgd.deadline && Clock::now() > *pgd.deadline);
            res.trace.insert(res.trace.end(), r.trace.begin() + 1, r.trace.end());
            phi = r.value;
        }
        res.outer_iterations = outer + 1;
        if (std::abs(before - phi) <= ao.tol * std::abs(before)) break;
        if (pgd.deadline && Clock::now() > *pgd.deadline) {
            res.stalled = true;
            break;
        }
    }
    res.phi = phi;
    res.sol = to_solution(pt);
    return res;
}

/// One round of JDU-BF: downlink beamformer, receive beamformer and device powers.
/// Feasible start drawn isotropically: w_dl on the power boundary, unit w_ul, p uniform in its box.
inline PhiPoint random_initial_point(const RoundContext& ctx, std::mt19937_64& eng)
{
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    PhiPoint pt;
    pt.x_dl.resize(2 * ctx.N());
    pt.x_ul.resize(2 * ctx.N());
    for (auto& v : pt.x_dl) v = nd(eng);
    for (auto& v : pt.x_ul) v = nd(eng);
    pt.x_dl *= std::sqrt(ctx.dl_radius2()) / pt.x_dl.norm();
    pt.x_ul.normalize();
    pt.p = ctx.p_caps();
    for (auto& v : pt.p) v *= ud(eng);
    return pt;
}

/**
 * One round of JDU-BF: downlink beamformer, receive beamformer and device powers.
 * With ao.restarts > 0 the solve is repeated from that many random starts drawn from
 * `rng` (keyed by the round index) and the lowest Phi wins; the first start is `init`
 * or the dominant-eigenvector point.
 */
inline JduResult jdu_bf_round(const RoundContext& ctx, const std::optional<PhiPoint>& init, const AoConfig& ao,
                              const PgdConfig& pgd, const TraceSink& sink = {}, const RngSpec& rng = {})
{
    static constexpr Block all[] = {Block::dl, Block::ul, Block::p};
    struct Step {
        int iter;
        Block block;
        double phi;
        double step;
    };
    // steps are buffered per start so the sink only sees the winning run
    auto solve = [&](PhiPoint pt, std::vector<Step>& steps) {
        pt.x_dl = project_dl(pt.x_dl, ctx);
        pt.x_ul = project_ul(pt.x_ul);
        pt.p = project_p(pt.p, ctx);
        TraceSink record;
        if (sink) record = [&](int it, Block b, double phi, double step) { steps.push_back({it, b, phi, step}); };
        return alternate_blocks(ctx, std::move(pt), all, ao, pgd, record);
    };
    std::vector<Step> best_steps, steps;
    JduResult best = solve(init ? *init : default_initial_point(ctx), best_steps);
    for (int r = 0; r < ao.restarts; ++r) {
        if (pgd.deadline && Clock::now() > *pgd.deadline) {
            best.stalled = true;
            break;
        }
        auto eng = rng.engine(Stream::restarts, ctx.ch.round_index, static_cast<std::uint64_t>(r));
        steps.clear();
        JduResult cand = solve(random_initial_point(ctx, eng), steps);
        if (cand.phi < best.phi) {
            best = std::move(cand);
            best_steps.swap(steps);
        }
    }
    if (sink)
        for (const auto& s : best_steps) sink(s.iter, s.block, s.phi, s.step);
    return best;
}

/**
 * Uplink-only refinement once the true local model norms are known: w_dl is kept, the
 * previous powers are projected onto the new power box, then (w_ul, p) alternate.
 */
inline JduResult jdu_uplink_refine(const RoundContext& ctx, const BeamformingSolution& prev, const AoConfig& ao,
                                   const PgdConfig& pgd, const TraceSink& sink = {})
{
    PhiPoint pt = to_point(prev);
    pt.p = project_p(pt.p, ctx);
    static constexpr Block ul_blocks[] = {Block::ul, Block::p};
    return alternate_blocks(ctx, std::move(pt), ul_blocks, ao, pgd, sink);
}

// ------------------------------------------------------------------------
// SDU-BF

struct MaxMinConfig {
    double tau0 = 1.0;
    double anneal = 0.5;
    double tol = 1e-6; ///< relative change of the hard minimum between temperatures
    int max_stages = 60;
};

/**
 * Approximate max-min fair multicast beamformer: maximise min_k |h_k^H w|^2 subject to
 * ||w||^2 ||theta_t||^2 <= D P_dl. PGD on the smoothed surrogate
 * -softmin_tau(v) = tau log sum_k exp(-v_k / tau) (gains normalised to [0,1]) with tau
 * annealed geometrically; several deterministic starts, best hard minimum kept.
 * The result lies on the power boundary.
 */
inline CVec sdu_downlink(const RoundContext& ctx, const PgdConfig& pgd, const MaxMinConfig& mm = {})
{
    const std::size_t K = ctx.K();
    const double r2 = ctx.dl_radius2();
    double hmax = 0.0;
    for (const auto& h : ctx.ch.h) hmax = std::max(hmax, h.squaredNorm());
    const double gamma = 1.0 / (r2 * hmax);

    auto gains = [&](const RVec& x) {
        RVec v(static_cast<Eigen::Index>(K));
        for (std::size_t k = 0; k < K; ++k) v[static_cast<Eigen::Index>(k)] = gamma * x.dot(ctx.Hk[k] * x);
        return v;
    };
    auto to_boundary = [&](RVec x) {
        const double n = x.norm();
        return n > 0.0 ? RVec(x * (std::sqrt(r2) / n)) : x;
    };

    std::vector<RVec> starts;
    starts.push_back(to_boundary(lift_vector(dominant_eigenvector(weighted_gram(ctx.ch)))));
    {
        std::size_t weakest = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (ctx.ch.h[k].squaredNorm() < ctx.ch.h[weakest].squaredNorm()) weakest = k;
        starts.push_back(to_boundary(lift_vector(ctx.ch.h[weakest])));
        CVec mix = CVec::Zero(ctx.N());
        for (const auto& h : ctx.ch.h) mix += h / h.squaredNorm();
        if (mix.norm() > 0.0) starts.push_back(to_boundary(lift_vector(mix)));
    }

    RVec best;
    double best_min = -1.0;
    for (RVec x : starts) {
        double tau = mm.tau0;
        double prev_min = gains(x).minCoeff();
        for (int stage = 0; stage < mm.max_stages; ++stage) {
            auto f = [&](const RVec& y) {
                const RVec v = gains(y);
                const double m = v.minCoeff();
                return -m + tau * std::log((-(v.array() - m) / tau).exp().sum());
            };
            auto g = [&](const RVec& y) {
                const RVec v = gains(y);
                const double m = v.minCoeff();
                RVec wts = (-(v.array() - m) / tau).exp().matrix();
                wts /= wts.sum();
                RVec grad = RVec::Zero(y.size());
                for (std::size_t k = 0; k < K; ++k)
                    grad -= wts[static_cast<Eigen::Index>(k)] * 2.0 * gamma * (ctx.Hk[k] * y);
                return grad;
            };
            auto pr = [&](const RVec& y) { return project_dl(y, ctx); };
            x = to_boundary(pgd_minimize(f, g, pr, x, pgd).x);
            const double cur = gains(x).minCoeff();
            const bool settled = std::abs(cur - prev_min) <= mm.tol * std::max(cur, 1e-300);
            prev_min = cur;
            tau *= mm.anneal;
            if (settled && stage > 0) break;
        }
        if (prev_min > best_min) {
            best_min = prev_min;
            best = x;
        }
    }
    return unlift_vector(best);
}

/// Max-power devices and the receive beamformer maximising sum_k p_k |h_k^H w|^2.
inline BeamformingSolution sdu_uplink(const RoundContext& ctx)
{
    BeamformingSolution sol;
    sol.p.resize(ctx.K());
    for (std::size_t k = 0; k < ctx.K(); ++k) sol.p[k] = ctx.p_cap(k);
    sol.w_ul = dominant_eigenvector(weighted_gram(ctx.ch, sol.p));
    return sol;
}

inline BeamformingSolution sdu_bf_round(const RoundContext& ctx, const PgdConfig& pgd)
{
    BeamformingSolution sol = sdu_uplink(ctx);
    sol.w_dl = sdu_downlink(ctx, pgd);
    return sol;
}

// ------------------------------------------------------------------------
// RBF

/// Isotropic random w_dl on the power boundary, isotropic unit-norm w_ul, full power.
/// Aggregate with AggregationMode::raw (no phase alignment).
inline BeamformingSolution random_beamforming(const RoundContext& ctx, const RngSpec& rng)
{
    auto eng = rng.engine(Stream::beamforming, ctx.ch.round_index);
    const auto N = ctx.N();
    BeamformingSolution sol;
    sol.w_dl.resize(N);
    sol.w_ul.resize(N);
    for (Eigen::Index n = 0; n < N; ++n) sol.w_dl[n] = complex_normal(eng);
    for (Eigen::Index n = 0; n < N; ++n) sol.w_ul[n] = complex_normal(eng);
    sol.w_dl *= std::sqrt(ctx.dl_radius2()) / sol.w_dl.norm();
    sol.w_ul /= sol.w_ul.norm();
    sol.p.resize(ctx.K());
    for (std::size_t k = 0; k < ctx.K(); ++k) sol.p[k] = ctx.p_cap(k);
    return sol;
}

} // namespace otafl
