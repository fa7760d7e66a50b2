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

// Monte Carlo check of the per-round contraction
//
//     E[F(theta_{t+1})] - F*  <=  G_t (E[F(theta_t)] - F*) + H_t + C_t
//
// and of the T-round bound, on a strongly convex problem with a known optimum.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <vector>

#include "otafl/airlink.hpp"
#include "otafl/bound.hpp"
#include "otafl/dataset.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/rng.hpp"

namespace otafl {

/// A fixed horizon: problem, start point, and per-round channel and beamforming.
struct RecursionSetup {
    const Dataset* data = nullptr;
    LossSpec spec;
    double Fstar = 0.0;
    ModelVector theta0;
    std::vector<ChannelState> channels;
    std::vector<BeamformingSolution> sols;
    NoiseParams noise;
    std::vector<double> eta; ///< per round
    int J = 1;
    std::size_t batch = 1;

    [[nodiscard]] std::size_t T() const { return sols.size(); }
};

/// Realised aggregation weights rho_{k,t} of the aligned uplink.
inline std::vector<double> aggregation_weights(const BeamformingSolution& sol, const ChannelState& ch)
{
    std::vector<double> a(ch.num_devices());
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] = effective_alpha(sol.p[k], ch.h[k], sol.w_ul);
    if (!(s > kChannelFloor)) throw DegenerateChannel("aggregation_weights: total effective gain below floor");
    for (auto& v : a) v /= s;
    return a;
}

/// Loss gaps F(theta_t) - F* for t = 0..T of one noisy trajectory, plus the visited models.
struct Trajectory {
    std::vector<double> gap;
    std::vector<ModelVector> thetas;
};

inline Trajectory simulate_trajectory(const RecursionSetup& su, const RngSpec& rng)
{
    const Dataset& ds = *su.data;
    Trajectory tr;
    ModelVector theta = su.theta0;
    tr.gap.push_back(global_loss(theta, ds, su.spec) - su.Fstar);
    tr.thetas.push_back(theta);
    for (std::size_t t = 0; t < su.T(); ++t) {
        ChannelState ch = su.channels[t];
        ch.round_index = t;
        const auto est = downlink_broadcast(theta, su.sols[t].w_dl, ch, su.noise, rng);
        std::vector<RVec> local;
        local.reserve(ds.num_devices());
        for (std::size_t k = 0; k < ds.num_devices(); ++k) {
            auto eng = rng.engine(Stream::minibatch, t, k);
            local.push_back(local_update(est[k], ds, k, su.spec, su.eta[t], su.J, su.batch, eng).theta_J);
        }
        theta = uplink_aggregate(local, su.sols[t], ch, su.noise, rng, AggregationMode::aligned).theta;
        tr.gap.push_back(global_loss(theta, ds, su.spec) - su.Fstar);
        tr.thetas.push_back(theta);
    }
    return tr;
}

/**
 * mu and delta measured along sampled trajectories: mu is the largest mini-batch gradient
 * variance over visited models and devices, delta the largest
 * ||grad F - sum_k rho_{k,t} grad F_k||^2 over visited models and rounds.
 */
inline SgdConstants measure_sgd_constants(const RecursionSetup& su, const std::vector<Trajectory>& samples)
{
    SgdConstants c;
    for (std::size_t t = 0; t < su.T(); ++t) {
        const auto rho = aggregation_weights(su.sols[t], su.channels[t]);
        std::vector<ModelVector> thetas;
        for (const auto& tr : samples) thetas.push_back(tr.thetas[t]);
        const auto ct = estimate_sgd_constants(thetas, su.spec, *su.data, su.batch, rho);
        c.mu = std::max(c.mu, ct.mu);
        c.delta = std::max(c.delta, ct.delta);
    }
    return c;
}

struct RoundMargin {
    std::size_t t = 0;
    double lhs = 0.0;    ///< mean of F(theta_{t+1}) - F*
    double rhs = 0.0;    ///< G_t mean(F(theta_t) - F*) + H_t + C_t
    double std_error = 0.0;  ///< standard error of lhs - rhs
    bool violated = false; ///< lhs - rhs > 3 stderr
    [[nodiscard]] double margin() const { return rhs - lhs; }
};

struct RecursionReport {
    std::vector<RoundMargin> rounds;
    std::vector<double> mean_gap; ///< t = 0..T
    std::vector<double> H;
    BoundBreakdown bound;
    double Gamma = 0.0;
    std::size_t violations = 0;
    bool bound_holds = false; ///< mean_gap[T] <= bound.total
};

/// Compares Monte Carlo trajectories with the per-round inequality and the T-round bound.
inline RecursionReport check_recursion_on(const RecursionSetup& su, const BoundParams& params,
                                          const std::vector<Trajectory>& runs)
{
    const std::size_t T = su.T();
    const double n = static_cast<double>(runs.size());
    BoundParams bp = params;
    bp.eta = su.eta;
    bp.J = su.J;
    bp.T = T;
    bp.phi.clear();
    bp.Gamma = global_loss(su.theta0, *su.data, su.spec) - su.Fstar;

    RecursionReport rep;
    rep.Gamma = bp.Gamma;
    const Eigen::Index D = su.theta0.size();
    for (std::size_t t = 0; t < T; ++t) rep.H.push_back(h_of(su.sols[t], su.channels[t], su.noise, bp.L, bp.Q(t), D));
    rep.bound = proposition_breakdown(bp, rep.H);

    rep.mean_gap.assign(T + 1, 0.0);
    for (const auto& tr : runs)
        for (std::size_t t = 0; t <= T; ++t) rep.mean_gap[t] += tr.gap[t] / n;

    for (std::size_t t = 0; t < T; ++t) {
        const double G = rep.bound.G[t];
        const double slack = rep.H[t] + rep.bound.C[t];
        double m = 0.0, m2 = 0.0;
        for (const auto& tr : runs) {
            const double d = tr.gap[t + 1] - G * tr.gap[t] - slack;
            m += d;
            m2 += d * d;
        }
        m /= n;
        const double var = std::max(0.0, (m2 - n * m * m) / (n - 1.0));
        RoundMargin rm;
        rm.t = t;
        rm.lhs = rep.mean_gap[t + 1];
        rm.rhs = G * rep.mean_gap[t] + slack;
        rm.std_error = std::sqrt(var / n);
        rm.violated = m > 3.0 * rm.std_error;
        rep.violations += rm.violated ? 1 : 0;
        rep.rounds.push_back(rm);
    }

    rep.bound_holds = rep.mean_gap[T] <= rep.bound.total;
    return rep;
}

/**
 * Runs n_mc independent trajectories (replicate r uses rng.child(r)) and compares the
 * estimated expectations with the per-round inequality and the T-round bound. Only L,
 * lambda, mu and delta are read from `params`; eta, J, T and Gamma come from the setup.
 */
inline RecursionReport check_recursion(const RecursionSetup& su, const BoundParams& params, std::size_t n_mc,
                                       const RngSpec& rng)
{
    if (su.T() == 0 || su.channels.size() != su.T() || su.eta.size() != su.T())
        throw DomainError("check_recursion: need one channel, solution and rate per round");
    if (n_mc < 2) throw DomainError("check_recursion: need at least two Monte Carlo replicates");
    std::vector<Trajectory> runs;
    runs.reserve(n_mc);
    for (std::size_t r = 0; r < n_mc; ++r) runs.push_back(simulate_trajectory(su, rng.child(r)));
    return check_recursion_on(su, params, runs);
}

} // namespace otafl
