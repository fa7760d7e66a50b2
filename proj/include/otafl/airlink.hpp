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

// Analog model exchange: real/complex packing, multicast downlink with device-side
// post-scaling, and over-the-air uplink aggregation with receive beamforming.
//
// Noise is drawn directly at the post-processed level (one complex sample per channel
// use): a downlink element after post-scaling has variance sigma_d^2 / |h_k^H w_dl|^2,
// an aggregated uplink element has variance sigma_u^2 / |sum_k alpha_k|^2. This is
// statistically identical to per-antenna noise followed by combining.

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "otafl/channel.hpp"
#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

using ComplexModel = CVec;

/// Floor on |h^H w| (linear amplitude) below which a link is treated as degenerate.
inline constexpr double kChannelFloor = 1e-12;

/// Relative slack for power-constraint checks.
inline constexpr double kPowerSlack = 1e-9;

struct PowerBudget {
    double P_dl = 0.0;         ///< W per channel use
    std::vector<double> P_ul;  ///< W per channel use, one per device
};

struct BeamformingSolution {
    CVec w_dl;
    CVec w_ul;             ///< unit norm
    std::vector<double> p; ///< device power scalings
};

enum class AggregationMode { aligned, raw };

/// theta = [re; im] -> re + j im.
inline ComplexModel pack_complex(const RVec& theta)
{
    if (theta.size() % 2 != 0) throw DomainError("pack_complex: model dimension must be even");
    const auto half = theta.size() / 2;
    ComplexModel c(half);
    for (Eigen::Index i = 0; i < half; ++i) c[i] = {theta[i], theta[half + i]};
    return c;
}

inline RVec unpack_real(const ComplexModel& c)
{
    const auto half = c.size();
    RVec theta(2 * half);
    for (Eigen::Index i = 0; i < half; ++i) {
        theta[i] = c[i].real();
        theta[half + i] = c[i].imag();
    }
    return theta;
}

/// h^H w.
inline std::complex<double> inner(const CVec& h, const CVec& w) { return h.dot(w); }

/// Real effective uplink gain after device phase alignment: sqrt(p) |h^H w_ul|.
inline double effective_alpha(double p_k, const CVec& h_k, const CVec& w_ul)
{
    if (!(p_k >= 0.0)) throw DomainError("effective_alpha: power scaling must be >= 0");
    return std::sqrt(p_k) * std::abs(inner(h_k, w_ul));
}

/// Complex effective gain without phase alignment: w_ul^H h sqrt(p).
inline std::complex<double> raw_alpha(double p_k, const CVec& h_k, const CVec& w_ul)
{
    return std::sqrt(p_k) * w_ul.dot(h_k);
}

inline void check_downlink_power(const CVec& w_dl, const RVec& theta, double P_dl)
{
    const double used = w_dl.squaredNorm() * theta.squaredNorm();
    const double budget = static_cast<double>(theta.size()) * P_dl;
    if (used > budget * (1.0 + kPowerSlack))
        throw InfeasibleTransmission("downlink power " + std::to_string(used) + " exceeds budget " +
                                     std::to_string(budget));
}

inline void check_uplink_power(std::span<const double> p, std::span<const RVec> models, std::span<const double> P_ul)
{
    for (std::size_t k = 0; k < models.size(); ++k) {
        const double used = p[k] * models[k].squaredNorm();
        const double budget = static_cast<double>(models[k].size()) * P_ul[k];
        if (used > budget * (1.0 + kPowerSlack))
            throw InfeasibleTransmission("uplink power of device " + std::to_string(k) + " (" + std::to_string(used) +
                                         ") exceeds budget " + std::to_string(budget));
    }
}

/**
 * Multicast theta_t with w_dl; device k post-scales by h^H w / |h^H w|^2 and unpacks.
 * Returns the K estimates theta_t + n_k. Noise sub-streams are keyed by (t, k).
 */
inline std::vector<RVec> downlink_broadcast(const RVec& theta_t, const CVec& w_dl, const ChannelState& ch,
                                            const NoiseParams& noise, const RngSpec& rng)
{
    const ComplexModel tc = pack_complex(theta_t);
    std::vector<RVec> out;
    out.reserve(ch.num_devices());
    for (std::size_t k = 0; k < ch.num_devices(); ++k) {
        const double gain = std::abs(inner(ch.h[k], w_dl));
        if (!(gain > kChannelFloor))
            throw DegenerateChannel("downlink gain of device " + std::to_string(k) + " below channel floor");
        ComplexModel est = tc;
        if (noise.sigma2_dl > 0.0) {
            const double var = noise.sigma2_dl / (gain * gain);
            auto eng = rng.engine(Stream::dl_noise, ch.round_index, k);
            for (Eigen::Index i = 0; i < est.size(); ++i) est[i] += complex_normal(eng, var);
        }
        out.push_back(unpack_real(est));
    }
    return out;
}

struct AggregateResult {
    RVec theta;                            ///< theta_{t+1}
    std::vector<std::complex<double>> rho; ///< aggregation weights (real in aligned mode)
    std::complex<double> sum_alpha;
    RVec noise; ///< unpacked receiver-noise term that was added
};

/**
 * Over-the-air aggregation of the local models:
 *   theta~_{t+1} = sum_k rho_k theta~_k + n_ul,  rho_k = alpha_k / sum_j alpha_j,
 * with alpha_k = sqrt(p_k)|h_k^H w_ul| (aligned) or w_ul^H h_k sqrt(p_k) (raw, no
 * transmit phase alignment), and n_ul of element variance sigma_u^2 / |sum alpha|^2.
 */
inline AggregateResult uplink_aggregate(std::span<const RVec> models, const BeamformingSolution& sol,
                                        const ChannelState& ch, const NoiseParams& noise, const RngSpec& rng,
                                        AggregationMode mode)
{
    const std::size_t K = models.size();
    if (K == 0 || ch.num_devices() != K || sol.p.size() != K)
        throw DomainError("uplink_aggregate: device count mismatch");
    AggregateResult res;
    std::vector<std::complex<double>> alpha(K);
    std::complex<double> sum{0.0, 0.0};
    for (std::size_t k = 0; k < K; ++k) {
        alpha[k] = mode == AggregationMode::aligned ? std::complex<double>(effective_alpha(sol.p[k], ch.h[k], sol.w_ul))
                                                    : raw_alpha(sol.p[k], ch.h[k], sol.w_ul);
        sum += alpha[k];
    }
    if (!(std::abs(sum) > kChannelFloor)) {
        if (mode == AggregationMode::aligned)
            throw DegenerateChannel("uplink_aggregate: total effective gain below channel floor");
        throw DegenerateChannel("uplink_aggregate: near-singular raw aggregation (|sum alpha| below floor)");
    }
    res.sum_alpha = sum;
    ComplexModel acc = ComplexModel::Zero(models[0].size() / 2);
    res.rho.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        res.rho[k] = alpha[k] / sum;
        acc += res.rho[k] * pack_complex(models[k]);
    }
    ComplexModel n = ComplexModel::Zero(acc.size());
    if (noise.sigma2_ul > 0.0) {
        const double var = noise.sigma2_ul / std::norm(sum);
        auto eng = rng.engine(Stream::ul_noise, ch.round_index, 0);
        for (Eigen::Index i = 0; i < n.size(); ++i) n[i] = complex_normal(eng, var);
    }
    res.theta = unpack_real(acc + n);
    res.noise = unpack_real(n);
    return res;
}

/// Error-free FedAvg aggregation with rho_k = 1/K.
inline RVec ideal_aggregate(std::span<const RVec> models)
{
    if (models.empty()) throw DomainError("ideal_aggregate: no models");
    RVec acc = RVec::Zero(models[0].size());
    for (const auto& m : models) acc += m;
    return acc / static_cast<double>(models.size());
}

} // namespace otafl
