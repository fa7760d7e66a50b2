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

// Convergence-bound quantities for noisy over-the-air FL: the contraction factors
// Q_t and G_t, the SGD/heterogeneity term C_t, the per-round noise surrogate H and
// its real-lifted twin Phi, the horizon objective Psi, and the full T-round bound
//
//     E[F(theta_T)] - F*  <=  Gamma prod_t G_t + Lambda + Psi.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "otafl/airlink.hpp"
#include "otafl/channel.hpp"
#include "otafl/errors.hpp"

namespace otafl {

/// Q = 1 - 4 eta^2 J^2 L^2; must stay positive (eta J < 1 / (2L)).
inline double q_t(double eta, int J, double L)
{
    if (!(eta > 0.0) || J < 1 || !(L > 0.0)) throw DomainError("q_t: eta, J and L must be positive");
    const double a = eta * J * L;
    const double Q = 1.0 - 4.0 * a * a;
    if (!(Q > 0.0)) throw DomainError("q_t: inadmissible step, eta * J must be below 1 / (2L)");
    return Q;
}

/// G = (1-Q) / (4 eta J lambda Q) * (5(1-Q) + 4 sqrt(1-Q) - 1) + 1.
inline double g_t(double Q, double eta, int J, double lambda)
{
    const double r = 1.0 - Q;
    return r / (4.0 * eta * J * lambda * Q) * (5.0 * r + 4.0 * std::sqrt(r) - 1.0) + 1.0;
}

/// C = (eta J / 2)((delta + mu)/Q + (delta - mu)/2) + (1-Q)/(2 L^2 Q) ((1 - Q + Q/J) mu + 4 delta).
inline double c_t(double Q, double eta, int J, double L, double mu, double delta)
{
    const double r = 1.0 - Q;
    const double a = eta * J / 2.0 * ((delta + mu) / Q + (delta - mu) / 2.0);
    const double b = r / (2.0 * L * L * Q) * ((r + Q / J) * mu + 4.0 * delta);
    return a + b;
}

struct BoundParams {
    double L = 0.0;
    double lambda = 0.0;
    double mu = 0.0;
    double delta = 0.0;
    std::vector<double> eta; ///< per-round learning rates, length T
    int J = 1;
    std::size_t T = 0;
    std::vector<double> phi;
    double Gamma = 0.0; ///< E[F(theta_0)] - F*
    double Fstar = 0.0;

    /// Throws unless 1/(10L) <= eta_t J < 1/(2L) for every round (lower edge with 1e-12 relative slack).
    void check_admissible() const
    {
        if (eta.size() != T) throw DomainError("BoundParams: eta must have one entry per round");
        if (!(L > 0.0) || !(lambda > 0.0)) throw DomainError("BoundParams: L and lambda must be positive");
        for (std::size_t t = 0; t < T; ++t) {
            const double ej = eta[t] * J;
            if (ej < (1.0 - 1e-12) / (10.0 * L) || !(ej < 1.0 / (2.0 * L)))
                throw DomainError("BoundParams: eta_t J outside [1/(10L), 1/(2L)) at round " + std::to_string(t));
        }
        if (!phi.empty()) {
            double s = 0.0;
            for (double f : phi) {
                if (f < 0.0) throw DomainError("BoundParams: phi must be nonnegative");
                s += f;
            }
            if (std::abs(s - 1.0) > 1e-9) throw DomainError("BoundParams: phi must sum to one");
        }
    }

    [[nodiscard]] double Q(std::size_t t) const { return q_t(eta[t], J, L); }
    [[nodiscard]] double G(std::size_t t) const { return g_t(Q(t), eta[t], J, lambda); }
    [[nodiscard]] double C(std::size_t t) const { return c_t(Q(t), eta[t], J, L, mu, delta); }
};

/**
 * Noise surrogate H(w_dl, w_ul, p): a weighted sum of inverse post-processing SNRs,
 *
 *   (LD/2) ((1-Q+sqrt(1-Q))/Q) sigma_d^2 [sum_k a_k / g_k] / [sum_k a_k]
 *     + (LD/2) [sigma_d^2 sum_k a_k^2 / g_k + sigma_u^2 / 2] / [sum_k a_k]^2,
 *
 * with a_k = sqrt(p_k)|h_k^H w_ul| and g_k = |h_k^H w_dl|^2.
 */
inline double h_of(const BeamformingSolution& sol, const ChannelState& ch, const NoiseParams& noise, double L,
                   double Q, Eigen::Index D)
{
    const std::size_t K = ch.num_devices();
    if (sol.p.size() != K) throw DomainError("h_of: power vector length mismatch");
    double num1 = 0.0;
    double num2 = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const double dl = std::abs(inner(ch.h[k], sol.w_dl));
        if (!(dl > kChannelFloor)) throw DomainError("h_of: downlink gain of device " + std::to_string(k) + " below floor");
        const double a = std::sqrt(sol.p[k]) * std::abs(inner(ch.h[k], sol.w_ul));
        num1 += a / (dl * dl);
        num2 += a * a / (dl * dl);
        den += a;
    }
    if (!(den > kChannelFloor)) throw DomainError("h_of: total uplink effective gain below floor");
    const double r = 1.0 - Q;
    const double c = L * static_cast<double>(D) / 2.0;
    return c * ((r + std::sqrt(r)) / Q) * noise.sigma2_dl * num1 / den +
           c * (noise.sigma2_dl * num2 + noise.sigma2_ul / 2.0) / (den * den);
}

// ------------------------------------------------------------------------
// Real lifting

/// [Re w; Im w].
inline RVec lift_vector(const CVec& w)
{
    const auto N = w.size();
    RVec x(2 * N);
    x.head(N) = w.real();
    x.tail(N) = w.imag();
    return x;
}

inline CVec unlift_vector(const RVec& x)
{
    const auto N = x.size() / 2;
    CVec w(N);
    for (Eigen::Index i = 0; i < N; ++i) w[i] = {x[i], x[N + i]};
    return w;
}

/// [[Re(h h^H), -Im(h h^H)], [Im(h h^H), Re(h h^H)]]; x^T H x = |h^H w|^2.
inline Eigen::MatrixXd lift_channel(const CVec& h)
{
    const auto N = h.size();
    const Eigen::MatrixXcd hh = h * h.adjoint();
    Eigen::MatrixXd H(2 * N, 2 * N);
    H.topLeftCorner(N, N) = hh.real();
    H.topRightCorner(N, N) = -hh.imag();
    H.bottomLeftCorner(N, N) = hh.imag();
    H.bottomRightCorner(N, N) = hh.real();
    return H;
}

struct RealLift {
    RVec x_dl;
    RVec x_ul;
    std::vector<Eigen::MatrixXd> Hk;
};

inline RealLift lift(const BeamformingSolution& sol, const ChannelState& ch)
{
    RealLift r;
    r.x_dl = lift_vector(sol.w_dl);
    r.x_ul = lift_vector(sol.w_ul);
    r.Hk.reserve(ch.num_devices());
    for (const auto& h : ch.h) r.Hk.push_back(lift_channel(h));
    return r;
}

/// Constants shared by every evaluation of Phi within one round.
struct PhiConstants {
    NoiseParams noise;
    double L = 0.0;
    double Q = 1.0;
    Eigen::Index D = 0;

    [[nodiscard]] double scale() const { return L * static_cast<double>(D) / 2.0; }
    [[nodiscard]] double dl_weight() const
    {
        const double r = 1.0 - Q;
        return (r + std::sqrt(r)) / Q;
    }
};

/**
 * Phi(x_dl, x_ul, p): H written over the lifted variables. With
 * g_k = x_dl^T H_k x_dl, s_k = sqrt(p_k) (x_ul^T H_k x_ul)^(1/2), S = sum s_k,
 * A = sum s_k / g_k, B = sum s_k^2 / g_k:
 *
 *   Phi = c w sigma_d^2 A / S + c (sigma_d^2 B + sigma_u^2 / 2) / S^2.
 */
inline double phi_of(const RVec& x_dl, const RVec& x_ul, std::span<const double> p,
                     std::span<const Eigen::MatrixXd> Hk, const PhiConstants& pc)
{
    double A = 0.0;
    double B = 0.0;
    double S = 0.0;
    for (std::size_t k = 0; k < Hk.size(); ++k) {
        const double g = x_dl.dot(Hk[k] * x_dl);
        if (!(g > kChannelFloor * kChannelFloor)) throw DomainError("phi_of: downlink gain below floor");
        const double u = std::max(0.0, x_ul.dot(Hk[k] * x_ul));
        const double s = std::sqrt(p[k]) * std::sqrt(u);
        A += s / g;
        B += s * s / g;
        S += s;
    }
    if (!(S > kChannelFloor)) throw DomainError("phi_of: total uplink effective gain below floor");
    const double c = pc.scale();
    const double sd = pc.noise.sigma2_dl;
    return c * pc.dl_weight() * sd * A / S + c * (sd * B + pc.noise.sigma2_ul / 2.0) / (S * S);
}

inline double phi_of(const RealLift& lf, std::span<const double> p, const PhiConstants& pc)
{
    return phi_of(lf.x_dl, lf.x_ul, p, lf.Hk, pc);
}

// ------------------------------------------------------------------------
// Horizon quantities

namespace detail {

/// sum_{t<T-1} v_t prod_{s=t+1}^{T-1} G_s + v_{T-1}.
inline double discounted_sum(std::span<const double> v, std::span<const double> G)
{
    double acc = 0.0;
    double tail = 1.0;
    for (std::size_t i = v.size(); i-- > 0;) {
        acc += v[i] * tail;
        tail *= G[i];
    }
    return acc;
}

} // namespace detail

inline double psi_of(std::span<const double> H, std::span<const double> G)
{
    if (H.size() != G.size()) throw DomainError("psi_of: H and G must have length T");
    return detail::discounted_sum(H, G);
}

struct BoundBreakdown {
    std::vector<double> Q, G, C, H;
    double Lambda = 0.0;
    double Psi = 0.0;
    double initial_term = 0.0; ///< Gamma prod_t G_t
    double total = 0.0;
};

/// Gamma prod G_t + Lambda + Psi, with every intermediate exposed.
inline BoundBreakdown proposition_breakdown(const BoundParams& bp, std::span<const double> H)
{
    bp.check_admissible();
    if (H.size() != bp.T) throw DomainError("proposition_bound: need one H value per round");
    BoundBreakdown b;
    b.H.assign(H.begin(), H.end());
    double prodG = 1.0;
    for (std::size_t t = 0; t < bp.T; ++t) {
        b.Q.push_back(bp.Q(t));
        b.G.push_back(bp.G(t));
        b.C.push_back(bp.C(t));
        prodG *= b.G.back();
    }
    b.Lambda = detail::discounted_sum(b.C, b.G);
    b.Psi = psi_of(b.H, b.G);
    b.initial_term = bp.Gamma * prodG;
    b.total = b.initial_term + b.Lambda + b.Psi;
    return b;
}

inline double proposition_bound(const BoundParams& bp, std::span<const double> H)
{
    return proposition_breakdown(bp, H).total;
}

} // namespace otafl
