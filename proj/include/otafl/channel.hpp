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

// Device placement, large-scale path gain with log-normal shadowing, per-round
// Rayleigh fading and thermal noise levels. Powers are linear watts everywhere;
// dBm/dB only appear at the conversion helpers.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <random>
#include <utility>
#include <vector>

#include "otafl/errors.hpp"
#include "otafl/rng.hpp"

namespace otafl {

using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double x) { return 10.0 * std::log10(x); }
inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

struct DeviceGeometry {
    std::vector<double> distances_km;
    std::vector<double> shadow_db;

    [[nodiscard]] std::size_t size() const { return distances_km.size(); }
};

/// Channel vectors of one round; the same h_k serves downlink and uplink (TDD).
struct ChannelState {
    std::vector<CVec> h;
    std::size_t round_index = 0;

    [[nodiscard]] std::size_t num_devices() const { return h.size(); }
    [[nodiscard]] Eigen::Index num_antennas() const { return h.empty() ? 0 : h.front().size(); }
};

/// Variances of one complex noise element; real and imaginary parts carry half each.
struct NoiseParams {
    double sigma2_dl = 0.0;
    double sigma2_ul = 0.0;
};

/// Uniform distances on [d_min, d_max], zero-mean normal shadowing in dB.
inline DeviceGeometry gen_topology(std::size_t K, std::pair<double, double> d_range, double shadow_std_db,
                                   const RngSpec& rng)
{
    const auto [d_min, d_max] = d_range;
    if (K == 0) throw InvalidConfig("gen_topology: K must be >= 1");
    if (!(d_min > 0.0) || !(d_max >= d_min) || !std::isfinite(d_max))
        throw InvalidConfig("gen_topology: distance range must satisfy 0 < d_min <= d_max < inf");
    if (!(shadow_std_db >= 0.0)) throw InvalidConfig("gen_topology: shadowing std must be >= 0");

    DeviceGeometry g;
    g.distances_km.resize(K);
    g.shadow_db.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        auto eng = rng.engine(Stream::geometry, 0, k);
        std::uniform_real_distribution<double> ud(0.0, 1.0);
        g.distances_km[k] = d_min + (d_max - d_min) * ud(eng);
        std::normal_distribution<double> nd(0.0, 1.0);
        g.shadow_db[k] = shadow_std_db * nd(eng);
    }
    return g;
}

inline double path_gain_db(double d_km, double shadow_db)
{
    if (!(d_km > 0.0)) throw DomainError("path_gain_db: distance must be positive");
    return -139.2 - 35.0 * std::log10(d_km) - shadow_db;
}

/// h_k = sqrt(G_k) * hbar_k, hbar_k ~ CN(0, I_N); one sub-stream per (round, device).
inline ChannelState draw_channels(const DeviceGeometry& geom, Eigen::Index N, std::size_t t, const RngSpec& rng)
{
    if (N < 1) throw InvalidConfig("draw_channels: N must be >= 1");
    ChannelState cs;
    cs.round_index = t;
    cs.h.reserve(geom.size());
    for (std::size_t k = 0; k < geom.size(); ++k) {
        const double amp = std::sqrt(db_to_linear(path_gain_db(geom.distances_km[k], geom.shadow_db[k])));
        auto eng = rng.engine(Stream::fading, t, k);
        CVec h(N);
        for (Eigen::Index n = 0; n < N; ++n) h[n] = amp * complex_normal(eng);
        cs.h.push_back(std::move(h));
    }
    return cs;
}

/// Thermal noise power in watts for PSD n0 (dBm/Hz) over a bandwidth, plus noise figure.
inline double noise_variance(double n0_dbm_hz, double bandwidth_hz, double nf_db)
{
    if (!(bandwidth_hz > 0.0)) throw DomainError("noise_variance: bandwidth must be positive");
    return dbm_to_watt(n0_dbm_hz + 10.0 * std::log10(bandwidth_hz) + nf_db);
}

} // namespace otafl
