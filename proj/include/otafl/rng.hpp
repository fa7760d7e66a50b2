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

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace otafl {

/// Labels of the independent random streams used by a simulation.
enum class Stream : std::uint64_t {
    geometry = 1,
    fading = 2,
    dl_noise = 3,
    ul_noise = 4,
    minibatch = 5,
    init = 6,
    data = 7,
    beamforming = 8,
    restarts = 9,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/**
 * Counter-based seeding: every (master seed, stream, round, device) tuple maps to
 * its own engine. A draw for round t never depends on how many numbers other rounds
 * or devices consumed, so execution order is irrelevant to the result.
 */
struct RngSpec {
    std::uint64_t master_seed = 0;

    [[nodiscard]] std::uint64_t key(Stream s, std::uint64_t t = 0, std::uint64_t k = 0) const noexcept
    {
        std::uint64_t h = splitmix64(master_seed);
        h = splitmix64(h ^ static_cast<std::uint64_t>(s));
        h = splitmix64(h ^ (t * 0xD1B54A32D192ED03ULL));
        h = splitmix64(h ^ (k * 0xAEF17502108EF2D9ULL));
        return h;
    }

    [[nodiscard]] std::mt19937_64 engine(Stream s, std::uint64_t t = 0, std::uint64_t k = 0) const
    {
        return std::mt19937_64(key(s, t, k));
    }

    /// Seed of an isolated child experiment (replicate, realization).
    [[nodiscard]] RngSpec child(std::uint64_t index) const noexcept
    {
        return RngSpec{splitmix64(master_seed ^ splitmix64(index + 0x51ED2705ULL))};
    }
};

/// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
template <class Engine>
std::complex<double> complex_normal(Engine& eng, double variance = 1.0)
{
    std::normal_distribution<double> nd(0.0, std::sqrt(variance / 2.0));
    const double re = nd(eng);
    const double im = nd(eng);
    return {re, im};
}

} // namespace otafl
