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

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <map>
#include <vector>

namespace otafl {

inline double ci90_half_width(const std::vector<double>& xs)
{
    const std::size_t n = xs.size();
    if (n < 2) return 0.0;
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    return boost::math::quantile(dist, 0.95) * sd / std::sqrt(static_cast<double>(n));
}

inline std::vector<SchemeSummary> summarize(const MetricsTable& table)
{
    std::vector<Scheme> order;
    std::map<Scheme, std::map<std::size_t, std::vector<const MetricsRow*>>> by;
    for (const auto& row : table) {
        if (!by.count(row.scheme)) order.push_back(row.scheme);
        by[row.scheme][row.round].push_back(&row);
    }
    std::vector<SchemeSummary> out;
    for (Scheme s : order) {
        SchemeSummary sum;
        sum.scheme = s;
        for (const auto& [round, rows] : by[s]) {
            std::vector<double> acc, loss;
            for (const auto* r : rows) {
                acc.push_back(r->test_accuracy);
                loss.push_back(r->global_loss);
                sum.aborted_rounds += r->aborted ? 1 : 0;
            }
            sum.replicates = std::max(sum.replicates, rows.size());
            auto band = [](const std::vector<double>& v) {
                double m = 0.0;
                for (double x : v) m += x;
                return Band{m / static_cast<double>(v.size()), ci90_half_width(v)};
            };
            sum.accuracy.push_back(band(acc));
            sum.loss.push_back(band(loss));
        }
        out.push_back(std::move(sum));
    }
    return out;
}

} // namespace otafl
