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

// Output files: metrics.csv, summary.json, the optional solver trace, and the bound report.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "otafl/bound.hpp"
#include "otafl/config.hpp"
#include "otafl/errors.hpp"
#include "otafl/harness.hpp"
#include "otafl/recursion.hpp"

namespace otafl {

inline constexpr const char* kMetricsHeader =
    "replicate,round,scheme,global_loss,test_accuracy,h_value,phi_value,min_dl_snr_db,sum_alpha,wall_ms,aborted";
inline constexpr const char* kTraceHeader = "replicate,round,scheme,iter,block,phi,step";
inline constexpr int kSummaryFormatVersion = 1;

namespace detail {

/// Shortest text that parses back to the same double; non-finite values as nan/inf/-inf.
inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, std::size_t line)
{
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw FormatError("metrics.csv line " + std::to_string(line) + ": bad number '" + s + "'");
    return v;
}

inline std::size_t parse_index(const std::string& s, std::size_t line)
{
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size() || s[0] == '-')
        throw FormatError("metrics.csv line " + std::to_string(line) + ": bad integer '" + s + "'");
    return static_cast<std::size_t>(v);
}

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace detail

inline void write_metrics_csv(std::ostream& os, const MetricsTable& rows)
{
    using detail::format_double;
    os << kMetricsHeader << '\n';
    for (const auto& r : rows)
        os << r.replicate << ',' << r.round << ',' << scheme_name(r.scheme) << ',' << format_double(r.global_loss)
           << ',' << format_double(r.test_accuracy) << ',' << format_double(r.h_value) << ','
           << format_double(r.phi_value) << ',' << format_double(r.min_dl_snr_db) << ','
           << format_double(r.sum_alpha) << ',' << format_double(r.wall_ms) << ',' << (r.aborted ? 1 : 0) << '\n';
}

inline MetricsTable parse_metrics_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader) throw FormatError("metrics.csv: missing or wrong header");
    MetricsTable rows;
    std::size_t n = 1;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        const auto c = detail::split_csv(line);
        if (c.size() != 11)
            throw FormatError("metrics.csv line " + std::to_string(n) + ": expected 11 fields, got " +
                              std::to_string(c.size()));
        MetricsRow r;
        r.replicate = detail::parse_index(c[0], n);
        r.round = detail::parse_index(c[1], n);
        try {
            r.scheme = parse_scheme(c[2]);
        } catch (const InvalidConfig& e) {
            throw FormatError("metrics.csv line " + std::to_string(n) + ": " + e.what());
        }
        r.global_loss = detail::parse_double(c[3], n);
        r.test_accuracy = detail::parse_double(c[4], n);
        r.h_value = detail::parse_double(c[5], n);
        r.phi_value = detail::parse_double(c[6], n);
        r.min_dl_snr_db = detail::parse_double(c[7], n);
        r.sum_alpha = detail::parse_double(c[8], n);
        r.wall_ms = detail::parse_double(c[9], n);
        if (c[10] != "0" && c[10] != "1")
            throw FormatError("metrics.csv line " + std::to_string(n) + ": aborted must be 0 or 1");
        r.aborted = c[10] == "1";
        rows.push_back(r);
    }
    return rows;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& rows)
{
    os << kTraceHeader << '\n';
    for (const auto& r : rows)
        os << r.replicate << ',' << r.round << ',' << scheme_name(r.scheme) << ',' << r.iter << ','
           << block_name(r.block) << ',' << detail::format_double(r.phi) << ',' << detail::format_double(r.step)
           << '\n';
}

// ------------------------------------------------------------------------
// Bound report

struct BoundReport {
    bool admissible = false;
    std::string error;
    Scheme scheme = Scheme::jdu;
    double L = 0.0;
    double lambda = 0.0;
    double mu = 0.0;
    double delta = 0.0;
    bool heuristic_constants = false;
    bool measured_sgd_constants = false;
    double eta = 0.0;
    int J = 1;
    double Fstar = 0.0;
    bool exact_Fstar = false;
    double Gamma = 0.0;
    BoundBreakdown breakdown;
    double final_loss_gap = std::numeric_limits<double>::quiet_NaN(); ///< F(theta_T) - F* of the realised run
    std::optional<RecursionReport> recursion;
};

/**
 * Evaluates the T-round bound for replicate 0 of the configured scheme: the realised
 * channels and beamformers give H_t (zero for the ideal scheme); mu and delta are
 * measured along the run unless overridden.
 */
inline BoundReport bound_report(const ExperimentConfig& cfg)
{
    const SharedData shared = load_shared_data(cfg);
    const ReplicateSetup su = prepare_replicate(cfg, 0, shared);
    BoundReport rep;
    rep.scheme = cfg.scheme;
    rep.L = su.L;
    rep.lambda = su.lambda;
    rep.heuristic_constants = su.heuristic_constants;
    rep.eta = su.eta;
    rep.J = cfg.learning.J;

    const std::size_t T = cfg.system.T;
    std::vector<double> H;
    std::vector<ModelVector> thetas{su.theta0};
    std::vector<ChannelState> channels;
    std::vector<BeamformingSolution> sols;
    bool any_abort = false;
    const MetricsTable rows = run_replicate(cfg, su, cfg.scheme, [&](const RoundObservation& o) {
        thetas.push_back(*o.theta_next);
        channels.push_back(*o.ch);
        if (o.sol) sols.push_back(*o.sol);
        H.push_back(cfg.scheme == Scheme::ideal ? 0.0 : o.row->h_value);
        any_abort = any_abort || o.row->aborted;
    });

    if (cfg.bound.mu && cfg.bound.delta) {
        rep.mu = *cfg.bound.mu;
        rep.delta = *cfg.bound.delta;
    } else {
        rep.measured_sgd_constants = true;
        SgdConstants c;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> phi;
            if (cfg.scheme == Scheme::jdu || cfg.scheme == Scheme::sdu) {
                try {
                    phi = aggregation_weights(sols[t], channels[t]);
                } catch (const DegenerateChannel&) {
                }
            }
            const ModelVector one[] = {thetas[t]};
            const auto ct = estimate_sgd_constants(one, su.spec, su.train, cfg.learning.batch_size, phi);
            c.mu = std::max(c.mu, ct.mu);
            c.delta = std::max(c.delta, ct.delta);
        }
        rep.mu = cfg.bound.mu.value_or(c.mu);
        rep.delta = cfg.bound.delta.value_or(c.delta);
    }

    if (su.spec.task != Task::mlp && su.spec.l2_reg > 0.0) {
        rep.Fstar = solve_optimum(su.train, su.spec).value;
        rep.exact_Fstar = true;
    }
    rep.Gamma = global_loss(su.theta0, su.train, su.spec) - rep.Fstar;
    rep.final_loss_gap = rows.back().global_loss - rep.Fstar;

    BoundParams bp;
    bp.L = rep.L;
    bp.lambda = rep.lambda;
    bp.mu = rep.mu;
    bp.delta = rep.delta;
    bp.eta.assign(T, su.eta);
    bp.J = rep.J;
    bp.T = T;
    bp.Gamma = rep.Gamma;
    bp.Fstar = rep.Fstar;
    for (double h : H)
        if (!std::isfinite(h)) {
            rep.error = "H is undefined in a round with a degenerate link";
            return rep;
        }
    try {
        rep.breakdown = proposition_breakdown(bp, H);
        rep.admissible = true;
    } catch (const DomainError& e) {
        rep.error = e.what();
        return rep;
    }

    const bool aligned = cfg.scheme == Scheme::jdu || cfg.scheme == Scheme::sdu;
    if (cfg.bound.recursion_mc >= 2 && aligned && !any_abort && T > 0 && rep.exact_Fstar) {
        RecursionSetup rs;
        rs.data = &su.train;
        rs.spec = su.spec;
        rs.Fstar = rep.Fstar;
        rs.theta0 = su.theta0;
        rs.channels = channels;
        rs.sols = sols;
        rs.noise = su.noise;
        rs.eta = bp.eta;
        rs.J = bp.J;
        rs.batch = cfg.learning.batch_size;
        rep.recursion = check_recursion(rs, bp, cfg.bound.recursion_mc, su.rng.child(1));
    }
    return rep;
}

inline nlohmann::json to_json(const BoundReport& b)
{
    using nlohmann::json;
    json j;
    j["admissible"] = b.admissible;
    if (!b.error.empty()) j["error"] = b.error;
    j["scheme"] = scheme_name(b.scheme);
    j["constants"] = {{"L", b.L},
                      {"lambda", b.lambda},
                      {"mu", b.mu},
                      {"delta", b.delta},
                      {"heuristic_smoothness", b.heuristic_constants},
                      {"measured_mu_delta", b.measured_sgd_constants}};
    j["eta"] = b.eta;
    j["J"] = b.J;
    j["F_star"] = b.Fstar;
    j["exact_F_star"] = b.exact_Fstar;
    j["Gamma"] = b.Gamma;
    j["final_loss_gap"] = b.final_loss_gap;
    if (b.admissible) {
        const auto& d = b.breakdown;
        j["Q"] = d.Q;
        j["G"] = d.G;
        j["C"] = d.C;
        j["H"] = d.H;
        j["Lambda"] = d.Lambda;
        j["Psi"] = d.Psi;
        j["initial_term"] = d.initial_term;
        j["total"] = d.total;
    }
    if (b.recursion) {
        const auto& r = *b.recursion;
        json rounds = json::array();
        for (const auto& m : r.rounds)
            rounds.push_back({{"t", m.t}, {"lhs", m.lhs}, {"rhs", m.rhs}, {"std_error", m.std_error},
                              {"violated", m.violated}});
        j["recursion"] = {{"rounds", rounds},
                          {"mean_gap", r.mean_gap},
                          {"violations", r.violations},
                          {"bound_holds", r.bound_holds}};
    }
    return j;
}

// ------------------------------------------------------------------------
// summary.json

inline nlohmann::json summary_json(const ExperimentConfig& cfg, const std::vector<SchemeSummary>& summaries,
                                   const BoundReport* bound = nullptr)
{
    using nlohmann::json;
    json schemes = json::array();
    for (const auto& s : summaries) {
        json js;
        js["scheme"] = scheme_name(s.scheme);
        js["replicates"] = s.replicates;
        js["aborted_rounds"] = s.aborted_rounds;
        js["final_accuracy"] = {{"mean", s.final_accuracy().mean}, {"ci90", s.final_accuracy().half_width}};
        js["final_loss"] = {{"mean", s.final_loss().mean}, {"ci90", s.final_loss().half_width}};
        json am = json::array(), ac = json::array(), lm = json::array(), lc = json::array();
        for (std::size_t t = 0; t < s.accuracy.size(); ++t) {
            am.push_back(s.accuracy[t].mean);
            ac.push_back(s.accuracy[t].half_width);
            lm.push_back(s.loss[t].mean);
            lc.push_back(s.loss[t].half_width);
        }
        js["per_round"] = {{"accuracy_mean", am}, {"accuracy_ci90", ac}, {"loss_mean", lm}, {"loss_ci90", lc}};
        schemes.push_back(js);
    }
    json j;
    j["format_version"] = kSummaryFormatVersion;
    j["config"] = to_json(cfg);
    j["schemes"] = schemes;
    if (bound) j["bound"] = to_json(*bound);
    return j;
}

/// Writes metrics.csv, summary.json and (when non-null) trace.csv into `dir`.
inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg, const MetricsTable& table,
                          const std::vector<TraceRow>* trace = nullptr, const BoundReport* bound = nullptr)
{
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw FormatError("cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("metrics.csv");
        write_metrics_csv(f, table);
    }
    {
        auto f = open("summary.json");
        f << summary_json(cfg, summarize(table), bound).dump(2) << '\n';
    }
    if (trace) {
        auto f = open("trace.csv");
        write_trace_csv(f, *trace);
    }
}

// ------------------------------------------------------------------------
// Replay

/// Re-executes round t of replicate r from scratch (rounds 0..t-1 are re-run to obtain theta_t).
inline RoundOutcome replay_round(const ExperimentConfig& cfg, std::size_t r, Scheme scheme, std::size_t t)
{
    if (t >= cfg.system.T) throw InvalidConfig("replay_round: round index beyond the horizon");
    const ReplicateSetup su = prepare_replicate(cfg, r, load_shared_data(cfg));
    ModelVector theta = su.theta0;
    for (std::size_t s = 0; s < t; ++s) theta = execute_round(cfg, su, scheme, s, theta).theta_next;
    return execute_round(cfg, su, scheme, t, theta);
}

} // namespace otafl
