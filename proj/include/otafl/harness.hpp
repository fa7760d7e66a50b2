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

// Experiment orchestration. One round is: draw channels, design beamforming, broadcast
// theta_t, J local SGD steps per device, aggregate over the air. Replicates are fully
// isolated (own RNG streams and buffers) and run in parallel; within a replicate the
// rounds are sequential. Every random draw is keyed by (replicate seed, stream, t, k),
// so different schemes see identical channels, noise, initial models and mini-batches.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "otafl/airlink.hpp"
#include "otafl/bound.hpp"
#include "otafl/channel.hpp"
#include "otafl/config.hpp"
#include "otafl/dataset.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/optim.hpp"
#include "otafl/rng.hpp"

namespace otafl {

struct MetricsRow {
    std::size_t replicate = 0;
    std::size_t round = 0;
    Scheme scheme = Scheme::jdu;
    double global_loss = 0.0;
    double test_accuracy = 0.0;
    double h_value = std::numeric_limits<double>::quiet_NaN();
    double phi_value = std::numeric_limits<double>::quiet_NaN();
    double min_dl_snr_db = std::numeric_limits<double>::quiet_NaN();
    double sum_alpha = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
    bool aborted = false;
};

using MetricsTable = std::vector<MetricsRow>;

/// Datasets read from disk once and shared by every replicate.
struct SharedData {
    std::optional<Dataset> train;
    std::optional<Dataset> test;
};

inline SharedData load_shared_data(const ExperimentConfig& cfg)
{
    SharedData sd;
    const auto& l = cfg.learning;
    if (l.dataset != DatasetKind::mnist) return sd;
    sd.train = ingest_mnist(l.mnist_train_images, l.mnist_train_labels, l.mnist_limit);
    if (!l.mnist_test_images.empty()) sd.test = ingest_mnist(l.mnist_test_images, l.mnist_test_labels);
    else sd.test = *sd.train;
    return sd;
}

/// Everything a replicate needs before its first round.
struct ReplicateSetup {
    std::size_t index = 0;
    RngSpec rng;          ///< per-replicate streams (channels, noise, mini-batches, RBF)
    DeviceGeometry geom;
    Dataset train;
    Dataset test;
    LossSpec spec;
    ModelVector theta0;
    NoiseParams noise;
    PowerBudget budget;
    double L = 0.0;
    double lambda = 0.0;
    bool heuristic_constants = false;
    double eta = 0.0;
    double Q = 0.0;
};

/**
 * Draws geometry, data partition and theta0 for replicate r. Each item comes from the
 * replicate's own seed unless pinned, in which case it comes from the master seed and
 * is shared by all replicates.
 */
inline ReplicateSetup prepare_replicate(const ExperimentConfig& cfg, std::size_t r, const SharedData& shared = {})
{
    const RngSpec master{cfg.seeds.master};
    ReplicateSetup su;
    su.index = r;
    su.rng = master.child(r);
    const RngSpec geom_rng = cfg.seeds.pin_geometry ? master : su.rng;
    const RngSpec data_rng = cfg.seeds.pin_data ? master : su.rng;
    const RngSpec init_rng = cfg.seeds.pin_init ? master : su.rng;
    const auto& s = cfg.system;
    const auto& l = cfg.learning;

    su.geom = gen_topology(s.K, {s.d_min_km, s.d_max_km}, s.shadow_std_db, geom_rng);
    su.spec = cfg.loss_spec();
    if (l.dataset == DatasetKind::mixture) {
        const MixtureSpec ms{l.classes, l.feature_dim, l.separation};
        su.train = make_gaussian_mixture(ms, l.S, data_rng, 0);
        su.test = make_gaussian_mixture(ms, l.test_size, data_rng, 1);
    } else {
        if (!shared.train) throw InvalidConfig("mnist dataset requested but not loaded");
        su.train = *shared.train;
        su.test = *shared.test;
    }
    partition_dataset(su.train, s.K, l.partition, data_rng);
    for (const auto& shard : su.train.shards)
        if (shard.size() < l.batch_size)
            throw InvalidConfig("learning.batch_size " + std::to_string(l.batch_size) + " exceeds a shard of size " +
                                std::to_string(shard.size()));

    su.theta0 = ModelVector::Zero(model_dim(su.spec));
    {
        auto eng = init_rng.engine(Stream::init);
        std::normal_distribution<double> nd(0.0, l.init_std);
        for (Eigen::Index i = 0; i < raw_dim(su.spec); ++i) su.theta0[i] = nd(eng);
    }

    su.noise.sigma2_dl = noise_variance(s.n0_dbm_hz, s.bw_dl_hz, s.nf_dev_db);
    su.noise.sigma2_ul = noise_variance(s.n0_dbm_hz, s.bw_ul_hz, s.nf_bs_db);
    su.budget.P_dl = dbm_to_watt(s.P_dl_dbm);
    su.budget.P_ul.assign(s.K, dbm_to_watt(s.P_ul_dbm));

    const auto sm = estimate_smoothness(su.spec, su.train);
    su.L = cfg.bound.L.value_or(sm.L);
    su.lambda = cfg.bound.lambda.value_or(sm.lambda);
    su.heuristic_constants = sm.heuristic && !(cfg.bound.L && cfg.bound.lambda);
    su.eta = l.eta_rule == EtaRule::standard ? 1.0 / (10.0 * l.J * su.L) : l.eta;
    try {
        su.Q = q_t(su.eta, l.J, su.L);
    } catch (const DomainError& e) {
        throw InvalidConfig(std::string("learning.eta: ") + e.what());
    }
    return su;
}

/// Rows of the optional solver trace: one line per accepted PGD step.
struct TraceRow {
    std::size_t replicate = 0;
    std::size_t round = 0;
    Scheme scheme = Scheme::jdu;
    int iter = 0;
    Block block = Block::dl;
    double phi = 0.0;
    double step = 0.0;
};

/// State handed to an observer after every round.
struct RoundObservation {
    std::size_t t = 0;
    const ModelVector* theta_t = nullptr;
    const ModelVector* theta_next = nullptr;
    const ChannelState* ch = nullptr;
    const BeamformingSolution* sol = nullptr; ///< null for the ideal scheme
    const MetricsRow* row = nullptr;
};

using RoundObserver = std::function<void(const RoundObservation&)>;

struct RoundOutcome {
    ModelVector theta_next;
    ChannelState ch;
    std::optional<BeamformingSolution> sol;
    MetricsRow row;
};

namespace detail {

inline double min_dl_snr_db(const BeamformingSolution& sol, const ChannelState& ch, const ModelVector& theta,
                            double sigma2_dl)
{
    // per complex element: signal 2||theta||^2 / D, post-scaled noise sigma_d^2 / |h^H w|^2
    const double sig = 2.0 * theta.squaredNorm() / static_cast<double>(theta.size());
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& h : ch.h) worst = std::min(worst, std::norm(inner(h, sol.w_dl)) * sig / sigma2_dl);
    return linear_to_db(worst);
}

inline void fill_design_metrics(MetricsRow& row, const BeamformingSolution& sol, const ChannelState& ch,
                                const ReplicateSetup& su, const ModelVector& theta, AggregationMode mode)
{
    const auto D = theta.size();
    try {
        row.h_value = h_of(sol, ch, su.noise, su.L, su.Q, D);
    } catch (const DomainError&) {
    }
    try {
        row.phi_value = phi_of(lift(sol, ch), sol.p, PhiConstants{su.noise, su.L, su.Q, D});
    } catch (const DomainError&) {
    }
    row.min_dl_snr_db = min_dl_snr_db(sol, ch, theta, su.noise.sigma2_dl);
    std::complex<double> sum{0.0, 0.0};
    for (std::size_t k = 0; k < ch.num_devices(); ++k)
        sum += mode == AggregationMode::aligned ? std::complex<double>(effective_alpha(sol.p[k], ch.h[k], sol.w_ul))
                                                : raw_alpha(sol.p[k], ch.h[k], sol.w_ul);
    row.sum_alpha = std::abs(sum);
}

} // namespace detail

/**
 * Round t of one replicate, starting from theta_t. A pure function of (config, setup,
 * scheme, t, theta_t): it can be replayed on its own.
 */
inline RoundOutcome execute_round(const ExperimentConfig& cfg, const ReplicateSetup& su, Scheme scheme,
                                  std::size_t t, const ModelVector& theta, std::vector<TraceRow>* trace = nullptr)
{
    const auto start = Clock::now();
    const auto& l = cfg.learning;
    const std::size_t K = cfg.system.K;
    const auto D = theta.size();

    RoundOutcome out;
    out.ch = draw_channels(su.geom, cfg.system.N, t, su.rng);
    const auto& ch = out.ch;
    out.row.replicate = su.index;
    out.row.round = t + 1;
    out.row.scheme = scheme;

    PgdConfig pgd = cfg.solver.pgd;
    pgd.deadline = start + std::chrono::duration_cast<Clock::duration>(
                               std::chrono::duration<double>(cfg.solver.round_budget_s));
    TraceSink sink;
    if (trace)
        sink = [&](int it, Block b, double phi, double step) {
            trace->push_back({su.index, t, scheme, it, b, phi, step});
        };

    auto local_models = [&](const std::vector<RVec>& starts) {
        std::vector<RVec> local;
        local.reserve(K);
        for (std::size_t k = 0; k < K; ++k) {
            auto eng = su.rng.engine(Stream::minibatch, t, k);
            local.push_back(local_update(starts[k], su.train, k, su.spec, su.eta, l.J, l.batch_size, eng).theta_J);
        }
        return local;
    };

    if (scheme == Scheme::ideal) {
        out.theta_next = ideal_aggregate(local_models(std::vector<RVec>(K, theta)));
    } else {
        const double nt = theta.squaredNorm();
        const auto ctx_proxy =
            make_context(ch, su.noise, su.budget, nt, std::vector<double>(K, nt), su.L, su.Q, D);

        BeamformingSolution sol;
        const AggregationMode mode = scheme == Scheme::rbf ? AggregationMode::raw : AggregationMode::aligned;
        switch (scheme) {
        case Scheme::jdu: sol = jdu_bf_round(ctx_proxy, std::nullopt, cfg.solver.ao, pgd, sink, su.rng).sol; break;
        case Scheme::sdu: sol.w_dl = sdu_downlink(ctx_proxy, pgd, cfg.solver.maxmin); break;
        case Scheme::rbf: sol = random_beamforming(ctx_proxy, su.rng); break;
        case Scheme::ideal: break;
        }

        check_downlink_power(sol.w_dl, theta, su.budget.P_dl);
        std::vector<RVec> est;
        try {
            est = downlink_broadcast(theta, sol.w_dl, ch, su.noise, su.rng);
        } catch (const DegenerateChannel&) {
            out.row.aborted = true;
        }

        if (!out.row.aborted) {
            for (auto& e : est) clear_padding(e, su.spec);
            const auto local = local_models(est);
            std::vector<double> norms(K);
            for (std::size_t k = 0; k < K; ++k) norms[k] = local[k].squaredNorm();
            const auto ctx_true = make_context(ch, su.noise, su.budget, nt, norms, su.L, su.Q, D);

            switch (scheme) {
            case Scheme::jdu:
                if (cfg.solver.norm_proxy == NormProxyMode::resolve)
                    sol = jdu_uplink_refine(ctx_true, sol, cfg.solver.ao, pgd, sink).sol;
                else {
                    const RVec p = project_p(Eigen::Map<const RVec>(sol.p.data(), static_cast<Eigen::Index>(K)),
                                             ctx_true);
                    sol.p.assign(p.data(), p.data() + p.size());
                }
                break;
            case Scheme::sdu: {
                const auto up = sdu_uplink(ctx_true);
                sol.w_ul = up.w_ul;
                sol.p = up.p;
                break;
            }
            case Scheme::rbf:
                for (std::size_t k = 0; k < K; ++k) sol.p[k] = ctx_true.p_cap(k);
                break;
            case Scheme::ideal: break;
            }

            check_uplink_power(sol.p, local, su.budget.P_ul);
            try {
                out.theta_next = uplink_aggregate(local, sol, ch, su.noise, su.rng, mode).theta;
                clear_padding(out.theta_next, su.spec);
            } catch (const DegenerateChannel&) {
                out.row.aborted = true;
            }
        }
        if (out.row.aborted) out.theta_next = theta;
        detail::fill_design_metrics(out.row, sol, ch, su, theta, mode);
        out.sol = sol;
    }

    out.row.global_loss = global_loss(out.theta_next, su.train, su.spec);
    out.row.test_accuracy = evaluate_accuracy(out.theta_next, su.test, su.spec);
    if (cfg.output.timing)
        out.row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    return out;
}

/// Row 0: the initial model, no design metrics.
inline MetricsRow initial_row(const ReplicateSetup& su, Scheme scheme)
{
    MetricsRow row;
    row.replicate = su.index;
    row.round = 0;
    row.scheme = scheme;
    row.global_loss = global_loss(su.theta0, su.train, su.spec);
    row.test_accuracy = evaluate_accuracy(su.theta0, su.test, su.spec);
    return row;
}

/// T rounds of one scheme on a prepared replicate. Returns T + 1 rows.
inline MetricsTable run_replicate(const ExperimentConfig& cfg, const ReplicateSetup& su, Scheme scheme,
                                  const RoundObserver& observer = {}, std::vector<TraceRow>* trace = nullptr)
{
    MetricsTable rows;
    rows.reserve(cfg.system.T + 1);
    rows.push_back(initial_row(su, scheme));
    ModelVector theta = su.theta0;
    for (std::size_t t = 0; t < cfg.system.T; ++t) {
        RoundOutcome o = execute_round(cfg, su, scheme, t, theta, trace);
        rows.push_back(o.row);
        if (observer)
            observer({t, &theta, &o.theta_next, &o.ch, o.sol ? &*o.sol : nullptr, &rows.back()});
        theta = std::move(o.theta_next);
    }
    return rows;
}

struct RunOptions {
    std::size_t threads = 0;                ///< 0: hardware concurrency
    std::vector<TraceRow>* trace = nullptr; ///< collect the solver trace
};

namespace detail {

/// Calls fn(r) for r in [0, n) on up to `threads` workers; fn must only touch slot r.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t r = 0; r < n; ++r) fn(r);
        return;
    }
    std::mutex m;
    std::size_t next = 0;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (;;) {
                std::size_t r;
                {
                    std::lock_guard<std::mutex> lk(m);
                    if (next >= n || err) return;
                    r = next++;
                }
                try {
                    fn(r);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(m);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

} // namespace detail

/**
 * Runs every scheme on every replicate. Replicate r is prepared once and shared by all
 * schemes (common random numbers). Rows are ordered by scheme, then replicate, then round.
 */
inline MetricsTable run_schemes(const ExperimentConfig& cfg, const std::vector<Scheme>& schemes,
                                const RunOptions& opt = {})
{
    const SharedData shared = load_shared_data(cfg);
    const std::size_t R = cfg.seeds.n_replicates;
    std::vector<std::vector<MetricsTable>> per(R, std::vector<MetricsTable>(schemes.size()));
    std::vector<std::vector<TraceRow>> traces(R);
    detail::parallel_for(R, opt.trace ? 1 : opt.threads, [&](std::size_t r) {
        const ReplicateSetup su = prepare_replicate(cfg, r, shared);
        for (std::size_t s = 0; s < schemes.size(); ++s)
            per[r][s] = run_replicate(cfg, su, schemes[s], {}, opt.trace ? &traces[r] : nullptr);
    });
    MetricsTable all;
    for (std::size_t s = 0; s < schemes.size(); ++s)
        for (std::size_t r = 0; r < R; ++r) all.insert(all.end(), per[r][s].begin(), per[r][s].end());
    if (opt.trace)
        for (auto& tr : traces) opt.trace->insert(opt.trace->end(), tr.begin(), tr.end());
    return all;
}

inline MetricsTable run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {})
{
    return run_schemes(cfg, {cfg.scheme}, opt);
}

// ------------------------------------------------------------------------
// Summaries

/// Two-sided 90% Student-t half width of the mean; 0 for a single sample.
double ci90_half_width(const std::vector<double>& xs);

struct Band {
    double mean = 0.0;
    double half_width = 0.0;
};

struct SchemeSummary {
    Scheme scheme = Scheme::jdu;
    std::size_t replicates = 0;
    std::size_t aborted_rounds = 0;
    std::vector<Band> accuracy; ///< per round
    std::vector<Band> loss;     ///< per round
    [[nodiscard]] const Band& final_accuracy() const { return accuracy.back(); }
    [[nodiscard]] const Band& final_loss() const { return loss.back(); }
};

/// Per-round mean and 90% band across replicates, one summary per scheme (in table order).
std::vector<SchemeSummary> summarize(const MetricsTable& table);

struct ComparisonResult {
    MetricsTable table;
    std::vector<SchemeSummary> summaries;
};

inline ComparisonResult compare_schemes(const ExperimentConfig& cfg, const std::vector<Scheme>& schemes,
                                        const RunOptions& opt = {})
{
    if (schemes.size() < 2) throw InvalidConfig("compare: need at least two schemes");
    ComparisonResult res;
    res.table = run_schemes(cfg, schemes, opt);
    res.summaries = summarize(res.table);
    return res;
}

} // namespace otafl

#include "otafl/detail/summary_impl.hpp"
