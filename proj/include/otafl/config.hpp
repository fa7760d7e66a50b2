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

// Experiment configuration: a JSON document with a versioned schema. Every object is
// read strictly, so a misspelled key is an error instead of a silently ignored value.

#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "otafl/dataset.hpp"
#include "otafl/errors.hpp"
#include "otafl/fl_core.hpp"
#include "otafl/optim.hpp"

namespace otafl {

inline constexpr int kConfigSchemaVersion = 1;

/// Environment variable that replaces seeds.master when set.
inline constexpr const char* kSeedEnvVar = "OTAFL_SEED";

enum class Scheme { jdu, sdu, rbf, ideal };
enum class NormProxyMode { resolve, proxy };
enum class DatasetKind { mixture, mnist };
enum class EtaRule { standard, fixed };

inline const char* scheme_name(Scheme s)
{
    switch (s) {
    case Scheme::jdu: return "jdu";
    case Scheme::sdu: return "sdu";
    case Scheme::rbf: return "rbf";
    case Scheme::ideal: return "ideal";
    }
    return "?";
}

inline Scheme parse_scheme(const std::string& s)
{
    if (s == "jdu") return Scheme::jdu;
    if (s == "sdu") return Scheme::sdu;
    if (s == "rbf") return Scheme::rbf;
    if (s == "ideal") return Scheme::ideal;
    throw InvalidConfig("unknown scheme '" + s + "' (expected jdu, sdu, rbf or ideal)");
}

/// Comma-separated scheme list, e.g. "jdu,sdu,rbf,ideal".
inline std::vector<Scheme> parse_scheme_list(const std::string& csv)
{
    std::vector<Scheme> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw InvalidConfig("scheme list '" + csv + "' has an empty entry");
        const Scheme s = parse_scheme(item);
        for (Scheme seen : out)
            if (seen == s) throw InvalidConfig("scheme '" + item + "' listed twice");
        out.push_back(s);
    }
    if (out.empty()) throw InvalidConfig("scheme list is empty");
    return out;
}

struct SystemConfig {
    std::size_t K = 10;
    Eigen::Index N = 8;
    std::size_t T = 50;
    double P_dl_dbm = 47.0;
    double P_ul_dbm = 23.0;
    double bw_dl_hz = 10e6;
    double bw_ul_hz = 1e6;
    double n0_dbm_hz = -174.0;
    double nf_dev_db = 8.0;
    double nf_bs_db = 2.0;
    double d_min_km = 1.0;
    double d_max_km = 1.5;
    double shadow_std_db = 8.0;
};

struct LearningConfig {
    Task task = Task::multinomial_logistic;
    int classes = 4;
    int feature_dim = 20;
    int hidden = 16;
    double l2_reg = 0.01;
    int J = 5;
    std::size_t batch_size = 16;
    EtaRule eta_rule = EtaRule::standard; ///< standard: eta = 1 / (10 J L)
    double eta = 0.0;                     ///< used when eta_rule is fixed
    std::size_t S = 4000;
    std::size_t test_size = 1000;
    Partition partition = Partition::random_even;
    DatasetKind dataset = DatasetKind::mixture;
    double separation = 1.5;
    double init_std = 0.01;
    std::string mnist_train_images;
    std::string mnist_train_labels;
    std::string mnist_test_images;
    std::string mnist_test_labels;
    std::size_t mnist_limit = 0;
};

struct SolverConfig {
    PgdConfig pgd;
    AoConfig ao;
    MaxMinConfig maxmin;
    NormProxyMode norm_proxy = NormProxyMode::resolve;
    double round_budget_s = 10.0;
};

struct BoundConfig {
    std::optional<double> L;
    std::optional<double> lambda;
    std::optional<double> mu;
    std::optional<double> delta;
    bool report = false;           ///< attach a bound report to summary.json
    std::size_t recursion_mc = 0;  ///< Monte Carlo replicates for the recursion check (0 = skip)
};

struct SeedConfig {
    std::uint64_t master = 1;
    std::size_t n_replicates = 1;
    bool pin_geometry = false;
    bool pin_data = false;
    bool pin_init = false;
};

struct OutputConfig {
    bool timing = false; ///< record wall_ms (otherwise written as 0 so runs stay byte-identical)
};

struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    SystemConfig system;
    LearningConfig learning;
    Scheme scheme = Scheme::jdu;
    SolverConfig solver;
    BoundConfig bound;
    SeedConfig seeds;
    OutputConfig output;

    [[nodiscard]] LossSpec loss_spec() const
    {
        return {learning.task, learning.classes, learning.feature_dim, learning.hidden, learning.l2_reg, true};
    }
};

namespace detail {

using nlohmann::json;

/// Reads the keys of one JSON object and rejects the ones nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw InvalidConfig(path_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw InvalidConfig(where(key) + ": " + e.what());
        }
    }

    void get_number(const char* key, double& out)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_number()) throw InvalidConfig(where(key) + ": expected a number");
        out = it->get<double>();
        if (!std::isfinite(out)) throw InvalidConfig(where(key) + ": must be finite");
    }

    void get_optional_number(const char* key, std::optional<double>& out)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (it->is_null()) {
            out.reset();
            return;
        }
        double v = 0.0;
        get_number(key, v);
        out = v;
    }

    template <class T>
    void get_count(const char* key, T& out, long long min_value)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        if (!it->is_number_integer()) throw InvalidConfig(where(key) + ": expected an integer");
        const auto v = it->get<long long>();
        if (v < min_value) throw InvalidConfig(where(key) + ": must be >= " + std::to_string(min_value));
        out = static_cast<T>(v);
    }

    const json* child(const char* key)
    {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    [[nodiscard]] std::string where(const std::string& key) const { return path_ + "." + key; }

    void finish() const
    {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw InvalidConfig(path_ + ": unknown key '" + item.key() + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline Task parse_task(const std::string& s)
{
    if (s == "multinomial_logistic") return Task::multinomial_logistic;
    if (s == "binary_logistic") return Task::binary_logistic;
    if (s == "mlp") return Task::mlp;
    throw InvalidConfig("learning.task: unknown task '" + s + "'");
}

inline const char* task_name(Task t)
{
    switch (t) {
    case Task::multinomial_logistic: return "multinomial_logistic";
    case Task::binary_logistic: return "binary_logistic";
    case Task::mlp: return "mlp";
    }
    return "?";
}

inline void require(bool ok, const std::string& msg)
{
    if (!ok) throw InvalidConfig(msg);
}

} // namespace detail

/// Range and consistency checks that do not need data.
inline void validate(const ExperimentConfig& c)
{
    using detail::require;
    const auto& s = c.system;
    require(s.K >= 1, "system.K must be >= 1");
    require(s.N >= 1, "system.N must be >= 1");
    require(s.bw_dl_hz > 0 && s.bw_ul_hz > 0, "system bandwidths must be positive");
    require(s.d_min_km > 0, "system.d_min_km must be positive");
    require(s.d_max_km >= s.d_min_km, "system.d_max_km must be >= d_min_km");
    require(s.shadow_std_db >= 0, "system.shadow_std_db must be >= 0");

    const auto& l = c.learning;
    validate(c.loss_spec());
    require(l.J >= 1, "learning.J must be >= 1");
    require(l.batch_size >= 1, "learning.batch_size must be >= 1");
    require(l.eta_rule == EtaRule::standard || l.eta > 0, "learning.eta must be positive for the fixed rule");
    require(l.init_std > 0, "learning.init_std must be positive (the power constraints divide by ||theta||^2)");
    require(l.separation >= 0, "learning.separation must be >= 0");
    if (l.dataset == DatasetKind::mixture) {
        require(l.S >= s.K, "learning.S must be at least system.K");
        require(l.S / s.K >= l.batch_size, "learning.batch_size exceeds the per-device shard size");
        require(l.test_size >= 1, "learning.test_size must be >= 1");
    } else {
        require(!l.mnist_train_images.empty() && !l.mnist_train_labels.empty(),
                "learning.mnist_train_images and mnist_train_labels are required for the mnist dataset");
        require(l.feature_dim == 784 && l.classes == 10, "mnist needs feature_dim 784 and classes 10");
    }

    const auto& sv = c.solver;
    require(sv.pgd.beta0 > 0 && sv.pgd.tol > 0, "solver.pgd beta0 and tol must be positive");
    require(sv.pgd.shrink > 0 && sv.pgd.shrink < 1, "solver.pgd.shrink must lie in (0, 1)");
    require(sv.pgd.armijo > 0 && sv.pgd.armijo < 1, "solver.pgd.armijo must lie in (0, 1)");
    require(sv.pgd.max_iters >= 1 && sv.pgd.max_backtracks >= 1, "solver.pgd iteration limits must be >= 1");
    require(sv.ao.max_outer >= 1 && sv.ao.tol > 0, "solver.ao limits must be positive");
    require(sv.maxmin.tau0 > 0 && sv.maxmin.anneal > 0 && sv.maxmin.anneal < 1 && sv.maxmin.tol > 0,
            "solver.maxmin: tau0 > 0, anneal in (0, 1), tol > 0");
    require(sv.round_budget_s > 0, "solver.round_budget_s must be positive");

    for (const auto* v : {&c.bound.L, &c.bound.lambda})
        require(!*v || **v > 0, "bound overrides for L and lambda must be positive");
    for (const auto* v : {&c.bound.mu, &c.bound.delta})
        require(!*v || **v >= 0, "bound overrides for mu and delta must be >= 0");
    require(c.seeds.n_replicates >= 1, "seeds.n_replicates must be >= 1");
}

inline ExperimentConfig parse_config(const nlohmann::json& j)
{
    using detail::ObjectReader;
    ExperimentConfig c;
    ObjectReader root(j, "config");
    root.get_count("schema_version", c.schema_version, 1);
    if (!j.contains("schema_version")) throw InvalidConfig("config: schema_version is required");
    if (c.schema_version != kConfigSchemaVersion)
        throw InvalidConfig("config: unsupported schema_version " + std::to_string(c.schema_version) +
                            " (expected " + std::to_string(kConfigSchemaVersion) + ")");

    if (const auto* js = root.child("system")) {
        ObjectReader r(*js, "system");
        auto& s = c.system;
        r.get_count("K", s.K, 1);
        r.get_count("N", s.N, 1);
        r.get_count("T", s.T, 0);
        r.get_number("P_dl_dbm", s.P_dl_dbm);
        r.get_number("P_ul_dbm", s.P_ul_dbm);
        r.get_number("bw_dl_hz", s.bw_dl_hz);
        r.get_number("bw_ul_hz", s.bw_ul_hz);
        r.get_number("n0_dbm_hz", s.n0_dbm_hz);
        r.get_number("nf_dev_db", s.nf_dev_db);
        r.get_number("nf_bs_db", s.nf_bs_db);
        r.get_number("d_min_km", s.d_min_km);
        r.get_number("d_max_km", s.d_max_km);
        r.get_number("shadow_std_db", s.shadow_std_db);
        r.finish();
    }
    if (const auto* jl = root.child("learning")) {
        ObjectReader r(*jl, "learning");
        auto& l = c.learning;
        std::string task = detail::task_name(l.task);
        r.get("task", task);
        l.task = detail::parse_task(task);
        r.get_count("classes", l.classes, 2);
        r.get_count("feature_dim", l.feature_dim, 1);
        r.get_count("hidden", l.hidden, 1);
        r.get_number("l2_reg", l.l2_reg);
        r.get_count("J", l.J, 1);
        r.get_count("batch_size", l.batch_size, 1);
        std::string rule = l.eta_rule == EtaRule::standard ? "standard" : "fixed";
        r.get("eta_rule", rule);
        if (rule == "standard") l.eta_rule = EtaRule::standard;
        else if (rule == "fixed") l.eta_rule = EtaRule::fixed;
        else throw InvalidConfig("learning.eta_rule: expected 'standard' or 'fixed'");
        r.get_number("eta", l.eta);
        r.get_count("S", l.S, 1);
        r.get_count("test_size", l.test_size, 1);
        std::string part = l.partition == Partition::random_even ? "random_even" : "by_class";
        r.get("partition", part);
        if (part == "random_even") l.partition = Partition::random_even;
        else if (part == "by_class") l.partition = Partition::by_class;
        else throw InvalidConfig("learning.partition: expected 'random_even' or 'by_class'");
        std::string ds = l.dataset == DatasetKind::mixture ? "mixture" : "mnist";
        r.get("dataset", ds);
        if (ds == "mixture") l.dataset = DatasetKind::mixture;
        else if (ds == "mnist") l.dataset = DatasetKind::mnist;
        else throw InvalidConfig("learning.dataset: expected 'mixture' or 'mnist'");
        r.get_number("separation", l.separation);
        r.get_number("init_std", l.init_std);
        r.get("mnist_train_images", l.mnist_train_images);
        r.get("mnist_train_labels", l.mnist_train_labels);
        r.get("mnist_test_images", l.mnist_test_images);
        r.get("mnist_test_labels", l.mnist_test_labels);
        r.get_count("mnist_limit", l.mnist_limit, 0);
        r.finish();
    }
    std::string scheme = scheme_name(c.scheme);
    root.get("scheme", scheme);
    c.scheme = parse_scheme(scheme);
    if (const auto* jv = root.child("solver")) {
        ObjectReader r(*jv, "solver");
        auto& sv = c.solver;
        if (const auto* jp = r.child("pgd")) {
            ObjectReader p(*jp, "solver.pgd");
            p.get_number("beta0", sv.pgd.beta0);
            p.get_number("shrink", sv.pgd.shrink);
            p.get_number("armijo", sv.pgd.armijo);
            p.get_count("max_iters", sv.pgd.max_iters, 1);
            p.get_count("max_backtracks", sv.pgd.max_backtracks, 1);
            p.get_number("tol", sv.pgd.tol);
            p.finish();
        }
        if (const auto* ja = r.child("ao")) {
            ObjectReader a(*ja, "solver.ao");
            a.get_count("max_outer", sv.ao.max_outer, 1);
            a.get_number("tol", sv.ao.tol);
            a.get_count("restarts", sv.ao.restarts, 0);
            a.finish();
        }
        if (const auto* jm = r.child("maxmin")) {
            ObjectReader m(*jm, "solver.maxmin");
            m.get_number("tau0", sv.maxmin.tau0);
            m.get_number("anneal", sv.maxmin.anneal);
            m.get_number("tol", sv.maxmin.tol);
            m.get_count("max_stages", sv.maxmin.max_stages, 1);
            m.finish();
        }
        std::string mode = sv.norm_proxy == NormProxyMode::resolve ? "resolve" : "proxy";
        r.get("norm_proxy_mode", mode);
        if (mode == "resolve") sv.norm_proxy = NormProxyMode::resolve;
        else if (mode == "proxy") sv.norm_proxy = NormProxyMode::proxy;
        else throw InvalidConfig("solver.norm_proxy_mode: expected 'resolve' or 'proxy'");
        r.get_number("round_budget_s", sv.round_budget_s);
        r.finish();
    }
    if (const auto* jb = root.child("bound")) {
        ObjectReader r(*jb, "bound");
        r.get_optional_number("L", c.bound.L);
        r.get_optional_number("lambda", c.bound.lambda);
        r.get_optional_number("mu", c.bound.mu);
        r.get_optional_number("delta", c.bound.delta);
        r.get("report", c.bound.report);
        r.get_count("recursion_mc", c.bound.recursion_mc, 0);
        r.finish();
    }
    if (const auto* jseed = root.child("seeds")) {
        ObjectReader r(*jseed, "seeds");
        r.get_count("master", c.seeds.master, 0);
        r.get_count("n_replicates", c.seeds.n_replicates, 1);
        r.get("pin_geometry", c.seeds.pin_geometry);
        r.get("pin_data", c.seeds.pin_data);
        r.get("pin_init", c.seeds.pin_init);
        r.finish();
    }
    if (const auto* jo = root.child("output")) {
        ObjectReader r(*jo, "output");
        r.get("timing", c.output.timing);
        r.finish();
    }
    root.finish();
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InvalidConfig(path + ": cannot open config file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(path + ": " + e.what());
    }
    return parse_config(j);
}

/// Replaces seeds.master with $OTAFL_SEED when that variable is set.
inline void apply_env_overrides(ExperimentConfig& c)
{
    const char* v = std::getenv(kSeedEnvVar);
    if (!v || !*v) return;
    char* end = nullptr;
    errno = 0;
    const unsigned long long s = std::strtoull(v, &end, 10);
    if (errno != 0 || *end != '\0' || *v == '-')
        throw InvalidConfig(std::string(kSeedEnvVar) + ": expected a non-negative integer, got '" + v + "'");
    c.seeds.master = s;
}

inline nlohmann::json to_json(const ExperimentConfig& c)
{
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    const auto& s = c.system;
    const auto& l = c.learning;
    const auto& sv = c.solver;
    json j;
    j["schema_version"] = c.schema_version;
    j["system"] = {{"K", s.K},
                   {"N", s.N},
                   {"T", s.T},
                   {"P_dl_dbm", s.P_dl_dbm},
                   {"P_ul_dbm", s.P_ul_dbm},
                   {"bw_dl_hz", s.bw_dl_hz},
                   {"bw_ul_hz", s.bw_ul_hz},
                   {"n0_dbm_hz", s.n0_dbm_hz},
                   {"nf_dev_db", s.nf_dev_db},
                   {"nf_bs_db", s.nf_bs_db},
                   {"d_min_km", s.d_min_km},
                   {"d_max_km", s.d_max_km},
                   {"shadow_std_db", s.shadow_std_db}};
    j["learning"] = {{"task", detail::task_name(l.task)},
                     {"classes", l.classes},
                     {"feature_dim", l.feature_dim},
                     {"hidden", l.hidden},
                     {"l2_reg", l.l2_reg},
                     {"J", l.J},
                     {"batch_size", l.batch_size},
                     {"eta_rule", l.eta_rule == EtaRule::standard ? "standard" : "fixed"},
                     {"eta", l.eta},
                     {"S", l.S},
                     {"test_size", l.test_size},
                     {"partition", l.partition == Partition::random_even ? "random_even" : "by_class"},
                     {"dataset", l.dataset == DatasetKind::mixture ? "mixture" : "mnist"},
                     {"separation", l.separation},
                     {"init_std", l.init_std},
                     {"mnist_train_images", l.mnist_train_images},
                     {"mnist_train_labels", l.mnist_train_labels},
                     {"mnist_test_images", l.mnist_test_images},
                     {"mnist_test_labels", l.mnist_test_labels},
                     {"mnist_limit", l.mnist_limit}};
    j["scheme"] = scheme_name(c.scheme);
    j["solver"] = {{"pgd",
                    {{"beta0", sv.pgd.beta0},
                     {"shrink", sv.pgd.shrink},
                     {"armijo", sv.pgd.armijo},
                     {"max_iters", sv.pgd.max_iters},
                     {"max_backtracks", sv.pgd.max_backtracks},
                     {"tol", sv.pgd.tol}}},
                   {"ao", {{"max_outer", sv.ao.max_outer}, {"tol", sv.ao.tol}, {"restarts", sv.ao.restarts}}},
                   {"maxmin",
                    {{"tau0", sv.maxmin.tau0},
                     {"anneal", sv.maxmin.anneal},
                     {"tol", sv.maxmin.tol},
                     {"max_stages", sv.maxmin.max_stages}}},
                   {"norm_proxy_mode", sv.norm_proxy == NormProxyMode::resolve ? "resolve" : "proxy"},
                   {"round_budget_s", sv.round_budget_s}};
    j["bound"] = {{"L", opt(c.bound.L)},
                  {"lambda", opt(c.bound.lambda)},
                  {"mu", opt(c.bound.mu)},
                  {"delta", opt(c.bound.delta)},
                  {"report", c.bound.report},
                  {"recursion_mc", c.bound.recursion_mc}};
    j["seeds"] = {{"master", c.seeds.master},
                  {"n_replicates", c.seeds.n_replicates},
                  {"pin_geometry", c.seeds.pin_geometry},
                  {"pin_data", c.seeds.pin_data},
                  {"pin_init", c.seeds.pin_init}};
    j["output"] = {{"timing", c.output.timing}};
    return j;
}

} // namespace otafl
