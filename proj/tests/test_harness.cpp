#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <sstream>

#include "otafl/report.hpp"

using namespace otafl;
using Catch::Approx;

namespace {

nlohmann::json small_json()
{
    return nlohmann::json::parse(R"({
        "schema_version": 1,
        "system": {"K": 4, "N": 4, "T": 4},
        "learning": {"classes": 3, "feature_dim": 6, "S": 400, "test_size": 200, "batch_size": 8, "J": 3},
        "scheme": "jdu",
        "solver": {"pgd": {"max_iters": 60}, "ao": {"max_outer": 4}},
        "seeds": {"master": 11}
    })");
}

ExperimentConfig small_config() { return parse_config(small_json()); }

bool same_row(const MetricsRow& a, const MetricsRow& b)
{
    auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.replicate == b.replicate && a.round == b.round && a.scheme == b.scheme &&
           eq(a.global_loss, b.global_loss) && eq(a.test_accuracy, b.test_accuracy) && eq(a.h_value, b.h_value) &&
           eq(a.phi_value, b.phi_value) && eq(a.min_dl_snr_db, b.min_dl_snr_db) && eq(a.sum_alpha, b.sum_alpha) &&
           eq(a.wall_ms, b.wall_ms) && a.aborted == b.aborted;
}

bool same_table(const MetricsTable& a, const MetricsTable& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!same_row(a[i], b[i])) return false;
    return true;
}

} // namespace

TEST_CASE("config parsing is strict", "[config]")
{
    SECTION("defaults survive a round trip through JSON")
    {
        const auto c = small_config();
        CHECK(to_json(parse_config(to_json(c))) == to_json(c));
    }
    SECTION("unknown keys are errors at every level")
    {
        auto j = small_json();
        j["bogus"] = 1;
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j = small_json();
        j["system"]["antennas"] = 4;
        CHECK_THROWS_WITH(parse_config(j), Catch::Matchers::ContainsSubstring("unknown key 'antennas'"));
        j = small_json();
        j["solver"]["pgd"]["step"] = 1.0;
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
    }
    SECTION("schema_version is required and checked")
    {
        auto j = small_json();
        j.erase("schema_version");
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j["schema_version"] = 2;
        CHECK_THROWS_WITH(parse_config(j), Catch::Matchers::ContainsSubstring("schema_version"));
    }
    SECTION("type and range errors")
    {
        auto j = small_json();
        j["system"]["K"] = 0;
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j = small_json();
        j["system"]["N"] = 2.5;
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j = small_json();
        j["learning"]["batch_size"] = 500;
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j = small_json();
        j["scheme"] = "zf";
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
        j = small_json();
        j["learning"]["eta_rule"] = "fixed";
        CHECK_THROWS_AS(parse_config(j), InvalidConfig);
    }
    SECTION("scheme lists")
    {
        const auto s = parse_scheme_list("jdu,sdu,rbf,ideal");
        REQUIRE(s.size() == 4);
        CHECK(s[3] == Scheme::ideal);
        CHECK_THROWS_AS(parse_scheme_list("jdu,jdu"), InvalidConfig);
        CHECK_THROWS_AS(parse_scheme_list("jdu,,sdu"), InvalidConfig);
    }
}

TEST_CASE("seed environment override", "[config]")
{
    auto c = small_config();
    ::setenv(kSeedEnvVar, "12345", 1);
    apply_env_overrides(c);
    CHECK(c.seeds.master == 12345u);
    ::setenv(kSeedEnvVar, "12x", 1);
    CHECK_THROWS_AS(apply_env_overrides(c), InvalidConfig);
    ::setenv(kSeedEnvVar, "-3", 1);
    CHECK_THROWS_AS(apply_env_overrides(c), InvalidConfig);
    ::unsetenv(kSeedEnvVar);
    apply_env_overrides(c);
    CHECK(c.seeds.master == 12345u);
}

TEST_CASE("runs are deterministic and seed dependent", "[harness]")
{
    auto c = small_config();
    c.seeds.n_replicates = 2;
    const auto a = run_experiment(c, {.threads = 1});
    const auto b = run_experiment(c, {.threads = 2});
    REQUIRE(a.size() == 2 * (c.system.T + 1));
    CHECK(same_table(a, b));
    c.seeds.master = 12;
    const auto d = run_experiment(c, {.threads = 1});
    CHECK_FALSE(same_table(a, d));
}

TEST_CASE("row layout", "[harness]")
{
    const auto c = small_config();
    const auto rows = run_experiment(c);
    REQUIRE(rows.size() == c.system.T + 1);
    CHECK(rows[0].round == 0);
    CHECK(std::isnan(rows[0].h_value));
    CHECK(std::isnan(rows[0].phi_value));
    for (std::size_t t = 1; t < rows.size(); ++t) {
        CHECK(rows[t].round == t);
        CHECK(rows[t].h_value > 0.0);
        CHECK(rows[t].phi_value == Approx(rows[t].h_value).epsilon(1e-9));
        CHECK(rows[t].sum_alpha > 0.0);
        CHECK(std::isfinite(rows[t].min_dl_snr_db));
        CHECK(rows[t].wall_ms == 0.0);
        CHECK_FALSE(rows[t].aborted);
        CHECK(rows[t].test_accuracy >= 0.0);
        CHECK(rows[t].test_accuracy <= 1.0);
    }
}

TEST_CASE("a zero horizon yields only the initial row", "[harness]")
{
    auto c = small_config();
    c.system.T = 0;
    const auto rows = run_experiment(c);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].round == 0);
    const auto s = summarize(rows);
    REQUIRE(s.size() == 1);
    CHECK(s[0].accuracy.size() == 1);
}

TEST_CASE("noise-free aggregation descends on the global loss", "[harness]")
{
    auto c = small_config();
    c.scheme = Scheme::ideal;
    c.system.T = 8;
    const auto rows = run_experiment(c);
    for (std::size_t t = 1; t < rows.size(); ++t) {
        CHECK(rows[t].global_loss < rows[t - 1].global_loss);
        CHECK(std::isnan(rows[t].h_value));
    }
}

TEST_CASE("schemes share replicate randomness", "[harness]")
{
    auto c = small_config();
    c.seeds.n_replicates = 2;
    const auto res = compare_schemes(c, {Scheme::jdu, Scheme::sdu, Scheme::rbf, Scheme::ideal}, {.threads = 1});
    const std::size_t per = c.system.T + 1;
    REQUIRE(res.table.size() == 4 * 2 * per);
    REQUIRE(res.summaries.size() == 4);
    for (std::size_t s = 1; s < 4; ++s)
        for (std::size_t r = 0; r < 2; ++r) {
            const auto& a = res.table[r * per];
            const auto& b = res.table[(s * 2 + r) * per];
            CHECK(a.replicate == b.replicate);
            CHECK(a.global_loss == b.global_loss);
            CHECK(a.test_accuracy == b.test_accuracy);
        }
    CHECK(res.table[0].global_loss != res.table[per].global_loss);
    CHECK_THROWS_AS(compare_schemes(c, {Scheme::jdu}), InvalidConfig);
}

TEST_CASE("a single round can be replayed in isolation", "[harness]")
{
    auto c = small_config();
    c.seeds.n_replicates = 2;
    for (Scheme s : {Scheme::jdu, Scheme::rbf}) {
        c.scheme = s;
        const auto rows = run_experiment(c, {.threads = 1});
        const auto o = replay_round(c, 1, s, 2);
        CHECK(same_row(o.row, rows[(c.system.T + 1) + 3]));
    }
}

TEST_CASE("pinned geometry and init are shared across replicates", "[harness]")
{
    auto c = small_config();
    c.seeds.pin_geometry = true;
    c.seeds.pin_init = true;
    c.seeds.pin_data = true;
    const auto a = prepare_replicate(c, 0);
    const auto b = prepare_replicate(c, 1);
    CHECK(a.geom.distances_km == b.geom.distances_km);
    CHECK(a.theta0 == b.theta0);
    CHECK(a.train.shards == b.train.shards);
    CHECK(a.rng.master_seed != b.rng.master_seed);
    c.seeds.pin_geometry = false;
    CHECK(prepare_replicate(c, 0).geom.distances_km != prepare_replicate(c, 1).geom.distances_km);
}

TEST_CASE("step-size rule", "[harness]")
{
    auto c = small_config();
    const auto su = prepare_replicate(c, 0);
    CHECK(su.eta * c.learning.J * su.L == Approx(0.1));
    CHECK(su.Q == Approx(0.96));
    c.learning.eta_rule = EtaRule::fixed;
    c.learning.eta = 1.0 / (c.learning.J * su.L);
    CHECK_THROWS_AS(prepare_replicate(c, 0), InvalidConfig);
}

TEST_CASE("90% confidence half width", "[summary]")
{
    // t(0.95, 3) = 2.3533634348018264, sample sd of {1,2,3,4} = sqrt(5/3)
    CHECK(ci90_half_width({1.0, 2.0, 3.0, 4.0}) == Approx(1.519089565093493).epsilon(1e-12));
    CHECK(ci90_half_width({3.0}) == 0.0);
    CHECK(ci90_half_width({2.0, 2.0, 2.0}) == 0.0);

    MetricsTable t;
    for (std::size_t r = 0; r < 4; ++r) {
        MetricsRow row;
        row.replicate = r;
        row.test_accuracy = 1.0 + static_cast<double>(r);
        t.push_back(row);
    }
    const auto s = summarize(t);
    REQUIRE(s.size() == 1);
    CHECK(s[0].replicates == 4);
    CHECK(s[0].final_accuracy().mean == Approx(2.5));
    CHECK(s[0].final_accuracy().half_width == Approx(1.519089565093493).epsilon(1e-12));
}

TEST_CASE("metrics CSV", "[report]")
{
    SECTION("empty table is header only")
    {
        std::ostringstream os;
        write_metrics_csv(os, {});
        CHECK(os.str() == std::string(kMetricsHeader) + "\n");
        std::istringstream is(os.str());
        CHECK(parse_metrics_csv(is).empty());
    }
    SECTION("round trip is exact")
    {
        auto c = small_config();
        c.output.timing = true;
        const auto rows = compare_schemes(c, {Scheme::jdu, Scheme::ideal}).table;
        std::ostringstream os;
        write_metrics_csv(os, rows);
        std::istringstream is(os.str());
        const auto back = parse_metrics_csv(is);
        CHECK(same_table(rows, back));
        CHECK(back[1].wall_ms > 0.0);
    }
    SECTION("malformed input")
    {
        std::istringstream bad_header("replicate,round\n");
        CHECK_THROWS_AS(parse_metrics_csv(bad_header), FormatError);
        std::istringstream short_row(std::string(kMetricsHeader) + "\n0,1,jdu,0.5\n");
        CHECK_THROWS_WITH(parse_metrics_csv(short_row), Catch::Matchers::ContainsSubstring("line 2"));
        std::istringstream bad_num(std::string(kMetricsHeader) + "\n0,1,jdu,x,1,1,1,1,1,0,0\n");
        CHECK_THROWS_AS(parse_metrics_csv(bad_num), FormatError);
        std::istringstream bad_flag(std::string(kMetricsHeader) + "\n0,1,jdu,1,1,1,1,1,1,0,2\n");
        CHECK_THROWS_AS(parse_metrics_csv(bad_flag), FormatError);
    }
}

TEST_CASE("solver trace", "[report]")
{
    auto c = small_config();
    c.system.T = 2;
    std::vector<TraceRow> trace;
    run_experiment(c, {.trace = &trace});
    REQUIRE_FALSE(trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i].round >= trace[i - 1].round);
    std::ostringstream os;
    write_trace_csv(os, trace);
    CHECK(os.str().rfind(kTraceHeader, 0) == 0);
}

TEST_CASE("bound report", "[report]")
{
    auto c = small_config();
    c.bound.recursion_mc = 4;
    const auto b = bound_report(c);
    REQUIRE(b.admissible);
    CHECK(b.exact_Fstar);
    CHECK(b.measured_sgd_constants);
    CHECK(b.Gamma > 0.0);
    CHECK(b.breakdown.H.size() == c.system.T);
    CHECK(b.breakdown.total >= b.final_loss_gap);
    REQUIRE(b.recursion);
    CHECK(b.recursion->rounds.size() == c.system.T);
    const auto j = to_json(b);
    CHECK(j["total"].get<double>() == b.breakdown.total);

    c.scheme = Scheme::ideal;
    const auto bi = bound_report(c);
    REQUIRE(bi.admissible);
    CHECK(bi.breakdown.Psi == 0.0);
    CHECK(bi.delta == Approx(0.0).margin(1e-20));
}

TEST_CASE("summary JSON layout", "[report]")
{
    auto c = small_config();
    c.seeds.n_replicates = 2;
    const auto res = compare_schemes(c, {Scheme::sdu, Scheme::ideal});
    const auto j = summary_json(c, res.summaries);
    CHECK(j["format_version"] == kSummaryFormatVersion);
    REQUIRE(j["schemes"].size() == 2);
    CHECK(j["schemes"][0]["scheme"] == "sdu");
    CHECK(j["schemes"][1]["per_round"]["accuracy_mean"].size() == c.system.T + 1);
    CHECK(parse_config(j["config"]).seeds.n_replicates == 2);
}
