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

// otafl: run, compare and bound experiments from a JSON config.
//
// Exit codes: 0 success, 1 runtime failure or failed selftest, 2 invalid config or usage.

#include <CLI11.hpp>

#include <iostream>

#include "otafl/otafl.hpp"

namespace {

otafl::ExperimentConfig load(const std::string& path)
{
    auto cfg = otafl::load_config(path);
    otafl::apply_env_overrides(cfg);
    return cfg;
}

void print_summary(const std::vector<otafl::SchemeSummary>& sums)
{
    for (const auto& s : sums)
        std::cout << otafl::scheme_name(s.scheme) << ": final accuracy " << s.final_accuracy().mean << " +- "
                  << s.final_accuracy().half_width << ", final loss " << s.final_loss().mean << " +- "
                  << s.final_loss().half_width << " (" << s.replicates << " replicates, " << s.aborted_rounds
                  << " aborted rounds)\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Over-the-air federated learning simulator"};
    app.require_subcommand(1);

    std::string config, out, schemes;
    bool trace = false;
    std::size_t threads = 0;

    auto* run = app.add_subcommand("run", "Run the configured scheme and write metrics.csv and summary.json");
    run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory")->required();
    run->add_flag("--trace", trace, "Also write the per-iteration solver trace (trace.csv)");
    run->add_option("--threads", threads, "Worker threads for replicates (0: all cores)");

    auto* cmp = app.add_subcommand("compare", "Run several schemes on common random numbers");
    cmp->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmp->add_option("--schemes", schemes, "Comma-separated list from jdu,sdu,rbf,ideal")->required();
    cmp->add_option("--out", out, "Output directory")->required();
    cmp->add_flag("--trace", trace, "Also write the per-iteration solver trace (trace.csv)");
    cmp->add_option("--threads", threads, "Worker threads for replicates (0: all cores)");

    auto* bnd = app.add_subcommand("bound", "Print the convergence bound for replicate 0 as JSON");
    bnd->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

    auto* self = app.add_subcommand("selftest", "Run built-in consistency checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*self) return otafl::run_selftest(std::cout) ? 0 : 1;

        const auto cfg = load(config);
        if (*bnd) {
            std::cout << otafl::to_json(otafl::bound_report(cfg)).dump(2) << '\n';
            return 0;
        }

        std::vector<otafl::TraceRow> rows;
        otafl::RunOptions opt{threads, trace ? &rows : nullptr};
        std::optional<otafl::BoundReport> bound;
        if (cfg.bound.report) bound = otafl::bound_report(cfg);

        otafl::MetricsTable table;
        if (*run) {
            table = otafl::run_experiment(cfg, opt);
        } else {
            table = otafl::compare_schemes(cfg, otafl::parse_scheme_list(schemes), opt).table;
        }
        otafl::write_outputs(out, cfg, table, trace ? &rows : nullptr, bound ? &*bound : nullptr);
        print_summary(otafl::summarize(table));
        return 0;
    } catch (const otafl::InvalidConfig& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
