// SPDX-License-Identifier: Apache-2.0
//
// bfpos: network-side UE positioning from beamformed RSRP feedback
// Copyright (C) 2026 The bfpos Authors
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

// bfpos command-line driver.
//
//   bfpos run       --config FILE [--seed N] [--feedback-k N] [--out DIR]
//   bfpos crb       --config FILE [--feedback-k N] [--out DIR]
//   bfpos mle-bench --config FILE [--seed N] [--trials N] [--beams N] [--out DIR]
//   bfpos selftest  [--seed N]
//
// Exit status: 0 success, 1 configuration or usage error, 2 runtime failure
// (tracker divergence or a numerical error).

#include "bfpos/config.hpp"
#include "bfpos/selftest.hpp"
#include "bfpos/simkit.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace bfpos;

namespace
{

struct Options
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> feedback_k;
    std::string out = ".";
    int trials = 500;
    int beams = 0;
};

ScenarioConfig load(const Options &o)
{
    if (o.config.empty())
        throw ConfigError("no configuration file given (--config)");
    ScenarioConfig c = load_scenario(o.config);
    if (o.seed)
        c.seed = *o.seed;
    if (o.feedback_k)
        c.feedback_k = *o.feedback_k;
    c.validate();
    return c;
}

std::ofstream open_out(const fs::path &p)
{
    std::ofstream os(p);
    if (!os)
        throw Error("cannot write " + p.string());
    return os;
}

int cmd_run(const Options &o)
{
    const ScenarioConfig c = load(o);
    const fs::path dir(o.out);
    fs::create_directories(dir);

    std::ofstream epochs = open_out(dir / "epochs.csv");
    std::ofstream dods = open_out(dir / "dod_epochs.csv");
    std::ofstream reports = open_out(dir / "reports.csv");
    std::ofstream ue_track = open_out(dir / "ue_track.csv");
    std::ofstream dod_track = open_out(dir / "dod_track.csv");
    epochs << kEpochCsvHeader << '\n';
    dods << kDodEpochCsvHeader << '\n';
    reports << kReportCsvHeader << '\n';
    ue_track << kUeTrackCsvHeader << '\n';
    dod_track << kDodTrackCsvHeader << '\n';

    const RunSummary s = run_experiment(c, [&](const EpochRecord &r) {
        write_epoch_row(epochs, r);
        write_dod_epoch_rows(dods, r);
        if (r.run != 0)
            return;
        for (const auto &rep : r.reports)
            write_report_rows(reports, rep);
        write_ue_track_row(ue_track, r.ue);
        for (const auto &st : r.dod_states)
            write_dod_track_row(dod_track, st);
    });
    for (int id : s.dropped_bs)
        std::cerr << "warning: base station " << id << " dropped from fusion (singular information)\n";

    write_summary_csv(dir / "summary.csv", s);
    write_cdf_csv(dir / "cdf_pos.csv", s.pos_cdf);
    write_cdf_csv(dir / "cdf_el.csv", s.el_cdf);
    write_cdf_csv(dir / "cdf_az.csv", s.az_cdf);
    if (!s.snr_db.empty())
        write_cdf_csv(dir / "cdf_snr.csv", s.snr_cdf);
    open_out(dir / "run_config.cfg") << to_config_text(c);

    const MetricQuantiles q = quantiles(s.pos_cdf);
    std::cout << "runs=" << s.runs << " epochs/run=" << s.epochs_per_run << " k=" << c.feedback_k
              << " pos_err p50=" << q.p50 << " m p90=" << q.p90 << " m p95=" << q.p95 << " m\n";
    return 0;
}

int cmd_crb(const Options &o)
{
    const ScenarioConfig c = load(o);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    const Network net = make_network(c);

    std::ofstream map = open_out(dir / "crb_map.csv");
    map << "x,y,crb_x,crb_y,crb_z\n";
    for (const CrbMapRow &r : crb_map(net))
        map << format_double(r.x) << ',' << format_double(r.y) << ',' << format_double(r.crb_x) << ','
            << format_double(r.crb_y) << ',' << format_double(r.crb_z) << '\n';

    std::ofstream snr = open_out(dir / "crb_snr.csv");
    snr << "snr_db,crb_theta,crb_phi\n";
    std::vector<double> grid;
    for (int s = -10; s <= 40; s += 5)
        grid.push_back(s);
    for (const CrbSnrRow &r : crb_vs_snr(net, 0, c.trajectory.start, c.feedback_k, grid))
        snr << format_double(r.snr_db) << ',' << format_double(r.crb_theta) << ',' << format_double(r.crb_phi)
            << '\n';
    std::cout << "wrote " << (dir / "crb_map.csv").string() << " and " << (dir / "crb_snr.csv").string() << '\n';
    return 0;
}

int cmd_mle_bench(const Options &o)
{
    const ScenarioConfig c = load(o);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    MleBenchOptions mo;
    mo.ue = c.trajectory.start;
    mo.trials = o.trials;
    mo.beams = o.beams;
    mo.seed = c.seed;
    std::ofstream os = open_out(dir / "mle_bench.csv");
    os << kMleBenchCsvHeader << '\n';
    for (const MleBenchRow &r : run_mle_bench(make_network(c), mo))
    {
        write_mle_bench_row(os, r);
        std::cout << "snr=" << r.snr_db << " dB  rmse/sqrt(crb): theta " << r.ratio_theta << "  phi " << r.ratio_phi
                  << '\n';
    }
    return 0;
}

int cmd_selftest(const Options &o)
{
    bool ok = true;
    for (const SelftestResult &r : run_selftest(o.seed.value_or(1)))
    {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (worst " << r.worst << ")\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"bfpos: UE positioning from beamformed RSRP feedback"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App *sub, bool with_config) {
        if (with_config)
        {
            sub->add_option("--config", o.config, "scenario configuration file");
            sub->add_option("--out", o.out, "output directory");
        }
        sub->add_option("--seed", o.seed, "base random seed (overrides config)");
    };
    CLI::App *run = app.add_subcommand("run", "Monte-Carlo tracking experiment");
    common(run, true);
    run->add_option("--feedback-k", o.feedback_k, "number of fed-back beams (overrides config)");
    CLI::App *crb = app.add_subcommand("crb", "position CRB map and DoD CRB versus SNR");
    common(crb, true);
    crb->add_option("--feedback-k", o.feedback_k, "number of beams per BS (overrides config)");
    CLI::App *bench = app.add_subcommand("mle-bench", "Monte-Carlo DoD MLE against the CRB");
    common(bench, true);
    bench->add_option("--trials", o.trials, "trials per SNR")->check(CLI::PositiveNumber);
    bench->add_option("--beams", o.beams, "beams per report (0 = all)")->check(CLI::NonNegativeNumber);
    CLI::App *self = app.add_subcommand("selftest", "invariant checks");
    common(self, false);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp &e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError &e)
    {
        app.exit(e);
        return 1;
    }

    try
    {
        if (run->parsed())
            return cmd_run(o);
        if (crb->parsed())
            return cmd_crb(o);
        if (bench->parsed())
            return cmd_mle_bench(o);
        return cmd_selftest(o);
    }
    catch (const ConfigError &e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    }
    catch (const DivergenceError &e)
    {
        std::cerr << "divergence: " << e.what() << '\n';
        return 2;
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
