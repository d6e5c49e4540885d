// Command-line front end: baseline characterization, single adaptation
// trials, full campaigns, the paired flux-vs-voltage comparison, and
// reference trajectory dumps.  All knobs travel in one JSON config document;
// the flags below only override the handful that vary run to run.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "softland/campaign.hpp"
#include "softland/feedforward.hpp"
#include "softland/io.hpp"

namespace {

using namespace softland;

struct Options {
    std::string config_path;
    std::string output_dir;
    std::string mode;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 1;
    bool full = false;
    bool allow_partial = false;
};

void add_config_flags(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path, "campaign config (JSON); defaults when omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "master seed override")
        ->each([&opt](const std::string&) { opt.seed_given = true; });
    cmd->add_option("--output-dir", opt.output_dir, "artifact directory override");
    cmd->add_flag("--full", opt.full, "full protocol: 10 relays x 10 repetitions x 300 ops");
}

void add_run_flags(CLI::App* cmd, Options& opt) {
    cmd->add_option("--workers", opt.workers, "trial worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--allow-partial", opt.allow_partial,
                  "exit 0 even when a trial aborted (artifacts are still written)");
}

CampaignConfig make_config(const Options& opt) {
    CampaignConfig cfg = opt.config_path.empty() ? CampaignConfig{} : load_config(opt.config_path);
    if (opt.seed_given) cfg.seeds.master = opt.seed;
    if (!opt.mode.empty()) cfg.controller_mode = controller_mode_from_string(opt.mode);
    if (!opt.output_dir.empty()) cfg.output_dir = opt.output_dir;
    if (opt.full) {
        cfg.n_relays = 10;
        cfg.n_repetitions = 10;
        cfg.n_operations = 300;
    }
    cfg.validate();
    return cfg;
}

std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    return os;
}

int cmd_baseline(const Options& opt) {
    const CampaignConfig cfg = make_config(opt);
    const BaselineResult base = run_baseline(cfg);
    const std::filesystem::path out = std::filesystem::path(cfg.output_dir) / "baseline.csv";
    {
        std::ofstream os = open_out(out);
        write_baseline_csv(os, base);
    }
    std::printf("baseline: %zu standard operations across %d relays\n", base.ops.size(),
                cfg.n_relays);
    std::printf("median cost (nominal resistance): %.6g\n", base.median_cost);
    if (base.has_stepped)
        std::printf("median cost (+%g ohm): %.6g\n", cfg.resistance_step.ohms, base.stepped.p50);
    std::printf("wrote %s\n", out.string().c_str());
    return 0;
}

int cmd_trial(const Options& opt, int relay, int rep) {
    const CampaignConfig cfg = make_config(opt);
    const BaselineResult base = run_baseline(cfg);
    const TrialResult tr = run_trial(cfg, relay, rep, base.median_cost);

    const std::filesystem::path out =
        std::filesystem::path(cfg.output_dir) / trial_file_name(relay, rep);
    {
        std::ofstream os = open_out(out);
        write_trial_csv(os, tr);
    }

    std::vector<double> norm;
    int completed = 0;
    for (const OpSummary& op : tr.ops) {
        norm.push_back(op.norm_cost);
        completed += op.completed ? 1 : 0;
    }
    std::printf("trial r%d q%d: %zu operations, %d completed\n", relay, rep, tr.ops.size(),
                completed);
    if (!norm.empty())
        std::printf("normalized cost: median %.4g, last op %.4g\n", percentile(norm, 50.0),
                    norm.back());
    std::printf("wrote %s\n", out.string().c_str());
    if (tr.aborted) {
        std::fprintf(stderr, "trial aborted at op %d: %s\n", tr.abort_op, tr.abort_reason.c_str());
        return opt.allow_partial ? 0 : 2;
    }
    return 0;
}

int report_campaign(const CampaignResult& res, const std::vector<std::string>& files,
                    const std::string& dir) {
    const CampaignConfig& cfg = res.config;
    std::printf("campaign: %d relays x %d repetitions x %d operations, mode %s\n", cfg.n_relays,
                cfg.n_repetitions, cfg.n_operations,
                to_string(cfg.controller_mode));
    std::printf("baseline median: %.6g\n", res.baseline.median_cost);
    if (!res.stats.empty())
        std::printf("median normalized cost: first op %.4g, last op %.4g\n",
                    res.stats.front().cost.p50, res.stats.back().cost.p50);
    std::printf("wrote %zu files to %s\n", files.size(), dir.c_str());
    int aborted = 0;
    for (const TrialResult& tr : res.trials) aborted += tr.aborted ? 1 : 0;
    if (aborted > 0) std::fprintf(stderr, "%d trial(s) aborted; see manifest.json\n", aborted);
    return aborted;
}

int cmd_campaign(const Options& opt) {
    const CampaignConfig cfg = make_config(opt);
    const CampaignResult res = run_campaign(cfg, opt.workers);
    const std::vector<std::string> files = write_campaign_artifacts(res, cfg.output_dir);
    const int aborted = report_campaign(res, files, cfg.output_dir);
    return aborted > 0 && !opt.allow_partial ? 2 : 0;
}

int cmd_compare(const Options& opt) {
    CampaignConfig cfg = make_config(opt);
    const std::filesystem::path root = cfg.output_dir;

    CampaignConfig flux_cfg = cfg;
    flux_cfg.controller_mode = ControllerMode::FluxTracking;
    CampaignConfig volt_cfg = cfg;
    volt_cfg.controller_mode = ControllerMode::VoltageFeedforward;

    // identical seeds, so the two campaigns see the same relay population,
    // probe noise and microphone noise; only the drive differs
    const CampaignResult flux = run_campaign(flux_cfg, opt.workers);
    const CampaignResult volt = run_campaign(volt_cfg, opt.workers);
    int aborted = report_campaign(flux, write_campaign_artifacts(flux, root / "flux"),
                                  (root / "flux").string());
    aborted += report_campaign(volt, write_campaign_artifacts(volt, root / "voltage"),
                               (root / "voltage").string());

    std::map<int, const OpStats*> fs, vs;
    for (const OpStats& s : flux.stats) fs[s.op] = &s;
    for (const OpStats& s : volt.stats) vs[s.op] = &s;
    const std::filesystem::path out = root / "compare.csv";
    {
        std::ofstream os = open_out(out);
        os << "op,flux_cost_p50,voltage_cost_p50,flux_rhat_p50,voltage_rhat_p50,"
              "flux_completed_frac,voltage_completed_frac\n";
        for (int op = 1; op <= cfg.n_operations; ++op) {
            const auto f = fs.find(op);
            const auto v = vs.find(op);
            if (f == fs.end() || v == vs.end()) continue;
            os << op << ',' << fmt_g17(f->second->cost.p50) << ',' << fmt_g17(v->second->cost.p50)
               << ',' << fmt_g17(f->second->rhat.p50) << ',' << fmt_g17(v->second->rhat.p50)
               << ',' << fmt_g17(f->second->completed_frac) << ','
               << fmt_g17(v->second->completed_frac) << '\n';
        }
    }
    std::printf("wrote %s\n", out.string().c_str());
    return aborted > 0 && !opt.allow_partial ? 2 : 0;
}

int cmd_trajectory_dump(const Options& opt, const std::string& direction,
                        const std::string& out_path) {
    const CampaignConfig cfg = make_config(opt);
    const Direction dir = direction == "breaking" ? Direction::Breaking : Direction::Making;
    const TrajectoryTiming timing =
        dir == Direction::Making ? cfg.trajectory_making : cfg.trajectory_breaking;
    const TrajectorySpec spec =
        make_reference(make_boundary(cfg.nominal.geometry, timing, dir));
    const FeedforwardConfig ff{ParamVector::from(cfg.nominal),
                               cfg.nominal.geometry,
                               ExtendedMagnetics{cfg.nominal.magnetic.g_c0,
                                                 cfg.nominal.magnetic.lambda_sat,
                                                 cfg.nominal.magnetic.g_g0},
                               cfg.nominal.resistance,
                               cfg.feedforward.radicand_floor,
                               cfg.feedforward.hold_boost,
                               cfg.feedforward.hold_ramp};

    std::ofstream file;
    std::ostream* os = &std::cout;
    if (out_path != "-") {
        file = open_out(out_path);
        os = &file;
    }
    *os << "time,pos,vel,acc,lambda_d,i_d,v_d,clamped\n";
    const double dt = cfg.sim.control_period;
    const auto n = static_cast<long>(std::llround(cfg.sim.op_duration / dt));
    for (long k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) * dt;
        const RefPoint ref = eval_reference(spec, t);
        const FluxReference fr = flux_demand(spec, t, ff);
        *os << fmt_g17(t) << ',' << fmt_g17(ref.pos) << ',' << fmt_g17(ref.vel) << ','
            << fmt_g17(ref.acc) << ',' << fmt_g17(fr.lambda_d) << ','
            << fmt_g17(current_demand(spec, t, ff)) << ','
            << fmt_g17(voltage_reference(spec, t, ff, dt)) << ',' << (fr.clamped ? 1 : 0)
            << '\n';
    }
    if (out_path != "-") std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"soft-landing relay drive workbench"};
    app.require_subcommand(1);
    Options opt;
    int exit_code = 0;

    CLI::App* baseline = app.add_subcommand(
        "baseline", "standard slam operations that fix the cost normalization");
    add_config_flags(baseline, opt);
    baseline->callback([&] { exit_code = cmd_baseline(opt); });

    int relay = 0, rep = 0;
    CLI::App* trial =
        app.add_subcommand("trial", "one adaptation trial on one sampled relay");
    add_config_flags(trial, opt);
    add_run_flags(trial, opt);
    trial->add_option("--relay", relay, "relay index")->check(CLI::NonNegativeNumber);
    trial->add_option("--rep", rep, "repetition index")->check(CLI::NonNegativeNumber);
    trial->add_option("--mode", opt.mode, "controller mode override")
        ->check(CLI::IsMember({"FluxTracking", "VoltageFeedforward", "Standard"}));
    trial->callback([&] { exit_code = cmd_trial(opt, relay, rep); });

    CLI::App* campaign =
        app.add_subcommand("campaign", "baseline plus every (relay, repetition) trial");
    add_config_flags(campaign, opt);
    add_run_flags(campaign, opt);
    campaign->add_option("--mode", opt.mode, "controller mode override")
        ->check(CLI::IsMember({"FluxTracking", "VoltageFeedforward", "Standard"}));
    campaign->callback([&] { exit_code = cmd_campaign(opt); });

    CLI::App* compare = app.add_subcommand(
        "compare", "paired-seed flux vs voltage campaigns plus a per-op median table");
    add_config_flags(compare, opt);
    add_run_flags(compare, opt);
    compare->callback([&] { exit_code = cmd_compare(opt); });

    std::string direction = "making", out_path = "-";
    CLI::App* dump = app.add_subcommand(
        "trajectory-dump", "reference trajectory and feedforward demands at the control rate");
    add_config_flags(dump, opt);
    dump->add_option("--direction", direction, "making or breaking")
        ->check(CLI::IsMember({"making", "breaking"}));
    dump->add_option("--out", out_path, "output file, '-' for stdout");
    dump->callback([&] { exit_code = cmd_trajectory_dump(opt, direction, out_path); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return exit_code;
}
