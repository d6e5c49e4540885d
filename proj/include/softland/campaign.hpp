#pragma once

// Desk-scale evaluation campaign: a population of perturbed relay units, a
// block of standard (slam) operations to fix the cost normalization, then one
// adaptation trial per (relay, repetition) with a per-operation resistance
// probe and an optional series-resistance step partway through.
//
// Determinism contract: every random draw is seeded from (master seed,
// purpose, indices), trials are written into a pre-sized vector by index, and
// statistics are computed from that ordered vector, so results are identical
// for any worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "softland/model.hpp"
#include "softland/rng.hpp"
#include "softland/run_to_run.hpp"
#include "softland/simulator.hpp"
#include "softland/trajectory.hpp"

namespace softland {

struct ResistanceStep {
    double ohms = 150.0;
    int at_operation = 251;  // 1-based; operations >= this index see the step. <= 0 disables.

    bool enabled() const { return at_operation >= 1 && ohms != 0.0; }
};

struct OptimizerConfig {
    double relative_step = 0.15;      // initial simplex offset, log space
    int reeval_period = 25;           // incumbent re-measurement period, operations
    double divergence_factor = 1e3;   // candidate outside [1/f, f] x nominal aborts the trial
    // Objective handed to the optimizer when an operation fails to close the
    // contacts (normalized cost units).  A stroke that never completes can be
    // nearly silent, so without this floor "do not switch" would look optimal.
    double failed_op_cost = 10.0;

    void validate() const {
        if (!(relative_step > 0.0))
            throw std::invalid_argument("OptimizerConfig: relative_step must be > 0");
        if (reeval_period < 1)
            throw std::invalid_argument("OptimizerConfig: reeval_period must be >= 1");
        if (!(divergence_factor > 1.0))
            throw std::invalid_argument("OptimizerConfig: divergence_factor must be > 1");
        if (!(failed_op_cost > 0.0))
            throw std::invalid_argument("OptimizerConfig: failed_op_cost must be > 0");
    }
};

struct SeedConfig {
    std::uint64_t master = 0x5eed0001ULL;
};

// Campaign-level knobs for the flatness feedforward (the model itself comes
// from the nominal parameters and the optimizer candidate).
struct FeedforwardSettings {
    double radicand_floor = 0.0;
    double hold_boost = 1.5;
    double hold_ramp = 1e-3;

    void validate() const {
        if (radicand_floor < 0.0)
            throw std::invalid_argument("FeedforwardSettings: radicand_floor must be >= 0");
        if (!(hold_boost >= 1.0))
            throw std::invalid_argument("FeedforwardSettings: hold_boost must be >= 1");
        if (!(hold_ramp > 0.0))
            throw std::invalid_argument("FeedforwardSettings: hold_ramp must be > 0");
    }
};

inline RelayParams default_relay() {
    RelayParams p;
    // High-inductance coil (electrical pole around 1 kHz/2pi): the hold
    // current stays near 25 mA so the 35 V ceiling leaves headroom even with
    // a hot coil, and the flux responds on a timescale comparable to the
    // approach segment, which is what separates tracked from open-loop drive.
    p.magnetic = MagneticParams{1.0, 0.03, 1.5, 20.0, 30.0, 0.04};
    p.mech = MechParams{5e-8, 0.04, 0.04, 0.08, 2e-5};
    p.geometry = Geometry{0.01, 0.006, 0.003};
    p.resistance = 360.0;
    return p;
}

inline VariabilitySpread default_spread() {
    VariabilitySpread s;
    s.g_c0 = 0.05;
    s.lambda_sat = 0.05;
    s.g_g0 = 0.05;
    s.g_g0_slope = 0.10;
    s.kappa1 = 0.10;
    s.kappa2 = 0.10;
    s.inertia = 0.08;
    s.k1 = 0.10;
    s.k2 = 0.10;
    s.k3 = 0.10;
    s.damping = 0.20;
    s.theta_max = 0.015;
    s.theta_nc = 0.02;
    s.theta_no = 0.02;
    s.resistance = 0.02;
    return s;
}

struct CampaignConfig {
    int n_relays = 20;
    int n_repetitions = 1;
    int n_operations = 300;
    int baseline_ops = 5;  // standard operations per relay and resistance condition
    ResistanceStep resistance_step{};
    ControllerMode controller_mode = ControllerMode::FluxTracking;
    RelayParams nominal = default_relay();
    VariabilitySpread variability = default_spread();
    // Making: half a millisecond of pre-charge lets the flux loop settle on
    // the release level before motion is commanded, and the 2.5 ms approach
    // segment keeps the demanded flux slew inside the drive ceiling even when
    // the coil resistance runs high (v = dlambda/dt + R i must stay < v_max).
    // Breaking is slower overall: away from the seated stop only the return
    // spring accelerates the armature, so the reachable acceleration is far
    // smaller than on closing where the magnet does the work.
    TrajectoryTiming trajectory_making{0.5e-3, 6.5e-3, 9.0e-3};
    TrajectoryTiming trajectory_breaking{0.0, 3.5e-3, 8.0e-3};
    PIGains gains{};
    FeedforwardSettings feedforward{};
    OptimizerConfig optimizer{};
    CostConfig cost{};
    SimConfig sim{};
    SeedConfig seeds{};
    std::string output_dir = "campaign_out";

    void validate() const {
        if (n_relays < 1 || n_repetitions < 1 || n_operations < 1 || baseline_ops < 1)
            throw std::invalid_argument("CampaignConfig: counts must be >= 1");
        if (controller_mode == ControllerMode::IdealFlux)
            throw std::invalid_argument("CampaignConfig: IdealFlux is an analysis mode, not a campaign mode");
        nominal.validate();
        variability.validate();
        trajectory_making.validate();
        trajectory_breaking.validate();
        gains.validate();
        feedforward.validate();
        optimizer.validate();
        cost.validate();
        sim.validate();
        if (cost.window_start + cost.window_length > sim.op_duration + 1e-12)
            throw std::invalid_argument("CampaignConfig: cost window exceeds op_duration");
    }
};

// seed purposes
inline constexpr std::uint64_t kSeedRelay = 1;
inline constexpr std::uint64_t kSeedBaselineAudio = 2;
inline constexpr std::uint64_t kSeedBaselineProbe = 3;
inline constexpr std::uint64_t kSeedTrialAudio = 4;
inline constexpr std::uint64_t kSeedTrialProbe = 5;

inline RelayParams relay_unit(const CampaignConfig& cfg, int relay_idx) {
    return perturb_params(cfg.nominal, cfg.variability,
                          derive_seed(cfg.seeds.master, {kSeedRelay, static_cast<std::uint64_t>(relay_idx)}));
}

// ---------------------------------------------------------------------------
// Percentiles (nearest-rank: rank = ceil(p/100 * N) of the ascending sort)

inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw std::invalid_argument("percentile: empty sample");
    if (!(p > 0.0) || !(p <= 100.0))
        throw std::invalid_argument("percentile: p must be in (0, 100]");
    std::sort(v.begin(), v.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    if (rank < 1) rank = 1;
    if (rank > v.size()) rank = v.size();
    return v[rank - 1];
}

struct PercentileSummary {
    double p10 = 0.0, p25 = 0.0, p50 = 0.0, p75 = 0.0, p90 = 0.0;
};

inline PercentileSummary summarize(const std::vector<double>& v) {
    return PercentileSummary{percentile(v, 10.0), percentile(v, 25.0), percentile(v, 50.0),
                             percentile(v, 75.0), percentile(v, 90.0)};
}

namespace detail {

/// De-energize the coil and give the armature one operation window to spring
/// back and settle; the acoustic output of the return stroke is not costed.
inline void settle_release(PlantState& s, const RelayParams& plant, const SimConfig& cfg) {
    std::vector<ImpactEvent> sink;
    const auto n = static_cast<long>(std::llround(cfg.op_duration / cfg.control_period));
    for (long k = 0; k < n; ++k) step(s, 0.0, cfg.control_period, plant, cfg, sink);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Baseline (standard closing operations, both resistance conditions)

struct BaselineOp {
    int relay = 0;
    int op = 0;  // within the block, 1-based
    double resistance = 0.0;
    bool stepped = false;
    double cost = 0.0;
    bool failed = false;
    std::string error;
};

struct BaselineResult {
    std::vector<BaselineOp> ops;
    double median_cost = 0.0;  // nominal-resistance ops only, pooled across relays
    PercentileSummary nominal{};
    PercentileSummary stepped{};  // meaningful only when has_stepped
    bool has_stepped = false;
};

inline BaselineResult run_baseline(const CampaignConfig& cfg) {
    BaselineResult out;
    std::vector<double> pools[2];
    const int conditions = cfg.resistance_step.enabled() ? 2 : 1;
    for (int r = 0; r < cfg.n_relays; ++r) {
        const RelayParams relay = relay_unit(cfg, r);
        for (int cond = 0; cond < conditions; ++cond) {
            RelayParams plant = relay;
            if (cond == 1) plant.resistance += cfg.resistance_step.ohms;
            PlantState carry = PlantState::released(plant);
            for (int b = 0; b < cfg.baseline_ops; ++b) {
                BaselineOp row;
                row.relay = r;
                row.op = b + 1;
                row.resistance = plant.resistance;
                row.stepped = cond == 1;
                ControlStack stack;
                stack.mode = ControllerMode::Standard;
                const auto seed =
                    derive_seed(cfg.seeds.master, {kSeedBaselineAudio, static_cast<std::uint64_t>(r),
                                                   static_cast<std::uint64_t>(cond),
                                                   static_cast<std::uint64_t>(b)});
                try {
                    const OperationRecord rec = run_operation(stack, plant, Direction::Making,
                                                              cfg.sim, cfg.cost, seed, &carry);
                    carry = rec.final_state;
                    detail::settle_release(carry, plant, cfg.sim);
                    row.cost = rec.cost;
                    pools[cond].push_back(rec.cost);
                } catch (const std::exception& e) {
                    row.failed = true;
                    row.error = e.what();
                    carry = PlantState::released(plant);
                }
                out.ops.push_back(std::move(row));
            }
        }
    }
    if (pools[0].empty())
        throw std::runtime_error("run_baseline: no successful standard operation to normalize with");
    out.median_cost = percentile(pools[0], 50.0);
    if (!(out.median_cost > 0.0))
        throw std::runtime_error("run_baseline: degenerate (zero) baseline median");
    out.nominal = summarize(pools[0]);
    if (!pools[1].empty()) {
        out.stepped = summarize(pools[1]);
        out.has_stepped = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// One adaptation trial

struct OpSummary {
    int op = 0;  // 1-based
    std::string phase;  // simplex operation ("standard" when the optimizer is off)
    double raw_cost = 0.0;
    double norm_cost = 0.0;
    double objective = 0.0;  // value handed to the optimizer (failure-floored)
    double resistance_true = 0.0;
    double r_hat = 0.0;
    double max_stop_speed = 0.0;  // rad/s, worst hard-stop impact during the op
    int n_events = 0;
    bool completed = false;  // contacts closed and the armature seated
    int ff_clamped_samples = 0;
    double energy_residual = 0.0;
    ParamVector candidate{};
};

struct TrialResult {
    int relay = 0;
    int repetition = 0;
    std::vector<OpSummary> ops;
    bool aborted = false;
    int abort_op = 0;
    std::string abort_reason;
};

/// One control process on one sampled plant: per operation, probe the coil
/// resistance, run a controlled closing stroke, learn from its audio cost,
/// then de-energize so the spring returns the armature for the next round.
inline TrialResult run_trial(const CampaignConfig& cfg, int relay_idx, int rep_idx,
                             double baseline_median) {
    const RelayParams relay = relay_unit(cfg, relay_idx);
    const ParamVector nominal_p = ParamVector::from(cfg.nominal);
    const ExtendedMagnetics ext{cfg.nominal.magnetic.g_c0, cfg.nominal.magnetic.lambda_sat,
                                cfg.nominal.magnetic.g_g0};
    const TrajectorySpec traj_make =
        make_reference(make_boundary(cfg.nominal.geometry, cfg.trajectory_making, Direction::Making));

    SimplexState nm = nm_init(nominal_p, cfg.optimizer.relative_step, cfg.optimizer.reeval_period);
    const bool adapt = cfg.controller_mode != ControllerMode::Standard;
    const double log_limit = std::log(cfg.optimizer.divergence_factor);

    TrialResult tr;
    tr.relay = relay_idx;
    tr.repetition = rep_idx;
    tr.ops.reserve(static_cast<std::size_t>(cfg.n_operations));
    PlantState carry = PlantState::released(relay);

    const auto r64 = static_cast<std::uint64_t>(relay_idx);
    const auto q64 = static_cast<std::uint64_t>(rep_idx);

    // Resistance handling differs by mode.  The flux estimator integrates
    // v - R_hat i, so it drifts unless R_hat is refreshed before every
    // operation; the probe exists for its sake.  The open-loop voltage
    // profile, in contrast, is computed once from the commissioning estimate:
    // it has no integrator to protect, and carrying the live estimate into it
    // would quietly hide its defining weakness, the extra plant parameter it
    // depends on.  The probe still runs (and is logged) in every mode.
    double r_commission = 0.0;

    for (int op = 1; op <= cfg.n_operations; ++op) {
        const auto op64 = static_cast<std::uint64_t>(op);
        RelayParams plant = relay;
        if (cfg.resistance_step.enabled() && op >= cfg.resistance_step.at_operation)
            plant.resistance += cfg.resistance_step.ohms;

        ProbeResult probe{};
        try {
            probe = probe_resistance(plant, carry.theta, cfg.sim,
                                     derive_seed(cfg.seeds.master, {kSeedTrialProbe, r64, q64, op64}));
        } catch (const std::exception& e) {
            tr.aborted = true;
            tr.abort_op = op;
            tr.abort_reason = std::string("probe failed: ") + e.what();
            return tr;
        }

        OpSummary row;
        row.op = op;
        row.resistance_true = plant.resistance;
        row.r_hat = probe.r_hat;

        ParamVector cand = nominal_p;
        if (adapt) {
            cand = nm_next_candidate(nm);
            row.phase = to_string(nm.pending_phase);
            for (std::size_t i = 0; i < ParamVector::size(); ++i) {
                if (std::abs(std::log(cand[i] / nominal_p[i])) > log_limit) {
                    char why[96];
                    std::snprintf(why, sizeof why,
                                  "optimizer divergence guard: candidate entry %zu = %.6g "
                                  "outside bounds", i, cand[i]);
                    tr.aborted = true;
                    tr.abort_op = op;
                    tr.abort_reason = why;
                    return tr;
                }
            }
        } else {
            row.phase = "standard";
        }
        row.candidate = cand;

        if (op == 1) r_commission = probe.r_hat;
        const double ff_r = cfg.controller_mode == ControllerMode::VoltageFeedforward
                                ? r_commission
                                : probe.r_hat;

        ControlStack stack;
        stack.mode = cfg.controller_mode;
        stack.trajectory = traj_make;
        stack.ff = FeedforwardConfig{cand,           cfg.nominal.geometry,
                                     ext,            ff_r,
                                     cfg.feedforward.radicand_floor, cfg.feedforward.hold_boost,
                                     cfg.feedforward.hold_ramp};
        stack.gains = cfg.gains;
        stack.r_hat = probe.r_hat;

        OperationRecord rec;
        try {
            rec = run_operation(stack, plant, Direction::Making, cfg.sim, cfg.cost,
                                derive_seed(cfg.seeds.master, {kSeedTrialAudio, r64, q64, op64}),
                                &carry);
        } catch (const SimulationError& e) {
            tr.aborted = true;
            tr.abort_op = op;
            tr.abort_reason = e.what();
            return tr;
        }
        carry = rec.final_state;

        row.raw_cost = rec.cost;
        row.norm_cost = normalize_cost(rec.cost, baseline_median);
        for (const ImpactEvent& ev : rec.events)
            if (is_stop(ev.kind)) row.max_stop_speed = std::max(row.max_stop_speed, ev.speed);
        row.n_events = static_cast<int>(rec.events.size());
        row.completed = rec.closed && carry.resting_low;
        row.ff_clamped_samples = rec.ff_clamped_samples;
        row.energy_residual = rec.energy_residual;
        row.objective =
            row.completed ? row.norm_cost : std::max(row.norm_cost, cfg.optimizer.failed_op_cost);
        if (adapt) nm_update(nm, row.objective);
        tr.ops.push_back(std::move(row));

        try {
            detail::settle_release(carry, plant, cfg.sim);
        } catch (const std::exception& e) {
            tr.aborted = true;
            tr.abort_op = op;
            tr.abort_reason = std::string("return stroke failed: ") + e.what();
            return tr;
        }
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Whole campaign

struct OpStats {
    int op = 0;
    int n = 0;
    PercentileSummary cost{};
    PercentileSummary rhat{};
    double stop_speed_p50 = 0.0;
    double completed_frac = 0.0;
};

struct CampaignResult {
    CampaignConfig config;
    BaselineResult baseline;
    std::vector<TrialResult> trials;
    std::vector<OpStats> stats;  // per operation index

    bool any_aborted() const {
        for (const TrialResult& t : trials)
            if (t.aborted) return true;
        return false;
    }
};

inline std::vector<OpStats> campaign_stats(const CampaignConfig& cfg,
                                           const std::vector<TrialResult>& trials) {
    std::vector<OpStats> stats;
    stats.reserve(static_cast<std::size_t>(cfg.n_operations));
    for (int op = 1; op <= cfg.n_operations; ++op) {
        std::vector<double> costs, rhats, speeds;
        int completed = 0, n = 0;
        for (const TrialResult& t : trials) {
            const auto idx = static_cast<std::size_t>(op - 1);
            if (idx >= t.ops.size()) continue;
            const OpSummary& s = t.ops[idx];
            costs.push_back(s.norm_cost);
            rhats.push_back(s.r_hat);
            speeds.push_back(s.max_stop_speed);
            completed += s.completed ? 1 : 0;
            n += 1;
        }
        if (n == 0) continue;
        OpStats row;
        row.op = op;
        row.n = n;
        row.cost = summarize(costs);
        row.rhat = summarize(rhats);
        row.stop_speed_p50 = percentile(speeds, 50.0);
        row.completed_frac = static_cast<double>(completed) / n;
        stats.push_back(row);
    }
    return stats;
}

/// Run baseline plus all trials.  Worker threads pull trial indices from an
/// atomic counter; output ordering and content are independent of the worker
/// count.
inline CampaignResult run_campaign(const CampaignConfig& cfg, int workers = 1) {
    cfg.validate();
    CampaignResult res;
    res.config = cfg;
    res.baseline = run_baseline(cfg);

    const int total = cfg.n_relays * cfg.n_repetitions;
    res.trials.assign(static_cast<std::size_t>(total), TrialResult{});
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    const auto body = [&]() {
        try {
            for (;;) {
                const int t = next.fetch_add(1);
                if (t >= total) return;
                const int r = t / cfg.n_repetitions;
                const int q = t % cfg.n_repetitions;
                res.trials[static_cast<std::size_t>(t)] =
                    run_trial(cfg, r, q, res.baseline.median_cost);
            }
        } catch (...) {
            const std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
        }
    };

    const int n_workers = std::max(1, std::min(workers, total));
    if (n_workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(body);
        for (std::thread& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    res.stats = campaign_stats(cfg, res.trials);
    return res;
}

}  // namespace softland
