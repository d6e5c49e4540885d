#pragma once

// Hybrid time stepping for one relay operation.  Smooth dynamics integrate
// with classic RK4 at a fixed substep; hard-stop impacts and contact touches
// are located by bisection inside the substep and the step is split there, so
// the integrator never runs across a discontinuity.  Slow-speed impacts with
// inward net torque enter a resting mode (armature pinned, flux still live)
// instead of chattering.
//
// Work done by the magnetic torque, viscous dissipation and impact losses are
// accumulated alongside the state so every operation can be audited against
// the energy balance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "softland/audio.hpp"
#include "softland/feedforward.hpp"
#include "softland/flux_control.hpp"
#include "softland/model.hpp"
#include "softland/run_to_run.hpp"
#include "softland/trajectory.hpp"

namespace softland {

struct SimConfig {
    double integration_step = 1e-6;     // s, fixed RK4 substep
    double control_period = 1e-5;       // s, command update interval (100 kHz)
    double op_duration = 15e-3;         // s, simulated span per operation
    double restitution = 0.3;           // hard-stop coefficient of restitution
    double rest_speed_threshold = 1e-3; // rad/s, below this an inward impact sticks
    double supply_voltage = 24.0;       // V, standard (uncontrolled) drive level
    double v_max = 35.0;                // V, actuator ceiling for controlled modes
    double probe_voltage = 0.5;  // V, resistance probe level
    // Absolute sigma on the averaged probe current reading.  The sensing
    // chain is scaled for operating currents, so the raw mA-level reading is
    // coarse, but the probe averages a long steady window; what remains is a
    // small absolute floor (grows relative as R rises and the reading shrinks).
    double probe_current_noise = 1.5e-6;  // A
    AudioModel audio;

    void validate() const {
        if (!(integration_step > 0.0) || !(control_period > 0.0) || !(op_duration > 0.0))
            throw std::invalid_argument("SimConfig: time steps must be > 0");
        const double ratio = control_period / integration_step;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || ratio < 1.0)
            throw std::invalid_argument(
                "SimConfig: control_period must be an integer multiple of integration_step");
        if (!(restitution >= 0.0 && restitution <= 1.0))
            throw std::invalid_argument("SimConfig: restitution must be in [0, 1]");
        if (!(rest_speed_threshold >= 0.0))
            throw std::invalid_argument("SimConfig: rest_speed_threshold must be >= 0");
        if (!(supply_voltage >= 0.0) || !(v_max > 0.0))
            throw std::invalid_argument("SimConfig: voltages must be positive");
        if (!(probe_voltage > 0.0) || !(probe_current_noise >= 0.0))
            throw std::invalid_argument("SimConfig: probe settings invalid");
        audio.validate();
    }
};

struct PlantState {
    double time = 0.0;
    double theta = 0.0;   // rad
    double omega = 0.0;   // rad/s
    double lambda = 0.0;  // Wb
    bool resting_low = false;
    bool resting_high = false;

    // energy bookkeeping
    double work_magnetic = 0.0;  // J, integral of Gamma_mag * omega
    double work_damping = 0.0;   // J, integral of c * omega^2 (>= 0)
    double impact_loss = 0.0;    // J, kinetic energy absorbed at stops

    static PlantState released(const RelayParams& p) {
        PlantState s;
        s.theta = p.geometry.theta_max;
        s.resting_high = true;
        return s;
    }
    static PlantState seated(double lambda0) {
        PlantState s;
        s.lambda = lambda0;
        s.resting_low = true;
        return s;
    }
};

inline double mechanical_energy(const PlantState& s, const RelayParams& p) {
    return 0.5 * p.mech.inertia * s.omega * s.omega +
           elastic_potential(s.theta, p.mech, p.geometry);
}

/// Energy balance residual relative to the total energy turnover; zero for an
/// exact integration.  Compares the state change against the accumulated work
/// terms between two snapshots of the same operation.
inline double energy_residual_rel(const PlantState& s0, const PlantState& s1,
                                  const RelayParams& p) {
    const double de = mechanical_energy(s1, p) - mechanical_energy(s0, p);
    const double dwm = s1.work_magnetic - s0.work_magnetic;
    const double dwd = s1.work_damping - s0.work_damping;
    const double dloss = s1.impact_loss - s0.impact_loss;
    const double residual = de - (dwm - dwd - dloss);
    const double turnover = std::abs(dwm) + dwd + dloss + std::abs(de);
    if (turnover <= 0.0) return 0.0;
    return std::abs(residual) / turnover;
}

// ---------------------------------------------------------------------------
// Integration policies: dynamic flux (coil voltage drives dlambda/dt) and
// forced flux (lambda imposed as a function of time, for ideal-tracking runs).

namespace detail {

struct MechRates {
    double dth, dom, dwm, dwd;
};

inline MechRates mech_rates(double theta, double omega, double lambda, const RelayParams& p) {
    // RK4 stage points may poke marginally past a stop before the event is
    // located; clamp only the lookup angle.
    const double th = std::clamp(theta, 0.0, p.geometry.theta_max);
    const double tm = magnetic_torque(th, lambda, p.magnetic);
    const double te = elastic_torque(th, p.mech, p.geometry);
    const double dom = (tm + te - p.mech.damping * omega) / p.mech.inertia;
    return {omega, dom, tm * omega, p.mech.damping * omega * omega};
}

struct DynamicFlux {
    double u;  // V, held constant across the step
    const RelayParams* p;

    void advance(PlantState& s, double h) const {
        const RelayParams& rp = *p;
        const auto f = [&](const PlantState& y, MechRates& mr, double& dla) {
            mr = mech_rates(y.theta, y.omega, y.lambda, rp);
            const double th = std::clamp(y.theta, 0.0, rp.geometry.theta_max);
            dla = flux_derivative(th, y.lambda, u, rp);
        };
        MechRates k1, k2, k3, k4;
        double l1, l2, l3, l4;
        f(s, k1, l1);
        PlantState y2 = s;
        y2.theta += 0.5 * h * k1.dth; y2.omega += 0.5 * h * k1.dom; y2.lambda += 0.5 * h * l1;
        f(y2, k2, l2);
        PlantState y3 = s;
        y3.theta += 0.5 * h * k2.dth; y3.omega += 0.5 * h * k2.dom; y3.lambda += 0.5 * h * l2;
        f(y3, k3, l3);
        PlantState y4 = s;
        y4.theta += h * k3.dth; y4.omega += h * k3.dom; y4.lambda += h * l3;
        f(y4, k4, l4);
        const double w = h / 6.0;
        s.theta += w * (k1.dth + 2.0 * k2.dth + 2.0 * k3.dth + k4.dth);
        s.omega += w * (k1.dom + 2.0 * k2.dom + 2.0 * k3.dom + k4.dom);
        s.lambda += w * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        s.work_magnetic += w * (k1.dwm + 2.0 * k2.dwm + 2.0 * k3.dwm + k4.dwm);
        s.work_damping += w * (k1.dwd + 2.0 * k2.dwd + 2.0 * k3.dwd + k4.dwd);
        s.time += h;
    }

    // armature pinned at a stop: flux alone evolves
    void rest_advance(PlantState& s, double h) const {
        const RelayParams& rp = *p;
        const double th = s.resting_low ? 0.0 : rp.geometry.theta_max;
        const auto f = [&](double la) { return flux_derivative(th, la, u, rp); };
        const double l1 = f(s.lambda);
        const double l2 = f(s.lambda + 0.5 * h * l1);
        const double l3 = f(s.lambda + 0.5 * h * l2);
        const double l4 = f(s.lambda + h * l3);
        s.lambda += h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        s.time += h;
    }
};

template <class FluxFn>
struct ForcedFlux {
    FluxFn lambda_at;  // double(double t_abs)
    const RelayParams* p;

    void advance(PlantState& s, double h) const {
        const RelayParams& rp = *p;
        const double t0 = s.time;
        const double lm = lambda_at(t0 + 0.5 * h);
        const double le = lambda_at(t0 + h);
        const MechRates k1 = mech_rates(s.theta, s.omega, lambda_at(t0), rp);
        const MechRates k2 =
            mech_rates(s.theta + 0.5 * h * k1.dth, s.omega + 0.5 * h * k1.dom, lm, rp);
        const MechRates k3 =
            mech_rates(s.theta + 0.5 * h * k2.dth, s.omega + 0.5 * h * k2.dom, lm, rp);
        const MechRates k4 = mech_rates(s.theta + h * k3.dth, s.omega + h * k3.dom, le, rp);
        const double w = h / 6.0;
        s.theta += w * (k1.dth + 2.0 * k2.dth + 2.0 * k3.dth + k4.dth);
        s.omega += w * (k1.dom + 2.0 * k2.dom + 2.0 * k3.dom + k4.dom);
        s.work_magnetic += w * (k1.dwm + 2.0 * k2.dwm + 2.0 * k3.dwm + k4.dwm);
        s.work_damping += w * (k1.dwd + 2.0 * k2.dwd + 2.0 * k3.dwd + k4.dwd);
        s.lambda = le;
        s.time += h;
    }

    void rest_advance(PlantState& s, double h) const {
        s.lambda = lambda_at(s.time + h);
        s.time += h;
    }
};

struct Crossing {
    double tau;        // time into the substep
    PlantState state;  // integrated to tau, theta snapped to the boundary
    ImpactKind kind;
};

// Locate the earliest boundary crossing within (0, h]; bisection to 1 ns.
template <class Policy>
std::optional<Crossing> first_crossing(const PlantState& s0, const PlantState& s1, double h,
                                       const RelayParams& p, const Policy& pol) {
    constexpr double kTimeTol = 1e-9;
    struct Boundary {
        double value;
        ImpactKind kind;
    };
    const Boundary bounds[4] = {
        {0.0, ImpactKind::ArmatureStopLow},
        {p.geometry.theta_max, ImpactKind::ArmatureStopHigh},
        {p.geometry.theta_no, ImpactKind::ContactTouchNo},
        {p.geometry.theta_nc, ImpactKind::ContactTouchNc},
    };

    std::optional<Crossing> best;
    for (const Boundary& b : bounds) {
        double lo = 0.0;
        double flo = s0.theta - b.value;
        if (flo == 0.0) {
            // sitting exactly on the boundary after a previous event: probe a
            // sliver ahead to learn which side we depart to
            lo = std::min(h * 1e-3, kTimeTol);
            PlantState probe = s0;
            pol.advance(probe, lo);
            flo = probe.theta - b.value;
            if (flo == 0.0) continue;
        }
        const double fhi = s1.theta - b.value;
        if (flo * fhi > 0.0) continue;

        double hi = h;
        while (hi - lo > kTimeTol) {
            const double mid = 0.5 * (lo + hi);
            PlantState pm = s0;
            pol.advance(pm, mid);
            const double fm = pm.theta - b.value;
            if (fm == 0.0 || fm * flo < 0.0) {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        if (best && hi >= best->tau) continue;
        PlantState sc = s0;
        pol.advance(sc, hi);
        sc.theta = b.value;
        best = Crossing{hi, sc, b.kind};
    }
    return best;
}

// A de-energized coil's flux decays exponentially and never reaches exactly
// zero, so a strict sign test on the stop torque would treat a residual pull
// dozens of orders below physical relevance as "lifting" and the rest state
// could never latch.  Torques within this slice of the return-spring
// full-stroke torque count as zero at a stop.
inline double stop_torque_eps(const RelayParams& p) {
    return 1e-9 * p.mech.k1 * p.geometry.theta_max;
}

inline void apply_stop(PlantState& s, bool low, const RelayParams& p, const SimConfig& cfg,
                       std::vector<ImpactEvent>& events) {
    const double w_minus = s.omega;
    const double speed = std::abs(w_minus);
    events.push_back(
        {s.time, low ? ImpactKind::ArmatureStopLow : ImpactKind::ArmatureStopHigh, speed});
    const double tau = net_torque(s.theta, 0.0, s.lambda, p);
    const double eps = stop_torque_eps(p);
    const bool held_in = low ? (tau <= eps) : (tau >= -eps);
    if (speed <= cfg.rest_speed_threshold && held_in) {
        s.impact_loss += 0.5 * p.mech.inertia * w_minus * w_minus;
        s.omega = 0.0;
        (low ? s.resting_low : s.resting_high) = true;
    } else {
        const double w_plus = -cfg.restitution * w_minus;
        s.impact_loss += 0.5 * p.mech.inertia * (w_minus * w_minus - w_plus * w_plus);
        s.omega = w_plus;
    }
}

template <class Policy>
void step_substep(PlantState& s, double h, const RelayParams& p, const SimConfig& cfg,
                  std::vector<ImpactEvent>& events, const Policy& pol) {
    if (s.resting_low || s.resting_high) {
        const bool low = s.resting_low;
        const double th = low ? 0.0 : p.geometry.theta_max;
        const double tau = net_torque(th, 0.0, s.lambda, p);
        const double eps = stop_torque_eps(p);
        const bool release = low ? (tau > eps) : (tau < -eps);
        if (!release) {
            pol.rest_advance(s, h);
            return;
        }
        s.resting_low = s.resting_high = false;  // lift-off, release is step-quantized
    }

    double remaining = h;
    int cascade = 0;
    while (remaining > 0.0) {
        if (++cascade > 64)
            throw std::runtime_error("step: more than 64 impact events inside one substep");
        PlantState trial = s;
        pol.advance(trial, remaining);
        const auto cross = first_crossing(s, trial, remaining, p, pol);
        if (!cross) {
            s = trial;
            return;
        }
        s = cross->state;
        remaining -= cross->tau;
        switch (cross->kind) {
            case ImpactKind::ArmatureStopLow:
                apply_stop(s, true, p, cfg, events);
                break;
            case ImpactKind::ArmatureStopHigh:
                apply_stop(s, false, p, cfg, events);
                break;
            case ImpactKind::ContactTouchNo:
            case ImpactKind::ContactTouchNc:
                events.push_back({s.time, cross->kind, std::abs(s.omega)});
                break;
        }
        if ((s.resting_low || s.resting_high) && remaining > 0.0) {
            pol.rest_advance(s, remaining);
            return;
        }
    }
}

template <class Policy>
void step_policy(PlantState& s, double dt, const RelayParams& p, const SimConfig& cfg,
                 std::vector<ImpactEvent>& events, const Policy& pol) {
    const double n_real = dt / cfg.integration_step;
    const auto n = static_cast<long>(std::llround(n_real));
    if (n < 1 || std::abs(n_real - static_cast<double>(n)) > 1e-9 * n_real)
        throw std::invalid_argument("step: dt must be an integer multiple of integration_step");
    for (long i = 0; i < n; ++i) step_substep(s, cfg.integration_step, p, cfg, events, pol);
}

}  // namespace detail

/// Advance the plant by dt under a constant coil voltage.  dt must be an
/// integer multiple of the integration step.  Impact events are appended in
/// time order.
inline void step(PlantState& s, double u, double dt, const RelayParams& p, const SimConfig& cfg,
                 std::vector<ImpactEvent>& events) {
    detail::DynamicFlux pol{u, &p};
    detail::step_policy(s, dt, p, cfg, events, pol);
}

// ---------------------------------------------------------------------------
// Resistance probe

struct ProbeResult {
    double r_hat;           // Ohm
    double steady_current;  // A, the (noisy) reading the estimate came from
    double steady_flux;     // Wb
};

/// Quasi-static resistance measurement at a small probe voltage, taken at
/// rest before the operation.  Throws if the probe flux would produce enough
/// torque to displace the armature by more than 2% of the stroke (only
/// possible at the released stop; when seated the magnetic pull is into the
/// stop).
inline ProbeResult probe_resistance(const RelayParams& p, double theta_rest, const SimConfig& cfg,
                                    std::uint64_t noise_seed) {
    p.validate();
    const double lam = steady_state_flux(cfg.probe_voltage, theta_rest, p);
    if (theta_rest >= p.geometry.theta_max) {
        const double pull = std::abs(magnetic_torque(theta_rest, lam, p.magnetic));
        const double margin = p.mech.k1 * 0.02 * p.geometry.theta_max;
        if (pull > margin)
            throw std::domain_error(
                "probe_resistance: probe level would displace the armature (pull " +
                std::to_string(pull) + " Nm exceeds 2% stroke margin)");
    }
    const double i_true = cfg.probe_voltage / p.resistance;
    double i_meas = i_true;
    if (cfg.probe_current_noise > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> n(0.0, cfg.probe_current_noise);
        i_meas = i_true + n(rng);
    }
    if (!(i_meas > 0.0))
        throw std::domain_error("probe_resistance: non-positive current reading");
    return ProbeResult{cfg.probe_voltage / i_meas, i_meas, lam};
}

// ---------------------------------------------------------------------------
// Unit-to-unit variability

struct VariabilitySpread {
    // relative (lognormal) sigma per parameter; 0 disables perturbation
    double g_c0 = 0.0, lambda_sat = 0.0, g_g0 = 0.0, g_g0_slope = 0.0, kappa1 = 0.0,
           kappa2 = 0.0;
    double inertia = 0.0, k1 = 0.0, k2 = 0.0, k3 = 0.0, damping = 0.0;
    double theta_max = 0.0, theta_nc = 0.0, theta_no = 0.0;
    double resistance = 0.0;

    void validate() const {
        for (double v : {g_c0, lambda_sat, g_g0, g_g0_slope, kappa1, kappa2, inertia, k1, k2, k3,
                         damping, theta_max, theta_nc, theta_no, resistance})
            if (!(v >= 0.0))
                throw std::invalid_argument("VariabilitySpread: sigmas must be >= 0");
    }
};

/// Draw one relay unit around the nominal: every parameter is scaled by a
/// lognormal factor (median preserved).  Geometry triples violating the
/// ordering 0 < theta_no < theta_nc < theta_max are resampled.
inline RelayParams perturb_params(const RelayParams& nominal, const VariabilitySpread& sp,
                                  std::uint64_t seed) {
    nominal.validate();
    sp.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    const auto scale = [&](double v, double sigma) { return v * std::exp(sigma * z(rng)); };

    RelayParams out = nominal;
    out.magnetic.g_c0 = scale(nominal.magnetic.g_c0, sp.g_c0);
    out.magnetic.lambda_sat = scale(nominal.magnetic.lambda_sat, sp.lambda_sat);
    out.magnetic.g_g0 = scale(nominal.magnetic.g_g0, sp.g_g0);
    out.magnetic.g_g0_slope = scale(nominal.magnetic.g_g0_slope, sp.g_g0_slope);
    out.magnetic.kappa1 = scale(nominal.magnetic.kappa1, sp.kappa1);
    out.magnetic.kappa2 = scale(nominal.magnetic.kappa2, sp.kappa2);
    out.mech.inertia = scale(nominal.mech.inertia, sp.inertia);
    out.mech.k1 = scale(nominal.mech.k1, sp.k1);
    out.mech.k2 = scale(nominal.mech.k2, sp.k2);
    out.mech.k3 = scale(nominal.mech.k3, sp.k3);
    out.mech.damping = scale(nominal.mech.damping, sp.damping);
    for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
            throw std::runtime_error("perturb_params: no valid geometry after 1000 draws");
        out.geometry.theta_max = scale(nominal.geometry.theta_max, sp.theta_max);
        out.geometry.theta_nc = scale(nominal.geometry.theta_nc, sp.theta_nc);
        out.geometry.theta_no = scale(nominal.geometry.theta_no, sp.theta_no);
        if (out.geometry.theta_no > 0.0 && out.geometry.theta_nc > out.geometry.theta_no &&
            out.geometry.theta_max > out.geometry.theta_nc)
            break;
    }
    out.resistance = scale(nominal.resistance, sp.resistance);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// One full operation under a controller

enum class ControllerMode {
    FluxTracking,        // PI on the estimated flux against the flat reference
    VoltageFeedforward,  // open-loop flat voltage, no feedback
    Standard,            // plain square-wave drive (slam)
    IdealFlux,           // flux imposed exactly; analysis mode
};

inline const char* to_string(ControllerMode m) {
    switch (m) {
        case ControllerMode::FluxTracking: return "FluxTracking";
        case ControllerMode::VoltageFeedforward: return "VoltageFeedforward";
        case ControllerMode::Standard: return "Standard";
        case ControllerMode::IdealFlux: return "IdealFlux";
    }
    return "?";
}

struct OperationRecord {
    Direction direction = Direction::Making;
    ControllerMode mode = ControllerMode::FluxTracking;
    double control_period = 0.0;

    // sampled at the control rate
    std::vector<double> time, v_command, current, flux_true, flux_est, flux_ref, theta, omega;

    std::vector<ImpactEvent> events;
    AudioRecord audio;
    double cost = std::numeric_limits<double>::quiet_NaN();  // raw audio energy

    double resistance_true = 0.0;
    double r_hat = 0.0;
    int ff_clamped_samples = 0;
    bool closed = false;    // reached the seated stop
    bool released = false;  // reached the released stop
    double energy_residual = 0.0;
    PlantState final_state;
};

struct SimulationError : std::runtime_error {
    OperationRecord partial;
    SimulationError(const std::string& what, OperationRecord rec)
        : std::runtime_error(what), partial(std::move(rec)) {}
};

struct ControlStack {
    ControllerMode mode = ControllerMode::FluxTracking;
    TrajectorySpec trajectory{};  // unused in Standard mode
    FeedforwardConfig ff{};       // candidate model; also carries R_hat for voltage mode
    PIGains gains{};
    double r_hat = 0.0;           // Ohm, from the pre-operation probe
};

/// Simulate one full switching operation under the given controller.  The
/// optional initial state lets a campaign carry the physical state from the
/// previous operation (time and energy accumulators restart at zero).
/// Throws SimulationError (with the partial record) if the plant integration
/// fails, e.g. on core saturation.
inline OperationRecord run_operation(const ControlStack& stack, const RelayParams& plant,
                                     Direction dir, const SimConfig& cfg,
                                     const CostConfig& cost_cfg, std::uint64_t audio_seed,
                                     const PlantState* initial = nullptr) {
    plant.validate();
    cfg.validate();
    cost_cfg.validate();
    if (cost_cfg.window_start + cost_cfg.window_length > cfg.op_duration + 1e-12)
        throw std::invalid_argument("run_operation: cost window exceeds op_duration");
    const bool has_traj = stack.mode != ControllerMode::Standard;
    if (has_traj) stack.ff.validate();
    if (stack.mode == ControllerMode::FluxTracking) stack.gains.validate();
    if ((stack.mode == ControllerMode::FluxTracking ||
         stack.mode == ControllerMode::VoltageFeedforward) &&
        !(stack.r_hat > 0.0))
        throw std::invalid_argument("run_operation: controlled modes need a resistance estimate");

    const double dt = cfg.control_period;
    const auto n_steps = static_cast<long>(std::llround(cfg.op_duration / dt));

    PlantState s;
    if (initial) {
        s = *initial;
        s.time = 0.0;
        s.work_magnetic = s.work_damping = s.impact_loss = 0.0;
    } else if (dir == Direction::Making) {
        s = PlantState::released(plant);
    } else {
        const double lambda0 =
            stack.mode == ControllerMode::Standard
                ? steady_state_flux(cfg.supply_voltage, 0.0, plant)
                : flux_demand(stack.trajectory, stack.trajectory.boundary.t0, stack.ff).lambda_d;
        s = PlantState::seated(lambda0);
    }
    const PlantState start = s;

    OperationRecord rec;
    rec.direction = dir;
    rec.mode = stack.mode;
    rec.control_period = dt;
    rec.resistance_true = plant.resistance;
    rec.r_hat = stack.r_hat;
    const auto reserve = static_cast<std::size_t>(n_steps);
    for (auto* v : {&rec.time, &rec.v_command, &rec.current, &rec.flux_true, &rec.flux_est,
                    &rec.flux_ref, &rec.theta, &rec.omega})
        v->reserve(reserve);

    // Estimator reset value: a making operation starts from a de-energized
    // coil, so the integrator restarts at zero; a breaking operation starts
    // from the commanded hold flux of the preceding close.
    ControllerState ctl;
    ctl.r_hat = stack.r_hat;
    double lambda_hat0 = 0.0;
    if (has_traj && dir == Direction::Breaking)
        lambda_hat0 = flux_demand(stack.trajectory, stack.trajectory.boundary.t0, stack.ff).lambda_d;
    reset_estimator(ctl, lambda_hat0, 0.0);

    const VoltageLimits limits{0.0, cfg.v_max};

    const auto finalize = [&](PlantState final_s) {
        rec.final_state = final_s;
        rec.audio = synth_audio(rec.events, cost_cfg.window_start, cost_cfg.window_length,
                                cfg.audio, audio_seed);
        rec.cost = cost_from_audio(rec.audio, cost_cfg);
        for (const ImpactEvent& ev : rec.events) {
            if (ev.kind == ImpactKind::ArmatureStopLow) rec.closed = true;
            if (ev.kind == ImpactKind::ArmatureStopHigh) rec.released = true;
        }
        rec.energy_residual = energy_residual_rel(start, final_s, plant);
    };

    try {
        for (long k = 0; k < n_steps; ++k) {
            const double t = static_cast<double>(k) * dt;
            const double i_k = coil_current(s.theta, s.lambda, plant.magnetic);
            if (k == 0 || !(stack.r_hat > 0.0))
                ctl.prev_current = i_k;
            else
                flux_estimate_step(rec.v_command.back(), i_k, ctl, dt);

            FluxReference fr{0.0, false};
            if (has_traj) {
                fr = flux_demand(stack.trajectory, t, stack.ff);
                if (fr.clamped) rec.ff_clamped_samples += 1;
            }

            // A closed relay is held magnetically, so a making controller keeps
            // tracking the hold flux after t_f.  An open relay is parked by the
            // return spring, so a breaking controller releases the drive once
            // the reference ends and lets the coil de-energize.
            const bool drive_released =
                dir == Direction::Breaking && has_traj && t >= stack.trajectory.boundary.tf;

            double u = 0.0;
            switch (stack.mode) {
                case ControllerMode::FluxTracking:
                    u = drive_released
                            ? pi_release(ctl)
                            : pi_step(fr.lambda_d, ctl.lambda_hat, ctl, stack.gains, dt, limits);
                    break;
                case ControllerMode::VoltageFeedforward:
                    u = drive_released
                            ? 0.0
                            : std::clamp(voltage_reference(stack.trajectory, t, stack.ff, dt),
                                         limits.lo, limits.hi);
                    ctl.last_command = u;
                    break;
                case ControllerMode::Standard:
                    u = dir == Direction::Making ? cfg.supply_voltage : 0.0;
                    break;
                case ControllerMode::IdealFlux:
                    // not applied to the plant; logged for reference only
                    u = voltage_reference(stack.trajectory, t, stack.ff, dt);
                    break;
            }

            rec.time.push_back(t);
            rec.v_command.push_back(u);
            rec.current.push_back(i_k);
            rec.flux_true.push_back(s.lambda);
            rec.flux_est.push_back(ctl.lambda_hat);
            rec.flux_ref.push_back(fr.lambda_d);
            rec.theta.push_back(s.theta);
            rec.omega.push_back(s.omega);

            if (stack.mode == ControllerMode::IdealFlux) {
                const auto lam_at = [&](double ta) {
                    return flux_demand(stack.trajectory, ta, stack.ff).lambda_d;
                };
                detail::ForcedFlux<decltype(lam_at)> pol{lam_at, &plant};
                detail::step_policy(s, dt, plant, cfg, rec.events, pol);
            } else {
                step(s, u, dt, plant, cfg, rec.events);
            }
        }
    } catch (const saturation_error& e) {
        finalize(s);
        throw SimulationError(std::string("operation aborted: ") + e.what(), std::move(rec));
    }

    finalize(s);
    return rec;
}

}  // namespace softland
