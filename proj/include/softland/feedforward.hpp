#pragma once

// Differential-flatness inversion of the armature dynamics: given the angle
// reference and a model parameter vector, recover the flux linkage, coil
// current and coil voltage that would produce exactly that motion.
//
// The flux inversion only involves the adapted entries (springs, damping,
// inertia, gap reluctance gradient); the extended magnetics enter through
// the current and voltage reconstruction.

#include <cmath>
#include <stdexcept>

#include "softland/model.hpp"
#include "softland/trajectory.hpp"

namespace softland {

// Magnetic constants that the run-to-run adaptation never touches.
struct ExtendedMagnetics {
    double g_c0;
    double lambda_sat;
    double g_g0;

    void validate() const {
        if (!(g_c0 > 0.0) || !(lambda_sat > 0.0) || !(g_g0 > 0.0))
            throw std::invalid_argument("ExtendedMagnetics: all fields must be > 0");
    }
};

struct FeedforwardConfig {
    ParamVector p;
    Geometry geometry;
    ExtendedMagnetics extended;
    double resistance_estimate = 0.0;  // Ohm, used only by voltage_reference
    double radicand_floor = 0.0;       // Wb^2, clamp level for infeasible demands
    // After a making stroke ends, the flux demand ramps from the marginal
    // seated balance up to hold_boost times that value over hold_ramp seconds.
    // The balance value is the drop-out point; holding exactly there loses the
    // armature to any unmodeled extra spring torque.
    double hold_boost = 1.5;
    double hold_ramp = 1e-3;  // s

    MechParams mech() const {
        return MechParams{p.inertia(), p.k1(), p.k2(), p.k3(), p.damping()};
    }
    MagneticParams magnetics() const {
        return MagneticParams{extended.g_c0, extended.lambda_sat, extended.g_g0,
                              p.g_g0_slope(), p.kappa1(), p.kappa2()};
    }

    void validate() const {
        p.validate();
        geometry.validate();
        extended.validate();
        if (radicand_floor < 0.0)
            throw std::invalid_argument("FeedforwardConfig: radicand_floor must be >= 0");
        if (!(hold_boost >= 1.0))
            throw std::invalid_argument("FeedforwardConfig: hold_boost must be >= 1");
        if (!(hold_ramp > 0.0))
            throw std::invalid_argument("FeedforwardConfig: hold_ramp must be > 0");
    }
};

struct FluxReference {
    double lambda_d;  // Wb
    bool clamped;     // demand was dynamically infeasible, radicand clamped
};

namespace detail {
// Reference positions live in [0, theta_max] by construction, but evaluating
// the quintic at its endpoints can round a breath below zero.
inline double ref_angle(double pos) {
    if (pos < 0.0) {
        if (pos < -1e-9) throw std::domain_error("flux_reference: reference angle below 0");
        return 0.0;
    }
    return pos;
}
}  // namespace detail

/// Invert the armature dynamics at one reference point.  The spring stack
/// must dominate damping and inertial torque for the demand to be feasible;
/// otherwise the radicand is clamped to the floor and flagged.
inline FluxReference flux_reference(const RefPoint& ref, const FeedforwardConfig& cfg) {
    const MagneticParams mag = cfg.magnetics();
    const MechParams mech = cfg.mech();
    const double pos = detail::ref_angle(ref.pos);
    const double grad = gap_reluctance_grad(pos, mag);
    const double torque = elastic_torque(pos, mech, cfg.geometry) -
                          mech.damping * ref.vel - mech.inertia * ref.acc;
    const double radicand = 2.0 * torque / grad;
    if (radicand < cfg.radicand_floor)
        return FluxReference{std::sqrt(cfg.radicand_floor), true};
    return FluxReference{std::sqrt(radicand), false};
}

/// Coil current consistent with the flux reference at the same point.
inline double current_reference(const RefPoint& ref, const FeedforwardConfig& cfg) {
    const double lambda_d = flux_reference(ref, cfg).lambda_d;
    return coil_current(detail::ref_angle(ref.pos), lambda_d, cfg.magnetics());
}

/// Flux demand over a whole making or breaking operation: the flatness
/// inversion while the reference runs, then for making the boosted hold.
/// (An opened relay is parked by its return spring, so no breaking hold is
/// shaped here; the drive layer de-energizes instead.)
inline FluxReference flux_demand(const TrajectorySpec& spec, double t,
                                 const FeedforwardConfig& cfg) {
    FluxReference out = flux_reference(eval_reference(spec, t), cfg);
    if (spec.boundary.direction == Direction::Making && t > spec.boundary.tf &&
        cfg.hold_boost > 1.0) {
        const double ramp = std::min(1.0, (t - spec.boundary.tf) / cfg.hold_ramp);
        out.lambda_d *= 1.0 + (cfg.hold_boost - 1.0) * ramp;
    }
    return out;
}

/// Coil current consistent with flux_demand.
inline double current_demand(const TrajectorySpec& spec, double t,
                             const FeedforwardConfig& cfg) {
    const double lambda_d = flux_demand(spec, t, cfg).lambda_d;
    return coil_current(detail::ref_angle(eval_reference(spec, t).pos), lambda_d,
                        cfg.magnetics());
}

/// Open-loop coil voltage: v = dlambda_d/dt + R_hat * i_d, with the flux
/// derivative taken by symmetric finite difference (dt_diff ~ control period).
inline double voltage_reference(const TrajectorySpec& spec, double t,
                                const FeedforwardConfig& cfg, double dt_diff) {
    if (!(dt_diff > 0.0))
        throw std::invalid_argument("voltage_reference: dt_diff must be > 0");
    const double lam_p = flux_demand(spec, t + dt_diff, cfg).lambda_d;
    const double lam_m = flux_demand(spec, t - dt_diff, cfg).lambda_d;
    const double dlambda = (lam_p - lam_m) / (2.0 * dt_diff);
    return dlambda + cfg.resistance_estimate * current_demand(spec, t, cfg);
}

}  // namespace softland
