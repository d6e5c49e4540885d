#pragma once

// Lumped-parameter relay actuator model: saturable core reluctance, a
// fringing-corrected air-gap reluctance, and a three-stage spring stack.
// All functions here are pure; the time stepping lives in simulator.hpp.
//
// Conventions:
//   theta [rad]   armature angle, 0 = seated (closed), theta_max = released
//   lambda [Wb]   flux linkage
//   torque [Nm]   positive pushes the armature towards theta_max (opening)

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace softland {

// Angle below which theta*log(kappa2/theta) is replaced by its limit (0).
inline constexpr double kGapThetaEps = 1e-12;

struct saturation_error : std::domain_error {
    using std::domain_error::domain_error;
};

// ---------------------------------------------------------------------------
// Parameter sets

struct MagneticParams {
    double g_c0;        // core reluctance at zero flux, 1/H
    double lambda_sat;  // core saturation flux linkage, Wb
    double g_g0;        // gap reluctance at zero gap, 1/H
    double g_g0_slope;  // gap reluctance slope at zero gap, 1/(H rad)
    double kappa1;      // fringing shape factor, 1/rad
    double kappa2;      // fringing reference angle, rad

    void validate() const {
        if (!(g_c0 > 0.0)) throw std::invalid_argument("MagneticParams: g_c0 must be > 0");
        if (!(lambda_sat > 0.0)) throw std::invalid_argument("MagneticParams: lambda_sat must be > 0");
        if (!(g_g0 > 0.0)) throw std::invalid_argument("MagneticParams: g_g0 must be > 0");
        if (!(g_g0_slope > 0.0)) throw std::invalid_argument("MagneticParams: g_g0_slope must be > 0");
        if (!(kappa1 > 0.0)) throw std::invalid_argument("MagneticParams: kappa1 must be > 0");
        if (!(kappa2 > 0.0)) throw std::invalid_argument("MagneticParams: kappa2 must be > 0");
    }
};

struct MechParams {
    double inertia;  // armature inertia J, kg m^2
    double k1;       // return spring rate, Nm/rad (always engaged)
    double k2;       // NC contact spring rate, Nm/rad
    double k3;       // NO contact spring rate, Nm/rad
    double damping;  // viscous coefficient c, Nm s/rad

    void validate() const {
        if (!(inertia > 0.0)) throw std::invalid_argument("MechParams: inertia must be > 0");
        if (!(k1 > 0.0)) throw std::invalid_argument("MechParams: k1 must be > 0");
        if (!(k2 > 0.0)) throw std::invalid_argument("MechParams: k2 must be > 0");
        if (!(k3 > 0.0)) throw std::invalid_argument("MechParams: k3 must be > 0");
        if (!(damping >= 0.0)) throw std::invalid_argument("MechParams: damping must be >= 0");
    }
};

struct Geometry {
    double theta_max;  // released hard stop, rad
    double theta_nc;   // NC contact touch angle, rad
    double theta_no;   // NO contact touch angle, rad

    void validate() const {
        if (!(theta_no > 0.0) || !(theta_nc > theta_no) || !(theta_max > theta_nc))
            throw std::invalid_argument("Geometry: need 0 < theta_no < theta_nc < theta_max");
    }
};

struct RelayParams {
    MagneticParams magnetic;
    MechParams mech;
    Geometry geometry;
    double resistance;  // coil resistance, Ohm

    void validate() const {
        magnetic.validate();
        mech.validate();
        geometry.validate();
        if (!(resistance > 0.0)) throw std::invalid_argument("RelayParams: resistance must be > 0");
    }
};

// Adaptation parameter vector, fixed order:
//   [J, k1, k2, k3, c, g_g0_slope, kappa1, kappa2]
// This is the subset of RelayParams the run-to-run optimizer touches.
struct ParamVector {
    std::array<double, 8> entries{};

    static constexpr std::size_t size() { return 8; }

    double& operator[](std::size_t i) { return entries[i]; }
    double operator[](std::size_t i) const { return entries[i]; }

    double inertia() const { return entries[0]; }
    double k1() const { return entries[1]; }
    double k2() const { return entries[2]; }
    double k3() const { return entries[3]; }
    double damping() const { return entries[4]; }
    double g_g0_slope() const { return entries[5]; }
    double kappa1() const { return entries[6]; }
    double kappa2() const { return entries[7]; }

    static ParamVector from(const RelayParams& p) {
        return ParamVector{{p.mech.inertia, p.mech.k1, p.mech.k2, p.mech.k3, p.mech.damping,
                            p.magnetic.g_g0_slope, p.magnetic.kappa1, p.magnetic.kappa2}};
    }

    /// Overwrite the adapted entries of a full parameter set; the rest
    /// (extended magnetics, geometry, resistance) is taken from `base`.
    RelayParams apply_to(RelayParams base) const {
        base.mech.inertia = entries[0];
        base.mech.k1 = entries[1];
        base.mech.k2 = entries[2];
        base.mech.k3 = entries[3];
        base.mech.damping = entries[4];
        base.magnetic.g_g0_slope = entries[5];
        base.magnetic.kappa1 = entries[6];
        base.magnetic.kappa2 = entries[7];
        return base;
    }

    void validate() const {
        for (double v : entries)
            if (!(v > 0.0) || !std::isfinite(v))
                throw std::invalid_argument("ParamVector: entries must be finite and > 0");
    }
};

// ---------------------------------------------------------------------------
// Constitutive relations

/// Core reluctance (per-turn-squared), grows without bound as |lambda|
/// approaches lambda_sat. Throws saturation_error at or past the pole.
inline double core_reluctance(double lambda, const MagneticParams& m) {
    const double a = std::abs(lambda);
    if (a >= m.lambda_sat)
        throw saturation_error("core_reluctance: |lambda| >= lambda_sat (" +
                               std::to_string(a) + " >= " + std::to_string(m.lambda_sat) + ")");
    return m.g_c0 / (1.0 - a / m.lambda_sat);
}

/// Air-gap reluctance with logarithmic fringing correction.
/// Valid for theta >= 0; theta = 0 is the analytic limit g_g0.
inline double gap_reluctance(double theta, const MagneticParams& m) {
    if (theta < 0.0) throw std::domain_error("gap_reluctance: theta must be >= 0");
    if (theta < kGapThetaEps) return m.g_g0;
    const double den = 1.0 + m.kappa1 * theta * std::log(m.kappa2 / theta);
    if (!(den > 0.0))
        throw std::domain_error("gap_reluctance: fringing denominator <= 0 at theta = " +
                                std::to_string(theta));
    return m.g_g0 + m.g_g0_slope * theta / den;
}

/// d(gap_reluctance)/d(theta). Limit at theta -> 0 is g_g0_slope.
inline double gap_reluctance_grad(double theta, const MagneticParams& m) {
    if (theta < 0.0) throw std::domain_error("gap_reluctance_grad: theta must be >= 0");
    if (theta < kGapThetaEps) return m.g_g0_slope;
    const double den = 1.0 + m.kappa1 * theta * std::log(m.kappa2 / theta);
    if (!(den > 0.0))
        throw std::domain_error("gap_reluctance_grad: fringing denominator <= 0 at theta = " +
                                std::to_string(theta));
    return m.g_g0_slope * (1.0 + m.kappa1 * theta) / (den * den);
}

inline double total_reluctance(double theta, double lambda, const MagneticParams& m) {
    return core_reluctance(lambda, m) + gap_reluctance(theta, m);
}

inline double coil_current(double theta, double lambda, const MagneticParams& m) {
    return total_reluctance(theta, lambda, m) * lambda;
}

/// dlambda/dt for coil voltage u.
inline double flux_derivative(double theta, double lambda, double u, const RelayParams& p) {
    return u - p.resistance * coil_current(theta, lambda, p.magnetic);
}

/// Magnetic torque; negative (closing) for any lambda != 0.
inline double magnetic_torque(double theta, double lambda, const MagneticParams& m) {
    return -0.5 * gap_reluctance_grad(theta, m) * lambda * lambda;
}

// Spring stage: which contact springs are engaged at a given angle.
enum class Stage {
    ReturnOnly,   // theta  > theta_nc: return spring alone
    NcEngaged,    // theta in [theta_no, theta_nc]
    NoEngaged,    // theta  < theta_no: NC spring fully deflected, NO spring engaged
};

inline Stage stage_of(double theta, const Geometry& g) {
    if (theta > g.theta_nc) return Stage::ReturnOnly;
    if (theta >= g.theta_no) return Stage::NcEngaged;
    return Stage::NoEngaged;
}

/// Piecewise-linear spring stack torque. Continuous across stage boundaries;
/// always >= 0 on [0, theta_max] (pushes towards theta_max).
inline double elastic_torque(double theta, const MechParams& mech, const Geometry& g) {
    double torque = mech.k1 * (g.theta_max - theta);
    if (theta <= g.theta_nc) {
        if (theta >= g.theta_no) {
            torque += mech.k2 * (g.theta_nc - theta);
        } else {
            torque += mech.k2 * (g.theta_nc - g.theta_no) + mech.k3 * (g.theta_no - theta);
        }
    }
    return torque;
}

/// Potential energy of the spring stack, zero at theta_max.
/// Invariant: elastic_torque(theta) == -dV/dtheta.
inline double elastic_potential(double theta, const MechParams& mech, const Geometry& g) {
    const double d1 = g.theta_max - theta;
    double v = 0.5 * mech.k1 * d1 * d1;
    if (theta <= g.theta_nc) {
        const double d2 = g.theta_nc - theta;
        if (theta >= g.theta_no) {
            v += 0.5 * mech.k2 * d2 * d2;
        } else {
            const double span = g.theta_nc - g.theta_no;
            const double d3 = g.theta_no - theta;
            v += 0.5 * mech.k2 * span * span + mech.k2 * span * d3 + 0.5 * mech.k3 * d3 * d3;
        }
    }
    return v;
}

/// Net armature torque (magnetic + elastic + viscous damping).
inline double net_torque(double theta, double omega, double lambda, const RelayParams& p) {
    return magnetic_torque(theta, lambda, p.magnetic) +
           elastic_torque(theta, p.mech, p.geometry) - p.mech.damping * omega;
}

/// Steady-state flux linkage for a held coil voltage at a fixed angle:
/// solves u = R * (g_c(l) + g_g(theta)) * l by bisection. u must be >= 0 and
/// below the saturation asymptote.
inline double steady_state_flux(double u, double theta, const RelayParams& p) {
    if (u < 0.0) throw std::domain_error("steady_state_flux: u must be >= 0");
    if (u == 0.0) return 0.0;
    const double gg = gap_reluctance(theta, p.magnetic);
    double lo = 0.0;
    double hi = p.magnetic.lambda_sat * (1.0 - 1e-12);
    // i(lambda) is strictly increasing and unbounded as lambda -> lambda_sat,
    // so a root exists iff u/R is reachable, which it always is.
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double i = (p.magnetic.g_c0 / (1.0 - mid / p.magnetic.lambda_sat) + gg) * mid;
        if (p.resistance * i < u)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace softland
