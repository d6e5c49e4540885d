#pragma once

// Inner flux loop: a sensorless flux estimate integrated from terminal
// quantities, and a discrete PI tracking the flat flux reference.  The coil
// driver only sources 0..v_max, so the integrator is frozen whenever the raw
// command leaves that range (conditional anti-windup).

#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace softland {

struct PIGains {
    double kp = 37500.0;  // V/Wb
    double ki = 1.15e8;   // V/(Wb s)

    void validate() const {
        if (!(kp > 0.0) || !(ki > 0.0))
            throw std::invalid_argument("PIGains: gains must be > 0");
    }
};

struct VoltageLimits {
    double lo = 0.0;   // V
    double hi = 35.0;  // V

    void validate() const {
        if (!(hi > lo)) throw std::invalid_argument("VoltageLimits: need hi > lo");
    }
};

struct ControllerState {
    double sigma = 0.0;         // Wb s, integral of the tracking error
    double last_command = 0.0;  // V
    double r_hat = 0.0;         // Ohm
    double lambda_hat = 0.0;    // Wb
    double prev_current = 0.0;  // A, previous sample for the trapezoid rule
};

inline double estimate_resistance(double probe_voltage, double steady_current) {
    if (!(probe_voltage > 0.0))
        throw std::domain_error("estimate_resistance: probe voltage must be > 0");
    if (!(steady_current > 0.0))
        throw std::domain_error("estimate_resistance: steady current must be > 0");
    return probe_voltage / steady_current;
}

/// Re-seed the estimator at operation start; lambda0 is the model flux at the
/// reference start point, current0 the first current sample.
inline void reset_estimator(ControllerState& st, double lambda0, double current0) {
    st.lambda_hat = lambda0;
    st.prev_current = current0;
    st.sigma = 0.0;
    st.last_command = 0.0;
}

/// One estimator update across a control period: integrate v - r_hat * i with
/// the command held constant and the current by the trapezoid rule.
inline double flux_estimate_step(double v_prev, double current, ControllerState& st, double dt) {
    st.lambda_hat += (v_prev - st.r_hat * 0.5 * (st.prev_current + current)) * dt;
    st.prev_current = current;
    return st.lambda_hat;
}

/// One PI update; returns the limited command.  The integral state only
/// accumulates while the raw command is inside the limits.
inline double pi_step(double lambda_d, double lambda_hat, ControllerState& st, const PIGains& g,
                      double dt, const VoltageLimits& lim) {
    const double e = lambda_d - lambda_hat;
    const double u_raw = g.kp * e + g.ki * st.sigma;
    double u = u_raw;
    if (u_raw < lim.lo) {
        u = lim.lo;
    } else if (u_raw > lim.hi) {
        u = lim.hi;
    } else {
        st.sigma += e * dt;
    }
    st.last_command = u;
    return u;
}

/// Drop the drive to zero without disturbing the integral state; used once a
/// breaking reference has ended and the coil is left to de-energize.
inline double pi_release(ControllerState& st) {
    st.last_command = 0.0;
    return 0.0;
}

/// Closed-loop poles of the linearized flux loop dlambda/dt = -a lambda + u
/// with u = kp e + ki integral(e):
///   s = (-(a + kp) +- sqrt((a + kp)^2 - 4 ki)) / 2
inline std::array<std::complex<double>, 2> closed_loop_eigenvalues(double a, double kp,
                                                                   double ki) {
    const double b = a + kp;
    const std::complex<double> disc = std::sqrt(std::complex<double>(b * b - 4.0 * ki, 0.0));
    return {0.5 * (-b + disc), 0.5 * (-b - disc)};
}

/// Discrete simulation of the linear flux loop (exact zero-order-hold plant,
/// PI at the control rate).  Used to check the loop tuning; returns the flux
/// at every control instant.  Pass limits = nullptr for the unconstrained
/// loop.
inline std::vector<double> simulate_linear_flux_loop(double a, const PIGains& g,
                                                     double lambda_target, double dt, int n_steps,
                                                     const VoltageLimits* limits = nullptr) {
    if (!(a > 0.0)) throw std::invalid_argument("simulate_linear_flux_loop: a must be > 0");
    g.validate();
    const double decay = std::exp(-a * dt);
    const double gain = (1.0 - decay) / a;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n_steps));
    double lambda = 0.0;
    ControllerState st;
    const VoltageLimits wide{-1e300, 1e300};
    for (int k = 0; k < n_steps; ++k) {
        out.push_back(lambda);
        const double u = pi_step(lambda_target, lambda, st, g, dt, limits ? *limits : wide);
        lambda = decay * lambda + gain * u;
    }
    return out;
}

}  // namespace softland
