#include <catch2/catch_amalgamated.hpp>

#include "softland/feedforward.hpp"

#include <cmath>

using namespace softland;
using Catch::Approx;

namespace {

RelayParams test_relay() {
    RelayParams p;
    p.magnetic = MagneticParams{1.0, 0.03, 1.5, 20.0, 30.0, 0.04};
    p.mech = MechParams{5e-8, 0.04, 0.04, 0.08, 2e-5};
    p.geometry = Geometry{0.01, 0.006, 0.003};
    p.resistance = 360.0;
    return p;
}

FeedforwardConfig test_ff(double r_hat = 360.0) {
    const RelayParams p = test_relay();
    FeedforwardConfig cfg{ParamVector::from(p),
                          p.geometry,
                          ExtendedMagnetics{p.magnetic.g_c0, p.magnetic.lambda_sat,
                                            p.magnetic.g_g0},
                          r_hat,
                          0.0,
                          1.5,
                          1e-3};
    return cfg;
}

TrajectorySpec making_spec() {
    return make_reference(
        make_boundary(test_relay().geometry, TrajectoryTiming{0.0, 6.5e-3, 8.0e-3},
                      Direction::Making));
}

}  // namespace

TEST_CASE("seated hold flux balances the spring stack", "[feedforward]") {
    const FeedforwardConfig cfg = test_ff();
    const FluxReference fr = flux_reference(RefPoint{0.0, 0.0, 0.0}, cfg);
    REQUIRE_FALSE(fr.clamped);
    // sqrt(2 * elastic_torque(0) / g_g0_slope), pinned
    REQUIRE(fr.lambda_d == Approx(0.008717797887081347).epsilon(1e-15));

    // at the released stop every torque term is zero and so is the demand
    const FluxReference rel = flux_reference(RefPoint{0.01, 0.0, 0.0}, cfg);
    REQUIRE(rel.lambda_d == 0.0);
    REQUIRE_FALSE(rel.clamped);
}

TEST_CASE("flux inversion closes the torque balance", "[feedforward]") {
    const FeedforwardConfig cfg = test_ff();
    const MechParams mech = cfg.mech();
    const MagneticParams mag = cfg.magnetics();

    // substituting lambda_d back must reproduce the demanded acceleration
    const RefPoint points[] = {
        {0.009, -0.5, -300.0}, {0.006, -1.5, 0.0},   {0.004, -1.8, 250.0},
        {0.002, -1.0, 2000.0}, {0.0005, -0.2, 900.0}};
    for (const RefPoint& r : points) {
        const FluxReference fr = flux_reference(r, cfg);
        REQUIRE_FALSE(fr.clamped);
        const double torque = magnetic_torque(r.pos, fr.lambda_d, mag) +
                              elastic_torque(r.pos, mech, cfg.geometry) - mech.damping * r.vel;
        REQUIRE(torque / mech.inertia == Approx(r.acc).margin(1e-6));
    }
}

TEST_CASE("flux demand is independent of the resistance estimate", "[feedforward]") {
    const TrajectorySpec spec = making_spec();
    const FeedforwardConfig a = test_ff(280.0);
    const FeedforwardConfig b = test_ff(520.0);
    for (int k = 0; k <= 80; ++k) {
        const double t = 10e-3 * k / 80.0;
        REQUIRE(flux_demand(spec, t, a).lambda_d == flux_demand(spec, t, b).lambda_d);
    }
}

TEST_CASE("infeasible demands clamp to the floor", "[feedforward]") {
    FeedforwardConfig cfg = test_ff();
    cfg.radicand_floor = 4e-6;
    // an opening acceleration beyond what the springs supply makes the
    // radicand negative: magnetics cannot push
    const RefPoint r{0.005, 0.0, 5.0e4};
    const FluxReference fr = flux_reference(r, cfg);
    REQUIRE(fr.clamped);
    REQUIRE(fr.lambda_d == Approx(std::sqrt(cfg.radicand_floor)).epsilon(1e-15));

    // with a zero floor the clamp still reports, demand parks at zero
    cfg.radicand_floor = 0.0;
    const FluxReference fz = flux_reference(r, cfg);
    REQUIRE(fz.clamped);
    REQUIRE(fz.lambda_d == 0.0);
}

TEST_CASE("reference angles a breath below zero are tolerated", "[feedforward]") {
    const FeedforwardConfig cfg = test_ff();
    const FluxReference a = flux_reference(RefPoint{0.0, 0.0, 0.0}, cfg);
    const FluxReference b = flux_reference(RefPoint{-1e-12, 0.0, 0.0}, cfg);
    REQUIRE(a.lambda_d == b.lambda_d);
    REQUIRE_THROWS_AS(flux_reference(RefPoint{-1e-6, 0.0, 0.0}, cfg), std::domain_error);
}

TEST_CASE("hold boost ramps after a making stroke only", "[feedforward]") {
    const TrajectorySpec make = making_spec();
    const FeedforwardConfig cfg = test_ff();
    const double tf = make.boundary.tf;
    const double lam_tf = flux_demand(make, tf, cfg).lambda_d;
    REQUIRE(lam_tf == Approx(0.008717797887081347).epsilon(1e-12));

    // halfway up the ramp, then saturated at hold_boost
    REQUIRE(flux_demand(make, tf + 0.5 * cfg.hold_ramp, cfg).lambda_d ==
            Approx(lam_tf * (1.0 + 0.5 * (cfg.hold_boost - 1.0))).epsilon(1e-12));
    REQUIRE(flux_demand(make, tf + cfg.hold_ramp, cfg).lambda_d ==
            Approx(lam_tf * cfg.hold_boost).epsilon(1e-12));
    REQUIRE(flux_demand(make, tf + 7.0 * cfg.hold_ramp, cfg).lambda_d ==
            Approx(lam_tf * cfg.hold_boost).epsilon(1e-12));

    // no boost while the reference is still running
    REQUIRE(flux_demand(make, 0.5 * tf, cfg).lambda_d ==
            flux_reference(eval_reference(make, 0.5 * tf), cfg).lambda_d);

    // a unity boost leaves the hold level untouched
    FeedforwardConfig flat = cfg;
    flat.hold_boost = 1.0;
    REQUIRE(flux_demand(make, tf + 5e-3, flat).lambda_d == Approx(lam_tf).epsilon(1e-12));

    // breaking parks at the released stop where the demand is zero anyway
    const TrajectorySpec brk = make_reference(
        make_boundary(test_relay().geometry, TrajectoryTiming{0.0, 3.5e-3, 8.0e-3},
                      Direction::Breaking));
    REQUIRE(flux_demand(brk, brk.boundary.tf + 5e-3, cfg).lambda_d == 0.0);
}

TEST_CASE("current demand is consistent with the flux demand", "[feedforward]") {
    const TrajectorySpec spec = making_spec();
    const FeedforwardConfig cfg = test_ff();
    for (double t : {1e-3, 4e-3, 7e-3, 9.5e-3}) {
        const double lam = flux_demand(spec, t, cfg).lambda_d;
        const double th = eval_reference(spec, t).pos;
        REQUIRE(current_demand(spec, t, cfg) ==
                Approx(coil_current(th, lam, cfg.magnetics())).epsilon(1e-15));
    }
}

TEST_CASE("voltage reference is resistive drop plus flux slew", "[feedforward]") {
    const TrajectorySpec spec = making_spec();
    const double dt = 1e-5;

    // linear in the resistance estimate, slope = demanded current
    const FeedforwardConfig r0 = test_ff(0.0);
    const FeedforwardConfig r1 = test_ff(400.0);
    for (double t : {2e-3, 5e-3, 7.5e-3}) {
        const double dv = voltage_reference(spec, t, r1, dt) - voltage_reference(spec, t, r0, dt);
        REQUIRE(dv == Approx(400.0 * current_demand(spec, t, r1)).epsilon(1e-9));
    }

    // deep in the hold the demand is flat, leaving only the resistive term
    const FeedforwardConfig cfg = test_ff(360.0);
    const double t_hold = spec.boundary.tf + 5.0 * cfg.hold_ramp;
    REQUIRE(voltage_reference(spec, t_hold, cfg, dt) ==
            Approx(360.0 * current_demand(spec, t_hold, cfg)).epsilon(1e-12));

    // slew term matches an independent finite difference of the demand
    const double t = 4.2e-3;
    const double slew = (flux_demand(spec, t + dt, cfg).lambda_d -
                         flux_demand(spec, t - dt, cfg).lambda_d) /
                        (2.0 * dt);
    REQUIRE(voltage_reference(spec, t, cfg, dt) ==
            Approx(slew + 360.0 * current_demand(spec, t, cfg)).epsilon(1e-12));

    REQUIRE_THROWS_AS(voltage_reference(spec, t, cfg, 0.0), std::invalid_argument);
}

TEST_CASE("feedforward configuration validation", "[feedforward]") {
    FeedforwardConfig cfg = test_ff();
    REQUIRE_NOTHROW(cfg.validate());

    FeedforwardConfig bad = cfg;
    bad.hold_boost = 0.9;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.hold_ramp = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.radicand_floor = -1e-9;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.p[2] = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.extended.g_g0 = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
