#include <catch2/catch_amalgamated.hpp>

#include "softland/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

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

SimConfig quiet_sim() {
    SimConfig cfg;
    cfg.audio.noise_sigma = 0.0;
    cfg.probe_current_noise = 0.0;
    return cfg;
}

ControlStack flux_stack(const RelayParams& plant, const TrajectoryTiming& timing) {
    ControlStack st;
    st.mode = ControllerMode::FluxTracking;
    st.trajectory = make_reference(make_boundary(plant.geometry, timing, Direction::Making));
    st.ff = FeedforwardConfig{ParamVector::from(plant),
                              plant.geometry,
                              ExtendedMagnetics{plant.magnetic.g_c0, plant.magnetic.lambda_sat,
                                                plant.magnetic.g_g0},
                              plant.resistance,
                              0.0,
                              1.5,
                              1e-3};
    st.r_hat = plant.resistance;
    return st;
}

double slam_impact_speed(const RelayParams& plant, const SimConfig& cfg) {
    ControlStack st;
    st.mode = ControllerMode::Standard;
    const OperationRecord rec =
        run_operation(st, plant, Direction::Making, cfg, CostConfig{}, 1);
    for (const ImpactEvent& ev : rec.events)
        if (ev.kind == ImpactKind::ArmatureStopLow) return ev.speed;
    FAIL("standard drive never reached the seated stop");
    return 0.0;
}

}  // namespace

TEST_CASE("de-energized relay stays parked", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    PlantState s = PlantState::released(p);
    std::vector<ImpactEvent> events;
    for (int k = 0; k < 500; ++k) step(s, 0.0, cfg.control_period, p, cfg, events);
    REQUIRE(s.theta == p.geometry.theta_max);
    REQUIRE(s.omega == 0.0);
    REQUIRE(s.lambda == 0.0);
    REQUIRE(s.resting_high);
    REQUIRE(events.empty());
}

TEST_CASE("seated armature holds when the coil balances the springs", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    const double lam_hold = 1.5 * std::sqrt(2.0 * elastic_torque(0.0, p.mech, p.geometry) /
                                            p.magnetic.g_g0_slope);
    const double u_hold = p.resistance * coil_current(0.0, lam_hold, p.magnetic);

    PlantState s = PlantState::seated(lam_hold);
    std::vector<ImpactEvent> events;
    for (int k = 0; k < 1000; ++k) step(s, u_hold, cfg.control_period, p, cfg, events);
    REQUIRE(s.resting_low);
    REQUIRE(s.theta == 0.0);
    REQUIRE(s.lambda == Approx(lam_hold).epsilon(1e-9));
    REQUIRE(events.empty());
}

TEST_CASE("sub-hold flux lets the springs reopen the relay", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    // half the marginal hold flux: net torque at the seat points outward
    const double lam0 = 0.5 * std::sqrt(2.0 * elastic_torque(0.0, p.mech, p.geometry) /
                                        p.magnetic.g_g0_slope);
    PlantState s = PlantState::seated(lam0);
    std::vector<ImpactEvent> events;
    // the bounce cascade at the released stop takes tens of milliseconds
    for (int k = 0; k < 5000; ++k) step(s, 0.0, cfg.control_period, p, cfg, events);
    REQUIRE(s.resting_high);
    REQUIRE(s.theta == p.geometry.theta_max);

    bool hit_high = false;
    double prev_t = -1.0;
    for (const ImpactEvent& ev : events) {
        REQUIRE(ev.time >= prev_t);
        prev_t = ev.time;
        if (ev.kind == ImpactKind::ArmatureStopHigh) hit_high = true;
    }
    REQUIRE(hit_high);
}

TEST_CASE("stop impacts follow the restitution law", "[simulator]") {
    // undamped, unmagnetized armature: between two hits of the same stop the
    // spring returns it with the same speed it left, so consecutive impact
    // speeds are an exact geometric sequence with ratio e
    RelayParams p = test_relay();
    p.mech.damping = 0.0;
    SimConfig cfg = quiet_sim();
    cfg.restitution = 0.3;

    PlantState s;
    s.theta = 0.005;
    std::vector<ImpactEvent> events;
    for (int k = 0; k < 5000; ++k) step(s, 0.0, cfg.control_period, p, cfg, events);

    std::vector<double> stop_speeds;
    for (const ImpactEvent& ev : events)
        if (ev.kind == ImpactKind::ArmatureStopHigh) stop_speeds.push_back(ev.speed);
    REQUIRE(stop_speeds.size() >= 4);
    for (std::size_t i = 0; i + 1 < std::min<std::size_t>(stop_speeds.size(), 4); ++i)
        REQUIRE(stop_speeds[i + 1] / stop_speeds[i] == Approx(0.3).epsilon(1e-3));
    // and it eventually sticks
    REQUIRE(s.resting_high);
}

TEST_CASE("halving the integration step barely moves the terminal state", "[simulator]") {
    const RelayParams p = test_relay();
    SimConfig coarse = quiet_sim();
    SimConfig fine = quiet_sim();
    fine.integration_step = 0.5e-6;

    ControlStack st;
    st.mode = ControllerMode::Standard;
    const OperationRecord a = run_operation(st, p, Direction::Making, coarse, CostConfig{}, 1);
    const OperationRecord b = run_operation(st, p, Direction::Making, fine, CostConfig{}, 1);

    const PlantState& sa = a.final_state;
    const PlantState& sb = b.final_state;
    const double speed_scale = p.geometry.theta_max / coarse.op_duration;
    REQUIRE(std::abs(sa.theta - sb.theta) / p.geometry.theta_max < 1e-4);
    REQUIRE(std::abs(sa.omega - sb.omega) / speed_scale < 1e-4);
    REQUIRE(std::abs(sa.lambda - sb.lambda) / std::abs(sb.lambda) < 1e-4);
}

TEST_CASE("energy bookkeeping closes the balance", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();

    ControlStack slam;
    slam.mode = ControllerMode::Standard;
    const OperationRecord a = run_operation(slam, p, Direction::Making, cfg, CostConfig{}, 1);
    REQUIRE(a.closed);
    REQUIRE(a.energy_residual < 1e-6);
    // a slam dissipates at the stop
    REQUIRE(a.final_state.impact_loss > 0.0);

    const OperationRecord b = run_operation(flux_stack(p, TrajectoryTiming{0.5e-3, 6.5e-3, 9e-3}),
                                            p, Direction::Making, cfg, CostConfig{}, 1);
    REQUIRE(b.closed);
    REQUIRE(b.energy_residual < 1e-6);
}

TEST_CASE("operation records are deterministic in the seed", "[simulator]") {
    const RelayParams p = test_relay();
    SimConfig cfg;  // audio noise on
    ControlStack st;
    st.mode = ControllerMode::Standard;

    const OperationRecord a = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 42);
    const OperationRecord b = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 42);
    const OperationRecord c = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 43);

    REQUIRE(a.cost == b.cost);
    REQUIRE(a.audio.samples == b.audio.samples);
    REQUIRE(a.theta == b.theta);
    REQUIRE(a.flux_true == b.flux_true);

    // the noise seed only touches the microphone, not the physics
    REQUIRE(c.cost != a.cost);
    REQUIRE(c.theta == a.theta);
    REQUIRE(c.events.size() == a.events.size());
}

TEST_CASE("microphone synthesis", "[simulator]") {
    AudioModel am;
    am.noise_sigma = 0.0;

    // silence in, silence out
    const AudioRecord zero = synth_audio({}, 0.0, 10e-3, am, 7);
    for (double v : zero.samples) REQUIRE(v == 0.0);

    // one burst: every sample matches the closed-form envelope
    const ImpactEvent ev{1e-3, ImpactKind::ArmatureStopLow, 2.0};
    const AudioRecord rec = synth_audio({ev}, 0.0, 10e-3, am, 7);
    const double omega = 2.0 * M_PI * am.burst_frequency;
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const double t = static_cast<double>(i) / am.sample_rate;
        const double dt = t - ev.time;
        const double expect =
            dt < 0.0 ? 0.0
                     : am.burst_gain * ev.speed * std::exp(-dt / am.burst_decay) *
                           std::sin(omega * dt);
        REQUIRE(rec.samples[i] == Approx(expect).margin(1e-12));
    }

    // contact touches use the softer gain
    const ImpactEvent touch{1e-3, ImpactKind::ContactTouchNo, 2.0};
    const AudioRecord soft = synth_audio({touch}, 0.0, 10e-3, am, 7);
    const std::size_t k = 55;  // within the burst
    REQUIRE(soft.samples[k] ==
            Approx(rec.samples[k] * am.contact_gain / am.burst_gain).margin(1e-12));

    // noise is reproducible per seed
    am.noise_sigma = 0.4;
    const AudioRecord n1 = synth_audio({}, 0.0, 5e-3, am, 99);
    const AudioRecord n2 = synth_audio({}, 0.0, 5e-3, am, 99);
    const AudioRecord n3 = synth_audio({}, 0.0, 5e-3, am, 100);
    REQUIRE(n1.samples == n2.samples);
    REQUIRE(n1.samples != n3.samples);

    REQUIRE_THROWS_AS(synth_audio({}, 0.0, 0.0, am, 1), std::invalid_argument);
}

TEST_CASE("resistance probe accuracy and scaling", "[simulator]") {
    const RelayParams p = test_relay();
    SimConfig cfg = quiet_sim();

    // noiseless probe recovers the true resistance exactly
    const ProbeResult exact = probe_resistance(p, p.geometry.theta_max, cfg, 5);
    REQUIRE(exact.r_hat == Approx(p.resistance).epsilon(1e-12));
    REQUIRE(exact.steady_current == Approx(cfg.probe_voltage / p.resistance).epsilon(1e-12));

    // with an absolute current-noise floor the estimate spread grows as R^2:
    // the reading shrinks with R while the noise does not
    cfg.probe_current_noise = 1.5e-6;
    RelayParams hot = p;
    hot.resistance = 510.0;
    const auto spread = [&](const RelayParams& relay) {
        std::vector<double> r;
        for (std::uint64_t s = 0; s < 4000; ++s)
            r.push_back(probe_resistance(relay, relay.geometry.theta_max, cfg, s).r_hat);
        const double mean = std::accumulate(r.begin(), r.end(), 0.0) / r.size();
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        return std::pair<double, double>{mean, std::sqrt(var / r.size())};
    };
    const auto [mean_cold, sd_cold] = spread(p);
    const auto [mean_hot, sd_hot] = spread(hot);
    REQUIRE(mean_cold == Approx(p.resistance).epsilon(2e-3));
    REQUIRE(mean_hot == Approx(hot.resistance).epsilon(2e-3));
    const double predicted_cold = p.resistance * p.resistance * cfg.probe_current_noise /
                                  cfg.probe_voltage;
    REQUIRE(sd_cold == Approx(predicted_cold).epsilon(0.05));
    REQUIRE(sd_hot / sd_cold == Approx(std::pow(510.0 / 360.0, 2.0)).epsilon(0.1));

    // the probe level must not move the released armature
    SimConfig strong = quiet_sim();
    strong.probe_voltage = 2.0;
    REQUIRE_THROWS_AS(probe_resistance(p, p.geometry.theta_max, strong, 1), std::domain_error);
    // seated, the magnetic pull goes into the stop and any level is safe
    REQUIRE_NOTHROW(probe_resistance(p, 0.0, strong, 1));
}

TEST_CASE("unit-to-unit perturbation", "[simulator]") {
    const RelayParams nominal = test_relay();

    // zero spread is the identity
    const RelayParams same = perturb_params(nominal, VariabilitySpread{}, 11);
    REQUIRE(same.mech.k1 == nominal.mech.k1);
    REQUIRE(same.magnetic.g_c0 == nominal.magnetic.g_c0);
    REQUIRE(same.geometry.theta_max == nominal.geometry.theta_max);
    REQUIRE(same.resistance == nominal.resistance);

    VariabilitySpread sp;
    sp.k1 = 0.10;
    sp.resistance = 0.02;
    sp.theta_max = 0.015;
    sp.theta_nc = 0.02;
    sp.theta_no = 0.02;

    // deterministic per seed
    const RelayParams a = perturb_params(nominal, sp, 1234);
    const RelayParams b = perturb_params(nominal, sp, 1234);
    REQUIRE(a.mech.k1 == b.mech.k1);
    REQUIRE(a.resistance == b.resistance);
    REQUIRE(a.mech.k1 != nominal.mech.k1);
    // untouched parameters stay nominal
    REQUIRE(a.mech.k2 == nominal.mech.k2);

    // lognormal scaling preserves the median and the geometry ordering
    std::vector<double> k1_ratio;
    for (std::uint64_t s = 0; s < 4000; ++s) {
        const RelayParams q = perturb_params(nominal, sp, s);
        k1_ratio.push_back(q.mech.k1 / nominal.mech.k1);
        REQUIRE(q.geometry.theta_no > 0.0);
        REQUIRE(q.geometry.theta_nc > q.geometry.theta_no);
        REQUIRE(q.geometry.theta_max > q.geometry.theta_nc);
    }
    std::nth_element(k1_ratio.begin(), k1_ratio.begin() + 2000, k1_ratio.end());
    REQUIRE(k1_ratio[2000] == Approx(1.0).margin(0.01));
}

TEST_CASE("standard making and breaking operations", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    ControlStack st;
    st.mode = ControllerMode::Standard;

    const OperationRecord mk = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 1);
    REQUIRE(mk.closed);
    REQUIRE(mk.final_state.resting_low);
    REQUIRE(mk.time.size() == static_cast<std::size_t>(std::llround(cfg.op_duration /
                                                                    cfg.control_period)));
    for (double v : mk.v_command) REQUIRE(v == cfg.supply_voltage);
    REQUIRE(mk.cost >= 0.0);

    // breaking starts from the slammed-in steady flux and opens on its own
    const OperationRecord bk = run_operation(st, p, Direction::Breaking, cfg, CostConfig{}, 1);
    REQUIRE(bk.flux_true.front() ==
            Approx(steady_state_flux(cfg.supply_voltage, 0.0, p)).epsilon(1e-9));
    REQUIRE(bk.released);
    for (double v : bk.v_command) REQUIRE(v == 0.0);

    // the bounce cascade outlives the operation window; another de-energized
    // stretch lets the armature stick at the released stop
    PlantState s = bk.final_state;
    std::vector<ImpactEvent> sink;
    for (int k = 0; k < 5000; ++k) step(s, 0.0, cfg.control_period, p, cfg, sink);
    REQUIRE(s.resting_high);
    REQUIRE(s.theta == p.geometry.theta_max);
}

TEST_CASE("tracked making stroke lands gently", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    const TrajectoryTiming timing{0.5e-3, 6.5e-3, 9e-3};
    const ControlStack st = flux_stack(p, timing);

    const OperationRecord rec = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 1);
    REQUIRE(rec.closed);
    REQUIRE(rec.final_state.resting_low);
    REQUIRE(rec.ff_clamped_samples == 0);

    // commands respect the drive limits
    for (double v : rec.v_command) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= cfg.v_max + 1e-12);
    }

    // the open-integrator estimate stays glued to the true flux when the
    // resistance estimate is exact
    double max_err = 0.0;
    for (std::size_t k = 0; k < rec.flux_true.size(); ++k)
        max_err = std::max(max_err, std::abs(rec.flux_est[k] - rec.flux_true[k]));
    REQUIRE(max_err < 1e-4);

    // soft landing: seat impact well below the uncontrolled slam
    const double slam = slam_impact_speed(p, cfg);
    double seat = 0.0;
    for (const ImpactEvent& ev : rec.events)
        if (ev.kind == ImpactKind::ArmatureStopLow) {
            seat = ev.speed;
            break;
        }
    REQUIRE(seat > 0.0);
    REQUIRE(seat < 0.2 * slam);
}

TEST_CASE("controlled modes require a resistance estimate", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    ControlStack st = flux_stack(p, TrajectoryTiming{0.5e-3, 6.5e-3, 9e-3});
    st.r_hat = 0.0;
    REQUIRE_THROWS_AS(run_operation(st, p, Direction::Making, cfg, CostConfig{}, 1),
                      std::invalid_argument);
}

TEST_CASE("core saturation aborts with the partial record attached", "[simulator]") {
    const RelayParams p = test_relay();
    SimConfig cfg = quiet_sim();
    // The reluctance pole means no steady drive can push the flux past
    // lambda_sat, but a drive this hard makes the integrator step near the
    // pole overshoot it, which is exactly the failure the guard reports.
    cfg.supply_voltage = 3000.0;
    ControlStack st;
    st.mode = ControllerMode::Standard;

    bool thrown = false;
    try {
        run_operation(st, p, Direction::Making, cfg, CostConfig{}, 1);
    } catch (const SimulationError& e) {
        thrown = true;
        REQUIRE_FALSE(e.partial.time.empty());
        REQUIRE(std::isfinite(e.partial.cost));
        REQUIRE(std::string(e.what()).find("lambda_sat") != std::string::npos);
    }
    REQUIRE(thrown);
}

TEST_CASE("carried state resets clocks and meters", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    ControlStack st;
    st.mode = ControllerMode::Standard;

    const OperationRecord first = run_operation(st, p, Direction::Making, cfg, CostConfig{}, 1);
    const OperationRecord second =
        run_operation(st, p, Direction::Making, cfg, CostConfig{}, 2, &first.final_state);

    // already seated with the coil energized: nothing moves, nothing hits
    REQUIRE(second.events.empty());
    REQUIRE(second.final_state.resting_low);
    REQUIRE(second.time.front() == 0.0);
    REQUIRE(second.final_state.impact_loss < first.final_state.impact_loss);
}

TEST_CASE("time step plumbing is validated", "[simulator]") {
    const RelayParams p = test_relay();
    const SimConfig cfg = quiet_sim();
    PlantState s = PlantState::released(p);
    std::vector<ImpactEvent> ev;
    REQUIRE_THROWS_AS(step(s, 0.0, 1.5e-6, p, cfg, ev), std::invalid_argument);

    SimConfig bad = cfg;
    bad.control_period = 2.5e-6;
    bad.integration_step = 1e-6;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.restitution = 1.5;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.probe_current_noise = -1.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.probe_voltage = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
