#pragma once

// On-disk formats.  CSV numbers are written with %.17g (lossless round-trip,
// byte-stable across runs); the campaign configuration travels as a single
// JSON document whose keys mirror the config structs exactly.  Unknown keys
// are errors so that a typo cannot silently fall back to a default.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "softland/campaign.hpp"
#include "softland/simulator.hpp"

namespace softland {

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV writers (stream-based so tests can compare in memory)

// columns: time,v_command,current,flux_true,flux_est,flux_ref,theta,omega
inline void write_operation_csv(std::ostream& os, const OperationRecord& rec) {
    os << "time,v_command,current,flux_true,flux_est,flux_ref,theta,omega\n";
    for (std::size_t i = 0; i < rec.time.size(); ++i) {
        os << fmt_g17(rec.time[i]) << ',' << fmt_g17(rec.v_command[i]) << ','
           << fmt_g17(rec.current[i]) << ',' << fmt_g17(rec.flux_true[i]) << ','
           << fmt_g17(rec.flux_est[i]) << ',' << fmt_g17(rec.flux_ref[i]) << ','
           << fmt_g17(rec.theta[i]) << ',' << fmt_g17(rec.omega[i]) << '\n';
    }
}

inline void write_events_csv(std::ostream& os, const std::vector<ImpactEvent>& events) {
    os << "time,kind,speed\n";
    for (const ImpactEvent& ev : events)
        os << fmt_g17(ev.time) << ',' << to_string(ev.kind) << ',' << fmt_g17(ev.speed) << '\n';
}

inline void write_audio_csv(std::ostream& os, const AudioRecord& a) {
    os << "time,sample\n";
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double t = a.start_time + static_cast<double>(i) / a.sample_rate;
        os << fmt_g17(t) << ',' << fmt_g17(a.samples[i]) << '\n';
    }
}

inline void write_trial_csv(std::ostream& os, const TrialResult& tr) {
    os << "op,phase,raw_cost,norm_cost,objective,resistance_true,r_hat,max_stop_speed,"
          "n_events,completed,ff_clamped_samples,energy_residual,"
          "cand_inertia,cand_k1,cand_k2,cand_k3,cand_damping,cand_g_g0_slope,"
          "cand_kappa1,cand_kappa2\n";
    for (const OpSummary& s : tr.ops) {
        os << s.op << ',' << s.phase << ',' << fmt_g17(s.raw_cost) << ','
           << fmt_g17(s.norm_cost) << ',' << fmt_g17(s.objective) << ','
           << fmt_g17(s.resistance_true) << ',' << fmt_g17(s.r_hat) << ','
           << fmt_g17(s.max_stop_speed) << ',' << s.n_events << ',' << (s.completed ? 1 : 0)
           << ',' << s.ff_clamped_samples << ',' << fmt_g17(s.energy_residual);
        for (std::size_t i = 0; i < ParamVector::size(); ++i) os << ',' << fmt_g17(s.candidate[i]);
        os << '\n';
    }
}

inline void write_baseline_csv(std::ostream& os, const BaselineResult& b) {
    os << "relay,op,stepped,resistance,cost,failed\n";
    for (const BaselineOp& row : b.ops) {
        os << row.relay << ',' << row.op << ',' << (row.stepped ? 1 : 0) << ','
           << fmt_g17(row.resistance) << ',' << fmt_g17(row.cost) << ','
           << (row.failed ? 1 : 0) << '\n';
    }
}

inline void write_stats_csv(std::ostream& os, const std::vector<OpStats>& stats) {
    os << "op,n,cost_p10,cost_p25,cost_p50,cost_p75,cost_p90,"
          "rhat_p10,rhat_p25,rhat_p50,rhat_p75,rhat_p90,stop_speed_p50,completed_frac\n";
    for (const OpStats& s : stats) {
        os << s.op << ',' << s.n;
        for (const PercentileSummary* ps : {&s.cost, &s.rhat})
            os << ',' << fmt_g17(ps->p10) << ',' << fmt_g17(ps->p25) << ',' << fmt_g17(ps->p50)
               << ',' << fmt_g17(ps->p75) << ',' << fmt_g17(ps->p90);
        os << ',' << fmt_g17(s.stop_speed_p50) << ',' << fmt_g17(s.completed_frac) << '\n';
    }
}

// ---------------------------------------------------------------------------
// JSON config

namespace detail {

inline void require_keys(const nlohmann::json& j, const char* ctx,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw std::invalid_argument(std::string(ctx) + ": expected a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw std::invalid_argument(std::string(ctx) + ": unknown key '" + item.key() + "'");
    }
}

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (const auto it = j.find(key); it != j.end()) out = it->template get<T>();
}

}  // namespace detail

inline ControllerMode controller_mode_from_string(const std::string& s) {
    if (s == "FluxTracking") return ControllerMode::FluxTracking;
    if (s == "VoltageFeedforward") return ControllerMode::VoltageFeedforward;
    if (s == "Standard") return ControllerMode::Standard;
    throw std::invalid_argument("controller_mode: expected FluxTracking, VoltageFeedforward or "
                                "Standard, got '" + s + "'");
}

inline void parse_into(const nlohmann::json& j, MagneticParams& m) {
    detail::require_keys(j, "nominal.magnetic",
                         {"g_c0", "lambda_sat", "g_g0", "g_g0_slope", "kappa1", "kappa2"});
    detail::read_if(j, "g_c0", m.g_c0);
    detail::read_if(j, "lambda_sat", m.lambda_sat);
    detail::read_if(j, "g_g0", m.g_g0);
    detail::read_if(j, "g_g0_slope", m.g_g0_slope);
    detail::read_if(j, "kappa1", m.kappa1);
    detail::read_if(j, "kappa2", m.kappa2);
}

inline void parse_into(const nlohmann::json& j, MechParams& m) {
    detail::require_keys(j, "nominal.mech", {"inertia", "k1", "k2", "k3", "damping"});
    detail::read_if(j, "inertia", m.inertia);
    detail::read_if(j, "k1", m.k1);
    detail::read_if(j, "k2", m.k2);
    detail::read_if(j, "k3", m.k3);
    detail::read_if(j, "damping", m.damping);
}

inline void parse_into(const nlohmann::json& j, Geometry& g) {
    detail::require_keys(j, "nominal.geometry", {"theta_max", "theta_nc", "theta_no"});
    detail::read_if(j, "theta_max", g.theta_max);
    detail::read_if(j, "theta_nc", g.theta_nc);
    detail::read_if(j, "theta_no", g.theta_no);
}

inline void parse_into(const nlohmann::json& j, RelayParams& p) {
    detail::require_keys(j, "nominal", {"magnetic", "mech", "geometry", "resistance"});
    if (j.contains("magnetic")) parse_into(j.at("magnetic"), p.magnetic);
    if (j.contains("mech")) parse_into(j.at("mech"), p.mech);
    if (j.contains("geometry")) parse_into(j.at("geometry"), p.geometry);
    detail::read_if(j, "resistance", p.resistance);
}

inline void parse_into(const nlohmann::json& j, VariabilitySpread& s) {
    detail::require_keys(j, "variability",
                         {"g_c0", "lambda_sat", "g_g0", "g_g0_slope", "kappa1", "kappa2",
                          "inertia", "k1", "k2", "k3", "damping", "theta_max", "theta_nc",
                          "theta_no", "resistance"});
    detail::read_if(j, "g_c0", s.g_c0);
    detail::read_if(j, "lambda_sat", s.lambda_sat);
    detail::read_if(j, "g_g0", s.g_g0);
    detail::read_if(j, "g_g0_slope", s.g_g0_slope);
    detail::read_if(j, "kappa1", s.kappa1);
    detail::read_if(j, "kappa2", s.kappa2);
    detail::read_if(j, "inertia", s.inertia);
    detail::read_if(j, "k1", s.k1);
    detail::read_if(j, "k2", s.k2);
    detail::read_if(j, "k3", s.k3);
    detail::read_if(j, "damping", s.damping);
    detail::read_if(j, "theta_max", s.theta_max);
    detail::read_if(j, "theta_nc", s.theta_nc);
    detail::read_if(j, "theta_no", s.theta_no);
    detail::read_if(j, "resistance", s.resistance);
}

inline void parse_into(const nlohmann::json& j, TrajectoryTiming& t, const char* ctx) {
    detail::require_keys(j, ctx, {"t0", "tc", "tf"});
    detail::read_if(j, "t0", t.t0);
    detail::read_if(j, "tc", t.tc);
    detail::read_if(j, "tf", t.tf);
}

inline void parse_into(const nlohmann::json& j, AudioModel& a) {
    detail::require_keys(j, "sim.audio",
                         {"burst_gain", "contact_gain", "burst_frequency", "burst_decay",
                          "noise_sigma", "sample_rate"});
    detail::read_if(j, "burst_gain", a.burst_gain);
    detail::read_if(j, "contact_gain", a.contact_gain);
    detail::read_if(j, "burst_frequency", a.burst_frequency);
    detail::read_if(j, "burst_decay", a.burst_decay);
    detail::read_if(j, "noise_sigma", a.noise_sigma);
    detail::read_if(j, "sample_rate", a.sample_rate);
}

inline void parse_into(const nlohmann::json& j, SimConfig& s) {
    detail::require_keys(j, "sim",
                         {"integration_step", "control_period", "op_duration", "restitution",
                          "rest_speed_threshold", "supply_voltage", "v_max", "probe_voltage",
                          "probe_current_noise", "audio"});
    detail::read_if(j, "integration_step", s.integration_step);
    detail::read_if(j, "control_period", s.control_period);
    detail::read_if(j, "op_duration", s.op_duration);
    detail::read_if(j, "restitution", s.restitution);
    detail::read_if(j, "rest_speed_threshold", s.rest_speed_threshold);
    detail::read_if(j, "supply_voltage", s.supply_voltage);
    detail::read_if(j, "v_max", s.v_max);
    detail::read_if(j, "probe_voltage", s.probe_voltage);
    detail::read_if(j, "probe_current_noise", s.probe_current_noise);
    if (j.contains("audio")) parse_into(j.at("audio"), s.audio);
}

inline CampaignConfig campaign_config_from_json(const nlohmann::json& j) {
    detail::require_keys(j, "config",
                         {"n_relays", "n_repetitions", "n_operations", "baseline_ops",
                          "resistance_step", "controller_mode", "nominal", "variability",
                          "trajectory_making", "trajectory_breaking", "gains", "feedforward",
                          "optimizer", "cost", "sim", "seeds", "output_dir"});
    CampaignConfig cfg;
    detail::read_if(j, "n_relays", cfg.n_relays);
    detail::read_if(j, "n_repetitions", cfg.n_repetitions);
    detail::read_if(j, "n_operations", cfg.n_operations);
    detail::read_if(j, "baseline_ops", cfg.baseline_ops);
    if (j.contains("resistance_step")) {
        const auto& rs = j.at("resistance_step");
        detail::require_keys(rs, "resistance_step", {"ohms", "at_operation"});
        detail::read_if(rs, "ohms", cfg.resistance_step.ohms);
        detail::read_if(rs, "at_operation", cfg.resistance_step.at_operation);
    }
    if (j.contains("controller_mode"))
        cfg.controller_mode = controller_mode_from_string(j.at("controller_mode").get<std::string>());
    if (j.contains("nominal")) parse_into(j.at("nominal"), cfg.nominal);
    if (j.contains("variability")) parse_into(j.at("variability"), cfg.variability);
    if (j.contains("trajectory_making"))
        parse_into(j.at("trajectory_making"), cfg.trajectory_making, "trajectory_making");
    if (j.contains("trajectory_breaking"))
        parse_into(j.at("trajectory_breaking"), cfg.trajectory_breaking, "trajectory_breaking");
    if (j.contains("gains")) {
        const auto& g = j.at("gains");
        detail::require_keys(g, "gains", {"kp", "ki"});
        detail::read_if(g, "kp", cfg.gains.kp);
        detail::read_if(g, "ki", cfg.gains.ki);
    }
    if (j.contains("feedforward")) {
        const auto& f = j.at("feedforward");
        detail::require_keys(f, "feedforward", {"radicand_floor", "hold_boost", "hold_ramp"});
        detail::read_if(f, "radicand_floor", cfg.feedforward.radicand_floor);
        detail::read_if(f, "hold_boost", cfg.feedforward.hold_boost);
        detail::read_if(f, "hold_ramp", cfg.feedforward.hold_ramp);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::require_keys(o, "optimizer",
                             {"relative_step", "reeval_period", "divergence_factor",
                              "failed_op_cost"});
        detail::read_if(o, "relative_step", cfg.optimizer.relative_step);
        detail::read_if(o, "reeval_period", cfg.optimizer.reeval_period);
        detail::read_if(o, "divergence_factor", cfg.optimizer.divergence_factor);
        detail::read_if(o, "failed_op_cost", cfg.optimizer.failed_op_cost);
    }
    if (j.contains("cost")) {
        const auto& c = j.at("cost");
        detail::require_keys(c, "cost", {"window_start", "window_length"});
        detail::read_if(c, "window_start", cfg.cost.window_start);
        detail::read_if(c, "window_length", cfg.cost.window_length);
    }
    if (j.contains("sim")) parse_into(j.at("sim"), cfg.sim);
    if (j.contains("seeds")) {
        const auto& s = j.at("seeds");
        detail::require_keys(s, "seeds", {"master"});
        detail::read_if(s, "master", cfg.seeds.master);
    }
    detail::read_if(j, "output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

inline CampaignConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    nlohmann::json j;
    in >> j;
    return campaign_config_from_json(j);
}

inline nlohmann::json to_json(const CampaignConfig& cfg) {
    nlohmann::json j;
    j["n_relays"] = cfg.n_relays;
    j["n_repetitions"] = cfg.n_repetitions;
    j["n_operations"] = cfg.n_operations;
    j["baseline_ops"] = cfg.baseline_ops;
    j["resistance_step"] = {{"ohms", cfg.resistance_step.ohms},
                            {"at_operation", cfg.resistance_step.at_operation}};
    j["controller_mode"] = to_string(cfg.controller_mode);
    j["nominal"] = {
        {"magnetic",
         {{"g_c0", cfg.nominal.magnetic.g_c0},
          {"lambda_sat", cfg.nominal.magnetic.lambda_sat},
          {"g_g0", cfg.nominal.magnetic.g_g0},
          {"g_g0_slope", cfg.nominal.magnetic.g_g0_slope},
          {"kappa1", cfg.nominal.magnetic.kappa1},
          {"kappa2", cfg.nominal.magnetic.kappa2}}},
        {"mech",
         {{"inertia", cfg.nominal.mech.inertia},
          {"k1", cfg.nominal.mech.k1},
          {"k2", cfg.nominal.mech.k2},
          {"k3", cfg.nominal.mech.k3},
          {"damping", cfg.nominal.mech.damping}}},
        {"geometry",
         {{"theta_max", cfg.nominal.geometry.theta_max},
          {"theta_nc", cfg.nominal.geometry.theta_nc},
          {"theta_no", cfg.nominal.geometry.theta_no}}},
        {"resistance", cfg.nominal.resistance}};
    j["variability"] = {{"g_c0", cfg.variability.g_c0},
                        {"lambda_sat", cfg.variability.lambda_sat},
                        {"g_g0", cfg.variability.g_g0},
                        {"g_g0_slope", cfg.variability.g_g0_slope},
                        {"kappa1", cfg.variability.kappa1},
                        {"kappa2", cfg.variability.kappa2},
                        {"inertia", cfg.variability.inertia},
                        {"k1", cfg.variability.k1},
                        {"k2", cfg.variability.k2},
                        {"k3", cfg.variability.k3},
                        {"damping", cfg.variability.damping},
                        {"theta_max", cfg.variability.theta_max},
                        {"theta_nc", cfg.variability.theta_nc},
                        {"theta_no", cfg.variability.theta_no},
                        {"resistance", cfg.variability.resistance}};
    j["trajectory_making"] = {{"t0", cfg.trajectory_making.t0},
                              {"tc", cfg.trajectory_making.tc},
                              {"tf", cfg.trajectory_making.tf}};
    j["trajectory_breaking"] = {{"t0", cfg.trajectory_breaking.t0},
                                {"tc", cfg.trajectory_breaking.tc},
                                {"tf", cfg.trajectory_breaking.tf}};
    j["gains"] = {{"kp", cfg.gains.kp}, {"ki", cfg.gains.ki}};
    j["feedforward"] = {{"radicand_floor", cfg.feedforward.radicand_floor},
                        {"hold_boost", cfg.feedforward.hold_boost},
                        {"hold_ramp", cfg.feedforward.hold_ramp}};
    j["optimizer"] = {{"relative_step", cfg.optimizer.relative_step},
                      {"reeval_period", cfg.optimizer.reeval_period},
                      {"divergence_factor", cfg.optimizer.divergence_factor},
                      {"failed_op_cost", cfg.optimizer.failed_op_cost}};
    j["cost"] = {{"window_start", cfg.cost.window_start},
                 {"window_length", cfg.cost.window_length}};
    j["sim"] = {{"integration_step", cfg.sim.integration_step},
                {"control_period", cfg.sim.control_period},
                {"op_duration", cfg.sim.op_duration},
                {"restitution", cfg.sim.restitution},
                {"rest_speed_threshold", cfg.sim.rest_speed_threshold},
                {"supply_voltage", cfg.sim.supply_voltage},
                {"v_max", cfg.sim.v_max},
                {"probe_voltage", cfg.sim.probe_voltage},
                {"probe_current_noise", cfg.sim.probe_current_noise},
                {"audio",
                 {{"burst_gain", cfg.sim.audio.burst_gain},
                  {"contact_gain", cfg.sim.audio.contact_gain},
                  {"burst_frequency", cfg.sim.audio.burst_frequency},
                  {"burst_decay", cfg.sim.audio.burst_decay},
                  {"noise_sigma", cfg.sim.audio.noise_sigma},
                  {"sample_rate", cfg.sim.audio.sample_rate}}}};
    j["seeds"] = {{"master", cfg.seeds.master}};
    j["output_dir"] = cfg.output_dir;
    return j;
}

// ---------------------------------------------------------------------------
// Campaign artifact bundle

inline std::string trial_file_name(int relay, int repetition) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "trial_r%03d_q%02d.csv", relay, repetition);
    return buf;
}

/// Write the full artifact set into `dir`; returns the written file names in
/// a fixed order.
inline std::vector<std::string> write_campaign_artifacts(const CampaignResult& res,
                                                         const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> files;

    const auto put = [&](const std::string& name, const auto& writer) {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
        writer(os);
        files.push_back(name);
    };

    put("baseline.csv", [&](std::ostream& os) { write_baseline_csv(os, res.baseline); });
    put("stats.csv", [&](std::ostream& os) { write_stats_csv(os, res.stats); });
    for (const TrialResult& tr : res.trials)
        put(trial_file_name(tr.relay, tr.repetition),
            [&](std::ostream& os) { write_trial_csv(os, tr); });

    const auto percentiles_json = [](const PercentileSummary& p) {
        return nlohmann::json{
            {"p10", p.p10}, {"p25", p.p25}, {"p50", p.p50}, {"p75", p.p75}, {"p90", p.p90}};
    };

    nlohmann::json manifest;
    manifest["config"] = to_json(res.config);
    manifest["baseline_median"] = res.baseline.median_cost;
    manifest["baseline_percentiles"] = {{"nominal", percentiles_json(res.baseline.nominal)}};
    if (res.baseline.has_stepped)
        manifest["baseline_percentiles"]["stepped"] = percentiles_json(res.baseline.stepped);
    manifest["n_trials"] = res.trials.size();
    manifest["files"] = files;
    auto& aborted = manifest["aborted_trials"] = nlohmann::json::array();
    for (const TrialResult& tr : res.trials)
        if (tr.aborted)
            aborted.push_back({{"relay", tr.relay},
                               {"repetition", tr.repetition},
                               {"op", tr.abort_op},
                               {"reason", tr.abort_reason}});
    put("manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
    return files;
}

}  // namespace softland
