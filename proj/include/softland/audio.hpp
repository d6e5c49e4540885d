#pragma once

// Microphone emulation: every mechanical event excites a decaying sinusoidal
// burst whose amplitude scales with the event speed; broadband Gaussian noise
// models the lack of sound isolation.  The synthesized record is what the
// run-to-run cost is computed from; nothing downstream sees the true state.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace softland {

enum class ImpactKind {
    ArmatureStopLow,   // hit the seated hard stop (theta = 0)
    ArmatureStopHigh,  // hit the released hard stop (theta = theta_max)
    ContactTouchNo,    // crossed the NO contact touch angle
    ContactTouchNc,    // crossed the NC contact touch angle
};

inline bool is_stop(ImpactKind k) {
    return k == ImpactKind::ArmatureStopLow || k == ImpactKind::ArmatureStopHigh;
}

inline const char* to_string(ImpactKind k) {
    switch (k) {
        case ImpactKind::ArmatureStopLow: return "stop_low";
        case ImpactKind::ArmatureStopHigh: return "stop_high";
        case ImpactKind::ContactTouchNo: return "touch_no";
        case ImpactKind::ContactTouchNc: return "touch_nc";
    }
    return "?";
}

struct ImpactEvent {
    double time;      // s, within the operation
    ImpactKind kind;
    double speed;     // |omega| at the event, rad/s
};

struct AudioModel {
    double burst_gain = 1.0;       // burst amplitude per rad/s at a hard stop
    double contact_gain = 0.5;     // burst amplitude per rad/s at a contact touch
    double burst_frequency = 5e3;  // Hz
    double burst_decay = 1e-3;     // s, exponential envelope time constant
    double noise_sigma = 0.6;      // broadband noise level (0 = silent bench)
    double sample_rate = 5e4;      // Hz

    void validate() const {
        if (!(burst_gain >= 0.0) || !(contact_gain >= 0.0))
            throw std::invalid_argument("AudioModel: gains must be >= 0");
        if (!(burst_frequency > 0.0) || !(burst_decay > 0.0) || !(sample_rate > 0.0))
            throw std::invalid_argument("AudioModel: frequency, decay and sample_rate must be > 0");
        if (!(noise_sigma >= 0.0))
            throw std::invalid_argument("AudioModel: noise_sigma must be >= 0");
    }
};

struct AudioRecord {
    double start_time = 0.0;   // s
    double sample_rate = 5e4;  // Hz
    std::vector<double> samples;

    double duration() const {
        return samples.empty() ? 0.0 : static_cast<double>(samples.size() - 1) / sample_rate;
    }
};

/// Render the microphone signal over [start, start + duration].  Bursts are
/// summed linearly; the noise stream depends only on the seed, so a zero
/// noise_sigma with no events yields an exactly zero record.
inline AudioRecord synth_audio(const std::vector<ImpactEvent>& events, double start,
                               double duration, const AudioModel& am, std::uint64_t noise_seed) {
    am.validate();
    if (!(duration > 0.0)) throw std::invalid_argument("synth_audio: duration must be > 0");

    AudioRecord rec;
    rec.start_time = start;
    rec.sample_rate = am.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(duration * am.sample_rate)) + 1;
    rec.samples.assign(n, 0.0);

    const double omega = 2.0 * M_PI * am.burst_frequency;
    for (const ImpactEvent& ev : events) {
        const double amp = (is_stop(ev.kind) ? am.burst_gain : am.contact_gain) * ev.speed;
        if (amp == 0.0) continue;
        // first sample index at or after the event
        const double rel = (ev.time - start) * am.sample_rate;
        const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(rel)));
        for (std::size_t i = first; i < n; ++i) {
            const double dt = static_cast<double>(i) / am.sample_rate - (ev.time - start);
            rec.samples[i] += amp * std::exp(-dt / am.burst_decay) * std::sin(omega * dt);
        }
    }

    if (am.noise_sigma > 0.0) {
        std::mt19937_64 rng(noise_seed);
        std::normal_distribution<double> noise(0.0, am.noise_sigma);
        for (double& s : rec.samples) s += noise(rng);
    }
    return rec;
}

}  // namespace softland
