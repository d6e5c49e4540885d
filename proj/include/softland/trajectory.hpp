#pragma once

// Two-segment quintic reference for the armature angle.  Segment one runs
// from the released (or seated) position to the contact-touch angle, segment
// two from there to the far stop.  Each segment is the unique rest-to-rest
// quintic, so position, velocity and acceleration are zero at both ends of
// each segment and the two segments join smoothly at the contact touch.

#include <array>
#include <cmath>
#include <stdexcept>

#include "softland/model.hpp"

namespace softland {

enum class Direction { Making, Breaking };

inline const char* to_string(Direction d) {
    return d == Direction::Making ? "making" : "breaking";
}

struct RefPoint {
    double pos;  // rad
    double vel;  // rad/s
    double acc;  // rad/s^2
};

struct TrajectoryTiming {
    double t0 = 0.0;     // motion start, s
    double tc = 6.5e-3;  // contact touch, s
    double tf = 8.0e-3;  // seated / released, s

    void validate() const {
        if (!(t0 < tc) || !(tc < tf))
            throw std::invalid_argument("TrajectoryTiming: need t0 < tc < tf");
    }
};

struct BoundarySpec {
    double t0, tc, tf;              // s
    double theta0, thetac, thetaf;  // rad
    Direction direction;

    void validate() const {
        if (!(t0 < tc) || !(tc < tf))
            throw std::invalid_argument("BoundarySpec: need t0 < tc < tf");
        if (theta0 == thetac || thetac == thetaf)
            throw std::invalid_argument("BoundarySpec: waypoints must be distinct");
    }
};

/// Map geometry and timing onto segment boundary values for one direction.
/// Making runs theta_max -> theta_no -> 0, breaking 0 -> theta_nc -> theta_max.
inline BoundarySpec make_boundary(const Geometry& g, const TrajectoryTiming& timing,
                                  Direction dir) {
    g.validate();
    timing.validate();
    BoundarySpec b{};
    b.t0 = timing.t0;
    b.tc = timing.tc;
    b.tf = timing.tf;
    b.direction = dir;
    if (dir == Direction::Making) {
        b.theta0 = g.theta_max;
        b.thetac = g.theta_no;
        b.thetaf = 0.0;
    } else {
        b.theta0 = 0.0;
        b.thetac = g.theta_nc;
        b.thetaf = g.theta_max;
    }
    return b;
}

// One quintic in normalized time s = (t - t_start) / (t_end - t_start).
struct QuinticSegment {
    double t_start = 0.0;
    double t_end = 1.0;
    std::array<double, 6> coef{};  // q(s) = sum coef[i] * s^i

    RefPoint eval(double t) const {
        const double span = t_end - t_start;
        const double s = (t - t_start) / span;
        double q = 0.0, dq = 0.0, ddq = 0.0;
        for (int i = 5; i >= 0; --i) {
            if (i >= 2) ddq = ddq * s + coef[i] * i * (i - 1);
            if (i >= 1) dq = dq * s + coef[i] * i;
            q = q * s + coef[i];
        }
        return RefPoint{q, dq / span, ddq / (span * span)};
    }
};

/// Rest-to-rest quintic between two positions: the six boundary conditions
/// (q, q', q'' at both ends, derivatives zero) give the closed form
/// q(s) = p0 + (p1 - p0) * (10 s^3 - 15 s^4 + 6 s^5).
inline QuinticSegment solve_quintic(double t_start, double t_end, double pos_start,
                                    double pos_end) {
    if (!(t_end > t_start))
        throw std::invalid_argument("solve_quintic: need t_end > t_start");
    const double d = pos_end - pos_start;
    QuinticSegment seg;
    seg.t_start = t_start;
    seg.t_end = t_end;
    seg.coef = {pos_start, 0.0, 0.0, 10.0 * d, -15.0 * d, 6.0 * d};
    return seg;
}

struct TrajectorySpec {
    QuinticSegment segment1;  // [t0, tc]
    QuinticSegment segment2;  // [tc, tf]
    BoundarySpec boundary;
};

inline TrajectorySpec make_reference(const BoundarySpec& b) {
    b.validate();
    TrajectorySpec spec;
    spec.segment1 = solve_quintic(b.t0, b.tc, b.theta0, b.thetac);
    spec.segment2 = solve_quintic(b.tc, b.tf, b.thetac, b.thetaf);
    spec.boundary = b;
    return spec;
}

/// Reference at any time; holds the endpoint values (zero vel/acc) outside
/// [t0, tf].
inline RefPoint eval_reference(const TrajectorySpec& spec, double t) {
    if (t <= spec.boundary.t0) return RefPoint{spec.boundary.theta0, 0.0, 0.0};
    if (t >= spec.boundary.tf) return RefPoint{spec.boundary.thetaf, 0.0, 0.0};
    if (t <= spec.boundary.tc) return spec.segment1.eval(t);
    return spec.segment2.eval(t);
}

}  // namespace softland
