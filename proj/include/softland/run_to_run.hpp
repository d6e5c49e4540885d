#pragma once

// Run-to-run adaptation: the landing cost is the audio energy over a fixed
// window, and the model parameter vector is adapted between operations by a
// Nelder-Mead variant built for noisy one-shot evaluations:
//   - one candidate is issued per operation, its cost consumed afterwards;
//   - parameters are searched in log space (they are positive scale factors);
//   - the shrink step is replaced by re-evaluating the incumbent best vertex
//     (its cost is a running mean), so a single lucky noise draw cannot pin
//     the simplex to a bad vertex forever;
//   - the incumbent is additionally re-evaluated on a fixed operation period.

#include <array>
#include <cmath>
#include <stdexcept>

#include "softland/audio.hpp"
#include "softland/model.hpp"

namespace softland {

// ---------------------------------------------------------------------------
// Cost

struct CostConfig {
    double window_start = 0.0;     // s, relative to operation start
    double window_length = 15e-3;  // s

    void validate() const {
        if (!(window_start >= 0.0) || !(window_length > 0.0))
            throw std::invalid_argument("CostConfig: need window_start >= 0 and window_length > 0");
    }
};

/// Audio energy: rectangle-rule integral of the squared signal over the cost
/// window.  The record must cover the whole window.
inline double cost_from_audio(const AudioRecord& rec, const CostConfig& cfg) {
    cfg.validate();
    if (rec.samples.empty() || !(rec.sample_rate > 0.0))
        throw std::invalid_argument("cost_from_audio: empty audio record");
    const double rec_end = rec.start_time + rec.duration();
    const double win_end = cfg.window_start + cfg.window_length;
    if (rec.start_time > cfg.window_start + 1e-12 || rec_end < win_end - 1e-12)
        throw std::invalid_argument("cost_from_audio: record does not cover the cost window");

    const double dt = 1.0 / rec.sample_rate;
    double sum = 0.0;
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const double t = rec.start_time + static_cast<double>(i) * dt;
        if (t < cfg.window_start - 1e-12) continue;
        if (t >= win_end - 1e-12) break;
        sum += rec.samples[i] * rec.samples[i];
    }
    return sum * dt;
}

inline double normalize_cost(double cost, double baseline_median) {
    if (!(baseline_median > 0.0))
        throw std::invalid_argument("normalize_cost: baseline median must be > 0");
    return cost / baseline_median;
}

// ---------------------------------------------------------------------------
// Log-space encoding

inline std::array<double, 8> encode_log(const ParamVector& p) {
    p.validate();
    std::array<double, 8> x{};
    for (std::size_t i = 0; i < 8; ++i) x[i] = std::log(p[i]);
    return x;
}

inline ParamVector decode_log(const std::array<double, 8>& x) {
    ParamVector p;
    for (std::size_t i = 0; i < 8; ++i) p[i] = std::exp(x[i]);
    return p;
}

// ---------------------------------------------------------------------------
// Simplex state machine

enum class NmPhase {
    FillInit,     // evaluating the initial 9 vertices
    Reflect,
    Expand,
    ContractOut,
    ContractIn,
    ReevalBest,   // repeat measurement of the incumbent best vertex
};

inline const char* to_string(NmPhase ph) {
    switch (ph) {
        case NmPhase::FillInit: return "fill";
        case NmPhase::Reflect: return "reflect";
        case NmPhase::Expand: return "expand";
        case NmPhase::ContractOut: return "contract_out";
        case NmPhase::ContractIn: return "contract_in";
        case NmPhase::ReevalBest: return "reeval";
    }
    return "?";
}

struct SimplexVertex {
    std::array<double, 8> x{};  // log-parameters
    double cost = 0.0;          // running mean over evals
    int evals = 0;
};

struct SimplexState {
    static constexpr int kDim = 8;
    static constexpr int kVertices = 9;

    std::array<SimplexVertex, kVertices> vertices{};
    int filled = 0;
    NmPhase phase = NmPhase::FillInit;

    bool pending = false;
    NmPhase pending_phase = NmPhase::FillInit;
    std::array<double, 8> pending_x{};

    // scratch valid through one reflect sequence
    int best = 0, second_worst = 0, worst = 0;
    std::array<double, 8> centroid{};
    std::array<double, 8> reflect_x{};
    double reflect_cost = 0.0;

    long long op_count = 0;
    bool reeval_due = false;
    int reeval_period = 25;
};

inline SimplexState nm_init(const ParamVector& nominal, double relative_step = 0.15,
                            int reeval_period = 25) {
    if (!(relative_step > 0.0))
        throw std::invalid_argument("nm_init: relative_step must be > 0 (degenerate simplex)");
    if (reeval_period < 1)
        throw std::invalid_argument("nm_init: reeval_period must be >= 1");
    SimplexState st;
    st.reeval_period = reeval_period;
    const auto x0 = encode_log(nominal);
    st.vertices[0].x = x0;
    for (int j = 1; j < SimplexState::kVertices; ++j) {
        st.vertices[j].x = x0;
        st.vertices[j].x[static_cast<std::size_t>(j - 1)] += relative_step;
    }
    return st;
}

namespace detail {

inline void nm_rank(SimplexState& st) {
    int best = 0, worst = 0;
    for (int i = 1; i < SimplexState::kVertices; ++i) {
        if (st.vertices[i].cost < st.vertices[best].cost) best = i;
        if (st.vertices[i].cost > st.vertices[worst].cost) worst = i;
    }
    int second = -1;
    for (int i = 0; i < SimplexState::kVertices; ++i) {
        if (i == worst) continue;
        if (second < 0 || st.vertices[i].cost > st.vertices[second].cost) second = i;
    }
    st.best = best;
    st.worst = worst;
    st.second_worst = second;
}

inline void nm_centroid(SimplexState& st) {
    st.centroid.fill(0.0);
    for (int i = 0; i < SimplexState::kVertices; ++i) {
        if (i == st.worst) continue;
        for (int d = 0; d < SimplexState::kDim; ++d) st.centroid[d] += st.vertices[i].x[d];
    }
    for (double& c : st.centroid) c /= (SimplexState::kVertices - 1);
}

}  // namespace detail

/// Issue the next candidate.  Exactly one candidate may be outstanding.
inline ParamVector nm_next_candidate(SimplexState& st) {
    if (st.pending) throw std::logic_error("nm_next_candidate: candidate already pending");

    NmPhase ph = st.phase;
    if (ph == NmPhase::Reflect && st.reeval_due) ph = NmPhase::ReevalBest;

    switch (ph) {
        case NmPhase::FillInit:
            st.pending_x = st.vertices[st.filled].x;
            break;
        case NmPhase::Reflect: {
            detail::nm_rank(st);
            detail::nm_centroid(st);
            for (int d = 0; d < SimplexState::kDim; ++d)
                st.reflect_x[d] = 2.0 * st.centroid[d] - st.vertices[st.worst].x[d];
            st.pending_x = st.reflect_x;
            break;
        }
        case NmPhase::Expand:
            for (int d = 0; d < SimplexState::kDim; ++d)
                st.pending_x[d] = st.centroid[d] + 2.0 * (st.centroid[d] - st.vertices[st.worst].x[d]);
            break;
        case NmPhase::ContractOut:
            for (int d = 0; d < SimplexState::kDim; ++d)
                st.pending_x[d] = st.centroid[d] + 0.5 * (st.reflect_x[d] - st.centroid[d]);
            break;
        case NmPhase::ContractIn:
            for (int d = 0; d < SimplexState::kDim; ++d)
                st.pending_x[d] = st.centroid[d] - 0.5 * (st.centroid[d] - st.vertices[st.worst].x[d]);
            break;
        case NmPhase::ReevalBest:
            detail::nm_rank(st);
            st.pending_x = st.vertices[st.best].x;
            break;
    }
    st.pending = true;
    st.pending_phase = ph;
    return decode_log(st.pending_x);
}

/// Consume the measured cost of the pending candidate and advance the state
/// machine.  Costs must be finite; they may be arbitrarily noisy.
inline void nm_update(SimplexState& st, double cost) {
    if (!st.pending) throw std::logic_error("nm_update: no candidate pending");
    if (!std::isfinite(cost)) throw std::invalid_argument("nm_update: cost must be finite");
    st.pending = false;
    st.op_count += 1;

    const auto replace_worst = [&st](const std::array<double, 8>& x, double c) {
        st.vertices[st.worst] = SimplexVertex{x, c, 1};
    };

    switch (st.pending_phase) {
        case NmPhase::FillInit:
            st.vertices[st.filled].cost = cost;
            st.vertices[st.filled].evals = 1;
            st.filled += 1;
            st.phase = (st.filled == SimplexState::kVertices) ? NmPhase::Reflect : NmPhase::FillInit;
            break;
        case NmPhase::Reflect:
            st.reflect_cost = cost;
            if (cost < st.vertices[st.best].cost) {
                st.phase = NmPhase::Expand;
            } else if (cost < st.vertices[st.second_worst].cost) {
                replace_worst(st.reflect_x, cost);
                st.phase = NmPhase::Reflect;
            } else if (cost < st.vertices[st.worst].cost) {
                st.phase = NmPhase::ContractOut;
            } else {
                st.phase = NmPhase::ContractIn;
            }
            break;
        case NmPhase::Expand:
            if (cost < st.reflect_cost)
                replace_worst(st.pending_x, cost);
            else
                replace_worst(st.reflect_x, st.reflect_cost);
            st.phase = NmPhase::Reflect;
            break;
        case NmPhase::ContractOut:
            if (cost <= st.reflect_cost) {
                replace_worst(st.pending_x, cost);
                st.phase = NmPhase::Reflect;
            } else {
                st.phase = NmPhase::ReevalBest;  // in place of a shrink
            }
            break;
        case NmPhase::ContractIn:
            if (cost < st.vertices[st.worst].cost) {
                replace_worst(st.pending_x, cost);
                st.phase = NmPhase::Reflect;
            } else {
                st.phase = NmPhase::ReevalBest;
            }
            break;
        case NmPhase::ReevalBest: {
            SimplexVertex& b = st.vertices[st.best];
            b.cost = (b.cost * b.evals + cost) / (b.evals + 1);
            b.evals += 1;
            st.reeval_due = false;
            st.phase = NmPhase::Reflect;
            break;
        }
    }

    if (st.filled == SimplexState::kVertices && st.op_count % st.reeval_period == 0)
        st.reeval_due = true;
}

/// Incumbent best vertex (by running-mean cost).  Valid once filled.
inline const SimplexVertex& nm_best(const SimplexState& st) {
    if (st.filled == 0) throw std::logic_error("nm_best: simplex not yet evaluated");
    int best = 0;
    for (int i = 1; i < st.filled; ++i)
        if (st.vertices[i].cost < st.vertices[best].cost) best = i;
    return st.vertices[best];
}

}  // namespace softland
