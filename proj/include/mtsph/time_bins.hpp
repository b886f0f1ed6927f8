#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>

#include "mtsph/particle.hpp"

namespace mtsph {

/// Integer time grid: the run [t_begin, t_end] is discretized into
/// 2^n_bin ticks of duration t_min. All activity decisions are integer
/// arithmetic on ticks; simulation time is only ever derived from them.
struct TimeGrid {
    double t_begin = 0.0;
    double t_end = 1.0;
    int n_bin = 32;

    TimeGrid() = default;
    TimeGrid(double begin, double end, int bins) : t_begin(begin), t_end(end), n_bin(bins) {
        if (!(t_end > t_begin)) throw std::invalid_argument("TimeGrid: t_end must exceed t_begin");
        if (bins < 1 || bins > 62) throw std::invalid_argument("TimeGrid: n_bin outside [1, 62]");
    }

    double t_run() const { return t_end - t_begin; }
    Tick max_tick() const { return Tick{1} << n_bin; }
    double tick_duration() const { return std::ldexp(t_run(), -n_bin); }
    double time_at(Tick tick) const { return t_begin + static_cast<double>(tick) * tick_duration(); }
    double bin_dt(int n) const { return std::ldexp(tick_duration(), n); }
};

/// Step counter; the tick advances by 2^(min occupied bin) per step.
struct StepClock {
    Tick tick = 0;
    std::uint64_t step_index = 0;
};

/// Largest n with 2^n t_min <= dt, clamped to [0, n_bin]. +inf maps to
/// n_bin. dt below t_min is unrepresentable and a hard error.
inline int assign_bin(double dt, const TimeGrid& grid) {
    if (!(dt > 0.0)) throw std::domain_error("assign_bin: time-step must be positive");
    for (int n = grid.n_bin; n >= 0; --n) {
        if (std::ldexp(grid.tick_duration(), n) <= dt) return n;  // exact power-of-two scaling
    }
    throw std::runtime_error(
        "assign_bin: time-step below the tick duration; increase n_bin to represent it");
}

/// Bin of a particle active at `tick`: the number of trailing zero bits.
/// A particle with bin n is active iff n <= max_active_bin(tick).
inline int max_active_bin(Tick tick) {
    if (tick == 0) throw std::logic_error("max_active_bin: tick 0 is initialization, not a step");
    return std::countr_zero(tick);
}

/// Clamp a desired bin so the particle's kick cadence stays aligned with
/// the hierarchy: at tick T a particle may occupy bin n only if 2^n | T.
/// Tick 0 is aligned with every bin.
inline int align_bin(int desired, Tick tick, const TimeGrid& grid) {
    if (desired > grid.n_bin) desired = grid.n_bin;
    if (desired < 0) desired = 0;
    if (tick == 0) return desired;
    int m = std::countr_zero(tick);
    return desired < m ? desired : m;
}

/// Half-kick: advance velocity and internal energy by dt_half at `now`.
/// u is floored at zero; returns true if the floor was applied.
inline bool kick(Particle& p, double dt_half, Tick now) {
    p.vel += p.accel * dt_half;
    p.u += p.du_dt * dt_half;
    bool floored = false;
    if (p.u < 0.0) {
        p.u = 0.0;
        floored = true;
    }
    p.tick_last_kick = now;
    p.pos_at_kick = p.pos;  // velocity changed: reset the drift anchor
    return floored;
}

/// Drift to `to_tick`. Positions are reconstructed from the anchor laid
/// down at the last kick, so any split of the same span into partial
/// drifts lands on the bit-identical position.
inline void drift_particle(Particle& p, Tick to_tick, const TimeGrid& grid, const Box& box) {
    if (to_tick < p.tick_last_drift)
        throw std::logic_error("drift_particle: time reversal (to_tick < tick_last_drift)");
    if (to_tick == p.tick_last_drift) return;
    double span = static_cast<double>(to_tick - p.tick_last_kick) * grid.tick_duration();
    p.pos = box.wrap(p.pos_at_kick + p.vel * span);
    p.tick_last_drift = to_tick;
}

}  // namespace mtsph
