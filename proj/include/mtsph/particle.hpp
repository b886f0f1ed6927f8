#pragma once

#include <cstdint>
#include <vector>

#include "mtsph/geometry.hpp"

namespace mtsph {

using Tick = std::uint64_t;

/// One SPH particle: physics state plus time-bin bookkeeping.
struct Particle {
    std::int64_t id = 0;
    Vec3 pos;
    Vec3 vel;
    double m = 0.0;    // mass
    double h = 0.0;    // smoothing length
    double u = 0.0;    // specific internal energy
    double rho = 0.0;  // density
    double n_wt = 0.0; // kernel-weighted number density (neighbour-count proxy)

    Vec3 accel;
    double du_dt = 0.0;
    double c = 0.0;          // sound speed
    double v_sig_max = 0.0;  // max signal velocity seen in the last force pass

    int bin = 0;  // time-bin index
    Tick tick_last_drift = 0;
    Tick tick_last_kick = 0;
    Vec3 pos_at_kick;  // drift anchor: position when velocity last changed

    bool h_capped = false;
};

using ParticleArray = std::vector<Particle>;

/// SPH model parameters.
struct SphConfig {
    double cfl_constant = 0.2;
    double gamma_eos = 5.0 / 3.0;
    double visc_alpha = 1.0;
    double visc_beta = 2.0;
    double n_ngb_target = 48.0;
    double h_max = 1e30;        // ceiling on smoothing length (set from the cell grid)
    double h_tolerance = 1e-4;  // relative convergence tolerance for the ghost
    int ghost_max_iter = 30;
    double h_growth_cap = 1.3;  // max per-step relative growth of h inside one ghost pass
};

}  // namespace mtsph
