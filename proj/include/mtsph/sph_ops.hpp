#pragma once

#include <concepts>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mtsph/eos.hpp"
#include "mtsph/kernel.hpp"
#include "mtsph/particle.hpp"

namespace mtsph {

/// A neighbour of some target particle, with the periodic-resolved
/// displacement dx = pos_target - pos_neighbour (possibly image-shifted).
struct Neighbour {
    const Particle* p;
    Vec3 dx;
    double r;  // |dx|
};

struct DensityResult {
    double rho = 0.0;
    double n_wt = 0.0;  // kernel-weighted number density
};

/// Density summation at the target's own smoothing length. The caller
/// includes the target itself as a neighbour with r = 0.
DensityResult compute_density(const Particle& target, std::span<const Neighbour> ngbs);

/// Weighted neighbour count N(h) = (4 pi / 3)(2h)^3 sum_j W(r_j, h); the
/// quantity the ghost drives to n_ngb_target.
double weighted_ngb_count(std::span<const Neighbour> ngbs, double h);

struct ForceResult {
    Vec3 accel;
    double du_dt = 0.0;
    double v_sig_max = 0.0;
    std::uint64_t zero_sep_skips = 0;
};

/// Symmetric interaction terms of one particle pair; shared by the
/// per-target loop and the cell-pair kernels so both paths use the same
/// arithmetic.
struct PairTerms {
    double pressure_i = 0.0;  // P_i / rho_i^2
    double pressure_j = 0.0;
    double visc = 0.0;        // Pi_ij, symmetric
    double mean_grad = 0.0;   // 0.5 (dW/dr|h_i + dW/dr|h_j) / r
    double v_dot_dx = 0.0;    // v_ij . dx
    double v_sig = 0.0;       // c_i + c_j + max{0, -3 r.v/|r|}
};

PairTerms pair_force_terms(const Particle& a, const Particle& b, const Vec3& dx, double r,
                           const SphConfig& cfg);

/// Pressure + viscosity force and energy rate on one target. Density and
/// sound speeds must be current on the target and all neighbours.
ForceResult compute_force(const Particle& target, std::span<const Neighbour> ngbs,
                          const SphConfig& cfg);

/// CFL time-step C h / v_sig. Returns +inf when v_sig_max is zero
/// (cold, isolated, at rest).
inline double cfl_timestep(const Particle& target, double v_sig_max, const SphConfig& cfg) {
    if (v_sig_max <= 0.0) return std::numeric_limits<double>::infinity();
    return cfg.cfl_constant * target.h / v_sig_max;
}

enum class GhostStatus {
    converged,
    capped,           // hit the h_max ceiling (under-dense region)
    growth_limited,   // hit the per-step growth allowance, not the ceiling
    iteration_limit,  // exceeded ghost_max_iter; carries the best h found
};

struct GhostResult {
    double h = 0.0;
    double rho = 0.0;
    double n_wt = 0.0;
    GhostStatus status = GhostStatus::converged;
    int iterations = 0;
};

/// Neighbour source for the smoothing-length solve: must return all
/// particles within `radius` of the target (target itself included at r=0).
using NeighbourResolver = std::vector<Neighbour> (*)(void*, double radius);

/// Solve (4 pi / 3)(2h)^3 n_wt(h) = n_ngb_target for h via safeguarded
/// Newton with bisection fallback, then re-evaluate the density at the
/// converged h. `h_allowed` caps the search (defaults to cfg.h_max).
GhostResult ghost_update_h(const Particle& target, const std::vector<Neighbour>& candidates,
                           const SphConfig& cfg, double h_allowed);

template <typename ResolveFn>
    requires std::invocable<ResolveFn&, double>
GhostResult ghost_update_h(const Particle& target, ResolveFn&& resolve, const SphConfig& cfg,
                           double h_allowed = -1.0) {
    if (h_allowed < 0.0) h_allowed = cfg.h_max;
    // One conservative query at the largest admissible support covers every
    // trial h below it; the kernel zeroes contributions beyond 2h itself.
    const std::vector<Neighbour> candidates = resolve(2.0 * h_allowed);
    return ghost_update_h(target, candidates, cfg, h_allowed);
}

}  // namespace mtsph
