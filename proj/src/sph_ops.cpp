#include "mtsph/sph_ops.hpp"

#include <algorithm>
#include <cmath>

namespace mtsph {

DensityResult compute_density(const Particle& target, std::span<const Neighbour> ngbs) {
    DensityResult out;
    for (const Neighbour& n : ngbs) {
        double w = kernel_w(n.r, target.h);
        out.rho += n.p->m * w;
        out.n_wt += w;
    }
    return out;
}

double weighted_ngb_count(std::span<const Neighbour> ngbs, double h) {
    // (4 pi / 3)(2h)^3 * (1 / pi h^3) sum w(q) = 32/3 sum w(q)
    double sum = 0.0;
    double hinv = 1.0 / h;
    for (const Neighbour& n : ngbs) sum += kernel_wq(n.r * hinv);
    return (32.0 / 3.0) * sum;
}

PairTerms pair_force_terms(const Particle& a, const Particle& b, const Vec3& dx, double r,
                           const SphConfig& cfg) {
    PairTerms t;
    double rinv = 1.0 / r;
    t.mean_grad = 0.5 * (kernel_grad_w(r, a.h) + kernel_grad_w(r, b.h)) * rinv;
    t.pressure_i = pressure(a.rho, a.u, cfg.gamma_eos) / (a.rho * a.rho);
    t.pressure_j = pressure(b.rho, b.u, cfg.gamma_eos) / (b.rho * b.rho);

    Vec3 dv = a.vel - b.vel;
    t.v_dot_dx = dv.dot(dx);
    double approach = t.v_dot_dx < 0.0 ? -t.v_dot_dx * rinv : 0.0;  // max{0, -r.v/|r|}
    t.v_sig = a.c + b.c + 3.0 * approach;
    if (approach > 0.0) {
        double c_mean = 0.5 * (a.c + b.c);
        double rho_mean = 0.5 * (a.rho + b.rho);
        t.visc = (cfg.visc_alpha * c_mean * approach + cfg.visc_beta * approach * approach) /
                 rho_mean;
    }
    return t;
}

ForceResult compute_force(const Particle& target, std::span<const Neighbour> ngbs,
                          const SphConfig& cfg) {
    ForceResult out;
    out.v_sig_max = 2.0 * target.c;  // self term of the max in Eq-style signal velocity
    for (const Neighbour& n : ngbs) {
        if (n.p->id == target.id && n.r == 0.0) continue;  // self entry contributes no force
        if (n.r == 0.0) {
            ++out.zero_sep_skips;
            continue;
        }
        if (n.r >= kKernelSupport * std::max(target.h, n.p->h)) continue;
        PairTerms t = pair_force_terms(target, *n.p, n.dx, n.r, cfg);
        double common = (t.pressure_i + t.pressure_j + t.visc) * t.mean_grad;
        out.accel -= n.p->m * common * n.dx;
        out.du_dt += n.p->m * (t.pressure_i + 0.5 * t.visc) * t.mean_grad * t.v_dot_dx;
        out.v_sig_max = std::max(out.v_sig_max, t.v_sig);
    }
    return out;
}

namespace {

// Weighted neighbour count and its h-derivative over a fixed candidate list.
struct NgbCount {
    double value;
    double slope;
};

NgbCount eval_count(const std::vector<Neighbour>& ngbs, double h) {
    double sum = 0.0, dsum = 0.0;
    double hinv = 1.0 / h;
    for (const Neighbour& n : ngbs) {
        double q = n.r * hinv;
        sum += kernel_wq(q);
        dsum -= kernel_dwdq(q) * q * hinv;  // d/dh w(r/h)
    }
    return {(32.0 / 3.0) * sum, (32.0 / 3.0) * dsum};
}

DensityResult density_at(const std::vector<Neighbour>& ngbs, double h) {
    DensityResult out;
    for (const Neighbour& n : ngbs) {
        double w = kernel_w(n.r, h);
        out.rho += n.p->m * w;
        out.n_wt += w;
    }
    return out;
}

}  // namespace

GhostResult ghost_update_h(const Particle& target, const std::vector<Neighbour>& candidates,
                           const SphConfig& cfg, double h_allowed) {
    GhostResult out;
    double h = target.h;
    const double target_count = cfg.n_ngb_target;

    // Bracket the root: the count is nondecreasing in h.
    double lo = h, hi = h;
    NgbCount at_h = eval_count(candidates, h);
    bool bracketed = false;
    if (at_h.value < target_count) {
        lo = h;
        while (hi < h_allowed) {
            hi = std::min(hi * 2.0, h_allowed);
            if (eval_count(candidates, hi).value >= target_count) {
                bracketed = true;
                break;
            }
            lo = hi;
        }
        if (!bracketed) {
            // Too few neighbours even at the largest admissible h.
            out.h = h_allowed;
            out.status = h_allowed >= cfg.h_max ? GhostStatus::capped : GhostStatus::growth_limited;
            DensityResult d = density_at(candidates, out.h);
            out.rho = d.rho;
            out.n_wt = d.n_wt;
            return out;
        }
    } else {
        hi = h;
        while (lo > 1e-12 * h) {
            lo *= 0.5;
            if (eval_count(candidates, lo).value <= target_count) {
                bracketed = true;
                break;
            }
            hi = lo;
        }
        if (!bracketed) lo = 1e-12 * h;
    }

    // Safeguarded Newton inside [lo, hi].
    for (int it = 1; it <= cfg.ghost_max_iter; ++it) {
        out.iterations = it;
        NgbCount c = eval_count(candidates, h);
        double step;
        if (c.slope > 0.0) {
            step = (target_count - c.value) / c.slope;
        } else {
            step = (c.value < target_count ? 0.5 : -0.5) * h;  // force a bisection below
        }
        double h_new = h + step;
        if (!(h_new > lo && h_new < hi)) h_new = 0.5 * (lo + hi);
        if (c.value < target_count) lo = std::max(lo, h);
        else hi = std::min(hi, h);

        if (std::abs(h_new - h) <= cfg.h_tolerance * h_new) {
            h = h_new;
            out.h = h;
            out.status = GhostStatus::converged;
            DensityResult d = density_at(candidates, h);
            out.rho = d.rho;
            out.n_wt = d.n_wt;
            return out;
        }
        h = h_new;
    }

    out.h = h;
    out.status = GhostStatus::iteration_limit;
    DensityResult d = density_at(candidates, h);
    out.rho = d.rho;
    out.n_wt = d.n_wt;
    return out;
}

}  // namespace mtsph
