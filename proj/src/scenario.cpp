#include "mtsph/scenario.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "mtsph/eos.hpp"

namespace mtsph {

ScenarioKind parse_scenario(std::string_view name) {
    if (name == "uniform") return ScenarioKind::uniform;
    if (name == "two_cluster" || name == "two-cluster") return ScenarioKind::two_cluster;
    if (name == "sod_tube" || name == "sod") return ScenarioKind::sod_tube;
    if (name == "replicated") return ScenarioKind::replicated;
    throw std::invalid_argument("unknown scenario: " + std::string(name));
}

std::string_view scenario_name(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::uniform: return "uniform";
        case ScenarioKind::two_cluster: return "two_cluster";
        case ScenarioKind::sod_tube: return "sod_tube";
        case ScenarioKind::replicated: return "replicated";
    }
    return "?";
}

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("scenario: ") + what);
}

/// Jittered cubic lattice of nside^3 unit-density particles in [0,1)^3.
ParticleArray jittered_lattice(int nside, double u0, double gamma, std::mt19937_64& rng,
                               double jitter = 0.2) {
    const double a = 1.0 / nside;
    std::uniform_real_distribution<double> jit(-jitter * a, jitter * a);
    ParticleArray parts;
    parts.reserve(std::size_t(nside) * nside * nside);
    for (int x = 0; x < nside; ++x)
        for (int y = 0; y < nside; ++y)
            for (int z = 0; z < nside; ++z) {
                Particle p;
                p.id = std::int64_t(parts.size());
                p.pos = {(x + 0.5) * a + jit(rng), (y + 0.5) * a + jit(rng),
                         (z + 0.5) * a + jit(rng)};
                for (int k = 0; k < 3; ++k) {
                    if (p.pos[k] < 0.0) p.pos[k] += 1.0;
                    if (p.pos[k] >= 1.0) p.pos[k] -= 1.0;
                }
                p.m = a * a * a;  // unit background density
                p.h = 1.3 * a;
                p.u = u0;
                p.c = sound_speed(u0, gamma);
                p.pos_at_kick = p.pos;
                parts.push_back(p);
            }
    return parts;
}

double suggested_span(double h, double u, double gamma, double cfl, int coarse_steps) {
    double c = std::max(sound_speed(u, gamma), 1e-12);
    double dt = cfl * h / (2.0 * c);
    return coarse_steps * dt;
}

ScenarioRealization make_uniform(const Scenario& sc) {
    ScenarioRealization out;
    out.name = "uniform";
    out.seed = sc.seed;
    out.gamma = sc.gamma;
    out.box = Box{{1.0, 1.0, 1.0}};

    int nside = std::max(2, int(std::llround(std::cbrt(double(sc.n)))));
    std::mt19937_64 rng(sc.seed);
    out.parts = jittered_lattice(nside, sc.u0, sc.gamma, rng);

    int dims = std::max(1, nside / 4);
    out.top_dims = {dims, dims, dims};
    double a = 1.0 / nside;
    out.t_end = suggested_span(1.15 * a, sc.u0, sc.gamma, 0.2, 256);
    return out;
}

ScenarioRealization make_two_cluster(const Scenario& sc) {
    check(sc.cluster_fraction > 0.0 && sc.cluster_fraction < 1.0, "cluster_fraction in (0,1)");
    check(sc.cluster_u_factor >= 1.0, "cluster_u_factor >= 1");

    ScenarioRealization out;
    out.name = "two_cluster";
    out.seed = sc.seed;
    out.gamma = sc.gamma;
    out.box = Box{{1.0, 1.0, 1.0}};

    std::mt19937_64 rng(sc.seed);
    const int n_bg = std::max(8, int(std::llround((1.0 - sc.cluster_fraction) * sc.n)));
    const int nside = std::max(2, int(std::llround(std::cbrt(double(n_bg)))));
    out.parts = jittered_lattice(nside, sc.u0, sc.gamma, rng);
    const double a_bg = 1.0 / nside;
    const double m = a_bg * a_bg * a_bg;

    // two Gaussian blobs, sigma = box/40, hot dense centres
    const double sigma = 1.0 / 40.0;
    const double u_hot = sc.u0 * sc.cluster_u_factor;
    const int n_cluster = int(std::llround(0.5 * sc.cluster_fraction * sc.n));
    const Vec3 centres[2] = {{0.3, 0.3, 0.3}, {0.7, 0.7, 0.7}};
    std::normal_distribution<double> gauss(0.0, sigma);
    // central blob density sets the initial h guess
    const double n0 = n_cluster / (std::pow(2.0 * std::numbers::pi, 1.5) * sigma * sigma * sigma);
    const double h_blob = 1.3 / std::cbrt(n0);

    for (const Vec3& centre : centres) {
        for (int i = 0; i < n_cluster; ++i) {
            Particle p;
            p.id = std::int64_t(out.parts.size());
            p.pos = centre + Vec3{gauss(rng), gauss(rng), gauss(rng)};
            p.pos = out.box.wrap(p.pos);
            p.m = m;
            p.h = h_blob;
            p.u = u_hot;
            p.c = sound_speed(u_hot, sc.gamma);
            p.pos_at_kick = p.pos;
            out.parts.push_back(p);
        }
    }

    int dims = std::max(1, nside / 4);
    out.top_dims = {dims, dims, dims};
    out.t_end = suggested_span(1.15 * a_bg, sc.u0, sc.gamma, 0.2, 64);
    return out;
}

ScenarioRealization make_sod(const Scenario& sc) {
    ScenarioRealization out;
    out.name = "sod_tube";
    out.seed = sc.seed;
    out.gamma = 1.4;  // the standard test states

    // left state rho=1, P=1; right rho=0.125, P=0.1, realized by 2x spacing
    int nx = std::max(8, int(std::llround(double(sc.n) / 72.0)));
    if (nx % 2) ++nx;  // right half uses spacing 2a
    const double a = 1.0 / nx;
    const double w = 8.0 * a;  // cross-section fits both lattices
    out.box = Box{{2.0, w, w}};

    const double m = a * a * a;  // rho_L = 1, rho_R = 1/8 automatically
    const double uL = 1.0 / ((out.gamma - 1.0) * 1.0);
    const double uR = 0.1 / ((out.gamma - 1.0) * 0.125);

    auto add_lattice = [&](double x0, double x1, double spacing, double u) {
        int cx = int(std::llround((x1 - x0) / spacing));
        int cy = int(std::llround(w / spacing));
        for (int x = 0; x < cx; ++x)
            for (int y = 0; y < cy; ++y)
                for (int z = 0; z < cy; ++z) {
                    Particle p;
                    p.id = std::int64_t(out.parts.size());
                    p.pos = {x0 + (x + 0.5) * spacing, (y + 0.5) * spacing, (z + 0.5) * spacing};
                    p.m = m;
                    p.h = 1.3 * spacing;
                    p.u = u;
                    p.c = sound_speed(u, out.gamma);
                    p.pos_at_kick = p.pos;
                    out.parts.push_back(p);
                }
    };
    add_lattice(0.0, 1.0, a, uL);
    add_lattice(1.0, 2.0, 2.0 * a, uR);

    out.top_dims = {8, 1, 1};
    out.t_end = 0.2;
    return out;
}

}  // namespace

ScenarioRealization replicate_box(const ScenarioRealization& base, std::array<int, 3> k) {
    check(k[0] >= 1 && k[1] >= 1 && k[2] >= 1, "replication factors >= 1");
    ScenarioRealization out;
    out.name = base.name + "_replicated";
    out.seed = base.seed;
    out.gamma = base.gamma;
    out.t_end = base.t_end;
    out.box = Box{{base.box.dims.x * k[0], base.box.dims.y * k[1], base.box.dims.z * k[2]}};
    out.top_dims = {base.top_dims[0] * k[0], base.top_dims[1] * k[1], base.top_dims[2] * k[2]};
    out.parts.reserve(base.parts.size() * k[0] * k[1] * k[2]);
    for (int tx = 0; tx < k[0]; ++tx)
        for (int ty = 0; ty < k[1]; ++ty)
            for (int tz = 0; tz < k[2]; ++tz) {
                Vec3 offset{tx * base.box.dims.x, ty * base.box.dims.y, tz * base.box.dims.z};
                for (const Particle& src : base.parts) {
                    Particle p = src;
                    p.id = std::int64_t(out.parts.size());
                    p.pos = src.pos + offset;
                    p.pos_at_kick = p.pos;
                    out.parts.push_back(p);
                }
            }
    return out;
}

ScenarioRealization generate_ics(const Scenario& sc) {
    check(sc.n > 0, "particle count must be positive");
    check(sc.u0 >= 0.0, "u0 must be non-negative");
    check(sc.gamma > 1.0, "gamma must exceed 1");

    ScenarioRealization out;
    switch (sc.kind) {
        case ScenarioKind::uniform:
            out = make_uniform(sc);
            break;
        case ScenarioKind::two_cluster:
            out = make_two_cluster(sc);
            break;
        case ScenarioKind::sod_tube:
            out = make_sod(sc);
            break;
        case ScenarioKind::replicated: {
            Scenario base = sc;
            base.kind = ScenarioKind::uniform;
            out = replicate_box(make_uniform(base), sc.replicate);
            break;
        }
    }
    if (sc.top_dims[0] > 0) out.top_dims = sc.top_dims;
    return out;
}

}  // namespace mtsph
