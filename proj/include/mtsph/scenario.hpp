#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "mtsph/particle.hpp"

namespace mtsph {

enum class ScenarioKind { uniform, two_cluster, sod_tube, replicated };

ScenarioKind parse_scenario(std::string_view name);
std::string_view scenario_name(ScenarioKind kind);

/// Initial-condition recipe. `n` is the target particle count; lattice
/// kinds snap it to the nearest realizable grid.
struct Scenario {
    ScenarioKind kind = ScenarioKind::uniform;
    int n = 32768;
    std::uint64_t seed = 1;
    double u0 = 1.0;  // background specific internal energy
    double gamma = 5.0 / 3.0;

    // two_cluster: hot dense Gaussian blobs on a cold sparse background
    double cluster_fraction = 0.4;    // fraction of particles in the two blobs
    double cluster_u_factor = 1.0e4;  // blob u relative to background

    // replicated: tile a jittered uniform box per axis
    std::array<int, 3> replicate{2, 2, 2};

    // optional override of the derived top-level grid (0 = auto)
    std::array<int, 3> top_dims{0, 0, 0};
};

struct ScenarioRealization {
    std::string name;
    ParticleArray parts;
    Box box;
    std::array<int, 3> top_dims{1, 1, 1};
    double gamma = 5.0 / 3.0;
    double t_end = 1.0;  // suggested run span
    std::uint64_t seed = 0;
};

/// Deterministic per seed. two_cluster spans >= 6 time-bins once binned;
/// sod_tube realizes the standard left/right states by unequal spacing.
ScenarioRealization generate_ics(const Scenario& sc);

/// Tile existing initial conditions `k` times per axis, offsetting
/// positions and renumbering ids; the box grows accordingly.
ScenarioRealization replicate_box(const ScenarioRealization& base, std::array<int, 3> k);

}  // namespace mtsph
