#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "mtsph/particle.hpp"

namespace mtsph {

/// Text snapshot: optional `# key=value` comment lines, one header line
/// `id,x,y,z,vx,vy,vz,m,h,u,rho,bin`, one row per particle at full
/// round-trip precision (17 significant digits).
void write_snapshot(std::ostream& os, const ParticleArray& parts,
                    std::optional<std::uint64_t> seed = std::nullopt);
void write_snapshot(const std::string& path, const ParticleArray& parts,
                    std::optional<std::uint64_t> seed = std::nullopt);

/// Throws std::runtime_error naming the line on any malformed content.
ParticleArray read_snapshot(std::istream& is);
ParticleArray read_snapshot(const std::string& path);

}  // namespace mtsph
