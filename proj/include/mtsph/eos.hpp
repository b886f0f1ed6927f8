#pragma once

#include <cmath>
#include <stdexcept>

namespace mtsph {

/// Ideal-gas sound speed c = sqrt(gamma (gamma-1) u).
inline double sound_speed(double u, double gamma) {
    if (u < 0.0) throw std::domain_error("sound_speed: negative internal energy");
    return std::sqrt(gamma * (gamma - 1.0) * u);
}

/// Ideal-gas pressure P = (gamma-1) rho u.
inline double pressure(double rho, double u, double gamma) {
    return (gamma - 1.0) * rho * u;
}

}  // namespace mtsph
