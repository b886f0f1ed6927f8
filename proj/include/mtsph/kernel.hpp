#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mtsph {

// Cubic-spline (M4) kernel with compact support radius 2h.
//
//   W(r, h) = 1 / (pi h^3) * w(q),  q = r / h
//   w(q) = 1 - 3/2 q^2 + 3/4 q^3          0 <= q < 1
//        = 1/4 (2 - q)^3                  1 <= q < 2
//        = 0                              q >= 2
//
// Integrates to 1 over all space for any h.

inline constexpr double kKernelSupport = 2.0;  // support radius in units of h

/// Dimensionless kernel shape w(q).
constexpr double kernel_wq(double q) {
    if (q < 1.0) return 1.0 - 1.5 * q * q + 0.75 * q * q * q;
    if (q < 2.0) {
        double t = 2.0 - q;
        return 0.25 * t * t * t;
    }
    return 0.0;
}

/// Dimensionless shape derivative dw/dq.
constexpr double kernel_dwdq(double q) {
    if (q < 1.0) return -3.0 * q + 2.25 * q * q;
    if (q < 2.0) {
        double t = 2.0 - q;
        return -0.75 * t * t;
    }
    return 0.0;
}

inline double kernel_w(double r, double h) {
    if (h <= 0.0) throw std::domain_error("kernel_w: smoothing length must be positive");
    double hinv = 1.0 / h;
    return kernel_wq(r * hinv) * hinv * hinv * hinv / std::numbers::pi;
}

/// Radial derivative dW/dr. Zero at r=0 and outside the support.
inline double kernel_grad_w(double r, double h) {
    if (h <= 0.0) throw std::domain_error("kernel_grad_w: smoothing length must be positive");
    double hinv = 1.0 / h;
    double h4inv = hinv * hinv * hinv * hinv;
    return kernel_dwdq(r * hinv) * h4inv / std::numbers::pi;
}

}  // namespace mtsph
