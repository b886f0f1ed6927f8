#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>

namespace mtsph {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;

    constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    constexpr double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }

    friend std::ostream& operator<<(std::ostream& os, const Vec3& v) {
        return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
    }
};

/// Rectangular periodic box spanning [0, dims) per axis.
struct Box {
    Vec3 dims{1.0, 1.0, 1.0};

    /// Wrap a position into [0, dims). Robust for arbitrary offsets.
    Vec3 wrap(Vec3 p) const {
        for (int k = 0; k < 3; ++k) {
            double L = dims[k];
            p[k] -= L * std::floor(p[k] / L);
            if (p[k] >= L) p[k] = 0.0;  // guard against floor rounding at the edge
        }
        return p;
    }

    bool contains(const Vec3& p) const {
        return p.x >= 0 && p.x < dims.x && p.y >= 0 && p.y < dims.y && p.z >= 0 && p.z < dims.z;
    }

    /// Minimum-image displacement a - b.
    Vec3 min_image(const Vec3& a, const Vec3& b) const {
        Vec3 d = a - b;
        for (int k = 0; k < 3; ++k) {
            double L = dims[k];
            d[k] -= L * std::nearbyint(d[k] / L);
        }
        return d;
    }

    double min_edge() const { return std::fmin(dims.x, std::fmin(dims.y, dims.z)); }
};

/// Axis-aligned box, used for tree-node bounds.
struct Aabb {
    Vec3 lo, hi;

    Vec3 center() const { return 0.5 * (lo + hi); }
    Vec3 extent() const { return hi - lo; }

    /// Squared distance between the closest points of two boxes, with `shift`
    /// applied to `other` (periodic image offset).
    double dist2(const Aabb& other, const Vec3& shift) const {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            double olo = other.lo[k] + shift[k];
            double ohi = other.hi[k] + shift[k];
            double gap = 0.0;
            if (olo > hi[k]) gap = olo - hi[k];
            else if (lo[k] > ohi) gap = lo[k] - ohi;
            d2 += gap * gap;
        }
        return d2;
    }

    /// Squared distance from a point to this box.
    double dist2(const Vec3& p) const {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            double gap = 0.0;
            if (p[k] < lo[k]) gap = lo[k] - p[k];
            else if (p[k] > hi[k]) gap = p[k] - hi[k];
            d2 += gap * gap;
        }
        return d2;
    }
};

}  // namespace mtsph
