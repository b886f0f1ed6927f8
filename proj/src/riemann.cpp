#include "mtsph/riemann.hpp"

#include <cmath>
#include <stdexcept>

namespace mtsph {

namespace {

// Pressure function f_K(p) and its derivative for one side of the problem:
// rarefaction branch for p <= p_K, shock branch otherwise.
struct SideFn {
    double rho, p, c, gamma;

    double f(double pstar) const {
        if (pstar > p) {
            double A = 2.0 / ((gamma + 1.0) * rho);
            double B = (gamma - 1.0) / (gamma + 1.0) * p;
            return (pstar - p) * std::sqrt(A / (pstar + B));
        }
        return 2.0 * c / (gamma - 1.0) *
               (std::pow(pstar / p, (gamma - 1.0) / (2.0 * gamma)) - 1.0);
    }

    double df(double pstar) const {
        if (pstar > p) {
            double A = 2.0 / ((gamma + 1.0) * rho);
            double B = (gamma - 1.0) / (gamma + 1.0) * p;
            double root = std::sqrt(A / (pstar + B));
            return root * (1.0 - 0.5 * (pstar - p) / (pstar + B));
        }
        return 1.0 / (rho * c) * std::pow(pstar / p, -(gamma + 1.0) / (2.0 * gamma));
    }
};

}  // namespace

RiemannSolver::RiemannSolver(HydroState left, HydroState right, double gamma)
    : L_(left), R_(right), gamma_(gamma) {
    if (L_.rho <= 0 || R_.rho <= 0 || L_.p <= 0 || R_.p <= 0)
        throw std::invalid_argument("RiemannSolver: states must have positive rho and p");
    cL_ = std::sqrt(gamma_ * L_.p / L_.rho);
    cR_ = std::sqrt(gamma_ * R_.p / R_.rho);

    double dv = R_.v - L_.v;
    if (2.0 * cL_ / (gamma_ - 1.0) + 2.0 * cR_ / (gamma_ - 1.0) <= dv)
        throw std::domain_error("RiemannSolver: vacuum-generating states");

    SideFn fl{L_.rho, L_.p, cL_, gamma_};
    SideFn fr{R_.rho, R_.p, cR_, gamma_};

    // Newton from the acoustic (two-rarefaction) guess, positivity-clamped.
    double pguess = std::pow((cL_ + cR_ - 0.5 * (gamma_ - 1.0) * dv) /
                                 (cL_ / std::pow(L_.p, (gamma_ - 1.0) / (2.0 * gamma_)) +
                                  cR_ / std::pow(R_.p, (gamma_ - 1.0) / (2.0 * gamma_))),
                             2.0 * gamma_ / (gamma_ - 1.0));
    double pstar = std::max(pguess, 1e-12 * std::min(L_.p, R_.p));
    for (int it = 0; it < 60; ++it) {
        double g = fl.f(pstar) + fr.f(pstar) + dv;
        double dg = fl.df(pstar) + fr.df(pstar);
        double step = g / dg;
        double next = pstar - step;
        if (next <= 0.0) next = 0.5 * pstar;
        if (std::abs(next - pstar) <= 1e-14 * next) {
            pstar = next;
            break;
        }
        pstar = next;
    }
    p_star_ = pstar;
    v_star_ = 0.5 * (L_.v + R_.v) + 0.5 * (fr.f(pstar) - fl.f(pstar));
}

HydroState RiemannSolver::sample(double xi) const {
    const double g = gamma_;
    const double gm1 = g - 1.0, gp1 = g + 1.0;

    if (xi <= v_star_) {
        // left of the contact
        if (p_star_ > L_.p) {
            // left shock
            double ps = p_star_ / L_.p;
            double s = L_.v - cL_ * std::sqrt(gp1 / (2 * g) * ps + gm1 / (2 * g));
            if (xi <= s) return L_;
            double rho = L_.rho * (ps + gm1 / gp1) / (gm1 / gp1 * ps + 1.0);
            return {rho, v_star_, p_star_};
        }
        // left rarefaction
        double head = L_.v - cL_;
        double c_star = cL_ * std::pow(p_star_ / L_.p, gm1 / (2 * g));
        double tail = v_star_ - c_star;
        if (xi <= head) return L_;
        if (xi >= tail) {
            double rho = L_.rho * std::pow(p_star_ / L_.p, 1.0 / g);
            return {rho, v_star_, p_star_};
        }
        double v = 2.0 / gp1 * (cL_ + 0.5 * gm1 * L_.v + xi);
        double c = 2.0 / gp1 * (cL_ + 0.5 * gm1 * (L_.v - xi));
        double rho = L_.rho * std::pow(c / cL_, 2.0 / gm1);
        double p = L_.p * std::pow(c / cL_, 2.0 * g / gm1);
        return {rho, v, p};
    }

    // right of the contact
    if (p_star_ > R_.p) {
        // right shock
        double ps = p_star_ / R_.p;
        double s = R_.v + cR_ * std::sqrt(gp1 / (2 * g) * ps + gm1 / (2 * g));
        if (xi >= s) return R_;
        double rho = R_.rho * (ps + gm1 / gp1) / (gm1 / gp1 * ps + 1.0);
        return {rho, v_star_, p_star_};
    }
    // right rarefaction
    double head = R_.v + cR_;
    double c_star = cR_ * std::pow(p_star_ / R_.p, gm1 / (2 * g));
    double tail = v_star_ + c_star;
    if (xi >= head) return R_;
    if (xi <= tail) {
        double rho = R_.rho * std::pow(p_star_ / R_.p, 1.0 / g);
        return {rho, v_star_, p_star_};
    }
    double v = 2.0 / gp1 * (-cR_ + 0.5 * gm1 * R_.v + xi);
    double c = 2.0 / gp1 * (cR_ - 0.5 * gm1 * (R_.v - xi));
    double rho = R_.rho * std::pow(c / cR_, 2.0 / gm1);
    double p = R_.p * std::pow(c / cR_, 2.0 * g / gm1);
    return {rho, v, p};
}

}  // namespace mtsph
