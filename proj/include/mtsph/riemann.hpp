#pragma once

namespace mtsph {

/// Primitive hydrodynamic state for the 1D Riemann problem.
struct HydroState {
    double rho;
    double v;
    double p;
};

/// Exact solver for the 1D Riemann problem of the ideal-gas Euler
/// equations. Star-region pressure/velocity via Newton iteration on the
/// standard pressure function, then self-similar sampling.
class RiemannSolver {
  public:
    RiemannSolver(HydroState left, HydroState right, double gamma);

    double p_star() const { return p_star_; }
    double v_star() const { return v_star_; }

    /// Solution at similarity coordinate xi = (x - x0) / t.
    HydroState sample(double xi) const;

  private:
    HydroState L_, R_;
    double gamma_;
    double cL_, cR_;
    double p_star_ = 0.0, v_star_ = 0.0;
};

}  // namespace mtsph
