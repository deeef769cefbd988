#pragma once

#include <functional>
#include <vector>

#include "cwgf/rng.hpp"
#include "cwgf/schedule.hpp"

namespace cwgf {

// Independent verification machinery. Everything here is deliberately
// implemented with methods different from the production code paths
// (brute-force quadrature, finite differences, grids, Monte Carlo), so the
// two can be pitted against each other in tests.

// Score of a time-s marginal, evaluated at state z.
using ScoreFn = std::function<Vec(double s, const Vec& z)>;

// Position of the probability-flow characteristic through (t, z_t) at an
// earlier time s <= t.
using CharacteristicFn = std::function<Vec(double s)>;

// Trapezoid evaluation of int_0^t gamma_t(s) grad log r_s(z_s) ds along a
// characteristic. `nodes` counts trapezoid panels (>= 100 per contract).
Vec quadrature_convex_average(const ScoreFn& score,
                              const CharacteristicFn& characteristic,
                              const VpSchedule& sched,
                              double t,
                              int nodes);

// Numeric mass int_0^t gamma_t(s) ds with the same rule, for the
// normalization checks.
double quadrature_gamma_mass(const VpSchedule& sched, double t, int nodes);

// Generic scalar trapezoid on [a, b] with `nodes` panels.
double trapezoid(const std::function<double(double)>& f, double a, double b, int nodes);

// RK4 integration of the probability-flow ODE
//   dz/ds = -(beta(s)/2) (z + score(s, z))
// from s = t_from down to s = t_to, with `steps` fixed steps.
Vec integrate_flow_ode(const ScoreFn& score,
                       const VpSchedule& sched,
                       double t_from,
                       double t_to,
                       const Vec& z_start,
                       int steps);

// Characteristic through (t, z_t) realized by stepwise RK4 between requested
// node times; evaluation times must be requested in decreasing order.
CharacteristicFn ode_characteristic(const ScoreFn& score,
                                    const VpSchedule& sched,
                                    double t,
                                    const Vec& z_t,
                                    int steps_per_unit_time);

// Central finite differences, error O(h^2).
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h);

// Brute-force posterior (or any density) on a regular grid, d <= 2.
class GridDensity {
public:
    // log_density evaluated at cell centers; masses normalized to sum to 1.
    GridDensity(const std::function<double(const Vec&)>& log_density,
                const Vec& lo,
                const Vec& hi,
                int cells_per_dim);

    int dim() const { return static_cast<int>(lo_.size()); }
    double mass(int i) const { return masses_[i]; }
    double total_mass() const;
    Vec mean() const;
    Mat covariance() const;
    Vec cell_center(int flat_index) const;
    int cell_count() const { return static_cast<int>(masses_.size()); }

private:
    Vec lo_, hi_;
    int cells_;
    std::vector<double> masses_;
};

// Monte Carlo summary with standard error of the mean.
struct McStats {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t count = 0;

    // |mean - reference| <= 3 standard errors, the tolerance convention for
    // all stochastic comparisons here.
    bool within_3se(double reference) const {
        return std::abs(mean - reference) <= 3.0 * std_error;
    }
};

McStats mc_stats(const std::vector<double>& samples);

} // namespace cwgf
