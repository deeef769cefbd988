#include "cwgf/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "cwgf/errors.hpp"

namespace cwgf {

double trapezoid(const std::function<double(double)>& f, double a, double b, int nodes) {
    if (nodes < 1) throw std::invalid_argument("trapezoid: need at least one panel");
    const double h = (b - a) / nodes;
    double acc = 0.5 * (f(a) + f(b));
    for (int i = 1; i < nodes; ++i) acc += f(a + i * h);
    return acc * h;
}

Vec quadrature_convex_average(const ScoreFn& score,
                              const CharacteristicFn& characteristic,
                              const VpSchedule& sched,
                              double t,
                              int nodes) {
    if (nodes < 100) throw std::invalid_argument("quadrature_convex_average: nodes >= 100 required");
    if (t <= 0.0) throw std::domain_error("quadrature_convex_average: t > 0 required");

    const double h = t / nodes;
    // Characteristics are produced by backward integration, so visit node
    // times from t down to 0 and weight trapezoid-style.
    Vec acc;
    for (int i = nodes; i >= 0; --i) {
        const double s = i * h;
        const Vec z_s = characteristic(s);
        const Vec g = score(s, z_s) * sched.gamma_weight(t, s);
        const double w = (i == 0 || i == nodes) ? 0.5 : 1.0;
        if (acc.size() == 0) acc = Vec::Zero(g.size());
        acc += w * g;
    }
    return acc * h;
}

double quadrature_gamma_mass(const VpSchedule& sched, double t, int nodes) {
    return trapezoid([&](double s) { return sched.gamma_weight(t, s); }, 0.0, t, nodes);
}

Vec integrate_flow_ode(const ScoreFn& score,
                       const VpSchedule& sched,
                       double t_from,
                       double t_to,
                       const Vec& z_start,
                       int steps) {
    if (steps < 1) throw std::invalid_argument("integrate_flow_ode: steps >= 1");
    // Stage times are clamped into the integration interval: accumulated
    // rounding in t_from + k h can otherwise land an ulp outside [0, t].
    const double lo = std::min(t_from, t_to);
    const double hi = std::max(t_from, t_to);
    const auto velocity = [&](double s, const Vec& z) -> Vec {
        const double sc = std::min(hi, std::max(lo, s));
        return -0.5 * sched.beta(sc) * (z + score(sc, z));
    };
    const double h = (t_to - t_from) / steps;
    Vec z = z_start;
    double s = t_from;
    for (int i = 0; i < steps; ++i) {
        const Vec k1 = velocity(s, z);
        const Vec k2 = velocity(s + 0.5 * h, z + 0.5 * h * k1);
        const Vec k3 = velocity(s + 0.5 * h, z + 0.5 * h * k2);
        const Vec k4 = velocity(s + h, z + h * k3);
        z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        s = i + 1 == steps ? t_to : t_from + (i + 1) * h;
        if (!z.allFinite())
            throw NumericError("flow ODE state became non-finite at s = " + std::to_string(s) +
                               " (step " + std::to_string(i + 1) + " of " + std::to_string(steps) + ")");
    }
    return z;
}

CharacteristicFn ode_characteristic(const ScoreFn& score,
                                    const VpSchedule& sched,
                                    double t,
                                    const Vec& z_t,
                                    int steps_per_unit_time) {
    // Shared mutable cursor: each call advances the characteristic from the
    // last requested time down to the new one. Callers must request
    // decreasing times, which is how the quadrature above iterates.
    auto state = std::make_shared<std::pair<double, Vec>>(t, z_t);
    return [=](double s) -> Vec {
        if (s > state->first + 1e-12)
            throw std::invalid_argument("ode_characteristic: times must be requested in decreasing order");
        if (s < state->first - 1e-15) {
            const double span = state->first - s;
            const int steps = std::max(1, static_cast<int>(std::ceil(span * steps_per_unit_time)));
            state->second = integrate_flow_ode(score, sched, state->first, s, state->second, steps);
            state->first = s;
        }
        return state->second;
    };
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h > 0 required");
    Vec g(x.size());
    Vec probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite function value");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

GridDensity::GridDensity(const std::function<double(const Vec&)>& log_density,
                         const Vec& lo,
                         const Vec& hi,
                         int cells_per_dim)
    : lo_(lo), hi_(hi), cells_(cells_per_dim) {
    const int d = static_cast<int>(lo.size());
    if (d < 1 || d > 2) throw std::invalid_argument("GridDensity: only d <= 2 supported");
    if (hi.size() != lo.size()) throw std::invalid_argument("GridDensity: bounds size mismatch");
    if (cells_per_dim < 2) throw std::invalid_argument("GridDensity: need >= 2 cells per dim");

    const int total = (d == 1) ? cells_ : cells_ * cells_;
    std::vector<double> logs(total);
    double max_log = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < total; ++i) {
        logs[i] = log_density(cell_center(i));
        max_log = std::max(max_log, logs[i]);
    }
    masses_.resize(total);
    double sum = 0.0;
    for (int i = 0; i < total; ++i) {
        masses_[i] = std::exp(logs[i] - max_log);
        sum += masses_[i];
    }
    for (double& m : masses_) m /= sum;
}

double GridDensity::total_mass() const {
    double s = 0.0;
    for (double m : masses_) s += m;
    return s;
}

Vec GridDensity::cell_center(int flat_index) const {
    const int d = dim();
    Vec x(d);
    if (d == 1) {
        const double step = (hi_[0] - lo_[0]) / cells_;
        x[0] = lo_[0] + (flat_index + 0.5) * step;
    } else {
        const int i = flat_index / cells_;
        const int j = flat_index % cells_;
        const double step0 = (hi_[0] - lo_[0]) / cells_;
        const double step1 = (hi_[1] - lo_[1]) / cells_;
        x[0] = lo_[0] + (i + 0.5) * step0;
        x[1] = lo_[1] + (j + 0.5) * step1;
    }
    return x;
}

Vec GridDensity::mean() const {
    Vec m = Vec::Zero(dim());
    for (int i = 0; i < cell_count(); ++i) m += masses_[i] * cell_center(i);
    return m;
}

Mat GridDensity::covariance() const {
    const Vec m = mean();
    Mat c = Mat::Zero(dim(), dim());
    for (int i = 0; i < cell_count(); ++i) {
        const Vec d = cell_center(i) - m;
        c += masses_[i] * d * d.transpose();
    }
    return c;
}

McStats mc_stats(const std::vector<double>& samples) {
    McStats s;
    s.count = samples.size();
    if (samples.empty()) return s;
    double acc = 0.0;
    for (double v : samples) acc += v;
    s.mean = acc / samples.size();
    double var = 0.0;
    for (double v : samples) var += (v - s.mean) * (v - s.mean);
    var /= (samples.size() > 1 ? samples.size() - 1 : 1);
    s.std_error = std::sqrt(var / samples.size());
    return s;
}

} // namespace cwgf
