#pragma once

#include <cstdint>
#include <vector>

#include "cwgf/errors.hpp"

namespace cwgf {

// Variance-preserving noising path with a linear rate
//   beta(t) = beta_min + (beta_max - beta_min) t,
//   alpha_t = exp(-int_0^t beta) = exp(-beta_min t - (beta_max - beta_min) t^2 / 2),
//   sigma_t^2 = 1 - alpha_t.
struct VpSchedule {
    double beta_min = 0.1;
    double beta_max = 20.0;
    double t_max = 1.0;

    double beta(double t) const { return beta_min + (beta_max - beta_min) * t; }

    double log_alpha(double t) const {
        return -(beta_min * t + 0.5 * (beta_max - beta_min) * t * t);
    }

    double alpha(double t) const;
    double sigma(double t) const;
    double sigma2(double t) const;

    // Convex-averaging density over past scores,
    //   gamma_t(s) = sqrt(alpha_t) / (1 - sqrt(alpha_t)) * beta(s) / (2 sqrt(alpha_s)),
    // normalized so that int_0^t gamma_t(s) ds = 1.
    double gamma_weight(double t, double s) const;

    // Closed form of int_0^t beta(s) / (2 sqrt(alpha_s)) ds = 1/sqrt(alpha_t) - 1,
    // the quantity whose inverse normalizes gamma_t. Exposed so tests can pit
    // quadrature against it directly.
    double gamma_raw_mass(double t) const;

    void validate_time(double t) const;
};

struct AlphaSigma {
    double alpha;
    double sigma;
};

// alpha_t and sigma_t at flow time t in [0, t_max].
AlphaSigma alpha_sigma(const VpSchedule& sched, double t);

// Inverse signal-to-noise weight W(t) = sigma_t^2 / alpha_t, t in (0, t_max].
double inv_snr_weight(const VpSchedule& sched, double t);

// Linear per-timestep weight w(t) = w_floor + w_slope * (t / T).
struct StepWeights {
    double w_floor = 0.1;
    double w_slope = 0.8;

    double weight(const VpSchedule& sched, double t) const {
        return w_floor + w_slope * (t / sched.t_max);
    }
};

// Iteration-to-timestep assignment. The base set holds discrete indices in
// descending (high noise first) order; they map onto flow time by
// t = index / 999 * t_max.
struct TimestepPlan {
    enum class Mode { cyclic, decreasing, uniform };

    Mode mode = Mode::cyclic;
    std::vector<int> base_set = {999, 879, 759, 639, 499, 379, 259, 139};
    int iterations = 16;
    std::uint64_t rng_seed = 0;
};

// Expands a plan into the length-K sequence of flow times t_1..t_K.
//
// cyclic:     the first ceil(K/2) entries traverse the base set in order
//             (wrapping if K/2 exceeds the set size); the remaining entries
//             cycle through the four lowest-noise members of the set.
// decreasing: each base entry is repeated consecutively, keeping the
//             sequence non-increasing.
// uniform:    i.i.d. draws from the base set, reproducible from rng_seed.
std::vector<double> timestep_plan(const TimestepPlan& plan, const VpSchedule& sched);

} // namespace cwgf
