#include "cwgf/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "cwgf/rng.hpp"

namespace cwgf {

void VpSchedule::validate_time(double t) const {
    if (!(t >= 0.0 && t <= t_max))
        throw std::domain_error("schedule time " + std::to_string(t) +
                                " outside [0, " + std::to_string(t_max) + "]");
}

double VpSchedule::alpha(double t) const {
    validate_time(t);
    return std::exp(log_alpha(t));
}

double VpSchedule::sigma2(double t) const {
    validate_time(t);
    // 1 - exp(x) evaluated as -expm1(x) to keep precision near t = 0.
    return -std::expm1(log_alpha(t));
}

double VpSchedule::sigma(double t) const { return std::sqrt(sigma2(t)); }

double VpSchedule::gamma_raw_mass(double t) const {
    validate_time(t);
    // int_0^t beta/(2 sqrt(alpha)) = [1/sqrt(alpha_s)]_0^t = 1/sqrt(alpha_t) - 1,
    // computed as expm1 of the log for small-t accuracy.
    return std::expm1(-0.5 * log_alpha(t));
}

double VpSchedule::gamma_weight(double t, double s) const {
    if (t <= 0.0)
        throw std::domain_error("gamma_t(s) undefined at t = 0");
    validate_time(t);
    if (!(s >= 0.0 && s <= t))
        throw std::domain_error("gamma_t(s) requires 0 <= s <= t");
    const double sqrt_alpha_t = std::exp(0.5 * log_alpha(t));
    const double sqrt_alpha_s = std::exp(0.5 * log_alpha(s));
    return sqrt_alpha_t / (1.0 - sqrt_alpha_t) * beta(s) / (2.0 * sqrt_alpha_s);
}

AlphaSigma alpha_sigma(const VpSchedule& sched, double t) {
    return {sched.alpha(t), sched.sigma(t)};
}

double inv_snr_weight(const VpSchedule& sched, double t) {
    if (t <= 0.0)
        throw std::domain_error("inverse-SNR weight requires t > 0");
    return sched.sigma2(t) / sched.alpha(t);
}

namespace {

double index_to_time(int index, const VpSchedule& sched) {
    return static_cast<double>(index) / 999.0 * sched.t_max;
}

} // namespace

std::vector<double> timestep_plan(const TimestepPlan& plan, const VpSchedule& sched) {
    if (plan.base_set.empty())
        throw ConfigError("timestep plan: base_set must be nonempty");
    if (plan.iterations < 1)
        throw ConfigError("timestep plan: iterations must be >= 1");
    if (!std::is_sorted(plan.base_set.rbegin(), plan.base_set.rend()))
        throw ConfigError("timestep plan: base_set must be sorted descending");
    for (int idx : plan.base_set)
        if (idx < 1 || idx > 999)
            throw ConfigError("timestep plan: indices must lie in [1, 999]");

    const int K = plan.iterations;
    const int B = static_cast<int>(plan.base_set.size());
    std::vector<double> out;
    out.reserve(K);

    switch (plan.mode) {
    case TimestepPlan::Mode::cyclic: {
        const int lead = (K + 1) / 2;
        for (int k = 0; k < std::min(lead, K); ++k)
            out.push_back(index_to_time(plan.base_set[k % B], sched));
        // Tail cycles the four lowest-noise (smallest index) entries, which
        // sit at the end of the descending base set.
        const int tail_len = std::min(4, B);
        const int tail_start = B - tail_len;
        for (int k = lead; k < K; ++k) {
            const int j = (k - lead) % tail_len;
            out.push_back(index_to_time(plan.base_set[tail_start + j], sched));
        }
        break;
    }
    case TimestepPlan::Mode::decreasing: {
        const int repeats = (K + B - 1) / B;
        for (int i = 0; i < B && static_cast<int>(out.size()) < K; ++i)
            for (int r = 0; r < repeats && static_cast<int>(out.size()) < K; ++r)
                out.push_back(index_to_time(plan.base_set[i], sched));
        break;
    }
    case TimestepPlan::Mode::uniform: {
        Rng rng(plan.rng_seed);
        for (int k = 0; k < K; ++k)
            out.push_back(index_to_time(plan.base_set[rng.index(plan.base_set.size())], sched));
        break;
    }
    }
    return out;
}

} // namespace cwgf
