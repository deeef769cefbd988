#include "cwgf/prompt_flow.hpp"

#include <cmath>
#include <stdexcept>

#include "cwgf/errors.hpp"
#include "cwgf/particle_flow.hpp"

namespace cwgf {

Vec project_to_ball(const Vec& c, const Vec& anchor, double radius) {
    if (radius <= 0.0)
        return c;
    if (c.size() != anchor.size())
        throw std::invalid_argument("prompt and anchor dimensions do not match");
    Vec gap = c - anchor;
    const double dist = gap.norm();
    if (dist <= radius)
        return c;
    return anchor + gap * (radius / dist);
}

PromptScoreModel world_score_model(const PriorWorld& world, const VpSchedule& sched) {
    PromptScoreModel model;
    model.prompt_dim = world.prompt_dim();
    model.score = [&world, sched](double t, const Vec& z_t, const Vec& c) {
        return world.noisy_score(sched, t, z_t, c);
    };
    model.pullback = [&world, sched](double t, const Vec& z_t, const Vec& c, const Vec& residual) {
        return world.prompt_pullback(sched, t, z_t, c, residual);
    };
    return model;
}

Vec prompt_gradient(const PromptScoreModel& model, const VpSchedule& sched, double t,
                    const Mat& clean, const Mat& noisy, const Vec& c) {
    sched.validate_time(t);
    if (model.prompt_dim == 0)
        return Vec::Zero(0);
    if (t <= 0.0)
        throw std::domain_error("score-matching targets are undefined at t = 0");
    if (clean.rows() != noisy.rows() || clean.cols() != noisy.cols())
        throw std::invalid_argument("clean and noisy ensembles must have the same shape");

    const double sqrt_alpha = std::sqrt(sched.alpha(t));
    const double sigma2 = sched.sigma2(t);
    const auto n = clean.cols();

    Vec grad = Vec::Zero(model.prompt_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec z_t = noisy.col(i);
        Vec target = -(z_t - sqrt_alpha * clean.col(i)) / sigma2;
        Vec residual = model.score(t, z_t, c) - target;
        grad += model.pullback(t, z_t, c, residual);
    }
    const double coeff =
        sched.beta(t) * inv_snr_weight(sched, t) / static_cast<double>(n);
    return coeff * grad;
}

Vec prompt_gradient(const PriorWorld& world, const VpSchedule& sched, double t, const Mat& clean,
                    const Mat& noisy, const Vec& c) {
    if (world.prompt_dim() == 0)
        return Vec::Zero(0);
    return prompt_gradient(world_score_model(world, sched), sched, t, clean, noisy, c);
}

Vec prompt_gradient_plan_average(const PriorWorld& world, const VpSchedule& sched,
                                 const std::vector<double>& times, const Mat& clean, const Vec& c,
                                 Rng& rng) {
    if (times.empty())
        throw std::invalid_argument("time set must be nonempty");
    Vec grad = Vec::Zero(world.prompt_dim());
    for (double t : times) {
        NoisedParticles np = noise_particles(clean, sched, t, rng);
        grad += prompt_gradient(world, sched, t, clean, np.noisy, c);
    }
    return grad / static_cast<double>(times.size());
}

PromptState prompt_step(const PromptState& state, const Vec& gradient, double eta_c) {
    if (eta_c < 0.0)
        throw std::invalid_argument("prompt step size must be nonnegative");
    if (gradient.size() != state.c.size())
        throw std::invalid_argument("gradient dimension does not match the prompt");
    if (!gradient.allFinite())
        throw NumericError("prompt gradient is not finite");
    PromptState next = state;
    next.c = project_to_ball(state.c - eta_c * gradient, state.anchor, state.radius);
    return next;
}

Vec kl_prompt_gradient(const GaussianPrior& prior, const Vec& c, const Vec& mu_mean) {
    if (mu_mean.size() != prior.latent_dim())
        throw std::invalid_argument("target mean has wrong dimension");
    Eigen::LLT<Mat> llt(prior.covariance());
    if (llt.info() != Eigen::Success)
        throw NumericError("prior covariance is not positive definite");
    return prior.prompt_matrix().transpose() * llt.solve(prior.mean(c) - mu_mean);
}

} // namespace cwgf
