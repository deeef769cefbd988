#pragma once

#include <functional>
#include <vector>

#include "cwgf/gaussian.hpp"
#include "cwgf/schedule.hpp"
#include "cwgf/world.hpp"

namespace cwgf {

// Prompt embedding with its trust region. radius <= 0 disables projection.
struct PromptState {
    Vec c;
    Vec anchor;
    double radius = 0.0;
};

// Euclidean projection onto the closed ball B(anchor, radius).
Vec project_to_ball(const Vec& c, const Vec& anchor, double radius);

// A score family with explicit prompt dependence, decoupled from PriorWorld
// so tests can rescale or replace the score while keeping the same targets.
struct PromptScoreModel {
    int prompt_dim = 0;
    std::function<Vec(double t, const Vec& z_t, const Vec& c)> score;
    // adjoint of (d score / d c) applied to a residual
    std::function<Vec(double t, const Vec& z_t, const Vec& c, const Vec& residual)> pullback;
};

PromptScoreModel world_score_model(const PriorWorld& world, const VpSchedule& sched);

// Monte-Carlo gradient over one noised batch of the half-squared denoising
// score-matching objective with weight beta(t) W(t), W the inverse-SNR weight:
//   grad = beta(t) W(t) N^{-1} sum_n J_c^T (s(z_t^(n); c) - target_n),
//   target_n = -(z_t^(n) - sqrt(alpha) z^(n)) / sigma^2.
// The targets carry no c-dependence, as in denoising score matching.
Vec prompt_gradient(const PromptScoreModel& model, const VpSchedule& sched, double t,
                    const Mat& clean, const Mat& noisy, const Vec& c);

Vec prompt_gradient(const PriorWorld& world, const VpSchedule& sched, double t, const Mat& clean,
                    const Mat& noisy, const Vec& c);

// Equal-weight average of single-timestep gradients over a whole time set,
// one fresh noising per time: the quadrature analog of the per-iteration
// estimate, used by oracle tests.
Vec prompt_gradient_plan_average(const PriorWorld& world, const VpSchedule& sched,
                                 const std::vector<double>& times, const Mat& clean, const Vec& c,
                                 Rng& rng);

// Gradient step c - eta_c * gradient followed by projection onto the ball.
PromptState prompt_step(const PromptState& state, const Vec& gradient, double eta_c);

// Closed-form grad_c KL(mu || p_c) for a Gaussian prior with mean B c + m0:
// only the cross term depends on c, giving B^T Sigma^{-1} (B c + m0 - mu_mean).
Vec kl_prompt_gradient(const GaussianPrior& prior, const Vec& c, const Vec& mu_mean);

} // namespace cwgf
