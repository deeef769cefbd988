#include "cwgf/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "cwgf/errors.hpp"

namespace cwgf {

namespace {

void validate(const SolverConfig& config, const Vec& y, const LinearForwardOp& op,
              const PriorWorld& world, const LinearGaussianVae& vae, const Vec& prompt0,
              const Mat& particles0) {
    if (config.iterations < 1)
        throw ConfigError("solver needs at least one iteration");
    if (config.particles < 1)
        throw ConfigError("solver needs at least one particle");
    if (config.eta_r < 0.0 || config.eta_l < 0.0 || config.eta_c < 0.0)
        throw ConfigError("step sizes must be nonnegative");
    if (config.eta_r > 1.0)
        throw ConfigError("prior step size must lie in [0, 1]");
    if (config.sigma_y <= 0.0)
        throw ConfigError("observation noise scale must be positive");
    if (y.size() != op.output_dim())
        throw ConfigError("observation length does not match forward operator");
    if (vae.pixel_dim() != op.input_dim())
        throw ConfigError("forward operator input does not match decoder output");
    if (vae.latent_dim() != world.latent_dim())
        throw ConfigError("decoder latent dimension does not match the prior world");
    if (prompt0.size() != world.prompt_dim())
        throw ConfigError("initial prompt length does not match the prior world");
    if (particles0.rows() != world.latent_dim() || particles0.cols() != config.particles)
        throw ConfigError("initial particles must be latent_dim x particles");
}

} // namespace

RunReport run_cwgf(const SolverConfig& config, const Vec& y, const LinearForwardOp& op,
                   const PriorWorld& world, const LinearGaussianVae& vae, const Vec& prompt0,
                   const Mat& particles0) {
    validate(config, y, op, world, vae, prompt0, particles0);

    const auto t_start = std::chrono::steady_clock::now();

    TimestepPlan plan = config.plan;
    plan.iterations = config.iterations;
    const std::vector<double> times = timestep_plan(plan, config.sched);

    Rng rng(config.seed);
    PixelGaussian pixel(op, vae.sigma_dec(), config.sigma_y);
    const Vec adjoint_y = pixel.adjoint_observation(y);
    MarginalLikelihood likelihood(vae, op, y, config.sigma_y);
    const auto* gaussian_world = dynamic_cast<const GaussianPrior*>(&world);

    Mat particles = particles0;
    PromptState prompt{prompt0, prompt0, config.prompt_radius};

    RunReport report;
    report.iterations.reserve(static_cast<std::size_t>(config.iterations));

    for (int k = 0; k < config.iterations; ++k) {
        const double t_k = times[static_cast<std::size_t>(k)];
        try {
            NoisedParticles noised = noise_particles(particles, config.sched, t_k, rng);

            // Prompt step. The gradient is taken at the pre-update prompt;
            // the prior subflow below also conditions on it, so the prompt
            // and particle substeps of one iteration see the same c_k.
            const Vec grad =
                prompt_gradient(world, config.sched, t_k, particles, noised.noisy, prompt.c);
            PromptState next_prompt =
                world.prompt_dim() > 0 ? prompt_step(prompt, grad, config.eta_c) : prompt;

            // Prior subflow.
            Mat pi = kernel_weights(particles, noised.noisy, config.sched, t_k);
            Mat flow_outputs(particles.rows(), particles.cols());
            for (Eigen::Index n = 0; n < particles.cols(); ++n)
                flow_outputs.col(n) = world.flow_map(config.sched, t_k, noised.noisy.col(n), prompt.c);

            double eta_r = config.eta_r * config.weights.weight(config.sched, t_k);
            if (config.rescale_prior_rate) {
                const double sqrt_alpha = std::sqrt(config.sched.alpha(t_k));
                eta_r *= sqrt_alpha / (1.0 - sqrt_alpha);
            }
            eta_r = std::min(eta_r, 1.0);
            Mat relaxed = prior_step(particles, pi, flow_outputs, eta_r);

            // Likelihood subflow.
            particles = likelihood_step(relaxed, vae, pixel, adjoint_y, config.eta_l);
            if (!particles.allFinite())
                throw NumericError("particle ensemble became non-finite");
            prompt = next_prompt;

            IterationRecord rec;
            rec.k = k;
            rec.t_k = t_k;
            rec.prompt_grad_norm = grad.size() > 0 ? grad.norm() : 0.0;
            rec.data_fit.resize(particles.cols());
            for (Eigen::Index n = 0; n < particles.cols(); ++n)
                rec.data_fit[n] = likelihood.residual_norm(particles.col(n));
            rec.pi_diag_min = pi.diagonal().minCoeff();
            rec.pi_diag_mean = pi.diagonal().mean();
            if (gaussian_world != nullptr) {
                FunctionalValue fv = functional_surrogate(*gaussian_world, vae, op, y,
                                                          config.sigma_y, particles, prompt.c);
                rec.functional = fv.value;
                rec.functional_flag = fv.flag;
            }
            report.iterations.push_back(std::move(rec));

            if (config.trace) {
                report.particle_trace.push_back(particles);
                report.prompt_trace.push_back(prompt.c);
            }
        } catch (const NumericError& err) {
            throw err.with_iteration(k);
        }
    }

    report.final_particles = std::move(particles);
    report.final_prompt = prompt.c;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

FunctionalValue functional_surrogate(const GaussianPrior& prior, const LinearGaussianVae& vae,
                                     const LinearForwardOp& op, const Vec& y, double sigma_y,
                                     const Mat& ensemble, const Vec& c) {
    if (ensemble.cols() < 1)
        throw std::invalid_argument("ensemble needs at least one particle");
    if (ensemble.rows() != prior.latent_dim())
        throw std::invalid_argument("ensemble dimension does not match the prior");

    MarginalLikelihood likelihood(vae, op, y, sigma_y);
    const auto n = ensemble.cols();
    double data_term = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        data_term -= likelihood.log_likelihood(ensemble.col(i));
    data_term /= static_cast<double>(n);

    FunctionalValue out;
    if (n < 2) {
        // No meaningful covariance fit: track the data term alone.
        out.value = data_term;
        out.flag = "na";
        return out;
    }

    Gaussian fit;
    fit.mean = ensemble.rowwise().mean();
    Mat centered = ensemble.colwise() - fit.mean;
    fit.cov = (centered * centered.transpose()) / static_cast<double>(n - 1);
    out.flag = "ok";
    if (Eigen::LLT<Mat>(fit.cov).info() != Eigen::Success) {
        fit.cov += 1e-8 * Mat::Identity(fit.cov.rows(), fit.cov.cols());
        out.flag = "regularized";
    }

    Gaussian prior_dist{prior.mean(c), prior.covariance()};
    out.value = gaussian_kl(fit, prior_dist) + data_term;
    return out;
}

} // namespace cwgf
