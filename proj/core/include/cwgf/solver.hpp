#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cwgf/gaussian.hpp"
#include "cwgf/linear_ops.hpp"
#include "cwgf/particle_flow.hpp"
#include "cwgf/prompt_flow.hpp"
#include "cwgf/schedule.hpp"
#include "cwgf/vae.hpp"
#include "cwgf/world.hpp"

namespace cwgf {

struct SolverConfig {
    int iterations = 16;
    int particles = 8;
    double eta_r = 1.0;   // prior subflow rate, scaled per iteration by w(t_k)
    double eta_l = 1.0;   // likelihood subflow rate
    double eta_c = 1.0;   // prompt rate; 0 disables prompt optimization
    double sigma_y = 0.01;
    VpSchedule sched;
    TimestepPlan plan;    // plan.iterations is overridden by `iterations`
    StepWeights weights;
    std::uint64_t seed = 0;
    bool trace = false;
    double prompt_radius = 15.0; // trust ball around the initial prompt; <= 0 disables
    // Reintroduces the sqrt(alpha)/(1 - sqrt(alpha)) rate the continuous flow
    // absorbs into eta_R, capped so the effective rate stays at most 1.
    bool rescale_prior_rate = false;
};

struct IterationRecord {
    int k = 0;
    double t_k = 0.0;
    double prompt_grad_norm = 0.0;
    Vec data_fit; // ||y - A D(z)|| per particle, after the full iteration
    double functional = std::numeric_limits<double>::quiet_NaN();
    std::string functional_flag = "na"; // "ok", "regularized", or "na"
    double pi_diag_min = 0.0;
    double pi_diag_mean = 0.0;
};

struct RunReport {
    std::vector<IterationRecord> iterations;
    Mat final_particles;
    Vec final_prompt;
    double wall_seconds = 0.0;
    // Populated when tracing: post-iteration snapshots.
    std::vector<Mat> particle_trace;
    std::vector<Vec> prompt_trace;
};

// Runs the full flow: per iteration one shared noising, prompt gradient at
// the current prompt, kernel weights, prior subflow (flow map conditioned on
// the pre-update prompt), then the preconditioned likelihood subflow.
// Deterministic given config.seed. Numeric failures are rethrown with the
// iteration index attached.
RunReport run_cwgf(const SolverConfig& config, const Vec& y, const LinearForwardOp& op,
                   const PriorWorld& world, const LinearGaussianVae& vae, const Vec& prompt0,
                   const Mat& particles0);

struct FunctionalValue {
    double value = std::numeric_limits<double>::quiet_NaN();
    std::string flag = "na";
};

// Diagnostic descent quantity KL(GaussianFit(ens) || p_c) - mean_n log p(y | z^(n)).
// The Gaussian fit uses the sample mean and Bessel-corrected covariance; a
// degenerate covariance is regularized with 1e-8 I and flagged. With N = 1
// the KL term is dropped and the flag reads "na".
FunctionalValue functional_surrogate(const GaussianPrior& prior, const LinearGaussianVae& vae,
                                     const LinearForwardOp& op, const Vec& y, double sigma_y,
                                     const Mat& ensemble, const Vec& c);

} // namespace cwgf
