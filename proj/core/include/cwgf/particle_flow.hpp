#pragma once

#include "cwgf/linear_ops.hpp"
#include "cwgf/schedule.hpp"
#include "cwgf/vae.hpp"

namespace cwgf {

// Particle ensembles are stored as d x N matrices, one particle per column.

struct NoisedParticles {
    Mat noisy; // z_t^(n), same shape as the clean ensemble
    Mat eps;   // the standard normal draws, kept for score-matching targets
};

// Forward noising z_t = sqrt(alpha_t) z + sigma_t eps with fresh i.i.d. draws.
NoisedParticles noise_particles(const Mat& ensemble, const VpSchedule& sched, double t, Rng& rng);

// Row-stochastic interaction weights from noisy particle n to clean particle m,
//   pi_{nm} proportional to exp(-||z_t^(n) - sqrt(alpha) z^(m)||^2 / (2 sigma^2)),
// normalized per row with the log-sum-exp trick. Undefined at sigma_t = 0.
Mat kernel_weights(const Mat& clean, const Mat& noisy, const VpSchedule& sched, double t);

// Euler step of the prior subflow: relaxation toward the flow-map outputs plus
// kernelized repulsion away from the local barycentre,
//   z + eta (g - z) + eta (z - sum_m pi_{nm} z^(m)).
Mat prior_step(const Mat& clean, const Mat& pi, const Mat& flow_outputs, double eta);

// Euler step of the likelihood subflow: each particle moves along the
// preconditioned encoder drift evaluated at its pixel posterior mean.
// adjoint_y is the precomputed A^T y from PixelGaussian::adjoint_observation.
Mat likelihood_step(const Mat& ensemble, const LinearGaussianVae& vae, const PixelGaussian& pixel,
                    const Vec& adjoint_y, double eta);

// Convenience form constructing the pixel machinery on the fly.
Mat likelihood_step(const Mat& ensemble, const LinearGaussianVae& vae, const LinearForwardOp& op,
                    const Vec& y, double sigma_y, double eta);

} // namespace cwgf
