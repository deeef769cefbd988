#pragma once

#include <Eigen/Cholesky>
#include <vector>

#include "cwgf/linear_ops.hpp"
#include "cwgf/vae.hpp"
#include "cwgf/world.hpp"

namespace cwgf {

struct Gaussian {
    Vec mean;
    Mat cov;
};

// Prompt-conditioned Gaussian latent prior z | c ~ N(B c + m0, Sigma).
// Everything the solver consumes (flow map, scores, prompt pullback) has a
// closed form in the eigenbasis of Sigma, so this world doubles as the
// ground truth against which the particle system is checked.
class GaussianPrior : public PriorWorld {
public:
    GaussianPrior(Mat B, Vec m0, Mat Sigma);

    int latent_dim() const override { return static_cast<int>(m0_.size()); }
    int prompt_dim() const override { return static_cast<int>(B_.cols()); }

    const Mat& prompt_matrix() const { return B_; }
    const Vec& base_mean() const { return m0_; }
    const Mat& covariance() const { return Sigma_; }
    const Vec& eigenvalues() const { return lambda_; }

    Vec mean(const Vec& c) const;

    // Exact endpoint of the probability-flow ODE started at (z_t, t):
    // in the eigenbasis, coordinate i is scaled by sqrt(lambda_i / m_{t,i})
    // with m_{t,i} = 1 + alpha_t (lambda_i - 1).
    Vec flow_map(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const override;

    // Score of the noised marginal N(sqrt(alpha) mean, alpha Sigma + sigma^2 I).
    Vec noisy_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const override;

    Vec clean_score(const Vec& z, const Vec& c) const;

    Vec prompt_pullback(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c,
                        const Vec& residual) const override;

    Vec sample_prior(const Vec& c, Rng& rng) const override;

    Gaussian noisy_marginal(const VpSchedule& sched, double t, const Vec& c) const;

    // Point on the exact flow-ODE characteristic through (z_t, t) at an
    // earlier time s in [0, t].
    Vec characteristic(const VpSchedule& sched, double t, const Vec& z_t, double s, const Vec& c) const;

    // Log density of the time-t noised marginal at z_t.
    double noisy_logpdf(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const;

    double clean_logpdf(const Vec& z, const Vec& c) const;

private:
    Mat B_;
    Vec m0_;
    Mat Sigma_;
    Mat U_;      // eigenvectors of Sigma, columns
    Vec lambda_; // eigenvalues of Sigma, ascending
};

// Score surrogate distilled from a flow map: s(z_t) = (sqrt(alpha) g - z_t) / (1 - sqrt(alpha)).
// Undefined at t = 0 where the denominator vanishes.
Vec cm_surrogate_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& flow_map_output);

struct SurrogateErrorDirection {
    double eigenvalue = 0.0;
    double coefficient = 0.0; // linear error gain a_{t,i} along the eigendirection
    double mean_square = 0.0; // E[(e_t)_i^2] under the noised marginal
};

struct SurrogateErrorReport {
    std::vector<SurrogateErrorDirection> directions;
    double total_mse = 0.0;
    double clean_energy = 0.0; // E ||grad log p||^2 = trace(Sigma^{-1})
    double relative_mse = 0.0;
};

// Closed-form second moment of e_t = surrogate score - exact noisy score
// under z_t ~ noised prior. Zero when Sigma = I.
SurrogateErrorReport surrogate_error_closed_form(const GaussianPrior& prior, const VpSchedule& sched,
                                                 double t, const Vec& c);

// Leading small-time behaviour of the per-direction error:
// E[(e_t)_i^2] -> (lambda_i - 1)^2 / (16 lambda_i^3) * sigma_t^4.
double surrogate_error_small_time_coeff(double lambda_i);

// Posterior over z given y = A D(z) + noise, all Gaussian, computed by
// direct linear algebra (precision assembly + solve).
Gaussian exact_latent_posterior(const GaussianPrior& prior, const LinearGaussianVae& vae,
                                const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& c);

// Maximiser of the marginal likelihood p(y | c) over the prompt. Requires
// the prompt-to-observation map to have full column rank.
Vec exact_mmle(const GaussianPrior& prior, const LinearGaussianVae& vae, const LinearForwardOp& op,
               const Vec& y, double sigma_y);

// log N(y; A(W z + b), sigma_y^2 I + sigma_dec^2 A A^T), the z-likelihood
// with the decoder output marginalised out.
double marginal_log_likelihood(const LinearGaussianVae& vae, const LinearForwardOp& op, const Vec& y,
                               double sigma_y, const Vec& z);

// Same likelihood with the observation covariance factored once, for loops
// over many latents against a fixed observation.
class MarginalLikelihood {
public:
    MarginalLikelihood(const LinearGaussianVae& vae, const LinearForwardOp& op, const Vec& y,
                       double sigma_y);

    double log_likelihood(const Vec& z) const;

    // ||y - A D(z)||, the raw data-fit residual.
    double residual_norm(const Vec& z) const;

private:
    const LinearGaussianVae& vae_;
    const LinearForwardOp& op_;
    Vec y_;
    Eigen::LLT<Mat> s_llt_;
    double log_norm_ = 0.0; // -(m log 2 pi + log det S) / 2
};

// log p(y | c) with both z and the decoder noise marginalised out.
double prompt_log_evidence(const GaussianPrior& prior, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& c);

double gaussian_kl(const Gaussian& from, const Gaussian& to);

// Fisher divergence E_{z ~ from} || grad log from - grad log to ||^2.
double gaussian_fisher_divergence(const Gaussian& from, const Gaussian& to);

// 2-Wasserstein distance (Bures metric on the covariances).
double gaussian_w2(const Gaussian& a, const Gaussian& b);

} // namespace cwgf
