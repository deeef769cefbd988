#include "cwgf/particle_flow.hpp"

#include <cmath>
#include <stdexcept>

namespace cwgf {

NoisedParticles noise_particles(const Mat& ensemble, const VpSchedule& sched, double t, Rng& rng) {
    sched.validate_time(t);
    if (ensemble.cols() < 1)
        throw std::invalid_argument("ensemble needs at least one particle");
    const double sqrt_alpha = std::sqrt(sched.alpha(t));
    const double sigma = sched.sigma(t);
    NoisedParticles out;
    out.eps = rng.normal_mat(ensemble.rows(), ensemble.cols());
    out.noisy = sqrt_alpha * ensemble + sigma * out.eps;
    return out;
}

Mat kernel_weights(const Mat& clean, const Mat& noisy, const VpSchedule& sched, double t) {
    sched.validate_time(t);
    if (clean.rows() != noisy.rows() || clean.cols() != noisy.cols())
        throw std::invalid_argument("clean and noisy ensembles must have the same shape");
    const double sigma2 = sched.sigma2(t);
    if (sigma2 <= 0.0)
        throw std::domain_error("interaction kernel is undefined at sigma_t = 0");
    const double sqrt_alpha = std::sqrt(sched.alpha(t));
    const auto n = clean.cols();

    Mat scaled = sqrt_alpha * clean;
    Mat pi(n, n);
    Vec row(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index m = 0; m < n; ++m)
            row[m] = -(noisy.col(i) - scaled.col(m)).squaredNorm() / (2.0 * sigma2);
        const double peak = row.maxCoeff();
        row = (row.array() - peak).exp();
        pi.row(i) = row.transpose() / row.sum();
    }
    return pi;
}

Mat prior_step(const Mat& clean, const Mat& pi, const Mat& flow_outputs, double eta) {
    if (eta < 0.0 || eta > 1.0)
        throw std::invalid_argument("prior step size must lie in [0, 1]");
    if (flow_outputs.rows() != clean.rows() || flow_outputs.cols() != clean.cols())
        throw std::invalid_argument("flow outputs must match the ensemble shape");
    if (pi.rows() != clean.cols() || pi.cols() != clean.cols())
        throw std::invalid_argument("interaction matrix must be N x N");
    // column n of clean * pi^T is the pi-barycentre sum_m pi_{nm} z^(m)
    Mat barycentre = clean * pi.transpose();
    return clean + eta * (flow_outputs - clean) + eta * (clean - barycentre);
}

Mat likelihood_step(const Mat& ensemble, const LinearGaussianVae& vae, const PixelGaussian& pixel,
                    const Vec& adjoint_y, double eta) {
    if (eta < 0.0)
        throw std::invalid_argument("likelihood step size must be nonnegative");
    if (ensemble.rows() != vae.latent_dim())
        throw std::invalid_argument("ensemble dimension does not match the decoder");
    Mat out(ensemble.rows(), ensemble.cols());
    for (Eigen::Index n = 0; n < ensemble.cols(); ++n) {
        const Vec z = ensemble.col(n);
        const Vec m_pixel = pixel.mean(vae.decode(z), adjoint_y);
        out.col(n) = z + eta * vae.preconditioned_drift(z, m_pixel);
    }
    return out;
}

Mat likelihood_step(const Mat& ensemble, const LinearGaussianVae& vae, const LinearForwardOp& op,
                    const Vec& y, double sigma_y, double eta) {
    PixelGaussian pixel(op, vae.sigma_dec(), sigma_y);
    return likelihood_step(ensemble, vae, pixel, pixel.adjoint_observation(y), eta);
}

} // namespace cwgf
