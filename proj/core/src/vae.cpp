#include "cwgf/vae.hpp"

#include <stdexcept>

#include "cwgf/errors.hpp"

namespace cwgf {

LinearGaussianVae LinearGaussianVae::with_optimal_encoder(Mat W, Vec b, double sigma_dec,
                                                          double lambda) {
    if (sigma_dec <= 0.0)
        throw std::invalid_argument("decoder noise scale must be positive");
    if (lambda <= 0.0)
        throw std::invalid_argument("code-prior weight lambda must be positive");
    if (W.rows() != b.size())
        throw std::invalid_argument("decoder bias length does not match weight rows");

    const auto d = W.cols();
    const double gain = 1.0 / (lambda * sigma_dec * sigma_dec);
    Mat precision = Mat::Identity(d, d) + gain * (W.transpose() * W);
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success)
        throw NumericError("encoder precision is not positive definite");
    Mat cov = llt.solve(Mat::Identity(d, d));
    Mat enc_gain = cov * (gain * W.transpose());
    return LinearGaussianVae(std::move(W), std::move(b), sigma_dec, lambda, std::move(enc_gain),
                             std::move(cov));
}

LinearGaussianVae::LinearGaussianVae(Mat W, Vec b, double sigma_dec, double lambda,
                                     Mat encoder_gain, Mat encoder_cov)
    : W_(std::move(W)),
      b_(std::move(b)),
      sigma_dec_(sigma_dec),
      lambda_(lambda),
      encoder_gain_(std::move(encoder_gain)),
      encoder_cov_(std::move(encoder_cov)) {
    if (sigma_dec_ <= 0.0)
        throw std::invalid_argument("decoder noise scale must be positive");
    if (lambda_ <= 0.0)
        throw std::invalid_argument("code-prior weight lambda must be positive");
    if (W_.rows() != b_.size())
        throw std::invalid_argument("decoder bias length does not match weight rows");
    if (encoder_gain_.rows() != W_.cols() || encoder_gain_.cols() != W_.rows())
        throw std::invalid_argument("encoder gain shape does not match decoder transpose");
    if (encoder_cov_.rows() != W_.cols() || encoder_cov_.cols() != W_.cols())
        throw std::invalid_argument("encoder covariance must be latent_dim x latent_dim");
    encoder_cov_llt_.compute(encoder_cov_);
    if (encoder_cov_llt_.info() != Eigen::Success)
        throw NumericError("encoder covariance is not positive definite");
}

Vec LinearGaussianVae::encoder_drift(const Vec& z, const Vec& pixel_target) const {
    // lambda Sigma_phi^{-1} (E(x) - z) + lambda z
    Vec gap = encode_mean(pixel_target) - z;
    return lambda_ * encoder_cov_llt_.solve(gap) + lambda_ * z;
}

Vec LinearGaussianVae::preconditioned_drift(const Vec& z, const Vec& pixel_target) const {
    // lambda^{-1} Sigma_phi [ lambda Sigma_phi^{-1} (E(x) - z) + lambda z ]
    // collapses to (E(x) - z) + Sigma_phi z regardless of lambda.
    return (encode_mean(pixel_target) - z) + encoder_cov_ * z;
}

} // namespace cwgf
