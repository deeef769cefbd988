#pragma once

#include <Eigen/Cholesky>

#include "cwgf/rng.hpp"

namespace cwgf {

// Linear-Gaussian autoencoder pair. The decoder is x = W z + b with
// isotropic output noise sigma_dec^2 I; the encoder is an affine map with a
// fixed posterior covariance Sigma_phi. The canonical construction couples
// the two through the weight lambda so that the encoder is the exact
// Gaussian posterior of the decoder under an N(0, lambda^{-1} I) code prior.
class LinearGaussianVae {
public:
    // Encoder chosen optimally for (W, b, sigma_dec, lambda):
    //   Sigma_phi = (I + lambda^{-1} sigma_dec^{-2} W^T W)^{-1}
    //   E(x) = Sigma_phi lambda^{-1} sigma_dec^{-2} W^T (x - b).
    static LinearGaussianVae with_optimal_encoder(Mat W, Vec b, double sigma_dec, double lambda);

    // Fully explicit construction for experiments with mismatched encoders.
    LinearGaussianVae(Mat W, Vec b, double sigma_dec, double lambda, Mat encoder_gain,
                      Mat encoder_cov);

    int latent_dim() const { return static_cast<int>(W_.cols()); }
    int pixel_dim() const { return static_cast<int>(W_.rows()); }
    double sigma_dec() const { return sigma_dec_; }
    double lambda() const { return lambda_; }
    const Mat& decoder_weight() const { return W_; }
    const Vec& decoder_bias() const { return b_; }
    const Mat& encoder_cov() const { return encoder_cov_; }

    Vec decode(const Vec& z) const { return W_ * z + b_; }

    Vec encode_mean(const Vec& x) const { return encoder_gain_ * (x - b_); }

    // Raw latent ascent direction lambda Sigma_phi^{-1} (E(x) - z) + lambda z
    // evaluated at the pixel target x.
    Vec encoder_drift(const Vec& z, const Vec& pixel_target) const;

    // The same direction premultiplied by lambda^{-1} Sigma_phi, assembled
    // as (E(x) - z) + Sigma_phi z so no explicit inverse is formed.
    Vec preconditioned_drift(const Vec& z, const Vec& pixel_target) const;

private:
    Mat W_;
    Vec b_;
    double sigma_dec_;
    double lambda_;
    Mat encoder_gain_;
    Mat encoder_cov_;
    Eigen::LLT<Mat> encoder_cov_llt_;
};

} // namespace cwgf
