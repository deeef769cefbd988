#include "cwgf/gaussian.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <cmath>
#include <stdexcept>

#include "cwgf/errors.hpp"

namespace cwgf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

// Symmetric positive semidefinite square root via eigendecomposition.
Mat sqrtm_spsd(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    if (es.info() != Eigen::Success)
        throw NumericError("eigendecomposition failed in matrix square root");
    Vec e = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * e.asDiagonal() * es.eigenvectors().transpose();
}

double log_det_from_llt(const Eigen::LLT<Mat>& llt) {
    return 2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();
}

Eigen::LLT<Mat> checked_llt(const Mat& m, const char* what) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success)
        throw NumericError(std::string(what) + " is not positive definite");
    return llt;
}

// Dense observation covariance sigma_y^2 I + sigma_dec^2 A A^T.
Mat observation_cov(const Mat& a_dense, double sigma_dec, double sigma_y) {
    const auto m = a_dense.rows();
    return sigma_y * sigma_y * Mat::Identity(m, m) +
           sigma_dec * sigma_dec * (a_dense * a_dense.transpose());
}

} // namespace

GaussianPrior::GaussianPrior(Mat B, Vec m0, Mat Sigma)
    : B_(std::move(B)), m0_(std::move(m0)), Sigma_(std::move(Sigma)) {
    const auto d = m0_.size();
    if (B_.rows() != d)
        throw std::invalid_argument("prompt matrix row count does not match latent dimension");
    if (Sigma_.rows() != d || Sigma_.cols() != d)
        throw std::invalid_argument("prior covariance must be latent_dim x latent_dim");
    if (!Sigma_.isApprox(Sigma_.transpose(), 1e-12))
        throw std::invalid_argument("prior covariance must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(Sigma_);
    if (es.info() != Eigen::Success)
        throw NumericError("eigendecomposition of prior covariance failed");
    lambda_ = es.eigenvalues();
    U_ = es.eigenvectors();
    if (lambda_.minCoeff() <= 0.0)
        throw std::invalid_argument("prior covariance must be positive definite");
}

Vec GaussianPrior::mean(const Vec& c) const {
    if (c.size() != B_.cols())
        throw std::invalid_argument("prompt vector length does not match prompt dimension");
    return B_ * c + m0_;
}

Vec GaussianPrior::flow_map(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const {
    sched.validate_time(t);
    if (z_t.size() != m0_.size())
        throw std::invalid_argument("latent state has wrong dimension");
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    const double sqrt_alpha = std::sqrt(alpha);
    const Vec m = mean(c);
    Vec w = U_.transpose() * (z_t - sqrt_alpha * m);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double mt = alpha * lambda_[i] + sigma2;
        w[i] *= std::sqrt(lambda_[i] / mt);
    }
    return U_ * w + m;
}

Vec GaussianPrior::noisy_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const {
    sched.validate_time(t);
    if (z_t.size() != m0_.size())
        throw std::invalid_argument("latent state has wrong dimension");
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Vec w = U_.transpose() * (z_t - std::sqrt(alpha) * mean(c));
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w[i] /= alpha * lambda_[i] + sigma2;
    return -(U_ * w);
}

Vec GaussianPrior::clean_score(const Vec& z, const Vec& c) const {
    Vec w = U_.transpose() * (z - mean(c));
    w.array() /= lambda_.array();
    return -(U_ * w);
}

Vec GaussianPrior::prompt_pullback(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c,
                                   const Vec& residual) const {
    sched.validate_time(t);
    (void)z_t;
    (void)c;
    if (residual.size() != m0_.size())
        throw std::invalid_argument("residual has wrong dimension");
    // s_theta(z, t; c) = -M_t^{-1} (z - sqrt(alpha) (B c + m0)), so the
    // prompt Jacobian is sqrt(alpha) M_t^{-1} B and its adjoint applies
    // sqrt(alpha) B^T M_t^{-1}.
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Vec w = U_.transpose() * residual;
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w[i] /= alpha * lambda_[i] + sigma2;
    return std::sqrt(alpha) * (B_.transpose() * (U_ * w));
}

Vec GaussianPrior::sample_prior(const Vec& c, Rng& rng) const {
    Vec eps = rng.normal_vec(static_cast<int>(m0_.size()));
    return mean(c) + U_ * (lambda_.cwiseSqrt().asDiagonal() * eps);
}

Gaussian GaussianPrior::noisy_marginal(const VpSchedule& sched, double t, const Vec& c) const {
    sched.validate_time(t);
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Gaussian g;
    g.mean = std::sqrt(alpha) * mean(c);
    g.cov = alpha * Sigma_ + sigma2 * Mat::Identity(m0_.size(), m0_.size());
    return g;
}

Vec GaussianPrior::characteristic(const VpSchedule& sched, double t, const Vec& z_t, double s,
                                  const Vec& c) const {
    sched.validate_time(t);
    if (s < 0.0 || s > t)
        throw std::domain_error("characteristic time must lie in [0, t]");
    const double alpha_t = sched.alpha(t);
    const double sigma2_t = sched.sigma2(t);
    const double alpha_s = sched.alpha(s);
    const double sigma2_s = sched.sigma2(s);
    const Vec m = mean(c);
    Vec w = U_.transpose() * (z_t - std::sqrt(alpha_t) * m);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double mt = alpha_t * lambda_[i] + sigma2_t;
        const double ms = alpha_s * lambda_[i] + sigma2_s;
        w[i] *= std::sqrt(ms / mt);
    }
    return U_ * w + std::sqrt(alpha_s) * m;
}

double GaussianPrior::noisy_logpdf(const VpSchedule& sched, double t, const Vec& z_t,
                                   const Vec& c) const {
    sched.validate_time(t);
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Vec w = U_.transpose() * (z_t - std::sqrt(alpha) * mean(c));
    double quad = 0.0;
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double mt = alpha * lambda_[i] + sigma2;
        quad += w[i] * w[i] / mt;
        logdet += std::log(mt);
    }
    return -0.5 * (static_cast<double>(w.size()) * kLogTwoPi + logdet + quad);
}

double GaussianPrior::clean_logpdf(const Vec& z, const Vec& c) const {
    Vec w = U_.transpose() * (z - mean(c));
    double quad = 0.0;
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        quad += w[i] * w[i] / lambda_[i];
        logdet += std::log(lambda_[i]);
    }
    return -0.5 * (static_cast<double>(w.size()) * kLogTwoPi + logdet + quad);
}

Vec cm_surrogate_score(const VpSchedule& sched, double t, const Vec& z_t,
                       const Vec& flow_map_output) {
    sched.validate_time(t);
    if (t <= 0.0)
        throw std::domain_error("surrogate score is undefined at t = 0");
    if (z_t.size() != flow_map_output.size())
        throw std::invalid_argument("flow map output has wrong dimension");
    const double sqrt_alpha = std::exp(0.5 * sched.log_alpha(t));
    const double denom = -std::expm1(0.5 * sched.log_alpha(t)); // 1 - sqrt(alpha)
    return (sqrt_alpha * flow_map_output - z_t) / denom;
}

SurrogateErrorReport surrogate_error_closed_form(const GaussianPrior& prior,
                                                 const VpSchedule& sched, double t, const Vec& c) {
    sched.validate_time(t);
    if (t <= 0.0)
        throw std::domain_error("surrogate score is undefined at t = 0");
    (void)c; // the error moments depend on the covariance spectrum only
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    const double sqrt_alpha = std::sqrt(alpha);
    const double one_minus_sa = -std::expm1(0.5 * sched.log_alpha(t));

    SurrogateErrorReport report;
    const Vec& lambda = prior.eigenvalues();
    report.directions.reserve(static_cast<std::size_t>(lambda.size()));
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        const double li = lambda[i];
        const double mt = alpha * li + sigma2;
        // The raw gain numerator 1 + sqrt(alpha)(l - 1) - sqrt(l mt) suffers
        // catastrophic cancellation as t -> 0; rationalising gives the
        // algebraically identical -(l - 1)(1 - sqrt(alpha))^2 / (1 +
        // sqrt(alpha)(l - 1) + sqrt(l mt)), stable at every t.
        const double rational_denom = 1.0 + sqrt_alpha * (li - 1.0) + std::sqrt(li * mt);
        const double numer = -(li - 1.0) * one_minus_sa * one_minus_sa / rational_denom;
        SurrogateErrorDirection dir;
        dir.eigenvalue = li;
        dir.coefficient = numer / (std::sqrt(li) * one_minus_sa * std::sqrt(mt));
        dir.mean_square = numer * numer / (li * one_minus_sa * one_minus_sa);
        report.directions.push_back(dir);
        report.total_mse += dir.mean_square;
        report.clean_energy += 1.0 / li;
    }
    report.relative_mse = report.total_mse / report.clean_energy;
    return report;
}

double surrogate_error_small_time_coeff(double lambda_i) {
    if (lambda_i <= 0.0)
        throw std::invalid_argument("eigenvalue must be positive");
    const double diff = lambda_i - 1.0;
    return diff * diff / (16.0 * lambda_i * lambda_i * lambda_i);
}

Gaussian exact_latent_posterior(const GaussianPrior& prior, const LinearGaussianVae& vae,
                                const LinearForwardOp& op, const Vec& y, double sigma_y,
                                const Vec& c) {
    if (sigma_y <= 0.0)
        throw std::invalid_argument("observation noise scale must be positive");
    if (vae.latent_dim() != prior.latent_dim())
        throw std::invalid_argument("decoder latent dimension does not match prior");
    if (vae.pixel_dim() != op.input_dim())
        throw std::invalid_argument("forward operator input does not match decoder output");
    if (y.size() != op.output_dim())
        throw std::invalid_argument("observation length does not match forward operator");

    const Mat a_dense = op.dense();
    const Mat f = a_dense * vae.decoder_weight(); // observation of the latent
    auto s_llt = checked_llt(observation_cov(a_dense, vae.sigma_dec(), sigma_y),
                             "observation covariance");

    const auto d = prior.latent_dim();
    auto sig_llt = checked_llt(prior.covariance(), "prior covariance");
    Mat sigma_inv = sig_llt.solve(Mat::Identity(d, d));
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.transpose());

    Mat precision = sigma_inv + f.transpose() * s_llt.solve(f);
    precision = 0.5 * (precision + precision.transpose());
    auto p_llt = checked_llt(precision, "posterior precision");

    Vec shifted = y - op.apply(vae.decoder_bias());
    Vec rhs = sigma_inv * prior.mean(c) + f.transpose() * s_llt.solve(shifted);

    Gaussian post;
    post.cov = p_llt.solve(Mat::Identity(d, d));
    post.cov = 0.5 * (post.cov + post.cov.transpose());
    post.mean = p_llt.solve(rhs);
    return post;
}

Vec exact_mmle(const GaussianPrior& prior, const LinearGaussianVae& vae, const LinearForwardOp& op,
               const Vec& y, double sigma_y) {
    if (sigma_y <= 0.0)
        throw std::invalid_argument("observation noise scale must be positive");
    if (vae.latent_dim() != prior.latent_dim())
        throw std::invalid_argument("decoder latent dimension does not match prior");
    if (y.size() != op.output_dim())
        throw std::invalid_argument("observation length does not match forward operator");

    const Mat a_dense = op.dense();
    const Mat f = a_dense * vae.decoder_weight();
    const Mat h = f * prior.prompt_matrix();
    Eigen::ColPivHouseholderQR<Mat> qr(h);
    if (qr.rank() < h.cols())
        throw ConfigError("prompt-to-observation map is rank deficient; the evidence maximiser is "
                          "not unique");

    Mat s_y = observation_cov(a_dense, vae.sigma_dec(), sigma_y) +
              f * prior.covariance() * f.transpose();
    s_y = 0.5 * (s_y + s_y.transpose());
    auto sy_llt = checked_llt(s_y, "evidence covariance");

    Vec resid = y - f * prior.base_mean() - op.apply(vae.decoder_bias());
    Mat normal = h.transpose() * sy_llt.solve(h);
    normal = 0.5 * (normal + normal.transpose());
    auto n_llt = checked_llt(normal, "evidence normal equations");
    return n_llt.solve(h.transpose() * sy_llt.solve(resid));
}

double marginal_log_likelihood(const LinearGaussianVae& vae, const LinearForwardOp& op,
                               const Vec& y, double sigma_y, const Vec& z) {
    return MarginalLikelihood(vae, op, y, sigma_y).log_likelihood(z);
}

MarginalLikelihood::MarginalLikelihood(const LinearGaussianVae& vae, const LinearForwardOp& op,
                                       const Vec& y, double sigma_y)
    : vae_(vae), op_(op), y_(y) {
    if (sigma_y <= 0.0)
        throw std::invalid_argument("observation noise scale must be positive");
    if (y_.size() != op_.output_dim())
        throw std::invalid_argument("observation length does not match forward operator");
    if (vae_.pixel_dim() != op_.input_dim())
        throw std::invalid_argument("forward operator input does not match decoder output");
    s_llt_ = checked_llt(observation_cov(op_.dense(), vae_.sigma_dec(), sigma_y),
                         "observation covariance");
    log_norm_ = -0.5 * (static_cast<double>(y_.size()) * kLogTwoPi + log_det_from_llt(s_llt_));
}

double MarginalLikelihood::log_likelihood(const Vec& z) const {
    Vec r = y_ - op_.apply(vae_.decode(z));
    return log_norm_ - 0.5 * r.dot(s_llt_.solve(r));
}

double MarginalLikelihood::residual_norm(const Vec& z) const {
    return (y_ - op_.apply(vae_.decode(z))).norm();
}

double prompt_log_evidence(const GaussianPrior& prior, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& c) {
    if (y.size() != op.output_dim())
        throw std::invalid_argument("observation length does not match forward operator");
    const Mat a_dense = op.dense();
    const Mat f = a_dense * vae.decoder_weight();
    Mat s_y = observation_cov(a_dense, vae.sigma_dec(), sigma_y) +
              f * prior.covariance() * f.transpose();
    s_y = 0.5 * (s_y + s_y.transpose());
    auto sy_llt = checked_llt(s_y, "evidence covariance");
    Vec r = y - f * prior.mean(c) - op.apply(vae.decoder_bias());
    const double quad = r.dot(sy_llt.solve(r));
    return -0.5 * (static_cast<double>(y.size()) * kLogTwoPi + log_det_from_llt(sy_llt) + quad);
}

double gaussian_kl(const Gaussian& from, const Gaussian& to) {
    const auto d = from.mean.size();
    if (to.mean.size() != d)
        throw std::invalid_argument("distribution dimensions do not match");
    auto to_llt = checked_llt(to.cov, "target covariance");
    auto from_llt = checked_llt(from.cov, "source covariance");
    const double trace_term = to_llt.solve(from.cov).trace();
    Vec dm = to.mean - from.mean;
    const double quad = dm.dot(to_llt.solve(dm));
    const double logdet_gap = log_det_from_llt(to_llt) - log_det_from_llt(from_llt);
    return 0.5 * (trace_term + quad - static_cast<double>(d) + logdet_gap);
}

double gaussian_fisher_divergence(const Gaussian& from, const Gaussian& to) {
    const auto d = from.mean.size();
    if (to.mean.size() != d)
        throw std::invalid_argument("distribution dimensions do not match");
    auto from_llt = checked_llt(from.cov, "source covariance");
    auto to_llt = checked_llt(to.cov, "target covariance");
    Mat p_from = from_llt.solve(Mat::Identity(d, d));
    Mat p_to = to_llt.solve(Mat::Identity(d, d));
    Mat gap = p_to - p_from;
    Vec dm = p_to * (from.mean - to.mean);
    return dm.squaredNorm() + (gap * from.cov * gap).trace();
}

double gaussian_w2(const Gaussian& a, const Gaussian& b) {
    if (a.mean.size() != b.mean.size())
        throw std::invalid_argument("distribution dimensions do not match");
    Mat rb = sqrtm_spsd(b.cov);
    Mat cross = sqrtm_spsd(rb * a.cov * rb);
    const double bures = (a.cov + b.cov - 2.0 * cross).trace();
    const double w2sq = (a.mean - b.mean).squaredNorm() + std::max(bures, 0.0);
    return std::sqrt(std::max(w2sq, 0.0));
}

} // namespace cwgf
