#include "cwgf/gmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cwgf/errors.hpp"
#include "cwgf/oracles.hpp"

namespace cwgf {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

// log N(z; sqrt(alpha) m, alpha Sigma + sigma^2 I) in the eigenbasis of Sigma.
double noised_component_logpdf(const Vec& z, const Vec& mean, const Mat& basis, const Vec& spectrum,
                               double alpha, double sigma2) {
    Vec w = basis.transpose() * (z - std::sqrt(alpha) * mean);
    double quad = 0.0;
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double v = alpha * spectrum[i] + sigma2;
        quad += w[i] * w[i] / v;
        logdet += std::log(v);
    }
    return -0.5 * (static_cast<double>(w.size()) * kLogTwoPi + logdet + quad);
}

Vec noised_component_score(const Vec& z, const Vec& mean, const Mat& basis, const Vec& spectrum,
                           double alpha, double sigma2) {
    Vec w = basis.transpose() * (z - std::sqrt(alpha) * mean);
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w[i] /= alpha * spectrum[i] + sigma2;
    return -(basis * w);
}

} // namespace

GmmPrior::GmmPrior(std::vector<GmmComponent> components) : components_(std::move(components)) {
    if (components_.empty())
        throw std::invalid_argument("mixture needs at least one component");
    const auto d = components_[0].mean.size();
    double total = 0.0;
    for (const auto& comp : components_) {
        if (comp.weight <= 0.0)
            throw std::invalid_argument("mixture weights must be positive");
        if (comp.mean.size() != d)
            throw std::invalid_argument("mixture components have inconsistent dimensions");
        if (comp.cov.rows() != d || comp.cov.cols() != d)
            throw std::invalid_argument("component covariance has wrong shape");
        if (!comp.cov.isApprox(comp.cov.transpose(), 1e-12))
            throw std::invalid_argument("component covariance must be symmetric");
        total += comp.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw std::invalid_argument("mixture weights must sum to one");

    basis_.reserve(components_.size());
    spectrum_.reserve(components_.size());
    for (const auto& comp : components_) {
        Eigen::SelfAdjointEigenSolver<Mat> es(comp.cov);
        if (es.info() != Eigen::Success)
            throw NumericError("eigendecomposition of component covariance failed");
        if (es.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("component covariance must be positive definite");
        basis_.push_back(es.eigenvectors());
        spectrum_.push_back(es.eigenvalues());
    }
}

double GmmPrior::clean_logpdf(const Vec& z) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(components_.size());
    for (std::size_t j = 0; j < components_.size(); ++j) {
        terms[j] = std::log(components_[j].weight) +
                   noised_component_logpdf(z, components_[j].mean, basis_[j], spectrum_[j], 1.0, 0.0);
        best = std::max(best, terms[j]);
    }
    double acc = 0.0;
    for (double term : terms)
        acc += std::exp(term - best);
    return best + std::log(acc);
}

Vec GmmPrior::clean_score(const Vec& z) const {
    return noisy_score(VpSchedule{}, 0.0, z);
}

double GmmPrior::noisy_logpdf(const VpSchedule& sched, double t, const Vec& z_t) const {
    sched.validate_time(t);
    if (z_t.size() != dim())
        throw std::invalid_argument("latent state has wrong dimension");
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(components_.size());
    for (std::size_t j = 0; j < components_.size(); ++j) {
        terms[j] = std::log(components_[j].weight) +
                   noised_component_logpdf(z_t, components_[j].mean, basis_[j], spectrum_[j], alpha,
                                           sigma2);
        best = std::max(best, terms[j]);
    }
    double acc = 0.0;
    for (double term : terms)
        acc += std::exp(term - best);
    return best + std::log(acc);
}

Vec GmmPrior::noisy_score(const VpSchedule& sched, double t, const Vec& z_t) const {
    const Vec resp = responsibilities(sched, t, z_t);
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Vec score = Vec::Zero(z_t.size());
    for (std::size_t j = 0; j < components_.size(); ++j)
        score += resp[static_cast<Eigen::Index>(j)] *
                 noised_component_score(z_t, components_[j].mean, basis_[j], spectrum_[j], alpha,
                                        sigma2);
    return score;
}

Vec GmmPrior::responsibilities(const VpSchedule& sched, double t, const Vec& z_t) const {
    sched.validate_time(t);
    if (z_t.size() != dim())
        throw std::invalid_argument("latent state has wrong dimension");
    const double alpha = sched.alpha(t);
    const double sigma2 = sched.sigma2(t);
    Vec logits(static_cast<Eigen::Index>(components_.size()));
    for (std::size_t j = 0; j < components_.size(); ++j)
        logits[static_cast<Eigen::Index>(j)] =
            std::log(components_[j].weight) +
            noised_component_logpdf(z_t, components_[j].mean, basis_[j], spectrum_[j], alpha,
                                    sigma2);
    const double best = logits.maxCoeff();
    Vec resp = (logits.array() - best).exp();
    return resp / resp.sum();
}

Vec GmmPrior::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = components_.size() - 1;
    for (std::size_t j = 0; j < components_.size(); ++j) {
        acc += components_[j].weight;
        if (u < acc) {
            pick = j;
            break;
        }
    }
    Vec eps = rng.normal_vec(dim());
    return components_[pick].mean +
           basis_[pick] * (spectrum_[pick].cwiseSqrt().asDiagonal() * eps);
}

Vec ode_flow_map(const GmmPrior& prior, const VpSchedule& sched, double t, const Vec& z_t,
                 int steps) {
    sched.validate_time(t);
    if (steps < 1)
        throw std::invalid_argument("flow integration needs at least one step");
    if (t == 0.0)
        return z_t;
    auto score = [&](double s, const Vec& z) { return prior.noisy_score(sched, s, z); };
    return integrate_flow_ode(score, sched, t, 0.0, z_t, steps);
}

GmmPrior make_bimodal_prior(double separation, double spread) {
    if (separation <= 0.0 || spread <= 0.0)
        throw std::invalid_argument("bimodal prior needs positive separation and spread");
    GmmComponent left;
    left.weight = 0.5;
    left.mean = Vec::Zero(2);
    left.mean[0] = -separation;
    left.cov = spread * spread * Mat::Identity(2, 2);
    GmmComponent right = left;
    right.mean[0] = separation;
    return GmmPrior({left, right});
}

GmmPrior exact_gmm_posterior(const GmmPrior& prior, const LinearGaussianVae& vae,
                             const LinearForwardOp& op, const Vec& y, double sigma_y) {
    if (sigma_y <= 0.0)
        throw std::invalid_argument("observation noise scale must be positive");
    if (vae.latent_dim() != prior.dim())
        throw std::invalid_argument("decoder latent dimension does not match prior");
    if (y.size() != op.output_dim())
        throw std::invalid_argument("observation length does not match forward operator");

    const Mat a_dense = op.dense();
    const Mat f = a_dense * vae.decoder_weight();
    const auto m = a_dense.rows();
    Mat s = sigma_y * sigma_y * Mat::Identity(m, m) +
            vae.sigma_dec() * vae.sigma_dec() * (a_dense * a_dense.transpose());
    Eigen::LLT<Mat> s_llt(s);
    if (s_llt.info() != Eigen::Success)
        throw NumericError("observation covariance is not positive definite");
    const Vec shifted = y - op.apply(vae.decoder_bias());
    const Mat fs_f = f.transpose() * s_llt.solve(f);

    const int d = prior.dim();
    std::vector<GmmComponent> posterior(static_cast<std::size_t>(prior.component_count()));
    Vec log_weights(prior.component_count());
    for (int j = 0; j < prior.component_count(); ++j) {
        const GmmComponent& comp = prior.component(j);
        // Evidence of this component: y ~ N(F m_j + A b, S + F Sigma_j F^T).
        Mat s_j = s + f * comp.cov * f.transpose();
        s_j = 0.5 * (s_j + s_j.transpose());
        Eigen::LLT<Mat> sj_llt(s_j);
        if (sj_llt.info() != Eigen::Success)
            throw NumericError("component evidence covariance is not positive definite");
        Vec r = shifted - f * comp.mean;
        const double logdet = 2.0 * Mat(sj_llt.matrixL()).diagonal().array().log().sum();
        log_weights[j] = std::log(comp.weight) -
                         0.5 * (static_cast<double>(m) * kLogTwoPi + logdet + r.dot(sj_llt.solve(r)));

        Eigen::LLT<Mat> cov_llt(comp.cov);
        if (cov_llt.info() != Eigen::Success)
            throw NumericError("component covariance is not positive definite");
        Mat precision = cov_llt.solve(Mat::Identity(d, d)) + fs_f;
        precision = 0.5 * (precision + precision.transpose());
        Eigen::LLT<Mat> p_llt(precision);
        if (p_llt.info() != Eigen::Success)
            throw NumericError("component posterior precision is not positive definite");
        GmmComponent& post = posterior[static_cast<std::size_t>(j)];
        post.cov = p_llt.solve(Mat::Identity(d, d));
        post.cov = 0.5 * (post.cov + post.cov.transpose());
        post.mean = p_llt.solve(cov_llt.solve(comp.mean) + f.transpose() * s_llt.solve(shifted));
    }
    const double best = log_weights.maxCoeff();
    Vec w = (log_weights.array() - best).exp();
    w /= w.sum();
    for (int j = 0; j < prior.component_count(); ++j)
        posterior[static_cast<std::size_t>(j)].weight = w[j];
    return GmmPrior(std::move(posterior));
}

GmmWorld::GmmWorld(GmmPrior prior, int flow_steps) : prior_(std::move(prior)), flow_steps_(flow_steps) {
    if (flow_steps_ < 1)
        throw std::invalid_argument("flow integration needs at least one step");
}

Vec GmmWorld::flow_map(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const {
    (void)c;
    return ode_flow_map(prior_, sched, t, z_t, flow_steps_);
}

Vec GmmWorld::noisy_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const {
    (void)c;
    return prior_.noisy_score(sched, t, z_t);
}

Vec GmmWorld::sample_prior(const Vec& c, Rng& rng) const {
    (void)c;
    return prior_.sample(rng);
}

} // namespace cwgf
