#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include <cmath>
#include <vector>

#include "cwgf/errors.hpp"
#include "cwgf/gaussian.hpp"
#include "cwgf/solver.hpp"

using namespace cwgf;
using cwgf::testing::rel_err;

namespace {

struct GaussianSetup {
    GaussianPrior prior;
    LinearGaussianVae vae;
    MaskOp op;
    Vec y;
    Vec prompt0;
    Mat particles0;
};

// Identity decoder and identity observation over a d-dimensional latent with
// a prompt acting directly on the prior mean.
GaussianSetup make_setup(int d, int particles, double sigma_dec, std::uint64_t seed) {
    Rng rng(seed);
    GaussianPrior prior(Mat::Identity(d, d), Vec::Zero(d), Mat::Identity(d, d));
    LinearGaussianVae vae = LinearGaussianVae::with_optimal_encoder(
        Mat::Identity(d, d), Vec::Zero(d), sigma_dec, 1e-4);
    MaskOp op({d, 1}, std::vector<std::uint8_t>(static_cast<std::size_t>(d), 1));
    const Vec c_true = rng.normal_vec(d);
    const Vec z_true = prior.sample_prior(c_true, rng);
    const Vec y = op.apply(vae.decode(z_true)) + 0.1 * rng.normal_vec(d);
    Mat particles0(d, particles);
    for (int n = 0; n < particles; ++n)
        particles0.col(n) = prior.sample_prior(Vec::Zero(d), rng);
    return GaussianSetup{std::move(prior), std::move(vae), std::move(op), y, Vec::Zero(d),
                         particles0};
}

struct TrackingSetup {
    GaussianPrior prior;
    LinearGaussianVae vae;
    MaskOp op;
    Vec y;
    Vec c_star;
};

// Four-dimensional instance with a tight prior, a biased identity decoder and
// an observation generated through the model, so the evidence maximizer and
// the exact posterior are well separated targets.
TrackingSetup make_tracking_setup(double sigma_y, std::uint64_t seed) {
    const int d = 4;
    GaussianPrior prior(Mat::Identity(d, d), Vec::Zero(d), 0.25 * Mat::Identity(d, d));
    Vec b(d);
    b << -0.3, 0.1, 0.25, 0.4;
    LinearGaussianVae vae =
        LinearGaussianVae::with_optimal_encoder(Mat::Identity(d, d), b, 0.5, 1e-4);
    MaskOp op({d, 1}, std::vector<std::uint8_t>(static_cast<std::size_t>(d), 1));
    Rng rng(seed);
    const Vec c_true = rng.normal_vec(d);
    const Vec z_true = prior.sample_prior(c_true, rng);
    const Vec y =
        op.apply(vae.decode(z_true) + 0.5 * rng.normal_vec(d)) + sigma_y * rng.normal_vec(d);
    const Vec c_star = exact_mmle(prior, vae, op, y, sigma_y);
    return TrackingSetup{std::move(prior), std::move(vae), std::move(op), y, c_star};
}

// Moderate step sizes with a plan that stays below the noise level where the
// prompt update would overshoot on this instance.
SolverConfig tracking_config(double sigma_y, std::uint64_t seed) {
    SolverConfig config;
    config.iterations = 16;
    config.particles = 8;
    config.eta_r = 0.2;
    config.eta_l = 0.2;
    config.eta_c = 0.2;
    config.sigma_y = sigma_y;
    config.plan.mode = TimestepPlan::Mode::decreasing;
    config.plan.base_set = {430, 410, 390, 370, 350, 250, 130, 30};
    config.seed = seed;
    config.trace = true;
    return config;
}

Gaussian gaussian_fit(const Mat& particles) {
    const int d = static_cast<int>(particles.rows());
    const int n = static_cast<int>(particles.cols());
    Gaussian fit;
    fit.mean = particles.rowwise().mean();
    fit.cov = Mat::Zero(d, d);
    for (int i = 0; i < n; ++i) {
        const Vec u = particles.col(i) - fit.mean;
        fit.cov += u * u.transpose();
    }
    fit.cov /= static_cast<double>(n - 1);
    return fit;
}

// Coefficient of determination of a least-squares line through (k, values[k]).
double r_squared(const std::vector<double>& values) {
    const int n = static_cast<int>(values.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (int i = 0; i < n; ++i) {
        mean_x += i;
        mean_y += values[static_cast<std::size_t>(i)];
    }
    mean_x /= n;
    mean_y /= n;
    double cov_xy = 0.0, var_x = 0.0, var_y = 0.0;
    for (int i = 0; i < n; ++i) {
        const double dx = i - mean_x;
        const double dy = values[static_cast<std::size_t>(i)] - mean_y;
        cov_xy += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    return cov_xy * cov_xy / (var_x * var_y);
}

} // namespace

TEST_CASE("uninformative likelihood leaves the prior invariant") {
    const int d = 2, n = 64;
    GaussianSetup s = make_setup(d, n, 0.1, 1);
    Vec m0(2);
    m0 << 0.5, -0.25;
    GaussianPrior prior(Mat::Identity(d, d), m0, Mat::Identity(d, d));
    Mat particles0(d, n);
    Rng rng(2);
    for (int i = 0; i < n; ++i)
        particles0.col(i) = prior.sample_prior(Vec::Zero(d), rng);

    SolverConfig config;
    config.iterations = 16;
    config.particles = n;
    config.eta_c = 0.0;
    config.eta_l = 0.0;
    config.sigma_y = 1e6;
    config.seed = 3;

    const RunReport report =
        run_cwgf(config, s.y, s.op, prior, s.vae, Vec::Zero(d), particles0);
    const Vec mean = report.final_particles.rowwise().mean();
    for (int i = 0; i < d; ++i)
        CHECK(std::abs(mean[i] - m0[i]) <= 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("terminal state tracks the posterior mean and the prompt optimum") {
    const int d = 4, n = 8;
    const double sigma_y = 0.01;
    TrackingSetup s = make_tracking_setup(sigma_y, 1068);
    const Gaussian posterior =
        exact_latent_posterior(s.prior, s.vae, s.op, s.y, sigma_y, s.c_star);
    Rng rng(2052);

    // Well specified prompt: the ensemble mean lands on the posterior mean.
    {
        Mat particles0(d, n);
        for (int i = 0; i < n; ++i)
            particles0.col(i) = s.prior.sample_prior(s.c_star, rng);
        const RunReport report = run_cwgf(tracking_config(sigma_y, 5004), s.y, s.op, s.prior,
                                          s.vae, s.c_star, particles0);
        const Vec mean = report.final_particles.rowwise().mean();
        for (int i = 0; i < d; ++i)
            CHECK(std::abs(mean[i] - posterior.mean[i]) <=
                  0.05 * std::sqrt(posterior.cov(i, i)));
    }

    // Misspecified prompt: contraction toward the evidence maximizer, with a
    // log-linear joint decay (W2 between the Gaussian fit of the ensemble and
    // the exact posterior, plus the squared prompt error) over the opening
    // iterations.
    {
        Vec delta = rng.normal_vec(d);
        delta *= 8.0 / delta.norm();
        const Vec c0 = s.c_star + delta;
        Mat particles0(d, n);
        for (int i = 0; i < n; ++i)
            particles0.col(i) = s.prior.sample_prior(c0, rng);
        const RunReport report =
            run_cwgf(tracking_config(sigma_y, 7004), s.y, s.op, s.prior, s.vae, c0, particles0);

        CHECK((report.final_prompt - s.c_star).norm() < 0.1 * delta.norm());

        std::vector<double> log_distance;
        log_distance.push_back(std::log(gaussian_w2(gaussian_fit(particles0), posterior) +
                                        delta.squaredNorm()));
        for (std::size_t k = 0; k < 10; ++k)
            log_distance.push_back(
                std::log(gaussian_w2(gaussian_fit(report.particle_trace[k]), posterior) +
                         (report.prompt_trace[k] - s.c_star).squaredNorm()));
        CHECK(r_squared(log_distance) > 0.9);
    }
}

TEST_CASE("reruns are bit identical") {
    GaussianSetup s = make_setup(3, 8, 0.1, 6);
    SolverConfig config;
    config.iterations = 12;
    config.particles = 8;
    config.eta_r = 0.3;
    config.eta_l = 0.3;
    config.eta_c = 0.3;
    config.sigma_y = 0.05;
    config.seed = 77;
    config.trace = true;

    const RunReport a = run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);
    const RunReport b = run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);

    CHECK((a.final_particles - b.final_particles).norm() == 0.0);
    CHECK((a.final_prompt - b.final_prompt).norm() == 0.0);
    REQUIRE(a.iterations.size() == b.iterations.size());
    for (std::size_t k = 0; k < a.iterations.size(); ++k) {
        CHECK(a.iterations[k].prompt_grad_norm == b.iterations[k].prompt_grad_norm);
        CHECK((a.iterations[k].data_fit - b.iterations[k].data_fit).norm() == 0.0);
        CHECK(a.iterations[k].functional == b.iterations[k].functional);
    }
    REQUIRE(a.particle_trace.size() == b.particle_trace.size());
    for (std::size_t k = 0; k < a.particle_trace.size(); ++k)
        CHECK((a.particle_trace[k] - b.particle_trace[k]).norm() == 0.0);
}

TEST_CASE("report structure follows the plan") {
    GaussianSetup s = make_setup(2, 4, 0.1, 7);
    SolverConfig config;
    config.iterations = 16;
    config.particles = 4;
    config.eta_r = 0.2;
    config.eta_l = 0.2;
    config.eta_c = 0.0;
    config.sigma_y = 0.1;
    config.seed = 9;
    config.trace = true;

    const RunReport report =
        run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);

    TimestepPlan plan = config.plan;
    plan.iterations = config.iterations;
    const std::vector<double> times = timestep_plan(plan, config.sched);

    REQUIRE(report.iterations.size() == 16);
    CHECK(report.particle_trace.size() == 16);
    CHECK(report.prompt_trace.size() == 16);
    for (std::size_t k = 0; k < 16; ++k) {
        const IterationRecord& rec = report.iterations[k];
        CHECK(rec.k == static_cast<int>(k));
        CHECK(rec.t_k == times[k]);
        CHECK(rec.data_fit.size() == 4);
        CHECK((rec.data_fit.array() >= 0.0).all());
        CHECK(rec.pi_diag_min >= 0.0);
        CHECK(rec.pi_diag_min <= rec.pi_diag_mean);
        CHECK(rec.pi_diag_mean <= 1.0 + 1e-12);
        CHECK(rec.functional_flag == "ok");
        CHECK(std::isfinite(rec.functional));
    }
    // Kernel interactions are nearly diagonal at the smallest plan time and
    // appreciably mixed at the largest.
    double min_time = 2.0, max_time = -1.0;
    double pi_at_min = 0.0, pi_at_max = 0.0;
    for (const IterationRecord& rec : report.iterations) {
        if (rec.t_k < min_time) {
            min_time = rec.t_k;
            pi_at_min = rec.pi_diag_min;
        }
        if (rec.t_k > max_time) {
            max_time = rec.t_k;
            pi_at_max = rec.pi_diag_min;
        }
    }
    CHECK(pi_at_min > pi_at_max);
}

TEST_CASE("functional surrogate") {
    Rng rng(10);
    const int d = 2;
    GaussianPrior prior(Mat::Identity(d, d), Vec::Constant(d, 0.2), Mat::Identity(d, d) * 0.8);
    LinearGaussianVae vae = LinearGaussianVae::with_optimal_encoder(
        Mat::Identity(d, d), Vec::Zero(d), 0.15, 1e-4);
    MaskOp op({d, 1}, {1, 1});
    Vec y(2);
    y << 0.7, -0.4;
    const double sigma_y = 0.3;
    Vec c(2);
    c << 0.4, 0.1;

    SUBCASE("equals evidence plus posterior KL exactly") {
        const int n = 6;
        const Mat ens = rng.normal_mat(d, n);
        const FunctionalValue fv = functional_surrogate(prior, vae, op, y, sigma_y, ens, c);
        REQUIRE(fv.flag == "ok");

        const Vec mean = ens.rowwise().mean();
        Mat centered = ens.colwise() - mean;
        const Mat cov = centered * centered.transpose() / (n - 1.0);
        const Gaussian fit{mean, cov};
        const Gaussian posterior = exact_latent_posterior(prior, vae, op, y, sigma_y, c);

        // The change-of-measure identity KL(fit || prior) - E[log p(y|z)]
        //   = -log p_c(y) + KL(fit || posterior)
        // holds when the data term is integrated over the fitted Gaussian:
        //   E_fit[log p(y|z)] = log p(y|mean) - tr(F' S^-1 F cov) / 2
        // with F = A W and S = sigma_y^2 I + sigma_dec^2 A A'. The surrogate
        // averages over the particles instead, so the exact statement carries
        // the difference of the two data terms.
        MarginalLikelihood likelihood(vae, op, y, sigma_y);
        double data_particles = 0.0;
        for (int i = 0; i < n; ++i)
            data_particles += likelihood.log_likelihood(ens.col(i));
        data_particles /= n;

        const int m = static_cast<int>(y.size());
        Mat a_dense(m, d);
        for (int j = 0; j < d; ++j)
            a_dense.col(j) = op.apply(Vec::Unit(d, j));
        const Mat f = a_dense * vae.decoder_weight();
        const Mat s_obs = sigma_y * sigma_y * Mat::Identity(m, m) +
                          vae.sigma_dec() * vae.sigma_dec() * a_dense * a_dense.transpose();
        const double data_gaussian =
            likelihood.log_likelihood(mean) -
            0.5 * (f.transpose() * s_obs.llt().solve(f) * cov).trace();

        const double expected = -prompt_log_evidence(prior, vae, op, y, sigma_y, c) +
                                gaussian_kl(fit, posterior) + (data_gaussian - data_particles);
        CHECK(rel_err(fv.value, expected) < 1e-9);
    }

    SUBCASE("prior samples reduce it to the mean negative log likelihood") {
        const int n = 2000;
        Mat ens(d, n);
        for (int i = 0; i < n; ++i)
            ens.col(i) = prior.sample_prior(c, rng);
        const FunctionalValue fv = functional_surrogate(prior, vae, op, y, sigma_y, ens, c);
        REQUIRE(fv.flag == "ok");
        MarginalLikelihood likelihood(vae, op, y, sigma_y);
        double data_term = 0.0;
        for (int i = 0; i < n; ++i)
            data_term -= likelihood.log_likelihood(ens.col(i));
        data_term /= n;
        // The KL term is the only difference and shrinks as 1/N.
        CHECK(fv.value >= data_term - 1e-12);
        CHECK(fv.value - data_term < 0.01);
    }

    SUBCASE("posterior samples at the evidence maximizer approach the optimum") {
        const Vec c_star = exact_mmle(prior, vae, op, y, sigma_y);
        const Gaussian posterior = exact_latent_posterior(prior, vae, op, y, sigma_y, c_star);
        Eigen::LLT<Mat> llt(posterior.cov);
        const int n = 2000;
        Mat ens(d, n);
        for (int i = 0; i < n; ++i)
            ens.col(i) = posterior.mean + llt.matrixL() * rng.normal_vec(d);
        const FunctionalValue fv = functional_surrogate(prior, vae, op, y, sigma_y, ens, c_star);
        const double optimum = -prompt_log_evidence(prior, vae, op, y, sigma_y, c_star);
        CHECK(fv.value >= optimum - 1e-12);
        CHECK(fv.value - optimum < 0.01);
    }

    SUBCASE("single particle drops the fit term") {
        const Mat ens = rng.normal_mat(d, 1);
        const FunctionalValue fv = functional_surrogate(prior, vae, op, y, sigma_y, ens, c);
        CHECK(fv.flag == "na");
        MarginalLikelihood likelihood(vae, op, y, sigma_y);
        CHECK(rel_err(fv.value, -likelihood.log_likelihood(ens.col(0))) < 1e-12);
    }

    SUBCASE("duplicated particles flag the regularized fit") {
        Mat ens(d, 3);
        ens.col(0) = rng.normal_vec(d);
        ens.col(1) = ens.col(0);
        ens.col(2) = ens.col(0);
        const FunctionalValue fv = functional_surrogate(prior, vae, op, y, sigma_y, ens, c);
        CHECK(fv.flag == "regularized");
        CHECK(std::isfinite(fv.value));
    }
}

TEST_CASE("functional descends along a run") {
    const int d = 4, n = 128;
    const double sigma_y = 1.0;
    TrackingSetup s = make_tracking_setup(sigma_y, 4000);
    Rng rng(4400);
    Vec delta = rng.normal_vec(d);
    delta *= 4.0 / delta.norm();
    const Vec c0 = s.c_star + delta;
    Mat particles0(d, n);
    for (int i = 0; i < n; ++i)
        particles0.col(i) = s.prior.sample_prior(c0, rng);

    SolverConfig config = tracking_config(sigma_y, 9000);
    config.iterations = 21;
    config.particles = n;
    config.trace = false;

    const RunReport report = run_cwgf(config, s.y, s.op, s.prior, s.vae, c0, particles0);
    int down = 0, transitions = 0;
    for (std::size_t k = 1; k < report.iterations.size(); ++k) {
        if (report.iterations[k].functional_flag != "ok" ||
            report.iterations[k - 1].functional_flag != "ok")
            continue;
        ++transitions;
        down += report.iterations[k].functional <= report.iterations[k - 1].functional ? 1 : 0;
    }
    CHECK(transitions >= 10);
    CHECK(down >= (9 * transitions) / 10);
    // And the run ends far below where it started.
    CHECK(report.iterations.back().functional < report.iterations.front().functional);
}

TEST_CASE("configuration validation") {
    GaussianSetup s = make_setup(2, 4, 0.1, 13);
    SolverConfig config;
    config.iterations = 8;
    config.particles = 4;

    SUBCASE("iteration and particle counts") {
        SolverConfig bad = config;
        bad.iterations = 0;
        CHECK_THROWS_AS(run_cwgf(bad, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0),
                        ConfigError);
        bad = config;
        bad.particles = 0;
        CHECK_THROWS_AS(run_cwgf(bad, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0),
                        ConfigError);
    }
    SUBCASE("step sizes") {
        SolverConfig bad = config;
        bad.eta_r = -0.1;
        CHECK_THROWS_AS(run_cwgf(bad, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0),
                        ConfigError);
        bad = config;
        bad.eta_r = 1.5;
        CHECK_THROWS_AS(run_cwgf(bad, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0),
                        ConfigError);
        bad = config;
        bad.sigma_y = 0.0;
        CHECK_THROWS_AS(run_cwgf(bad, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0),
                        ConfigError);
    }
    SUBCASE("shape mismatches") {
        CHECK_THROWS_AS(
            run_cwgf(config, Vec::Zero(3), s.op, s.prior, s.vae, s.prompt0, s.particles0),
            ConfigError);
        CHECK_THROWS_AS(
            run_cwgf(config, s.y, s.op, s.prior, s.vae, Vec::Zero(5), s.particles0), ConfigError);
        CHECK_THROWS_AS(
            run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, Mat::Zero(2, 3)), ConfigError);
    }
}

TEST_CASE("numeric aborts carry the iteration index") {
    GaussianSetup s = make_setup(2, 4, 0.1, 14);
    SolverConfig config;
    config.iterations = 8;
    config.particles = 4;
    config.eta_l = 1e100;
    config.sigma_y = 0.01;

    try {
        run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);
        FAIL("expected a numeric abort");
    } catch (const NumericError& err) {
        CHECK(err.iteration() >= 0);
        CHECK(std::string(err.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("prior rate rescaling stays bounded") {
    GaussianSetup s = make_setup(2, 8, 0.1, 15);
    SolverConfig config;
    config.iterations = 16;
    config.particles = 8;
    config.eta_r = 0.2;
    config.eta_l = 0.2;
    config.eta_c = 0.0;
    config.sigma_y = 0.1;
    config.seed = 16;
    config.rescale_prior_rate = true;

    const RunReport report =
        run_cwgf(config, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);
    CHECK(report.final_particles.allFinite());
    CHECK(report.iterations.size() == 16);

    // The rescaled run differs from the plain one.
    SolverConfig plain = config;
    plain.rescale_prior_rate = false;
    const RunReport base =
        run_cwgf(plain, s.y, s.op, s.prior, s.vae, s.prompt0, s.particles0);
    CHECK((report.final_particles - base.final_particles).norm() > 0.0);
}
