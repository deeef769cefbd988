#pragma once

#include <vector>

#include "cwgf/linear_ops.hpp"
#include "cwgf/vae.hpp"
#include "cwgf/world.hpp"

namespace cwgf {

struct GmmComponent {
    double weight = 0.0;
    Vec mean;
    Mat cov;
};

// Finite Gaussian mixture prior. Noising a mixture keeps it a mixture, so
// scores and densities of every time slice stay closed form; only the flow
// map needs numerical integration.
class GmmPrior {
public:
    explicit GmmPrior(std::vector<GmmComponent> components);

    int dim() const { return static_cast<int>(components_[0].mean.size()); }
    int component_count() const { return static_cast<int>(components_.size()); }
    const GmmComponent& component(int j) const { return components_.at(static_cast<std::size_t>(j)); }

    double clean_logpdf(const Vec& z) const;
    Vec clean_score(const Vec& z) const;

    double noisy_logpdf(const VpSchedule& sched, double t, const Vec& z_t) const;
    Vec noisy_score(const VpSchedule& sched, double t, const Vec& z_t) const;

    // Posterior component probabilities at a point of the time-t marginal.
    Vec responsibilities(const VpSchedule& sched, double t, const Vec& z_t) const;

    Vec sample(Rng& rng) const;

private:
    std::vector<GmmComponent> components_;
    std::vector<Mat> basis_;   // eigenvectors per component
    std::vector<Vec> spectrum_; // eigenvalues per component
};

// Probability-flow transport from (z_t, t) to time zero by classical RK4 on
// dz/ds = -(beta_s / 2) (z + score_s(z)).
Vec ode_flow_map(const GmmPrior& prior, const VpSchedule& sched, double t, const Vec& z_t,
                 int steps = 200);

// Two well separated isotropic modes on the first axis: means (+-sep, 0),
// covariance spread^2 I, equal weights.
GmmPrior make_bimodal_prior(double separation = 2.0, double spread = 0.3);

// Exact latent posterior under y = A (W z + b) + noise: a Gaussian mixture
// with reweighted components.
GmmPrior exact_gmm_posterior(const GmmPrior& prior, const LinearGaussianVae& vae,
                             const LinearForwardOp& op, const Vec& y, double sigma_y);

// Solver-facing adapter. The flow map is the RK4 transport above; there is
// no prompt conditioning.
class GmmWorld : public PriorWorld {
public:
    explicit GmmWorld(GmmPrior prior, int flow_steps = 200);

    int latent_dim() const override { return prior_.dim(); }
    int prompt_dim() const override { return 0; }
    const GmmPrior& prior() const { return prior_; }

    Vec flow_map(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const override;
    Vec noisy_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const override;
    Vec sample_prior(const Vec& c, Rng& rng) const override;

private:
    GmmPrior prior_;
    int flow_steps_;
};

} // namespace cwgf
