#pragma once

#include "cwgf/rng.hpp"
#include "cwgf/schedule.hpp"

namespace cwgf {

// A latent prior the solver can drive: it must transport noisy states to
// clean ones (the consistency-model role) and expose the score of its
// noised marginals. Prompt-conditioned worlds additionally expose the
// adjoint action of the score's prompt Jacobian, which is all the prompt
// gradient needs.
class PriorWorld {
public:
    virtual ~PriorWorld() = default;

    virtual int latent_dim() const = 0;

    // Dimension of the conditioning vector c; 0 for unconditioned worlds.
    virtual int prompt_dim() const = 0;

    // Clean endpoint of the probability-flow trajectory through (z_t, t).
    virtual Vec flow_map(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const = 0;

    // grad_z log of the time-t noised marginal.
    virtual Vec noisy_score(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c) const = 0;

    // (d s_theta / d c)^T residual at (z_t, t, c). Worlds without prompt
    // conditioning return a zero vector of length prompt_dim() = 0.
    virtual Vec prompt_pullback(const VpSchedule& sched, double t, const Vec& z_t, const Vec& c,
                                const Vec& residual) const {
        (void)sched;
        (void)t;
        (void)z_t;
        (void)c;
        (void)residual;
        return Vec::Zero(prompt_dim());
    }

    virtual Vec sample_prior(const Vec& c, Rng& rng) const = 0;
};

} // namespace cwgf
