#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cwgf/config.hpp"
#include "cwgf/gaussian.hpp"
#include "cwgf/gmm.hpp"
#include "cwgf/oracles.hpp"
#include "cwgf/solver.hpp"

namespace cwgf {

// A fully constructed problem instance: operator, prior world, autoencoder,
// synthetic ground truth and observation, and the solver settings. Every
// piece is deterministic from the config plus its seed; independent RNG
// streams are derived per role so changing one ingredient does not shift
// the draws of another.
struct Experiment {
    std::string kind; // "gaussian", "gmm_inpaint", or "ablation"
    std::uint64_t seed = 0;

    std::unique_ptr<LinearForwardOp> op;
    std::unique_ptr<GaussianPrior> gaussian; // set for gaussian-flavoured kinds
    std::unique_ptr<GmmWorld> gmm;           // set for gmm_inpaint
    std::unique_ptr<LinearGaussianVae> vae;

    SolverConfig solver;
    Vec prompt_init;
    Vec prompt_true; // empty when the world has no prompt
    Vec z_true;
    Vec x_true;
    Vec y;
    Mat particles0;

    // gmm_inpaint only
    std::string gmm_mode = "joint"; // "joint" or "independent"
    int independent_runs = 256;

    const PriorWorld& world() const;
};

// Builds the experiment from a parsed config, consuming its keys. Remaining
// unknown keys are the caller's to reject via config.require_consumed().
Experiment build_experiment(Config& config);

// Runs one experiment and writes report.csv, summary.txt and, for 2-D pixel
// grids, PGM images into out_dir. Returns the summary key-value lines.
std::vector<std::pair<std::string, std::string>> run_experiment(Experiment& experiment,
                                                                const std::string& out_dir);

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    bool trace = false;
    std::string sweep_key;                 // dotted section.key
    std::vector<std::string> sweep_values; // one run per value
};

// Full CLI behaviour behind a testable interface: 0 on success, 2 on config
// errors (with line/field diagnostics on stderr), 3 on numeric aborts (with
// the iteration index). Sweeps fan out across at most CWGF_THREADS workers.
int run_cli(const CliOptions& options);

// Brute-force posterior oracles on a regular grid (latent dimension <= 2).
GridDensity grid_posterior(const GaussianPrior& prior, const Vec& c, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& lo,
                           const Vec& hi, int cells_per_dim);
GridDensity grid_posterior(const GmmPrior& prior, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& lo,
                           const Vec& hi, int cells_per_dim);

// Label of the mixture component with the highest clean responsibility.
int component_label(const GmmPrior& prior, const Vec& z);

} // namespace cwgf
