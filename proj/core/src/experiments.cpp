#include "cwgf/experiments.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "cwgf/errors.hpp"
#include "cwgf/report_io.hpp"

namespace fs = std::filesystem;

namespace cwgf {

namespace {

// Fixed RNG stream ids; every random ingredient draws from its own child
// stream of the experiment seed.
constexpr std::uint64_t kStreamTruthLatent = 0;
constexpr std::uint64_t kStreamDecoderNoise = 1;
constexpr std::uint64_t kStreamObservationNoise = 2;
constexpr std::uint64_t kStreamDecoderWeight = 3;
constexpr std::uint64_t kStreamDecoderBias = 4;
constexpr std::uint64_t kStreamPromptMatrix = 5;
constexpr std::uint64_t kStreamPriorBasis = 6;
constexpr std::uint64_t kStreamOperator = 7;
constexpr std::uint64_t kStreamInitParticles = 8;
constexpr std::uint64_t kStreamSolver = 9;
constexpr std::uint64_t kStreamPlan = 10;
// independent gmm runs use kStreamIndependentBase + run and + run + runs
constexpr std::uint64_t kStreamIndependentBase = 1000;

Vec to_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat random_orthonormal(int d, Rng& rng) {
    Mat g = rng.normal_mat(d, d);
    Eigen::HouseholderQR<Mat> qr(g);
    return qr.householderQ() * Mat::Identity(d, d);
}

Mat build_prior_covariance(Config& config, int d, std::uint64_t seed) {
    const std::string mode = config.get_string("prior", "covariance", "identity");
    if (mode == "identity")
        return Mat::Identity(d, d);
    if (mode == "diag") {
        const std::vector<double> diag = config.get_double_list("prior", "diag");
        if (static_cast<int>(diag.size()) != d)
            throw ConfigError("prior.diag length must equal prior.latent_dim");
        for (double v : diag)
            if (v <= 0.0)
                throw ConfigError("prior.diag entries must be positive");
        return to_vec(diag).asDiagonal();
    }
    if (mode == "random_spd") {
        const double lo = config.get_double("prior", "lambda_min", 0.5);
        const double hi = config.get_double("prior", "lambda_max", 2.0);
        if (lo <= 0.0 || hi < lo)
            throw ConfigError("prior spectrum bounds need 0 < lambda_min <= lambda_max");
        Rng rng(Rng::derive_seed(seed, kStreamPriorBasis));
        Mat q = random_orthonormal(d, rng);
        Vec spectrum(d);
        for (int i = 0; i < d; ++i)
            spectrum[i] = d == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (d - 1);
        return q * spectrum.asDiagonal() * q.transpose();
    }
    throw ConfigError("unknown prior.covariance mode '" + mode + "'");
}

Mat build_prompt_matrix(Config& config, int d, int prompt_dim, std::uint64_t seed) {
    const std::string mode = config.get_string("prior", "prompt_matrix", "identity");
    if (mode == "identity") {
        if (prompt_dim != d)
            throw ConfigError("prior.prompt_matrix = identity needs prompt_dim == latent_dim");
        return Mat::Identity(d, d);
    }
    if (mode == "random") {
        Rng rng(Rng::derive_seed(seed, kStreamPromptMatrix));
        return rng.normal_mat(d, prompt_dim) / std::sqrt(static_cast<double>(prompt_dim));
    }
    throw ConfigError("unknown prior.prompt_matrix mode '" + mode + "'");
}

Mat build_decoder_weight(Config& config, int pixel_dim, int d, std::uint64_t seed) {
    const std::string mode = config.get_string("vae", "weight", "identity");
    if (mode == "identity") {
        if (pixel_dim != d)
            throw ConfigError("vae.weight = identity needs pixel_dim == latent_dim");
        return Mat::Identity(d, d);
    }
    if (mode == "random") {
        Rng rng(Rng::derive_seed(seed, kStreamDecoderWeight));
        return rng.normal_mat(pixel_dim, d) / std::sqrt(static_cast<double>(d));
    }
    throw ConfigError("unknown vae.weight mode '" + mode + "'");
}

Vec build_decoder_bias(Config& config, int pixel_dim, std::uint64_t seed) {
    const std::string mode = config.get_string("vae", "bias", "zeros");
    if (mode == "zeros")
        return Vec::Zero(pixel_dim);
    if (mode == "constant")
        return Vec::Constant(pixel_dim, config.get_double("vae", "bias_value", 0.5));
    if (mode == "random") {
        Rng rng(Rng::derive_seed(seed, kStreamDecoderBias));
        return Vec::Constant(pixel_dim, 0.5) + 0.1 * rng.normal_vec(pixel_dim);
    }
    throw ConfigError("unknown vae.bias mode '" + mode + "'");
}

Mat gaussian_kernel(int rows, int cols, double sigma) {
    Mat k(rows, cols);
    const int cr = rows / 2;
    const int cc = cols / 2;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            const double di = i - cr;
            const double dj = j - cc;
            k(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
        }
    return k / k.sum();
}

std::unique_ptr<LinearForwardOp> build_operator(Config& config, const GridShape& grid,
                                                std::uint64_t seed,
                                                const std::string& default_kind) {
    const std::string kind = config.get_string("operator", "kind", default_kind);
    if (kind == "identity") {
        return std::make_unique<MaskOp>(grid,
                                        std::vector<std::uint8_t>(static_cast<std::size_t>(grid.size()), 1));
    }
    if (kind == "mask") {
        std::vector<std::uint8_t> keep;
        if (config.has("operator", "keep")) {
            for (int v : config.get_int_list("operator", "keep", {})) {
                if (v != 0 && v != 1)
                    throw ConfigError("operator.keep entries must be 0 or 1");
                keep.push_back(static_cast<std::uint8_t>(v));
            }
            if (static_cast<int>(keep.size()) != grid.size())
                throw ConfigError("operator.keep length must equal the pixel count");
        } else {
            const double fraction = config.get_double("operator", "keep_fraction", 0.5);
            if (fraction <= 0.0 || fraction > 1.0)
                throw ConfigError("operator.keep_fraction must lie in (0, 1]");
            Rng rng(Rng::derive_seed(seed, kStreamOperator));
            keep.resize(static_cast<std::size_t>(grid.size()));
            for (auto& bit : keep)
                bit = rng.uniform() < fraction ? 1 : 0;
        }
        if (std::find(keep.begin(), keep.end(), std::uint8_t{1}) == keep.end())
            throw ConfigError("operator.keep masks out every pixel");
        return std::make_unique<MaskOp>(grid, std::move(keep));
    }
    if (kind == "conv") {
        const int krows = config.get_int("operator", "kernel_rows", 5);
        const int kcols = config.get_int("operator", "kernel_cols", grid.cols > 1 ? 5 : 1);
        const double ksigma = config.get_double("operator", "kernel_sigma", 1.0);
        if (krows < 1 || kcols < 1 || krows % 2 == 0 || kcols % 2 == 0)
            throw ConfigError("conv kernel extents must be odd and positive");
        if (ksigma <= 0.0)
            throw ConfigError("operator.kernel_sigma must be positive");
        return std::make_unique<CircularConvOp>(grid, gaussian_kernel(krows, kcols, ksigma));
    }
    if (kind == "downsample") {
        const int factor = config.get_int("operator", "factor", 2);
        return std::make_unique<DownsampleOp>(grid, factor);
    }
    if (kind == "dense") {
        const int rows = config.get_int("operator", "rows", grid.size());
        if (rows < 1)
            throw ConfigError("operator.rows must be positive");
        Rng rng(Rng::derive_seed(seed, kStreamOperator));
        Mat a = rng.normal_mat(rows, grid.size()) / std::sqrt(static_cast<double>(grid.size()));
        return std::make_unique<DenseOp>(std::move(a), grid, GridShape{rows, 1});
    }
    throw ConfigError("unknown operator.kind '" + kind + "'");
}

SolverConfig build_solver_config(Config& config, std::uint64_t seed) {
    SolverConfig solver;
    solver.iterations = config.get_int("solver", "iterations", 16);
    solver.particles = config.get_int("solver", "particles", 8);
    solver.eta_r = config.get_double("solver", "eta_r", 1.0);
    solver.eta_l = config.get_double("solver", "eta_l", 1.0);
    solver.eta_c = config.get_double("solver", "eta_c", 1.0);
    solver.sigma_y = config.get_double("solver", "sigma_y", 0.01);
    solver.prompt_radius = config.get_double("solver", "prompt_radius", 15.0);
    solver.trace = config.get_bool("solver", "trace", false);
    solver.rescale_prior_rate = config.get_bool("solver", "rescale_prior_rate", false);
    solver.seed = Rng::derive_seed(seed, kStreamSolver);

    solver.sched.beta_min = config.get_double("schedule", "beta_min", 0.1);
    solver.sched.beta_max = config.get_double("schedule", "beta_max", 20.0);
    solver.sched.t_max = config.get_double("schedule", "t_max", 1.0);

    const std::string mode = config.get_string("plan", "mode", "cyclic");
    if (mode == "cyclic")
        solver.plan.mode = TimestepPlan::Mode::cyclic;
    else if (mode == "decreasing")
        solver.plan.mode = TimestepPlan::Mode::decreasing;
    else if (mode == "uniform")
        solver.plan.mode = TimestepPlan::Mode::uniform;
    else
        throw ConfigError("unknown plan.mode '" + mode + "'");
    solver.plan.base_set = config.get_int_list("plan", "base_set", solver.plan.base_set);
    solver.plan.rng_seed = Rng::derive_seed(seed, kStreamPlan);
    solver.plan.iterations = solver.iterations;

    solver.weights.w_floor = config.get_double("weights", "floor", 0.1);
    solver.weights.w_slope = config.get_double("weights", "slope", 0.8);
    return solver;
}

void synthesize_observation(Experiment& exp) {
    const PriorWorld& world = exp.world();
    Rng truth_rng(Rng::derive_seed(exp.seed, kStreamTruthLatent));
    exp.z_true = world.sample_prior(exp.prompt_true, truth_rng);

    Rng dec_rng(Rng::derive_seed(exp.seed, kStreamDecoderNoise));
    exp.x_true = exp.vae->decode(exp.z_true) +
                 exp.vae->sigma_dec() * dec_rng.normal_vec(exp.vae->pixel_dim());

    Rng obs_rng(Rng::derive_seed(exp.seed, kStreamObservationNoise));
    exp.y = exp.op->apply(exp.x_true) + exp.solver.sigma_y * obs_rng.normal_vec(exp.op->output_dim());

    Rng init_rng(Rng::derive_seed(exp.seed, kStreamInitParticles));
    exp.particles0.resize(world.latent_dim(), exp.solver.particles);
    for (int n = 0; n < exp.solver.particles; ++n)
        exp.particles0.col(n) = world.sample_prior(exp.prompt_init, init_rng);
}

Experiment build_gaussian_experiment(Config& config, Experiment exp) {
    const int d = config.get_int("prior", "latent_dim", 4);
    if (d < 1)
        throw ConfigError("prior.latent_dim must be positive");
    const int prompt_dim = config.get_int("prior", "prompt_dim", d);
    if (prompt_dim < 1)
        throw ConfigError("prior.prompt_dim must be positive");

    Mat sigma = build_prior_covariance(config, d, exp.seed);
    Mat b = build_prompt_matrix(config, d, prompt_dim, exp.seed);
    Vec m0 = Vec::Zero(d);
    if (config.has("prior", "base_mean")) {
        const std::vector<double> m = config.get_double_list("prior", "base_mean");
        if (static_cast<int>(m.size()) != d)
            throw ConfigError("prior.base_mean length must equal prior.latent_dim");
        m0 = to_vec(m);
    }
    exp.gaussian = std::make_unique<GaussianPrior>(std::move(b), std::move(m0), std::move(sigma));

    const int rows = config.get_int("vae", "rows", d);
    const int cols = config.get_int("vae", "cols", 1);
    if (rows < 1 || cols < 1)
        throw ConfigError("vae grid extents must be positive");
    const GridShape grid{rows, cols};
    const double sigma_dec = config.get_double("vae", "sigma_dec", 0.1);
    const double lambda = config.get_double("vae", "lambda", 1e-4);
    exp.vae = std::make_unique<LinearGaussianVae>(LinearGaussianVae::with_optimal_encoder(
        build_decoder_weight(config, grid.size(), d, exp.seed),
        build_decoder_bias(config, grid.size(), exp.seed), sigma_dec, lambda));

    exp.op = build_operator(config, grid, exp.seed, "identity");

    std::vector<double> true_default(static_cast<std::size_t>(prompt_dim));
    for (int i = 0; i < prompt_dim; ++i)
        true_default[static_cast<std::size_t>(i)] = i % 2 == 0 ? 1.5 : -1.0;
    exp.prompt_true = to_vec(config.get_double_list("prior", "prompt_true", true_default));
    exp.prompt_init = to_vec(config.get_double_list(
        "prior", "prompt_init", std::vector<double>(static_cast<std::size_t>(prompt_dim), 0.0)));
    if (exp.prompt_true.size() != prompt_dim || exp.prompt_init.size() != prompt_dim)
        throw ConfigError("prompt vectors must have length prior.prompt_dim");

    synthesize_observation(exp);
    return exp;
}

Experiment build_gmm_experiment(Config& config, Experiment exp) {
    const double separation = config.get_double("gmm", "separation", 2.0);
    const double spread = config.get_double("gmm", "spread", 0.3);
    const int flow_steps = config.get_int("gmm", "flow_steps", 200);
    exp.gmm_mode = config.get_string("gmm", "mode", "joint");
    if (exp.gmm_mode != "joint" && exp.gmm_mode != "independent")
        throw ConfigError("gmm.mode must be 'joint' or 'independent'");
    exp.independent_runs = config.get_int("gmm", "runs", 256);
    if (exp.independent_runs < 1)
        throw ConfigError("gmm.runs must be positive");
    exp.gmm = std::make_unique<GmmWorld>(make_bimodal_prior(separation, spread), flow_steps);

    const GridShape grid{2, 1};
    const double sigma_dec = config.get_double("vae", "sigma_dec", 0.1);
    const double lambda = config.get_double("vae", "lambda", 1e-4);
    exp.vae = std::make_unique<LinearGaussianVae>(
        LinearGaussianVae::with_optimal_encoder(Mat::Identity(2, 2), Vec::Zero(2), sigma_dec, lambda));

    // Default observation: the separated (first) coordinate is masked out.
    if (!config.has("operator", "kind") && !config.has("operator", "keep"))
        config.override_value("operator.keep", "0,1");
    exp.op = build_operator(config, grid, exp.seed, "mask");

    exp.prompt_true = Vec::Zero(0);
    exp.prompt_init = Vec::Zero(0);
    synthesize_observation(exp);
    return exp;
}

std::string summary_text(const std::vector<std::pair<std::string, std::string>>& lines) {
    std::string out;
    for (const auto& [key, value] : lines)
        out += key + " = " + value + "\n";
    return out;
}

bool is_image_grid(const GridShape& shape) { return shape.rows > 1 && shape.cols > 1; }

void write_images(const Experiment& exp, const RunReport& report, const std::string& out_dir) {
    if (is_image_grid(exp.op->input_shape())) {
        Vec x_hat = Vec::Zero(exp.vae->pixel_dim());
        for (Eigen::Index n = 0; n < report.final_particles.cols(); ++n)
            x_hat += exp.vae->decode(report.final_particles.col(n));
        x_hat /= static_cast<double>(report.final_particles.cols());
        write_pgm(out_dir + "/truth.pgm", exp.op->input_shape(), exp.x_true);
        write_pgm(out_dir + "/recon.pgm", exp.op->input_shape(), x_hat);
    }
    if (is_image_grid(exp.op->output_shape()))
        write_pgm(out_dir + "/observed.pgm", exp.op->output_shape(), exp.y);
}

void write_trace(const RunReport& report, const std::string& out_dir) {
    for (std::size_t k = 0; k < report.particle_trace.size(); ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "/trace_particles_%03zu.csv", k);
        write_particles_csv(out_dir + name, report.particle_trace[k]);
    }
    if (!report.prompt_trace.empty()) {
        std::vector<std::string> header{"k"};
        for (Eigen::Index i = 0; i < report.prompt_trace.front().size(); ++i)
            header.push_back("c" + std::to_string(i));
        std::vector<std::vector<std::string>> rows;
        for (std::size_t k = 0; k < report.prompt_trace.size(); ++k) {
            std::vector<std::string> row{std::to_string(k)};
            for (Eigen::Index i = 0; i < report.prompt_trace[k].size(); ++i)
                row.push_back(format_double(report.prompt_trace[k][i]));
            rows.push_back(std::move(row));
        }
        write_csv(out_dir + "/trace_prompt.csv", header, rows);
    }
}

std::vector<std::pair<std::string, std::string>> run_single_solve(const Experiment& exp,
                                                                  const std::string& out_dir,
                                                                  RunReport* report_out = nullptr) {
    RunReport report = run_cwgf(exp.solver, exp.y, *exp.op, exp.world(), *exp.vae, exp.prompt_init,
                                exp.particles0);
    write_run_report_csv(out_dir + "/report.csv", report);
    write_particles_csv(out_dir + "/final_particles.csv", report.final_particles);
    if (exp.solver.trace)
        write_trace(report, out_dir);
    write_images(exp, report, out_dir);

    Vec x_hat = Vec::Zero(exp.vae->pixel_dim());
    for (Eigen::Index n = 0; n < report.final_particles.cols(); ++n)
        x_hat += exp.vae->decode(report.final_particles.col(n));
    x_hat /= static_cast<double>(report.final_particles.cols());
    const Metrics image_metrics = metrics(x_hat, exp.x_true);
    const IterationRecord& last = report.iterations.back();

    std::vector<std::pair<std::string, std::string>> lines;
    lines.emplace_back("kind", exp.kind);
    lines.emplace_back("iterations", std::to_string(exp.solver.iterations));
    lines.emplace_back("particles", std::to_string(exp.solver.particles));
    lines.emplace_back("mse", format_double(image_metrics.mse));
    lines.emplace_back("psnr_db", format_double(image_metrics.psnr_db));
    lines.emplace_back("data_fit_mean", format_double(last.data_fit.mean()));
    lines.emplace_back("functional", format_double(last.functional));
    lines.emplace_back("functional_flag", last.functional_flag);

    if (exp.gaussian && exp.gaussian->prompt_dim() > 0) {
        lines.emplace_back("prompt_grad_norm", format_double(last.prompt_grad_norm));
        try {
            const Vec c_star = exact_mmle(*exp.gaussian, *exp.vae, *exp.op, exp.y, exp.solver.sigma_y);
            lines.emplace_back("prompt_gap_initial", format_double((exp.prompt_init - c_star).norm()));
            lines.emplace_back("prompt_gap_final",
                               format_double((report.final_prompt - c_star).norm()));
        } catch (const ConfigError&) {
            lines.emplace_back("prompt_gap_initial", "n/a");
            lines.emplace_back("prompt_gap_final", "n/a");
        }
    }
    if (report_out != nullptr)
        *report_out = std::move(report);
    return lines;
}

std::vector<std::pair<std::string, std::string>> run_gmm_independent(const Experiment& exp,
                                                                     const std::string& out_dir) {
    const GmmPrior& prior = exp.gmm->prior();
    std::vector<int> labels(static_cast<std::size_t>(exp.independent_runs));
    Vec unobserved_terminals(exp.independent_runs);
    double data_fit_acc = 0.0;
    Vec x_hat = Vec::Zero(exp.vae->pixel_dim());

    std::vector<std::vector<std::string>> run_rows;
    for (int run = 0; run < exp.independent_runs; ++run) {
        SolverConfig solo = exp.solver;
        solo.particles = 1;
        solo.seed = Rng::derive_seed(exp.seed, kStreamIndependentBase + static_cast<std::uint64_t>(run));
        Rng init_rng(Rng::derive_seed(
            exp.seed, kStreamIndependentBase + static_cast<std::uint64_t>(exp.independent_runs + run)));
        Mat start = exp.world().sample_prior(exp.prompt_init, init_rng);

        RunReport report =
            run_cwgf(solo, exp.y, *exp.op, exp.world(), *exp.vae, exp.prompt_init, start);
        const Vec z = report.final_particles.col(0);
        labels[static_cast<std::size_t>(run)] = component_label(prior, z);
        unobserved_terminals[run] = z[0];
        data_fit_acc += report.iterations.back().data_fit.mean();
        x_hat += exp.vae->decode(z);

        std::vector<std::string> row{std::to_string(run)};
        for (Eigen::Index i = 0; i < z.size(); ++i)
            row.push_back(format_double(z[i]));
        row.push_back(std::to_string(labels[static_cast<std::size_t>(run)]));
        row.push_back(format_double(report.iterations.back().data_fit.mean()));
        run_rows.push_back(std::move(row));
    }
    x_hat /= static_cast<double>(exp.independent_runs);

    std::vector<std::string> run_header{"run"};
    for (int i = 0; i < exp.world().latent_dim(); ++i)
        run_header.push_back("z" + std::to_string(i));
    run_header.push_back("component");
    run_header.push_back("data_fit");
    write_csv(out_dir + "/runs.csv", run_header, run_rows);

    std::vector<std::vector<std::string>> hist_rows;
    for (int j = 0; j < prior.component_count(); ++j) {
        const long count = std::count(labels.begin(), labels.end(), j);
        hist_rows.push_back({std::to_string(j), std::to_string(count)});
    }
    write_csv(out_dir + "/histogram.csv", {"component", "count"}, hist_rows);

    const Metrics image_metrics = metrics(x_hat, exp.x_true);
    const double mean = unobserved_terminals.mean();
    const double var = exp.independent_runs > 1
                           ? (unobserved_terminals.array() - mean).square().sum() /
                                 static_cast<double>(exp.independent_runs - 1)
                           : 0.0;

    std::vector<std::pair<std::string, std::string>> lines;
    lines.emplace_back("kind", exp.kind);
    lines.emplace_back("mode", "independent");
    lines.emplace_back("runs", std::to_string(exp.independent_runs));
    lines.emplace_back("mse", format_double(image_metrics.mse));
    lines.emplace_back("psnr_db", format_double(image_metrics.psnr_db));
    lines.emplace_back("data_fit_mean",
                       format_double(data_fit_acc / static_cast<double>(exp.independent_runs)));
    lines.emplace_back("functional", "nan");
    lines.emplace_back("functional_flag", "na");
    lines.emplace_back("unobserved_axis_variance", format_double(var));
    for (int j = 0; j < prior.component_count(); ++j) {
        const long count = std::count(labels.begin(), labels.end(), j);
        lines.emplace_back("component_" + std::to_string(j) + "_count", std::to_string(count));
    }
    return lines;
}

std::vector<std::pair<std::string, std::string>> run_gmm_joint(const Experiment& exp,
                                                               const std::string& out_dir) {
    RunReport report;
    auto lines = run_single_solve(exp, out_dir, &report);
    lines.emplace_back("mode", "joint");

    // Histogram over terminal component labels plus the unobserved-axis spread.
    const GmmPrior& prior = exp.gmm->prior();
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(report.final_particles.cols()));
    for (Eigen::Index n = 0; n < report.final_particles.cols(); ++n)
        labels.push_back(component_label(prior, report.final_particles.col(n)));
    std::vector<std::vector<std::string>> hist_rows;
    for (int j = 0; j < prior.component_count(); ++j) {
        const long count = std::count(labels.begin(), labels.end(), j);
        hist_rows.push_back({std::to_string(j), std::to_string(count)});
        lines.emplace_back("component_" + std::to_string(j) + "_count", std::to_string(count));
    }
    write_csv(out_dir + "/histogram.csv", {"component", "count"}, hist_rows);

    Vec axis = report.final_particles.row(0).transpose();
    const double mean = axis.mean();
    const double var = axis.size() > 1
                           ? (axis.array() - mean).square().sum() / static_cast<double>(axis.size() - 1)
                           : 0.0;
    lines.emplace_back("unobserved_axis_variance", format_double(var));
    return lines;
}

int thread_budget() {
    const char* env = std::getenv("CWGF_THREADS");
    if (env == nullptr)
        return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
        return 1;
    return static_cast<int>(std::min(v, 64L));
}

std::string sanitize_for_path(const std::string& raw) {
    std::string out;
    for (char ch : raw)
        out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-') ? ch : '_';
    return out;
}

std::vector<std::pair<std::string, std::string>> execute_run(
    const CliOptions& options, const std::vector<std::pair<std::string, std::string>>& overrides,
    const std::string& out_dir) {
    Config config = Config::parse_file(options.config_path);
    if (options.seed)
        config.override_value("experiment.seed", std::to_string(*options.seed));
    if (options.trace)
        config.override_value("solver.trace", "true");
    for (const auto& [key, value] : overrides)
        config.override_value(key, value);

    Experiment exp = build_experiment(config);
    config.require_consumed();
    return run_experiment(exp, out_dir);
}

} // namespace

const PriorWorld& Experiment::world() const {
    if (gaussian)
        return *gaussian;
    if (gmm)
        return *gmm;
    throw std::logic_error("experiment has no prior world");
}

Experiment build_experiment(Config& config) {
    Experiment exp;
    exp.kind = config.get_string("experiment", "kind");
    exp.seed = config.get_uint64("experiment", "seed", 1);
    exp.solver = build_solver_config(config, exp.seed);
    if (exp.kind == "gaussian" || exp.kind == "ablation")
        return build_gaussian_experiment(config, std::move(exp));
    if (exp.kind == "gmm_inpaint")
        return build_gmm_experiment(config, std::move(exp));
    throw ConfigError("unknown experiment.kind '" + exp.kind + "'");
}

std::vector<std::pair<std::string, std::string>> run_experiment(Experiment& exp,
                                                                const std::string& out_dir) {
    fs::create_directories(out_dir);

    std::vector<std::pair<std::string, std::string>> lines;
    if (exp.kind == "gaussian") {
        lines = run_single_solve(exp, out_dir);
    } else if (exp.kind == "ablation") {
        // One full run per timestep strategy, each in its own directory.
        const std::pair<TimestepPlan::Mode, const char*> modes[] = {
            {TimestepPlan::Mode::cyclic, "cyclic"},
            {TimestepPlan::Mode::decreasing, "decreasing"},
            {TimestepPlan::Mode::uniform, "uniform"},
        };
        std::vector<std::vector<std::string>> rows;
        for (const auto& [mode, name] : modes) {
            exp.solver.plan.mode = mode;
            const std::string sub = out_dir + "/timestep_" + name;
            fs::create_directories(sub);
            auto sub_lines = run_single_solve(exp, sub);
            std::map<std::string, std::string> m(sub_lines.begin(), sub_lines.end());
            rows.push_back({name, m["mse"], m["psnr_db"], m["data_fit_mean"], m["functional"]});
            for (const auto& [key, value] : sub_lines)
                lines.emplace_back(std::string(name) + "." + key, value);
        }
        write_csv(out_dir + "/ablation.csv",
                  {"plan_mode", "mse", "psnr_db", "data_fit_mean", "functional"}, rows);
        lines.emplace_back("kind", exp.kind);
    } else if (exp.kind == "gmm_inpaint") {
        lines = exp.gmm_mode == "joint" ? run_gmm_joint(exp, out_dir)
                                        : run_gmm_independent(exp, out_dir);
    } else {
        throw ConfigError("unknown experiment.kind '" + exp.kind + "'");
    }

    write_text(out_dir + "/summary.txt", summary_text(lines));
    return lines;
}

int run_cli(const CliOptions& options) {
    try {
        if (options.sweep_key.empty()) {
            execute_run(options, {}, options.out_dir);
            return 0;
        }

        if (options.sweep_values.empty())
            throw ConfigError("sweep needs at least one value");
        const int workers =
            std::min<int>(thread_budget(), static_cast<int>(options.sweep_values.size()));

        struct SweepSlot {
            std::vector<std::pair<std::string, std::string>> summary;
            std::string error;
            int code = 0;
        };
        std::vector<SweepSlot> slots(options.sweep_values.size());
        std::atomic<std::size_t> next{0};

        auto work = [&]() {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= options.sweep_values.size())
                    return;
                const std::string& value = options.sweep_values[i];
                const std::string sub = options.out_dir + "/" +
                                        sanitize_for_path(options.sweep_key) + "_" +
                                        sanitize_for_path(value);
                try {
                    slots[i].summary = execute_run(options, {{options.sweep_key, value}}, sub);
                } catch (const ConfigError& err) {
                    slots[i].error = err.what();
                    slots[i].code = 2;
                } catch (const NumericError& err) {
                    slots[i].error = err.what();
                    slots[i].code = 3;
                } catch (const std::exception& err) {
                    slots[i].error = err.what();
                    slots[i].code = 1;
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers - 1; ++w)
            pool.emplace_back(work);
        work();
        for (auto& th : pool)
            th.join();

        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i].code != 0) {
                std::cerr << "error: sweep value '" << options.sweep_values[i]
                          << "': " << slots[i].error << "\n";
                return slots[i].code;
            }
        }

        std::vector<std::string> header{"sweep_value"};
        for (const auto& [key, value] : slots.front().summary)
            header.push_back(key);
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            std::vector<std::string> row{options.sweep_values[i]};
            std::map<std::string, std::string> m(slots[i].summary.begin(), slots[i].summary.end());
            for (std::size_t h = 1; h < header.size(); ++h)
                row.push_back(m.count(header[h]) ? m[header[h]] : "n/a");
            rows.push_back(std::move(row));
        }
        fs::create_directories(options.out_dir);
        write_csv(options.out_dir + "/sweep.csv", header, rows);
        return 0;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
}

GridDensity grid_posterior(const GaussianPrior& prior, const Vec& c, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& lo,
                           const Vec& hi, int cells_per_dim) {
    MarginalLikelihood likelihood(vae, op, y, sigma_y);
    auto log_density = [&](const Vec& z) {
        return prior.clean_logpdf(z, c) + likelihood.log_likelihood(z);
    };
    return GridDensity(log_density, lo, hi, cells_per_dim);
}

GridDensity grid_posterior(const GmmPrior& prior, const LinearGaussianVae& vae,
                           const LinearForwardOp& op, const Vec& y, double sigma_y, const Vec& lo,
                           const Vec& hi, int cells_per_dim) {
    MarginalLikelihood likelihood(vae, op, y, sigma_y);
    auto log_density = [&](const Vec& z) {
        return prior.clean_logpdf(z) + likelihood.log_likelihood(z);
    };
    return GridDensity(log_density, lo, hi, cells_per_dim);
}

int component_label(const GmmPrior& prior, const Vec& z) {
    const Vec resp = prior.responsibilities(VpSchedule{}, 0.0, z);
    Eigen::Index best = 0;
    resp.maxCoeff(&best);
    return static_cast<int>(best);
}

} // namespace cwgf
