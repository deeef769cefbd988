#include "cwgf/linear_ops.hpp"

#include <cmath>
#include <mutex>

#include <Eigen/Cholesky>
#include <fftw3.h>

namespace cwgf {

namespace {

// FFTW plan creation/destruction is not thread-safe; executions are.
std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

// Conjugate gradients on x -> (a I + b A^T A) x. Throws if the relative
// residual cannot be brought under `tol` within `max_iters` iterations.
Vec conjugate_gradient(const std::function<Vec(const Vec&)>& normal_op,
                       const Vec& rhs,
                       double tol,
                       int max_iters) {
    Vec x = Vec::Zero(rhs.size());
    const double rhs_norm = rhs.norm();
    if (rhs_norm == 0.0) return x;

    Vec r = rhs;
    Vec p = r;
    double rr = r.squaredNorm();
    for (int it = 0; it < max_iters; ++it) {
        if (std::sqrt(rr) <= tol * rhs_norm) return x;
        const Vec ap = normal_op(p);
        const double pap = p.dot(ap);
        if (!(pap > 0.0) || !std::isfinite(pap))
            throw NumericError("conjugate gradients: operator not positive definite", std::sqrt(rr) / rhs_norm);
        const double alpha = rr / pap;
        x += alpha * p;
        r -= alpha * ap;
        const double rr_new = r.squaredNorm();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    if (std::sqrt(rr) <= tol * rhs_norm) return x;
    throw NumericError("conjugate gradients: no convergence within iteration budget",
                       std::sqrt(rr) / rhs_norm);
}

constexpr double kSolveTol = 1e-8;
constexpr int kSolveMaxIters = 500;

} // namespace

void LinearForwardOp::check_input(const Vec& x) const {
    if (x.size() != input_dim())
        throw std::invalid_argument(std::string(kind()) + ": input size " + std::to_string(x.size()) +
                                    " != " + std::to_string(input_dim()));
}

void LinearForwardOp::check_output(const Vec& y) const {
    if (y.size() != output_dim())
        throw std::invalid_argument(std::string(kind()) + ": output size " + std::to_string(y.size()) +
                                    " != " + std::to_string(output_dim()));
}

Vec LinearForwardOp::solve_impl(double a, double b, const Vec& rhs) const {
    return conjugate_gradient(
        [&](const Vec& v) -> Vec { return a * v + b * apply_adjoint(apply(v)); },
        rhs, kSolveTol, kSolveMaxIters);
}

Vec LinearForwardOp::regularized_solve(double a, double b, const Vec& rhs) const {
    if (!(a > 0.0)) throw std::invalid_argument("regularized_solve: a > 0 required");
    if (!(b >= 0.0)) throw std::invalid_argument("regularized_solve: b >= 0 required");
    check_input(rhs);

    const Vec x = solve_impl(a, b, rhs);
    const double defect = (a * x + b * apply_adjoint(apply(x)) - rhs).norm();
    if (defect > kSolveTol * std::max(rhs.norm(), 1e-300))
        throw NumericError("regularized_solve: residual contract violated", defect);
    return x;
}

std::function<Vec(const Vec&)> LinearForwardOp::prepare_regularized_solve(double a, double b) const {
    return [this, a, b](const Vec& rhs) { return regularized_solve(a, b, rhs); };
}

Mat LinearForwardOp::dense() const {
    Mat out(output_dim(), input_dim());
    Vec e = Vec::Zero(input_dim());
    for (int j = 0; j < input_dim(); ++j) {
        e[j] = 1.0;
        out.col(j) = apply(e);
        e[j] = 0.0;
    }
    return out;
}

// ---------------------------------------------------------------- DenseOp

DenseOp::DenseOp(Mat a)
    : a_(std::move(a)),
      in_{static_cast<int>(a_.cols()), 1},
      out_{static_cast<int>(a_.rows()), 1} {}

DenseOp::DenseOp(Mat a, GridShape in, GridShape out) : a_(std::move(a)), in_(in), out_(out) {
    if (in_.size() != a_.cols() || out_.size() != a_.rows())
        throw std::invalid_argument("DenseOp: shape/matrix mismatch");
}

Vec DenseOp::apply(const Vec& x) const {
    check_input(x);
    return a_ * x;
}

Vec DenseOp::apply_adjoint(const Vec& y) const {
    check_output(y);
    return a_.transpose() * y;
}

Vec DenseOp::solve_impl(double a, double b, const Vec& rhs) const {
    Mat m = b * (a_.transpose() * a_);
    m.diagonal().array() += a;
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success)
        throw NumericError("DenseOp solve: Cholesky factorization failed");
    return llt.solve(rhs);
}

std::function<Vec(const Vec&)> DenseOp::prepare_regularized_solve(double a, double b) const {
    Mat m = b * (a_.transpose() * a_);
    m.diagonal().array() += a;
    auto llt = std::make_shared<Eigen::LLT<Mat>>(m);
    if (llt->info() != Eigen::Success)
        throw NumericError("DenseOp solve: Cholesky factorization failed");
    return [llt](const Vec& rhs) -> Vec { return llt->solve(rhs); };
}

// ---------------------------------------------------------- CircularConvOp

CircularConvOp::CircularConvOp(GridShape grid, const Mat& kernel) : grid_(grid) {
    if (grid.rows < 1 || grid.cols < 1) throw std::invalid_argument("CircularConvOp: bad grid");
    if (kernel.rows() % 2 == 0 || kernel.cols() % 2 == 0)
        throw std::invalid_argument("CircularConvOp: kernel must have odd dimensions");
    if (kernel.rows() > grid.rows || kernel.cols() > grid.cols)
        throw std::invalid_argument("CircularConvOp: kernel larger than grid");

    const int h = grid.rows, w = grid.cols;
    const int hw = h * w;
    const int spec = h * (w / 2 + 1);

    // Embed the centered kernel with wraparound so its center lands at (0,0).
    std::vector<double> embedded(hw, 0.0);
    const int kcr = static_cast<int>(kernel.rows()) / 2;
    const int kcc = static_cast<int>(kernel.cols()) / 2;
    for (int i = 0; i < kernel.rows(); ++i) {
        for (int j = 0; j < kernel.cols(); ++j) {
            const int r = ((i - kcr) % h + h) % h;
            const int c = ((j - kcc) % w + w) % w;
            embedded[r * w + c] += kernel(i, j);
        }
    }

    std::lock_guard<std::mutex> lock(fftw_mutex());
    double* buf_real = fftw_alloc_real(hw);
    fftw_complex* buf_cplx = fftw_alloc_complex(spec);
    plan_fwd_ = fftw_plan_dft_r2c_2d(h, w, buf_real, buf_cplx, FFTW_ESTIMATE);
    plan_inv_ = fftw_plan_dft_c2r_2d(h, w, buf_cplx, buf_real, FFTW_ESTIMATE);

    // Transfer function of the embedded kernel.
    for (int i = 0; i < hw; ++i) buf_real[i] = embedded[i];
    fftw_execute(static_cast<fftw_plan>(plan_fwd_));
    filter_hat_.resize(spec);
    power_.resize(spec);
    for (int i = 0; i < spec; ++i) {
        filter_hat_[i] = {buf_cplx[i][0], buf_cplx[i][1]};
        power_[i] = std::norm(filter_hat_[i]);
    }
    fftw_free(buf_real);
    fftw_free(buf_cplx);
}

CircularConvOp::~CircularConvOp() {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    if (plan_fwd_) fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
    if (plan_inv_) fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
}

Vec CircularConvOp::transform(const Vec& x, bool conjugate_filter, const std::vector<double>* denom) const {
    const int h = grid_.rows, w = grid_.cols;
    const int hw = h * w;
    const int spec = h * (w / 2 + 1);

    // fftw_malloc keeps the alignment the plans were built with, so the
    // new-array execute interface stays valid and apply() needs no lock.
    double* buf_real = fftw_alloc_real(hw);
    fftw_complex* buf_cplx = fftw_alloc_complex(spec);
    for (int i = 0; i < hw; ++i) buf_real[i] = x[i];

    fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_fwd_), buf_real, buf_cplx);
    for (int i = 0; i < spec; ++i) {
        std::complex<double> v{buf_cplx[i][0], buf_cplx[i][1]};
        if (denom) {
            v /= (*denom)[i];
        } else {
            v *= conjugate_filter ? std::conj(filter_hat_[i]) : filter_hat_[i];
        }
        buf_cplx[i][0] = v.real();
        buf_cplx[i][1] = v.imag();
    }
    fftw_execute_dft_c2r(static_cast<fftw_plan>(plan_inv_), buf_cplx, buf_real);

    Vec out(hw);
    const double scale = 1.0 / hw;
    for (int i = 0; i < hw; ++i) out[i] = buf_real[i] * scale;
    fftw_free(buf_real);
    fftw_free(buf_cplx);
    return out;
}

Vec CircularConvOp::apply(const Vec& x) const {
    check_input(x);
    return transform(x, false, nullptr);
}

Vec CircularConvOp::apply_adjoint(const Vec& y) const {
    check_output(y);
    return transform(y, true, nullptr);
}

Vec CircularConvOp::solve_impl(double a, double b, const Vec& rhs) const {
    std::vector<double> denom(power_.size());
    for (std::size_t i = 0; i < power_.size(); ++i) denom[i] = a + b * power_[i];
    return transform(rhs, false, &denom);
}

// ------------------------------------------------------------------ MaskOp

MaskOp::MaskOp(GridShape grid, std::vector<std::uint8_t> keep)
    : grid_(grid), keep_(std::move(keep)) {
    if (static_cast<int>(keep_.size()) != grid_.size())
        throw std::invalid_argument("MaskOp: mask size != grid size");
}

Vec MaskOp::apply(const Vec& x) const {
    check_input(x);
    Vec y = x;
    for (int i = 0; i < grid_.size(); ++i)
        if (!keep_[i]) y[i] = 0.0;
    return y;
}

Vec MaskOp::apply_adjoint(const Vec& y) const { return apply(y); }

Vec MaskOp::solve_impl(double a, double b, const Vec& rhs) const {
    Vec x(rhs.size());
    for (int i = 0; i < grid_.size(); ++i)
        x[i] = rhs[i] / (a + (keep_[i] ? b : 0.0));
    return x;
}

// ------------------------------------------------------------ DownsampleOp

namespace {

Mat box_filter(int factor) {
    Mat k = Mat::Constant(2 * (factor / 2) + 1, 2 * (factor / 2) + 1, 0.0);
    // Odd-sized embedding of a `factor`-wide box, normalized to unit mass.
    const int width = factor;
    const int offset = k.rows() / 2 - (width - 1) / 2;
    for (int i = 0; i < width; ++i)
        for (int j = 0; j < width; ++j)
            k(offset + i, offset + j) = 1.0 / (width * width);
    return k;
}

} // namespace

DownsampleOp::DownsampleOp(GridShape grid, int factor, const Mat& filter)
    : grid_(grid), factor_(factor) {
    if (factor < 1) throw std::invalid_argument("DownsampleOp: factor >= 1 required");
    if (grid.rows % factor != 0 || grid.cols % factor != 0)
        throw std::invalid_argument("DownsampleOp: grid not divisible by factor");
    out_ = {grid.rows / factor, grid.cols / factor};
    filter_ = std::make_unique<CircularConvOp>(grid, filter);
}

DownsampleOp::DownsampleOp(GridShape grid, int factor)
    : DownsampleOp(grid, factor, box_filter(factor)) {}

Vec DownsampleOp::apply(const Vec& x) const {
    check_input(x);
    const Vec filtered = filter_->apply(x);
    Vec y(out_.size());
    for (int i = 0; i < out_.rows; ++i)
        for (int j = 0; j < out_.cols; ++j)
            y[i * out_.cols + j] = filtered[(i * factor_) * grid_.cols + j * factor_];
    return y;
}

Vec DownsampleOp::apply_adjoint(const Vec& y) const {
    check_output(y);
    Vec stuffed = Vec::Zero(grid_.size());
    for (int i = 0; i < out_.rows; ++i)
        for (int j = 0; j < out_.cols; ++j)
            stuffed[(i * factor_) * grid_.cols + j * factor_] = y[i * out_.cols + j];
    return filter_->apply_adjoint(stuffed);
}

// ------------------------------------------------------------- free helpers

double adjoint_defect(const LinearForwardOp& op, Rng& rng, int trials) {
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const Vec x = rng.normal_vec(op.input_dim());
        const Vec y = rng.normal_vec(op.output_dim());
        const double lhs = op.apply(x).dot(y);
        const double rhs = x.dot(op.apply_adjoint(y));
        const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
        worst = std::max(worst, std::abs(lhs - rhs) / scale);
    }
    return worst;
}

PixelGaussian::PixelGaussian(const LinearForwardOp& op, double sigma_dec, double sigma_y)
    : op_(op), sigma_dec_(sigma_dec), sigma_y_(sigma_y) {
    if (!(sigma_dec > 0.0) || !(sigma_y > 0.0))
        throw std::invalid_argument("PixelGaussian: sigma_dec > 0 and sigma_y > 0 required");
    solve_ = op.prepare_regularized_solve(1.0 / (sigma_dec * sigma_dec),
                                          1.0 / (sigma_y * sigma_y));
}

Vec PixelGaussian::covariance_apply(const Vec& rhs) const { return solve_(rhs); }

Vec PixelGaussian::adjoint_observation(const Vec& y) const { return op_.apply_adjoint(y); }

Vec PixelGaussian::mean(const Vec& decoder_out, const Vec& adjoint_y) const {
    const double a = 1.0 / (sigma_dec_ * sigma_dec_);
    const double b = 1.0 / (sigma_y_ * sigma_y_);
    return solve_(a * decoder_out + b * adjoint_y);
}

Vec pixel_posterior_mean(const LinearForwardOp& op,
                         const Vec& decoder_out,
                         const Vec& y,
                         double sigma_dec,
                         double sigma_y) {
    if (!(sigma_dec > 0.0) || !(sigma_y > 0.0))
        throw std::invalid_argument("pixel_posterior_mean: sigma_dec > 0 and sigma_y > 0 required");
    const double a = 1.0 / (sigma_dec * sigma_dec);
    const double b = 1.0 / (sigma_y * sigma_y);
    return op.regularized_solve(a, b, a * decoder_out + b * op.apply_adjoint(y));
}

} // namespace cwgf
