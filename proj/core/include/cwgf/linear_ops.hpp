#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <vector>

#include "cwgf/errors.hpp"
#include "cwgf/rng.hpp"

namespace cwgf {

// Row-major 2-D grid extent; 1-D signals use cols = 1.
struct GridShape {
    int rows = 0;
    int cols = 1;

    int size() const { return rows * cols; }
    bool operator==(const GridShape&) const = default;
};

// Measurement operator A with adjoint and a fast solve of
// (a I + b A^T A) x = rhs. Operators are immutable after construction and
// apply/apply_adjoint/solve are safe to call concurrently.
class LinearForwardOp {
public:
    virtual ~LinearForwardOp() = default;

    virtual Vec apply(const Vec& x) const = 0;
    virtual Vec apply_adjoint(const Vec& y) const = 0;

    virtual GridShape input_shape() const = 0;
    virtual GridShape output_shape() const = 0;
    int input_dim() const { return input_shape().size(); }
    int output_dim() const { return output_shape().size(); }

    virtual const char* kind() const = 0;

    // Solves (a I + b A^T A) x = rhs with a > 0, b >= 0. Closed-form
    // (spectral or diagonal) where the kind allows it, conjugate gradients
    // otherwise. The result always satisfies the residual contract
    // ||(aI + bA^T A)x - rhs|| <= 1e-8 ||rhs|| or a NumericError is thrown.
    Vec regularized_solve(double a, double b, const Vec& rhs) const;

    // Same solve with factorizations hoisted out, for hot loops that keep
    // (a, b) fixed across many right-hand sides.
    virtual std::function<Vec(const Vec&)> prepare_regularized_solve(double a, double b) const;

    // Materializes A column by column. Intended for analytic oracles and
    // desk-scale posterior algebra, not for hot paths.
    Mat dense() const;

protected:
    // Kind-specific solve; the public entry point validates and checks the
    // residual. Default: conjugate gradients on the normal operator.
    virtual Vec solve_impl(double a, double b, const Vec& rhs) const;

    void check_input(const Vec& x) const;
    void check_output(const Vec& y) const;
};

// Dense matrix operator.
class DenseOp final : public LinearForwardOp {
public:
    explicit DenseOp(Mat a);
    DenseOp(Mat a, GridShape in, GridShape out);

    Vec apply(const Vec& x) const override;
    Vec apply_adjoint(const Vec& y) const override;
    GridShape input_shape() const override { return in_; }
    GridShape output_shape() const override { return out_; }
    const char* kind() const override { return "dense"; }
    std::function<Vec(const Vec&)> prepare_regularized_solve(double a, double b) const override;

    const Mat& matrix() const { return a_; }

protected:
    Vec solve_impl(double a, double b, const Vec& rhs) const override;

private:
    Mat a_;
    GridShape in_, out_;
};

// Circular (periodic) convolution on a grid. A^T A diagonalizes exactly in
// the frequency domain, so the regularized solve is a pointwise division.
class CircularConvOp final : public LinearForwardOp {
public:
    // kernel: odd-sized grid (kh x kw), centered; wrapped onto the input
    // grid so that the center taps position (0,0).
    CircularConvOp(GridShape grid, const Mat& kernel);
    ~CircularConvOp() override;

    CircularConvOp(const CircularConvOp&) = delete;
    CircularConvOp& operator=(const CircularConvOp&) = delete;

    Vec apply(const Vec& x) const override;
    Vec apply_adjoint(const Vec& y) const override;
    GridShape input_shape() const override { return grid_; }
    GridShape output_shape() const override { return grid_; }
    const char* kind() const override { return "circular_conv"; }

    // Squared magnitude of the transfer function on the half spectrum; the
    // exact eigenvalues of A^T A.
    const std::vector<double>& power_spectrum() const { return power_; }

protected:
    Vec solve_impl(double a, double b, const Vec& rhs) const override;

private:
    Vec transform(const Vec& x, bool conjugate_filter, const std::vector<double>* denom) const;

    GridShape grid_;
    std::vector<std::complex<double>> filter_hat_;
    std::vector<double> power_;
    void* plan_fwd_ = nullptr;
    void* plan_inv_ = nullptr;
};

// Coordinate mask: kept entries pass through, masked entries read as zero.
// Input and output share the grid shape.
class MaskOp final : public LinearForwardOp {
public:
    MaskOp(GridShape grid, std::vector<std::uint8_t> keep);

    Vec apply(const Vec& x) const override;
    Vec apply_adjoint(const Vec& y) const override;
    GridShape input_shape() const override { return grid_; }
    GridShape output_shape() const override { return grid_; }
    const char* kind() const override { return "mask"; }

    const std::vector<std::uint8_t>& keep() const { return keep_; }

protected:
    Vec solve_impl(double a, double b, const Vec& rhs) const override;

private:
    GridShape grid_;
    std::vector<std::uint8_t> keep_;
};

// Filter-then-decimate downsampling by an integer factor per axis. The
// normal operator has no convenient closed form, so solves fall back to
// conjugate gradients (relative residual 1e-8, at most 500 iterations).
class DownsampleOp final : public LinearForwardOp {
public:
    DownsampleOp(GridShape grid, int factor, const Mat& filter);
    DownsampleOp(GridShape grid, int factor); // box filter of width `factor`

    Vec apply(const Vec& x) const override;
    Vec apply_adjoint(const Vec& y) const override;
    GridShape input_shape() const override { return grid_; }
    GridShape output_shape() const override { return out_; }
    const char* kind() const override { return "downsample"; }

private:
    GridShape grid_, out_;
    int factor_;
    std::unique_ptr<CircularConvOp> filter_;
};

// Max relative defect of <Ax, y> = <x, A^T y> over `trials` random probes.
double adjoint_defect(const LinearForwardOp& op, Rng& rng, int trials = 8);

// Pixel-space Gaussian posterior machinery of the likelihood flow:
//   Sigma = (sigma_dec^{-2} I + sigma_y^{-2} A^T A)^{-1}
//   m(z)  = Sigma (sigma_dec^{-2} D(z) + sigma_y^{-2} A^T y).
class PixelGaussian {
public:
    PixelGaussian(const LinearForwardOp& op, double sigma_dec, double sigma_y);

    // Applies Sigma to an arbitrary vector.
    Vec covariance_apply(const Vec& rhs) const;

    // Posterior mean m(z) given the decoded pixels D(z).
    Vec mean(const Vec& decoder_out, const Vec& adjoint_y) const;

    // Precomputed A^T y for a fixed observation.
    Vec adjoint_observation(const Vec& y) const;

    double sigma_dec() const { return sigma_dec_; }
    double sigma_y() const { return sigma_y_; }

private:
    const LinearForwardOp& op_;
    double sigma_dec_, sigma_y_;
    std::function<Vec(const Vec&)> solve_;
};

// One-call form of the pixel posterior mean.
Vec pixel_posterior_mean(const LinearForwardOp& op,
                         const Vec& decoder_out,
                         const Vec& y,
                         double sigma_dec,
                         double sigma_y);

} // namespace cwgf
