#pragma once

#include <string>
#include <vector>

#include "cwgf/linear_ops.hpp"
#include "cwgf/solver.hpp"

namespace cwgf {

// Shortest round-trip decimal rendering (%.17g, C locale): the same value
// always serializes to the same bytes, which the rerun contract relies on.
std::string format_double(double v);

double mean_squared_error(const Vec& a, const Vec& b);

// Peak signal-to-noise ratio for signals in [0, 1]: 10 log10(1 / mse),
// +infinity when mse == 0 (rendered as "inf" by format_double).
double psnr_from_mse(double mse);

struct Metrics {
    double mse = 0.0;
    double psnr_db = 0.0;
};

Metrics metrics(const Vec& x_hat, const Vec& x_true);

void write_text(const std::string& path, const std::string& content);

// Binary PGM (P5, maxval 255), row-major; values clamped to [0, 1] then
// quantized by rounding.
void write_pgm(const std::string& path, const GridShape& shape, const Vec& image);

// One row per iteration: indices, prompt gradient norm, functional value
// and flag, kernel diagonality, and data-fit summary statistics.
void write_run_report_csv(const std::string& path, const RunReport& report);

// One row per particle of a d-column ensemble snapshot.
void write_particles_csv(const std::string& path, const Mat& particles);

// Generic CSV with string cells, '\n' line ends.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

} // namespace cwgf
