#include "cwgf/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace cwgf {

std::string format_double(double v) {
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "%.17g", v);
    return buffer;
}

double mean_squared_error(const Vec& a, const Vec& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("signals must have the same length");
    if (a.size() == 0)
        throw std::invalid_argument("signals must be nonempty");
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double psnr_from_mse(double mse) {
    if (mse < 0.0)
        throw std::invalid_argument("mean squared error cannot be negative");
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

Metrics metrics(const Vec& x_hat, const Vec& x_true) {
    Metrics m;
    m.mse = mean_squared_error(x_hat, x_true);
    m.psnr_db = psnr_from_mse(m.mse);
    return m;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out)
        throw std::runtime_error("failed writing '" + path + "'");
}

void write_pgm(const std::string& path, const GridShape& shape, const Vec& image) {
    if (image.size() != shape.size())
        throw std::invalid_argument("image length does not match the grid shape");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "P5\n" << shape.cols << " " << shape.rows << "\n255\n";
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        const double clamped = std::min(1.0, std::max(0.0, image[i]));
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
    }
    if (!out)
        throw std::runtime_error("failed writing '" + path + "'");
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw std::invalid_argument("csv row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << row[i];
        out << "\n";
    }
    if (!out)
        throw std::runtime_error("failed writing '" + path + "'");
}

void write_run_report_csv(const std::string& path, const RunReport& report) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(report.iterations.size());
    for (const IterationRecord& rec : report.iterations) {
        std::vector<std::string> row;
        row.push_back(std::to_string(rec.k));
        row.push_back(format_double(rec.t_k));
        row.push_back(format_double(rec.prompt_grad_norm));
        row.push_back(format_double(rec.functional));
        row.push_back(rec.functional_flag);
        row.push_back(format_double(rec.pi_diag_min));
        row.push_back(format_double(rec.pi_diag_mean));
        row.push_back(format_double(rec.data_fit.mean()));
        row.push_back(format_double(rec.data_fit.minCoeff()));
        row.push_back(format_double(rec.data_fit.maxCoeff()));
        rows.push_back(std::move(row));
    }
    write_csv(path,
              {"k", "t_k", "prompt_grad_norm", "functional", "functional_flag", "pi_diag_min",
               "pi_diag_mean", "data_fit_mean", "data_fit_min", "data_fit_max"},
              rows);
}

void write_particles_csv(const std::string& path, const Mat& particles) {
    std::vector<std::string> header;
    for (Eigen::Index i = 0; i < particles.rows(); ++i)
        header.push_back("z" + std::to_string(i));
    std::vector<std::vector<std::string>> rows;
    rows.reserve(static_cast<std::size_t>(particles.cols()));
    for (Eigen::Index n = 0; n < particles.cols(); ++n) {
        std::vector<std::string> row;
        for (Eigen::Index i = 0; i < particles.rows(); ++i)
            row.push_back(format_double(particles(i, n)));
        rows.push_back(std::move(row));
    }
    write_csv(path, header, rows);
}

} // namespace cwgf
