#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mostnet/data.hpp"
#include "mostnet/image.hpp"

namespace mostnet {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

inline std::array<double, kSsimWindow> ssim_gaussian_window() {
    std::array<double, kSsimWindow> w{};
    double total = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
        w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Mean SSIM of two single-channel images in [0, 1] (dynamic range 1): an
// 11x11 Gaussian window with sigma 1.5 evaluated at every position where it
// fits, C1 = 0.01^2 and C2 = 0.03^2.
inline double ssim(const Image& a, const Image& b) {
    if (a.channels != 1 || b.channels != 1) throw std::invalid_argument("ssim: single-channel images required");
    if (a.height != b.height || a.width != b.width) {
        throw std::invalid_argument("ssim: extents differ, " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                    " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
    }
    if (a.height < kSsimWindow || a.width < kSsimWindow) {
        throw std::invalid_argument("ssim: images must be at least 11x11, got " + std::to_string(a.height) + "x" +
                                    std::to_string(a.width));
    }
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto w = ssim_gaussian_window();
    const std::size_t h = a.height, wd = a.width;
    const std::size_t oh = h - kSsimWindow + 1, ow = wd - kSsimWindow + 1;

    // Separable filtering of the five moment images.
    std::array<std::vector<double>, 5> rows;
    for (auto& r : rows) r.assign(h * ow, 0.0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s[5] = {};
            for (std::size_t k = 0; k < kSsimWindow; ++k) {
                const double va = a.data[y * wd + x + k], vb = b.data[y * wd + x + k];
                s[0] += w[k] * va;
                s[1] += w[k] * vb;
                s[2] += w[k] * va * va;
                s[3] += w[k] * vb * vb;
                s[4] += w[k] * va * vb;
            }
            for (std::size_t m = 0; m < 5; ++m) rows[m][y * ow + x] = s[m];
        }
    double total = 0.0;
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s[5] = {};
            for (std::size_t k = 0; k < kSsimWindow; ++k)
                for (std::size_t m = 0; m < 5; ++m) s[m] += w[k] * rows[m][(y + k) * ow + x];
            const double mu_a = s[0], mu_b = s[1];
            const double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    return total / static_cast<double>(oh * ow);
}

inline double mean_l1(const Image& a, const Image& b) {
    if (a.data.size() != b.data.size() || a.channels != b.channels || a.height != b.height) {
        throw std::invalid_argument("mean_l1: image shapes differ");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) total += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    return total / static_cast<double>(a.data.size());
}

struct PairMetric {
    std::string name;
    double ssim = 0.0;
    double l1 = 0.0;
};

struct MetricReport {
    std::vector<PairMetric> pairs;
    double mean_ssim = 0.0;
    double mean_l1 = 0.0;
    std::vector<std::string> warnings;

    std::size_t count() const { return pairs.size(); }

    void finalize() {
        mean_ssim = mean_l1 = 0.0;
        for (const auto& p : pairs) {
            mean_ssim += p.ssim;
            mean_l1 += p.l1;
        }
        if (!pairs.empty()) {
            mean_ssim /= static_cast<double>(pairs.size());
            mean_l1 /= static_cast<double>(pairs.size());
        }
    }
};

// Compares same-stem PNGs of two directories as grayscale images, in stem
// order. Files present on one side only are reported as warnings.
inline MetricReport evaluate_dirs(const std::filesystem::path& generated_dir, const std::filesystem::path& reference_dir) {
    const auto generated = detail::png_files(generated_dir);
    const auto reference = detail::png_files(reference_dir);
    MetricReport report;
    for (const auto& [stem, path] : generated) {
        const auto it = reference.find(stem);
        if (it == reference.end()) {
            report.warnings.push_back("generated '" + stem + "' has no reference; excluded");
            continue;
        }
        const auto g = to_gray(read_png(path));
        const auto r = to_gray(read_png(it->second));
        report.pairs.push_back({stem, ssim(g, r), mean_l1(g, r)});
    }
    for (const auto& [stem, path] : reference)
        if (!generated.contains(stem)) report.warnings.push_back("reference '" + stem + "' has no generated image; excluded");
    if (report.pairs.empty()) {
        throw std::runtime_error("evaluate: no file names in common between " + generated_dir.string() + " and " +
                                 reference_dir.string());
    }
    report.finalize();
    return report;
}

inline void write_report_table(std::ostream& os, const MetricReport& report) {
    char line[160];
    os << "name                              SSIM        L1\n";
    os << "────────────────────────────────  ──────────  ──────────\n";
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "%-32s  %10.6f  %10.6f\n", p.name.c_str(), p.ssim, p.l1);
        os << line;
    }
    os << "────────────────────────────────  ──────────  ──────────\n";
    std::snprintf(line, sizeof(line), "%-32s  %10.6f  %10.6f\n", ("mean over " + std::to_string(report.count()) + " pairs").c_str(),
                  report.mean_ssim, report.mean_l1);
    os << line;
}

inline void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "name,ssim,l1\n";
    char line[160];
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "%s,%.9g,%.9g\n", p.name.c_str(), p.ssim, p.l1);
        out << line;
    }
}

}  // namespace mostnet
