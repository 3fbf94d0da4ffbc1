#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mostnet/rng.hpp"
#include "mostnet/tensor.hpp"

namespace mostnet {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-3;
    // Denominator floor for the relative error, so that entries whose true
    // gradient is numerically zero are compared in absolute terms. The
    // effective floor is never below the rounding noise of the difference
    // quotient, noise_ulps * ulp(loss) / (2 * step).
    double floor = 1e-6;
    double noise_ulps = 1e4;
    // Retries at step / 8, step / 64, ... for elements that miss the tolerance.
    std::size_t kink_retries = 2;
    // 0 checks every element; otherwise a seeded sample of this many per tensor.
    std::size_t max_elements = 0;
    std::uint64_t sample_seed = 0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool has_nan = false;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    bool passed() const {
        for (const auto& e : entries)
            if (!e.passed) return false;
        return !entries.empty();
    }

    double max_rel_error() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }

    std::string summary() const {
        std::ostringstream os;
        for (const auto& e : entries) {
            os << (e.passed ? "ok   " : "FAIL ") << e.name << ": " << e.checked << " elements, max rel err "
               << e.max_rel_error;
            if (e.has_nan) os << " (NaN gradient)";
            if (!e.passed && !e.has_nan)
                os << " at [" << e.worst_index << "] analytic " << e.worst_analytic << " numeric " << e.worst_numeric;
            os << '\n';
        }
        return os.str();
    }
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

// Compares reverse-mode gradients of a scalar function against central
// differences. `fn` must rebuild its graph from the current input values on
// every call.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& fn, std::vector<NamedTensor> inputs,
                                  const GradCheckOptions& options = {}) {
    for (auto& [name, t] : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor<double> loss = fn();
    if (loss.numel() != 1) throw ShapeError("grad_check: function must be scalar, got " + shape_str(loss.shape()));
    backward(loss);
    const double loss_value = std::abs(loss.item());
    const double ulp = std::nextafter(loss_value, std::numeric_limits<double>::infinity()) - loss_value;

    GradCheckReport report;
    Rng rng(options.sample_seed, 0x6772616463686bULL);
    for (auto& [name, t] : inputs) {
        GradCheckEntry entry;
        entry.name = name;
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

        std::vector<std::size_t> indices(t.numel());
        std::iota(indices.begin(), indices.end(), std::size_t{0});
        if (options.max_elements > 0 && indices.size() > options.max_elements) {
            for (std::size_t i = 0; i < options.max_elements; ++i) {
                const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                                        static_cast<std::int64_t>(indices.size() - 1)));
                std::swap(indices[i], indices[j]);
            }
            indices.resize(options.max_elements);
        }

        NoGradGuard no_grad;
        auto values = t.mutable_data();
        for (std::size_t idx : indices) {
            const double original = values[idx];
            const double a = analytic[idx];
            double numeric = 0.0, rel = 0.0;
            // A kink of a piecewise-linear op inside [x - h, x + h] spoils the
            // central difference; shrinking the step moves it out.
            double h = options.step;
            for (std::size_t attempt = 0; attempt <= options.kink_retries; ++attempt, h /= 8.0) {
                values[idx] = original + h;
                const double up = fn().item();
                values[idx] = original - h;
                const double down = fn().item();
                values[idx] = original;
                const double n = (up - down) / (2.0 * h);
                const double floor = std::max(options.floor, options.noise_ulps * ulp / (2.0 * h));
                const double r = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
                if (attempt == 0 || r < rel || std::isnan(n)) {
                    numeric = n;
                    rel = r;
                }
                if (std::isnan(n) || r <= options.tolerance) break;
            }
            ++entry.checked;
            if (std::isnan(a) || std::isnan(numeric)) {
                entry.has_nan = true;
                entry.passed = false;
                entry.worst_index = idx;
                continue;
            }
            if (rel > entry.max_rel_error) {
                entry.max_rel_error = rel;
                entry.worst_index = idx;
                entry.worst_analytic = a;
                entry.worst_numeric = numeric;
            }
        }
        if (entry.max_rel_error > options.tolerance) entry.passed = false;
        report.entries.push_back(std::move(entry));
    }
    for (auto& [name, t] : inputs) t.zero_grad();
    return report;
}

}  // namespace mostnet
