#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mostnet/image.hpp"
#include "mostnet/png.hpp"
#include "mostnet/rng.hpp"

namespace mostnet {

struct ImagePair {
    Image photo;   // 3 x H x W in [0, 1]
    Image sketch;  // 1 x H x W in [0, 1]
    std::string name;

    bool operator==(const ImagePair&) const = default;
};

struct Dataset {
    std::vector<ImagePair> pairs;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> warnings;

    std::size_t size() const { return pairs.size(); }
};

namespace synth {

enum class ShapeKind { ellipse, rectangle, stroke };

struct Shape {
    ShapeKind kind{};
    double cx = 0, cy = 0;   // center (stroke: start point)
    double a = 0, b = 0;     // half extents (stroke: end point)
    double angle = 0;
    double radius = 0;       // stroke half-thickness
    std::array<double, 3> color{};
    double shade_angle = 0;
    double shade_amount = 0;

    // Signed distance in pixels, negative inside. Ellipses use the first-order
    // approximation g / |grad g|, exact on the boundary.
    double distance(double x, double y) const {
        if (kind == ShapeKind::stroke) {
            const double dx = a - cx, dy = b - cy;
            const double len2 = dx * dx + dy * dy;
            const double t = len2 > 0 ? std::clamp(((x - cx) * dx + (y - cy) * dy) / len2, 0.0, 1.0) : 0.0;
            return std::hypot(x - (cx + t * dx), y - (cy + t * dy)) - radius;
        }
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = c * (x - cx) + s * (y - cy);
        const double v = -s * (x - cx) + c * (y - cy);
        if (kind == ShapeKind::rectangle) {
            const double qx = std::abs(u) - a, qy = std::abs(v) - b;
            return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
        }
        const double g = (u * u) / (a * a) + (v * v) / (b * b) - 1.0;
        const double gu = 2.0 * u / (a * a), gv = 2.0 * v / (b * b);
        const double grad = std::hypot(gu, gv);
        return grad > 1e-9 ? g / grad : -std::min(a, b);
    }
};

inline double luma(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

inline std::array<double, 3> random_color(Rng& rng) {
    return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
}

}  // namespace synth

// One procedural pair, determined by (seed, index) alone. The photo is a
// shaded gradient background with 2-5 filled shapes and mild noise; the
// sketch draws the visible outlines of the same shapes in black on white.
inline ImagePair gen_synthetic_pair(std::size_t size, std::uint64_t seed, std::size_t index) {
    using synth::ShapeKind;
    if (size < 16) throw std::invalid_argument("gen_synthetic_pairs: size must be >= 16");
    Rng rng(seed, index);
    const double s = static_cast<double>(size);

    const auto bg0 = synth::random_color(rng);
    const auto bg1 = synth::random_color(rng);
    const double bg_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const auto count = static_cast<std::size_t>(rng.uniform_int(2, 5));
    std::vector<synth::Shape> shapes;
    for (std::size_t i = 0; i < count; ++i) {
        synth::Shape sh;
        const auto kind = rng.uniform_int(0, 2);
        sh.kind = kind == 0 ? ShapeKind::ellipse : kind == 1 ? ShapeKind::rectangle : ShapeKind::stroke;
        sh.cx = rng.uniform(0.15 * s, 0.85 * s);
        sh.cy = rng.uniform(0.15 * s, 0.85 * s);
        if (sh.kind == ShapeKind::stroke) {
            const double len = rng.uniform(0.3 * s, 0.6 * s);
            const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
            sh.a = sh.cx + len * std::cos(dir);
            sh.b = sh.cy + len * std::sin(dir);
            sh.radius = rng.uniform(0.03 * s, 0.06 * s);
        } else {
            sh.a = rng.uniform(0.1 * s, 0.25 * s);
            sh.b = rng.uniform(0.1 * s, 0.25 * s);
            sh.angle = rng.uniform(0.0, std::numbers::pi);
        }
        // Keep shapes distinguishable from the background.
        const double bg_luma = 0.5 * (synth::luma(bg0) + synth::luma(bg1));
        sh.color = synth::random_color(rng);
        for (int tries = 0; tries < 16 && std::abs(synth::luma(sh.color) - bg_luma) < 0.2; ++tries)
            sh.color = synth::random_color(rng);
        sh.shade_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        sh.shade_amount = rng.uniform(0.05, 0.25);
        shapes.push_back(sh);
    }

    ImagePair pair;
    pair.name = "pair_" + std::to_string(index);
    while (pair.name.size() < 10) pair.name.insert(5, "0");
    pair.photo = Image(3, size, size);
    pair.sketch = Image(1, size, size, 1.0f);

    std::vector<double> dist(count);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double t = std::clamp(0.5 + ((px - s / 2) * std::cos(bg_angle) + (py - s / 2) * std::sin(bg_angle)) / s,
                                        0.0, 1.0);
            std::array<double, 3> rgb;
            for (std::size_t c = 0; c < 3; ++c) rgb[c] = (1 - t) * bg0[c] + t * bg1[c];
            for (std::size_t i = 0; i < count; ++i) {
                const auto& sh = shapes[i];
                dist[i] = sh.distance(px, py);
                const double cover = std::clamp(0.5 - dist[i], 0.0, 1.0);
                if (cover <= 0) continue;
                const double shade =
                    1.0 + sh.shade_amount * ((px - sh.cx) * std::cos(sh.shade_angle) + (py - sh.cy) * std::sin(sh.shade_angle)) /
                              (0.25 * s);
                for (std::size_t c = 0; c < 3; ++c)
                    rgb[c] = (1 - cover) * rgb[c] + cover * std::clamp(sh.color[c] * shade, 0.0, 1.0);
            }
            for (std::size_t c = 0; c < 3; ++c)
                pair.photo.at(c, y, x) = static_cast<float>(std::clamp(rgb[c] + rng.normal(0.0, 0.02), 0.0, 1.0));

            double ink = 0.0;
            for (std::size_t i = 0; i < count; ++i) {
                double visible = 1.0;
                for (std::size_t j = i + 1; j < count; ++j) visible *= std::clamp(dist[j] + 0.5, 0.0, 1.0);
                ink = std::max(ink, std::clamp(1.2 - std::abs(dist[i]), 0.0, 1.0) * visible);
            }
            pair.sketch.at(0, y, x) = static_cast<float>(1.0 - ink);
        }
    }
    return pair;
}

inline Dataset gen_synthetic_pairs(std::size_t n, std::size_t size, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("gen_synthetic_pairs: n must be >= 1");
    Dataset d;
    d.seed = seed;
    for (std::size_t i = 0; i < n; ++i) d.pairs.push_back(gen_synthetic_pair(size, seed, i));
    return d;
}

namespace detail {

inline bool is_png(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png";
}

// stem -> path for every PNG directly inside `dir`.
inline std::map<std::string, std::filesystem::path> png_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::map<std::string, std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_png(entry.path())) files[entry.path().stem().string()] = entry.path();
    }
    return files;
}

}  // namespace detail

// Pairs photos and sketches by identical file stem, in lexicographic stem
// order. Unmatched files are skipped with a warning.
inline Dataset load_paired_dir(const std::filesystem::path& photo_dir, const std::filesystem::path& sketch_dir) {
    const auto photos = detail::png_files(photo_dir);
    const auto sketches = detail::png_files(sketch_dir);
    Dataset d;
    for (const auto& [stem, path] : photos) {
        const auto it = sketches.find(stem);
        if (it == sketches.end()) {
            d.warnings.push_back("photo '" + stem + "' has no matching sketch; skipped");
            continue;
        }
        ImagePair pair;
        pair.name = stem;
        pair.photo = to_rgb(read_png(path));
        pair.sketch = to_gray(read_png(it->second));
        if (pair.photo.height != pair.sketch.height || pair.photo.width != pair.sketch.width) {
            throw std::runtime_error("pair '" + stem + "': photo and sketch extents differ");
        }
        d.pairs.push_back(std::move(pair));
    }
    for (const auto& [stem, path] : sketches) {
        if (!photos.contains(stem)) d.warnings.push_back("sketch '" + stem + "' has no matching photo; skipped");
    }
    return d;
}

// <root>/photos/<name>.png and <root>/sketches/<name>.png
inline Dataset load_dataset(const std::filesystem::path& root) { return load_paired_dir(root / "photos", root / "sketches"); }

inline void save_dataset(const Dataset& d, const std::filesystem::path& root) {
    std::filesystem::create_directories(root / "photos");
    std::filesystem::create_directories(root / "sketches");
    for (const auto& p : d.pairs) {
        write_png(root / "photos" / (p.name + ".png"), p.photo);
        write_png(root / "sketches" / (p.name + ".png"), p.sketch);
    }
}

}  // namespace mostnet
