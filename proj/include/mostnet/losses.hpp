#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mostnet/layers.hpp"
#include "mostnet/networks.hpp"
#include "mostnet/ops.hpp"

namespace mostnet {

inline constexpr double kScoreClamp = 1e-7;

struct LossWeights {
    double adversarial = 1.0;
    double reconstruction = 200.0;
    double style = 40.0;
    double content = 40.0;
    double memory_refinement = 10.0;

    void validate() const {
        const std::array<std::pair<const char*, double>, 5> all{{{"lambda1", adversarial},
                                                                 {"lambda2", reconstruction},
                                                                 {"lambda3", style},
                                                                 {"lambda4", content},
                                                                 {"lambda5", memory_refinement}}};
        for (const auto& [name, v] : all) {
            if (!(v >= 0.0)) throw std::invalid_argument(std::string("loss weight ") + name + " must be >= 0");
        }
    }

    bool operator==(const LossWeights&) const = default;
};

// Fixed convolutional pyramid standing in for a pretrained classifier:
// level i is conv3x3 + ReLU + 2x2 average pooling, so its output has
// 1/2^i of the input extents. Weights never train.
template <class T>
struct PerceptualExtractor {
    static constexpr std::size_t kLevels = 4;
    static constexpr std::array<std::size_t, kLevels> kWidths{16, 32, 64, 64};

    std::array<Conv2d<T>, kLevels> convs;

    static PerceptualExtractor make(std::uint64_t seed = 19) {
        Rng rng(seed, 0x70657263ULL);
        PerceptualExtractor p;
        std::size_t in = 3;
        for (std::size_t i = 0; i < kLevels; ++i) {
            p.convs[i] = Conv2d<T>::same3x3(in, kWidths[i], rng);
            // Plain He gain for ReLU.
            for (auto& w : p.convs[i].weight.mutable_data()) w *= static_cast<T>(std::sqrt(1.0 + kLeakySlope * kLeakySlope));
            p.convs[i].weight.set_requires_grad(false);
            p.convs[i].bias.set_requires_grad(false);
            in = kWidths[i];
        }
        return p;
    }

    // Outputs of levels 1..max_level.
    std::vector<Tensor<T>> pyramid(const Tensor<T>& image, std::size_t max_level) const {
        if (max_level < 1 || max_level > kLevels) {
            throw std::invalid_argument("perceptual_features: level must be in 1..4, got " + std::to_string(max_level));
        }
        if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
            throw ShapeError("perceptual_features: expected a 1- or 3-channel image, got " + shape_str(image.shape()));
        }
        auto x = image.dim(0) == 1 ? concat(std::vector<Tensor<T>>{image, image, image}) : image;
        std::vector<Tensor<T>> levels;
        for (std::size_t i = 0; i < max_level; ++i) {
            x = avg_pool2x2(relu(convs[i](x)));
            levels.push_back(x);
        }
        return levels;
    }

    Tensor<T> features(const Tensor<T>& image, std::size_t level) const { return pyramid(image, level).back(); }

    void collect(ParamList<T>& out, const std::string& prefix = "perceptual") const {
        for (std::size_t i = 0; i < kLevels; ++i) convs[i].collect(out, prefix + ".level" + std::to_string(i + 1));
    }
};

template <class T>
Tensor<T> perceptual_features(const PerceptualExtractor<T>& extractor, const Tensor<T>& image, std::size_t level) {
    return extractor.features(image, level);
}

namespace detail {

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    return mean(square(sub(a, b)));
}

}  // namespace detail

// -mean log D(X, Y) - mean log(1 - D(X, G(X))), scores clamped away from 0 and 1.
template <class T>
Tensor<T> discriminator_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
    const T lo = static_cast<T>(kScoreClamp), hi = T(1) - static_cast<T>(kScoreClamp);
    const auto real_term = mean(log(clamp(real_scores, lo, hi)));
    const auto fake_term = mean(log(clamp(add_scalar(scale(fake_scores, T(-1)), T(1)), lo, hi)));
    return scale(add(real_term, fake_term), T(-1));
}

// Non-saturating generator objective: -mean log D(X, G(X)).
template <class T>
Tensor<T> generator_adversarial_loss(const Tensor<T>& fake_scores) {
    const T lo = static_cast<T>(kScoreClamp), hi = T(1) - static_cast<T>(kScoreClamp);
    return scale(mean(log(clamp(fake_scores, lo, hi))), T(-1));
}

template <class T>
struct AdversarialLosses {
    Tensor<T> discriminator;
    Tensor<T> generator;
};

template <class T>
AdversarialLosses<T> adversarial_loss(const Discriminator<T>& d, const Tensor<T>& photo, const Tensor<T>& real_sketch,
                                      const Tensor<T>& fake_sketch) {
    const auto fake_scores = d(photo, fake_sketch);
    return {discriminator_loss(d(photo, real_sketch), fake_scores), generator_adversarial_loss(fake_scores)};
}

// Mean absolute difference.
template <class T>
Tensor<T> reconstruction_loss(const Tensor<T>& fake, const Tensor<T>& real) {
    detail::require_same_shape(fake, real, "reconstruction_loss");
    return mean(abs(sub(fake, real)));
}

// Sum over levels 1 and 2 of the mean squared feature difference.
template <class T>
Tensor<T> style_loss(const PerceptualExtractor<T>& extractor, const Tensor<T>& fake, const Tensor<T>& real) {
    detail::require_same_shape(fake, real, "style_loss");
    const auto pf = extractor.pyramid(fake, 2);
    const auto pr = extractor.pyramid(real, 2);
    return add(detail::mse(pr[0], pf[0]), detail::mse(pr[1], pf[1]));
}

// Mean squared difference of level-4 features of the reference image (the
// photo by default) and the synthesized sketch.
template <class T>
Tensor<T> content_loss(const PerceptualExtractor<T>& extractor, const Tensor<T>& reference, const Tensor<T>& fake) {
    if (reference.rank() != 3 || fake.rank() != 3 || reference.dim(1) != fake.dim(1) || reference.dim(2) != fake.dim(2)) {
        throw ShapeError("content_loss: reference " + shape_str(reference.shape()) + " and fake " +
                         shape_str(fake.shape()) + " differ in spatial extents");
    }
    return detail::mse(extractor.features(reference, 4), extractor.features(fake, 4));
}

template <class T>
struct LossComponents {
    Tensor<T> adversarial;
    Tensor<T> reconstruction;
    Tensor<T> style;
    Tensor<T> content;
    Tensor<T> memory_refinement;
};

// lambda-weighted sum, accumulated left to right. A zero weight drops the
// term from the graph entirely.
template <class T>
Tensor<T> total_loss(const LossComponents<T>& c, const LossWeights& w) {
    w.validate();
    const std::array<std::pair<const Tensor<T>*, double>, 5> terms{{{&c.adversarial, w.adversarial},
                                                                    {&c.reconstruction, w.reconstruction},
                                                                    {&c.style, w.style},
                                                                    {&c.content, w.content},
                                                                    {&c.memory_refinement, w.memory_refinement}}};
    Tensor<T> total = Tensor<T>::scalar(T(0));
    for (const auto& [term, weight] : terms) {
        if (weight == 0.0) continue;
        total = add(total, scale(*term, static_cast<T>(weight)));
    }
    return total;
}

// Same accumulation on plain scalars.
template <class T>
T total_loss_value(std::array<T, 5> components, const LossWeights& w) {
    const std::array<double, 5> weights{w.adversarial, w.reconstruction, w.style, w.content, w.memory_refinement};
    T total = T(0);
    for (std::size_t i = 0; i < 5; ++i) {
        if (weights[i] == 0.0) continue;
        total = total + components[i] * static_cast<T>(weights[i]);
    }
    return total;
}

}  // namespace mostnet
