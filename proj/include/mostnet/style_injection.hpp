#pragma once

#include <optional>
#include <string>

#include "mostnet/layers.hpp"
#include "mostnet/ops.hpp"

namespace mostnet {

inline constexpr double kNormalizeEpsilon = 1e-5;

// Spatially-adaptive modulation: gamma(style) * normalize(content) + beta(style).
// gamma and beta are per-pixel, per-channel maps predicted from the style map
// through a shared hidden 3x3 conv + ReLU.
template <class T>
struct SIModule {
    Conv2d<T> shared;
    Conv2d<T> gamma;
    Conv2d<T> beta;
    T epsilon = static_cast<T>(kNormalizeEpsilon);

    static SIModule make(std::size_t content_channels, std::size_t style_channels, std::size_t hidden, Rng& rng) {
        SIModule m;
        m.shared = Conv2d<T>::same3x3(style_channels, hidden, rng);
        m.gamma = Conv2d<T>::same3x3(hidden, content_channels, rng);
        m.beta = Conv2d<T>::same3x3(hidden, content_channels, rng);
        // Neutral start: gamma = 1 regardless of the style map.
        std::fill(m.gamma.weight.mutable_data().begin(), m.gamma.weight.mutable_data().end(), T(0));
        std::fill(m.gamma.bias.mutable_data().begin(), m.gamma.bias.mutable_data().end(), T(1));
        return m;
    }

    Tensor<T> operator()(const Tensor<T>& content, const Tensor<T>& style) const {
        if (content.rank() != 3 || style.rank() != 3 || content.dim(1) != style.dim(1) ||
            content.dim(2) != style.dim(2)) {
            throw ShapeError("si_modulate: content " + shape_str(content.shape()) + " and style " +
                             shape_str(style.shape()) + " differ in spatial extents");
        }
        const auto hidden = relu(shared(style));
        return add(mul(gamma(hidden), instance_normalize(content, epsilon)), beta(hidden));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        shared.collect(out, prefix + ".shared");
        gamma.collect(out, prefix + ".gamma");
        beta.collect(out, prefix + ".beta");
    }
};

template <class T>
Tensor<T> si_modulate(const SIModule<T>& module, const Tensor<T>& content, const Tensor<T>& style) {
    return module(content, style);
}

// Main path: SI -> act -> conv -> SI -> act -> conv. Shortcut: identity, or
// SI -> 1x1 conv when the channel count changes.
template <class T>
struct SIResBlock {
    SIModule<T> norm0;
    Conv2d<T> conv0;
    SIModule<T> norm1;
    Conv2d<T> conv1;
    std::optional<SIModule<T>> shortcut_norm;
    std::optional<Conv2d<T>> shortcut_conv;

    static SIResBlock make(std::size_t in, std::size_t out, std::size_t style_channels, std::size_t hidden, Rng& rng) {
        SIResBlock b;
        const std::size_t middle = std::min(in, out);
        b.norm0 = SIModule<T>::make(in, style_channels, hidden, rng);
        b.conv0 = Conv2d<T>::same3x3(in, middle, rng);
        b.norm1 = SIModule<T>::make(middle, style_channels, hidden, rng);
        b.conv1 = Conv2d<T>::same3x3(middle, out, rng, 1, 0.5);
        if (in != out) {
            b.shortcut_norm = SIModule<T>::make(in, style_channels, hidden, rng);
            b.shortcut_conv = Conv2d<T>::make(in, out, 1, rng);
        }
        return b;
    }

    Tensor<T> shortcut(const Tensor<T>& content, const Tensor<T>& style) const {
        if (!shortcut_conv) return content;
        return (*shortcut_conv)((*shortcut_norm)(content, style));
    }

    Tensor<T> operator()(const Tensor<T>& content, const Tensor<T>& style) const {
        const auto main = conv1(lrelu(norm1(conv0(lrelu(norm0(content, style))), style)));
        return add(shortcut(content, style), main);
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        norm0.collect(out, prefix + ".norm0");
        conv0.collect(out, prefix + ".conv0");
        norm1.collect(out, prefix + ".norm1");
        conv1.collect(out, prefix + ".conv1");
        if (shortcut_conv) {
            shortcut_norm->collect(out, prefix + ".shortcut_norm");
            shortcut_conv->collect(out, prefix + ".shortcut_conv");
        }
    }
};

template <class T>
Tensor<T> si_resblock(const SIResBlock<T>& block, const Tensor<T>& content, const Tensor<T>& style) {
    return block(content, style);
}

}  // namespace mostnet
