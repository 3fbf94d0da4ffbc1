#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mostnet/ops.hpp"
#include "mostnet/rng.hpp"
#include "mostnet/tensor.hpp"

namespace mostnet {

template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

inline constexpr double kLeakySlope = 0.2;

template <class T>
Tensor<T> lrelu(const Tensor<T>& x) {
    return leaky_relu(x, static_cast<T>(kLeakySlope));
}

template <class T>
struct Conv2d {
    Tensor<T> weight;
    Tensor<T> bias;
    Conv2dOptions options;

    // He-normal weights for a leaky-ReLU network, zero bias.
    static Conv2d make(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, Conv2dOptions opt = {},
                       double gain_scale = 1.0) {
        const double fan_in = static_cast<double>(in * kernel * kernel);
        const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
        Conv2d c;
        c.weight = Tensor<T>::randn(Shape{out, in, kernel, kernel}, rng, static_cast<T>(gain_scale * gain / std::sqrt(fan_in)), true);
        c.bias = Tensor<T>::zeros(Shape{out}, true);
        c.options = opt;
        return c;
    }

    // Padded 3x3 with the given stride.
    static Conv2d same3x3(std::size_t in, std::size_t out, Rng& rng, std::size_t stride = 1, double gain_scale = 1.0) {
        return make(in, out, 3, rng, Conv2dOptions{stride, 1}, gain_scale);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Pre-activation residual block: x + conv(act(norm(conv(act(norm(x)))))),
// norm being instance normalization.
template <class T>
struct ResBlock {
    Conv2d<T> conv1;
    Conv2d<T> conv2;

    static ResBlock make(std::size_t channels, Rng& rng) {
        // Halved gain on the closing conv keeps the residual sum from growing
        // block over block.
        return {Conv2d<T>::same3x3(channels, channels, rng), Conv2d<T>::same3x3(channels, channels, rng, 1, 0.5)};
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return add(x, conv2(lrelu(instance_normalize(conv1(lrelu(instance_normalize(x)))))));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1");
        conv2.collect(out, prefix + ".conv2");
    }
};

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

}  // namespace mostnet
