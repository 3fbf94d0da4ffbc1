#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mostnet/tensor.hpp"

namespace mostnet {

// Planar float image, values nominally in [0, 1]. channels is 1 or 3.
struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;  // channel-major, then row-major

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f) : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    bool operator==(const Image&) const = default;
};

// Rec. 601 luma of a 3-channel image; 1-channel images are returned as is.
inline Image to_gray(const Image& img) {
    if (img.channels == 1) return img;
    Image out(1, img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            out.at(0, y, x) = 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
    return out;
}

inline Image to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image out(3, img.height, img.width);
    for (std::size_t c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), out.data.begin() + c * img.data.size());
    return out;
}

// [0, 1] image -> [-1, 1] tensor.
template <class T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> v(img.data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.data[i]) * T(2) - T(1);
    return Tensor<T>(Shape{img.channels, img.height, img.width}, std::move(v));
}

// [-1, 1] tensor -> [0, 1] image, clamped.
template <class T>
Image tensor_to_image(const Tensor<T>& t) {
    if (t.rank() != 3) throw ShapeError("tensor_to_image: expected C x H x W, got " + shape_str(t.shape()));
    Image img(t.dim(0), t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = std::clamp(static_cast<float>((t[i] + T(1)) / T(2)), 0.0f, 1.0f);
    return img;
}

}  // namespace mostnet
