#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "mostnet/tensor.hpp"

namespace mostnet {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

// dst = a * b, or dst += a * b. Eigen hands products with one output row or
// column, and tiny ones, to kernels whose rounding depends on the pointer
// alignment of the operands; those take a fixed-order loop so results do not
// depend on where buffers happen to live.
template <class Dst, class A, class B>
void gemm(Dst&& dst, const A& a, const B& b, bool accumulate = false) {
    using S = typename std::decay_t<Dst>::Scalar;
    const Eigen::Index n = dst.rows(), m = dst.cols(), k = a.cols();
    if (n == 1 || m == 1 || n + m + k < 20) {
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < m; ++j) {
                S acc(0);
                for (Eigen::Index p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
                dst(i, j) = accumulate ? dst(i, j) + acc : acc;
            }
    } else if (accumulate) {
        dst.noalias() += a * b;
    } else {
        dst.noalias() = a * b;
    }
}

}  // namespace detail

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <class T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
    }
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D dfdx) {
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return Tensor<T>::from_op(x.shape(), std::move(out), name, {x}, [x, dfdx](const Node<T>& self) {
        if (!x.requires_grad()) return;
        auto g = x.node()->grad_buffer();
        const auto xin = x.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xin[i], self.value[i]);
    });
}

}  // namespace detail

// --- elementwise ---------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b}, [a, b](const Node<T>& self) {
        accumulate<T>(a.node(), self.grad);
        accumulate<T>(b.node(), self.grad);
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), "sub", {a, b}, [a, b](const Node<T>& self) {
        accumulate<T>(a.node(), self.grad);
        if (b.requires_grad()) {
            auto g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b}, [a, b](const Node<T>& self) {
        if (a.requires_grad()) {
            auto g = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b[i];
        }
        if (b.requires_grad()) {
            auto g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a[i];
        }
    });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "div");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), "div", {a, b}, [a, b](const Node<T>& self) {
        if (a.requires_grad()) {
            auto g = a.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / b[i];
        }
        if (b.requires_grad()) {
            auto g = b.node()->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / b[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary(x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary(x, "abs", [](T v) { return std::abs(v); },
                         [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary(x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Gradient is passed through only strictly inside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary(x, "clamp", [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
                         [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
                         [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
    return detail::unary(x, "leaky_relu", [slope](T v) { return v > T(0) ? v : slope * v; },
                         [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return detail::unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x, "sigmoid",
        [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
        [](T, T y) { return y * (T(1) - y); });
}

// --- reductions ----------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return Tensor<T>::from_op(Shape{}, {acc}, "sum", {x}, [x](const Node<T>& self) {
        if (!x.requires_grad()) return;
        auto g = x.node()->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum of a list of same-shape tensors.
template <class T>
Tensor<T> add_all(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("add_all: empty list");
    Tensor<T> acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

template <class T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& xs) {
    return scale(add_all(xs), T(1) / static_cast<T>(xs.size()));
}

// --- matrices (rank 2) ---------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<T> out(n * m);
    detail::gemm(MatrixMap<T>(out.data(), n, m), ConstMatrixMap<T>(a.ptr(), n, k), ConstMatrixMap<T>(b.ptr(), k, m));
    return Tensor<T>::from_op(Shape{n, m}, std::move(out), "matmul", {a, b}, [a, b, n, k, m](const Node<T>& self) {
        ConstMatrixMap<T> g(self.grad.data(), n, m);
        if (a.requires_grad()) {
            auto ga = a.node()->grad_buffer();
            detail::gemm(MatrixMap<T>(ga.data(), n, k), g, ConstMatrixMap<T>(b.ptr(), k, m).transpose(), true);
        }
        if (b.requires_grad()) {
            auto gb = b.node()->grad_buffer();
            detail::gemm(MatrixMap<T>(gb.data(), k, m), ConstMatrixMap<T>(a.ptr(), n, k).transpose(), g, true);
        }
    });
}

// Row-wise softmax of a rank-2 tensor.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    detail::require_rank(x, 2, "softmax_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.ptr() + r * cols;
        T* o = out.data() + r * cols;
        const T mx = *std::max_element(in, in + cols);
        T total = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            total += o[c];
        }
        for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), "softmax_rows", {x}, [x, rows, cols](const Node<T>& self) {
        if (!x.requires_grad()) return;
        auto g = x.node()->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * cols;
            const T* dy = self.grad.data() + r * cols;
            T dot = T(0);
            for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
        }
    });
}

// --- shape manipulation --------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return Tensor<T>::from_op(std::move(shape), std::move(out), "reshape", {x},
                              [x](const Node<T>& self) { accumulate<T>(x.node(), self.grad); });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    detail::require_rank(x, 2, "transpose");
    const auto rows = x.dim(0), cols = x.dim(1);
    std::vector<T> out(x.numel());
    MatrixMap<T>(out.data(), cols, rows) = ConstMatrixMap<T>(x.ptr(), rows, cols).transpose();
    return Tensor<T>::from_op(Shape{cols, rows}, std::move(out), "transpose", {x}, [x, rows, cols](const Node<T>& self) {
        if (!x.requires_grad()) return;
        auto g = x.node()->grad_buffer();
        MatrixMap<T>(g.data(), rows, cols) += ConstMatrixMap<T>(self.grad.data(), cols, rows).transpose();
    });
}

// Concatenation along the leading axis (channels for C x H x W maps).
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat: empty list");
    Shape shape = xs.front().shape();
    if (shape.empty()) throw ShapeError("concat: scalars cannot be concatenated");
    std::size_t lead = 0;
    for (const auto& x : xs) {
        if (x.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), x.shape().begin() + 1)) {
            throw ShapeError("concat: trailing extents differ, " + shape_str(xs.front().shape()) + " vs " +
                             shape_str(x.shape()));
        }
        lead += x.dim(0);
    }
    shape[0] = lead;
    std::vector<T> out;
    out.reserve(shape_numel(shape));
    for (const auto& x : xs) out.insert(out.end(), x.data().begin(), x.data().end());

    auto result = Tensor<T>(shape, std::move(out));
    if (!grad_enabled()) return result;
    bool needs = false;
    for (const auto& x : xs) needs = needs || x.requires_grad();
    if (!needs) return result;
    auto& node = *result.node();
    node.op = "concat";
    node.requires_grad = true;
    for (const auto& x : xs) node.parents.push_back(x.node());
    node.backward = [xs](const Node<T>& self) {
        std::size_t offset = 0;
        for (const auto& x : xs) {
            accumulate<T>(x.node(), std::span<const T>(self.grad).subspan(offset, x.numel()));
            offset += x.numel();
        }
    };
    return result;
}

// --- convolution and resampling (C x H x W) -------------------------------

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

namespace detail {

template <class T>
void im2col(const T* in, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* col) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = col + ((c * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = in + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* grad_in) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = col + ((c * k + ky) * k + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    T* dst = grad_in + (c * height + static_cast<std::size_t>(iy)) * width;
                    const T* src = row + oy * out_w;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation of a C_in x H x W map with C_out x C_in x k x k weights.
// `bias` is either empty (numel 0) or holds C_out entries.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt = {}) {
    if (input.rank() != 3 || weight.rank() != 4) {
        throw ShapeError("conv2d: expected input C x H x W and weight Co x Ci x k x k, got input " +
                         shape_str(input.shape()) + " and weight " + shape_str(weight.shape()));
    }
    const std::size_t cin = input.dim(0), height = input.dim(1), width = input.dim(2);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != cin || weight.dim(3) != k) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    if (opt.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    if (height + 2 * opt.padding < k || width + 2 * opt.padding < k) {
        throw ShapeError("conv2d: kernel of weight " + shape_str(weight.shape()) + " does not fit input " +
                         shape_str(input.shape()) + " with padding " + std::to_string(opt.padding));
    }
    const bool has_bias = bias.numel() > 0;
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    const std::size_t out_h = conv_output_extent(height, k, opt.stride, opt.padding);
    const std::size_t out_w = conv_output_extent(width, k, opt.stride, opt.padding);
    const std::size_t plane = out_h * out_w;
    const std::size_t patch = cin * k * k;

    const bool direct = (k == 1 && opt.stride == 1 && opt.padding == 0);
    auto col = std::make_shared<std::vector<T>>();
    if (!direct) {
        col->resize(patch * plane);
        detail::im2col(input.ptr(), cin, height, width, k, opt.stride, opt.padding, out_h, out_w, col->data());
    }
    const T* col_ptr = direct ? input.ptr() : col->data();

    std::vector<T> out(cout * plane);
    MatrixMap<T> out_m(out.data(), cout, plane);
    detail::gemm(out_m, ConstMatrixMap<T>(weight.ptr(), cout, patch), ConstMatrixMap<T>(col_ptr, patch, plane));
    if (has_bias) {
        for (std::size_t o = 0; o < cout; ++o) out_m.row(o).array() += bias[o];
    }

    Tensor<T> bias_ref = bias;
    return Tensor<T>::from_op(
        Shape{cout, out_h, out_w}, std::move(out), "conv2d", {input, weight, bias},
        [input, weight, bias_ref, col, direct, opt, cin, height, width, k, cout, out_h, out_w, plane,
         patch](const Node<T>& self) {
            ConstMatrixMap<T> gout(self.grad.data(), cout, plane);
            const T* col_ptr = direct ? input.ptr() : col->data();
            if (weight.requires_grad()) {
                auto gw = weight.node()->grad_buffer();
                detail::gemm(MatrixMap<T>(gw.data(), cout, patch), gout, ConstMatrixMap<T>(col_ptr, patch, plane).transpose(), true);
            }
            if (bias_ref.numel() > 0 && bias_ref.requires_grad()) {
                auto gb = bias_ref.node()->grad_buffer();
                for (std::size_t o = 0; o < cout; ++o) {
                    T acc(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += self.grad[o * plane + i];
                    gb[o] += acc;
                }
            }
            if (input.requires_grad()) {
                auto gi = input.node()->grad_buffer();
                if (direct) {
                    detail::gemm(MatrixMap<T>(gi.data(), patch, plane), ConstMatrixMap<T>(weight.ptr(), cout, patch).transpose(), gout,
                                 true);
                } else {
                    RowMatrix<T> gcol(patch, plane);
                    detail::gemm(gcol, ConstMatrixMap<T>(weight.ptr(), cout, patch).transpose(), gout);
                    detail::col2im(gcol.data(), cin, height, width, k, opt.stride, opt.padding, out_h, out_w,
                                   gi.data());
                }
            }
        });
}

template <class T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    detail::require_rank(x, 3, "upsample_nearest2x");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out(c * 4 * h * w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(ch * 2 * h + y) * 2 * w + xx] = x[(ch * h + y / 2) * w + xx / 2];
    return Tensor<T>::from_op(Shape{c, 2 * h, 2 * w}, std::move(out), "upsample_nearest2x", {x},
                              [x, c, h, w](const Node<T>& self) {
                                  if (!x.requires_grad()) return;
                                  auto g = x.node()->grad_buffer();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t y = 0; y < 2 * h; ++y)
                                          for (std::size_t xx = 0; xx < 2 * w; ++xx)
                                              g[(ch * h + y / 2) * w + xx / 2] += self.grad[(ch * 2 * h + y) * 2 * w + xx];
                              });
}

template <class T>
Tensor<T> avg_pool2x2(const Tensor<T>& x) {
    detail::require_rank(x, 3, "avg_pool2x2");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2x2: odd extents " + shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<T> out(c * oh * ow);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const T* p = x.ptr() + (ch * h + 2 * y) * w + 2 * xx;
                out[(ch * oh + y) * ow + xx] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
            }
    return Tensor<T>::from_op(Shape{c, oh, ow}, std::move(out), "avg_pool2x2", {x},
                              [x, c, h, w, oh, ow](const Node<T>& self) {
                                  if (!x.requires_grad()) return;
                                  auto g = x.node()->grad_buffer();
                                  for (std::size_t ch = 0; ch < c; ++ch)
                                      for (std::size_t y = 0; y < oh; ++y)
                                          for (std::size_t xx = 0; xx < ow; ++xx) {
                                              const T v = T(0.25) * self.grad[(ch * oh + y) * ow + xx];
                                              T* p = g.data() + (ch * h + 2 * y) * w + 2 * xx;
                                              p[0] += v;
                                              p[1] += v;
                                              p[w] += v;
                                              p[w + 1] += v;
                                          }
                              });
}

// Per-channel normalization over spatial positions:
// (x - mean) / sqrt(var + eps), population variance.
template <class T>
Tensor<T> instance_normalize(const Tensor<T>& x, T eps = T(1e-5)) {
    detail::require_rank(x, 3, "instance_normalize");
    const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
    std::vector<T> out(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = x.ptr() + ch * n;
        T mu = T(0);
        for (std::size_t i = 0; i < n; ++i) mu += p[i];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[ch] = is;
        for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = (p[i] - mu) * is;
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), "instance_normalize", {x},
                              [x, c, n, inv_std](const Node<T>& self) {
                                  if (!x.requires_grad()) return;
                                  auto g = x.node()->grad_buffer();
                                  for (std::size_t ch = 0; ch < c; ++ch) {
                                      const T* dy = self.grad.data() + ch * n;
                                      const T* y = self.value.data() + ch * n;
                                      T mean_dy = T(0), mean_dy_y = T(0);
                                      for (std::size_t i = 0; i < n; ++i) {
                                          mean_dy += dy[i];
                                          mean_dy_y += dy[i] * y[i];
                                      }
                                      mean_dy /= static_cast<T>(n);
                                      mean_dy_y /= static_cast<T>(n);
                                      const T is = (*inv_std)[ch];
                                      for (std::size_t i = 0; i < n; ++i)
                                          g[ch * n + i] += is * (dy[i] - mean_dy - y[i] * mean_dy_y);
                                  }
                              });
}

// --- conversions ---------------------------------------------------------

template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
    std::vector<To> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(x[i]);
    return Tensor<To>(x.shape(), std::move(v));
}

}  // namespace mostnet
