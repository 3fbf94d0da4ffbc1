#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mostnet/rng.hpp"

namespace mostnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::uint64_t sequence = detail::sequence_counter().fetch_add(1, std::memory_order_relaxed);
    std::string op;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into the parents.
    std::function<void(const Node&)> backward;

    std::span<T> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

// Dense row-major n-dimensional array with optional gradient tracking.
//
// A Tensor is a shared handle: copies alias the same storage. Values of
// recorded results are never modified; leaves (parameters, inputs) may be
// written through mutable_data() between graph evaluations.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() : node_(std::make_shared<Node<T>>()) {}

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor: data length " + std::to_string(values.size()) + " does not match shape " +
                             shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
        node_->op = "leaf";
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(0), requires_grad); }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.normal() * static_cast<double>(stddev));
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    // Builds a recorded result. The backward rule is kept only when some
    // parent requires a gradient and recording is enabled.
    static Tensor from_op(Shape shape, std::vector<T> values, std::string_view op,
                          std::initializer_list<Tensor> parents,
                          std::function<void(const Node<T>&)> backward) {
        Tensor out(std::move(shape), std::move(values));
        out.node_->op = std::string(op);
        if (!grad_enabled()) return out;
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (!needs) return out;
        out.node_->requires_grad = true;
        for (const auto& p : parents) out.node_->parents.push_back(p.node_);
        out.node_->backward = std::move(backward);
        return out;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    std::span<T> mutable_data() { return node_->value; }
    const T* ptr() const { return node_->value.data(); }

    T item() const {
        if (numel() != 1) throw ShapeError("tensor: item() on non-scalar " + shape_str(shape()));
        return node_->value[0];
    }

    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool r) {
        node_->requires_grad = r;
        return *this;
    }

    bool is_leaf() const { return !node_->backward; }
    const std::string& op() const { return node_->op; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient, or an empty span when none has been accumulated.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_buffer() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }

    // New leaf holding a copy of the values, disconnected from the graph.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    Tensor clone(bool requires_grad) const { return Tensor(shape(), node_->value, requires_grad); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

// Accumulates `contribution` into the gradient of `target` when it tracks one.
template <class T>
inline void accumulate(const std::shared_ptr<Node<T>>& target, std::span<const T> contribution) {
    if (!target->requires_grad) return;
    auto g = target->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

// Reverse-mode sweep from a scalar loss. Nodes are replayed in reverse
// creation order, which is a topological order of the recorded graph.
// Unless retain_graph is set, intermediate gradients and backward rules are
// released afterwards so that only leaf gradients remain.
template <class T>
void backward(const Tensor<T>& loss, bool retain_graph = false) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Owning references keep every node alive while parents are released.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::vector<std::shared_ptr<Node<T>>> stack{loss.node()};
    std::unordered_set<const Node<T>*> visited;
    while (!stack.empty()) {
        auto n = std::move(stack.back());
        stack.pop_back();
        if (!visited.insert(n.get()).second) continue;
        for (const auto& p : n->parents) {
            if (p->requires_grad) stack.push_back(p);
        }
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->sequence > b->sequence; });

    auto& root = *loss.node();
    root.grad_buffer()[0] += T(1);
    for (const auto& n : order) {
        if (!n->backward) continue;
        if (!n->grad.empty()) n->backward(*n);
        if (!retain_graph) {
            n->backward = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

}  // namespace mostnet
