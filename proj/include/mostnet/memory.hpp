#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mostnet/ops.hpp"
#include "mostnet/rng.hpp"
#include "mostnet/tensor.hpp"

namespace mostnet {

inline constexpr double kNormEpsilon = 1e-8;

namespace detail {

template <class T>
std::string num_str(T v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

class MemoryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// N feature vectors of dimension c taken from a c x h x w map, slot i being
// the spatial position (i / w, i % w). `slots` is an N x c tensor.
template <class T>
struct SlotSet {
    Tensor<T> slots;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t count() const { return slots.dim(0); }
    std::size_t dim() const { return slots.dim(1); }
    std::span<const T> slot(std::size_t i) const { return slots.data().subspan(i * dim(), dim()); }
};

template <class T>
SlotSet<T> slots_from_map(const Tensor<T>& feature_map) {
    if (feature_map.rank() != 3) throw ShapeError("slots_from_map: expected c x h x w, got " + shape_str(feature_map.shape()));
    const std::size_t c = feature_map.dim(0), h = feature_map.dim(1), w = feature_map.dim(2);
    return {transpose(reshape(feature_map, Shape{c, h * w})), h, w};
}

template <class T>
Tensor<T> map_from_slots(const SlotSet<T>& s) {
    if (s.slots.rank() != 2) throw ShapeError("map_from_slots: slots must be N x c, got " + shape_str(s.slots.shape()));
    if (s.count() != s.height * s.width) {
        throw ShapeError("map_from_slots: " + std::to_string(s.count()) + " slots cannot fill " +
                         std::to_string(s.height) + "x" + std::to_string(s.width));
    }
    return reshape(transpose(s.slots), Shape{s.dim(), s.height, s.width});
}

// Fixed-order dot product; identical inputs give identical results whatever
// their alignment.
template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
    constexpr std::size_t lanes = 8;
    T acc[lanes] = {};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + lanes <= n; i += lanes)
        for (std::size_t l = 0; l < lanes; ++l) acc[l] += a[i + l] * b[i + l];
    T total = T(0);
    for (std::size_t l = 0; l < lanes; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

template <class T>
T norm(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: dimensions " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
    }
    const T na = norm(a), nb = norm(b);
    if (!(na > kNormEpsilon) || !(nb > kNormEpsilon)) {
        throw MemoryError("cosine_similarity: near-zero norm (" + detail::num_str(na) + ", " +
                          detail::num_str(nb) + ")");
    }
    return dot(a, b) / (na * nb);
}

enum class MemoryHalf { keys, values };

// K (key, value) pairs of dimension c with EMA decay `alpha`. Keys and values
// are K x c row-major.
template <class T>
class MemoryDictionary {
public:
    MemoryDictionary() = default;

    MemoryDictionary(std::size_t count, std::size_t dim, T alpha, std::vector<T> keys, std::vector<T> values)
        : count_(count), dim_(dim), alpha_(alpha), keys_(std::move(keys)), values_(std::move(values)) {
        if (count == 0 || dim == 0) throw MemoryError("memory: K and c must be positive");
        if (keys_.size() != count * dim || values_.size() != count * dim) {
            throw MemoryError("memory: storage does not hold K x c = " + std::to_string(count) + "x" +
                              std::to_string(dim) + " entries");
        }
        set_alpha(alpha);
    }

    std::size_t count() const { return count_; }
    std::size_t dim() const { return dim_; }
    T alpha() const { return alpha_; }
    void set_alpha(T alpha) {
        if (!(alpha >= T(0) && alpha <= T(1))) {
            throw MemoryError("memory: decay rate must lie in [0, 1], got " + detail::num_str(alpha));
        }
        alpha_ = alpha;
    }

    std::span<const T> keys() const { return keys_; }
    std::span<const T> values() const { return values_; }
    std::span<T> mutable_keys() { return keys_; }
    std::span<T> mutable_values() { return values_; }
    std::span<const T> entries(MemoryHalf half) const { return half == MemoryHalf::keys ? keys() : values(); }
    std::span<T> mutable_entries(MemoryHalf half) { return half == MemoryHalf::keys ? mutable_keys() : mutable_values(); }

    std::span<const T> key(std::size_t j) const { return keys().subspan(j * dim_, dim_); }
    std::span<const T> value(std::size_t j) const { return values().subspan(j * dim_, dim_); }

    bool operator==(const MemoryDictionary&) const = default;

private:
    std::size_t count_ = 0;
    std::size_t dim_ = 0;
    T alpha_ = T(0.999);
    std::vector<T> keys_;
    std::vector<T> values_;
};

// Keys and values drawn independently from a standard normal.
template <class T>
MemoryDictionary<T> init_memory(std::size_t count, std::size_t dim, std::uint64_t seed, T alpha = T(0.999)) {
    if (count == 0 || dim == 0) {
        throw MemoryError("init_memory: K and c must be positive, got K=" + std::to_string(count) +
                          " c=" + std::to_string(dim));
    }
    Rng rng(seed, 0x6d656d6f7279ULL);
    std::vector<T> keys(count * dim), values(count * dim);
    for (auto& k : keys) k = static_cast<T>(rng.normal());
    for (auto& v : values) v = static_cast<T>(rng.normal());
    return MemoryDictionary<T>(count, dim, alpha, std::move(keys), std::move(values));
}

namespace detail {

template <class T>
std::vector<T> entry_norms(std::span<const T> entries, std::size_t count, std::size_t dim) {
    std::vector<T> norms(count);
    for (std::size_t j = 0; j < count; ++j) {
        norms[j] = norm(entries.subspan(j * dim, dim));
        if (!(norms[j] > kNormEpsilon)) {
            throw MemoryError("memory: entry " + std::to_string(j) + " has near-zero norm " +
                              detail::num_str(norms[j]));
        }
    }
    return norms;
}

// Index of the most cosine-similar entry for every row of `queries`
// (rows x dim); ties go to the lowest index. Similarities are screened with a
// GEMM and every entry within rounding distance of the row maximum is
// rescored with the fixed-order dot, so the result matches a plain scan.
template <class T>
std::vector<std::size_t> nearest_indices(std::span<const T> queries, std::size_t rows, std::span<const T> entries,
                                         std::size_t count, std::size_t dim) {
    const auto norms = entry_norms(entries, count, dim);
    std::vector<T> qnorms(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        qnorms[i] = norm(queries.subspan(i * dim, dim));
        if (!(qnorms[i] > kNormEpsilon)) {
            throw MemoryError("memory: query slot " + std::to_string(i) + " has near-zero norm " +
                              detail::num_str(qnorms[i]));
        }
    }
    const ConstMatrixMap<T> q(queries.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
    const ConstMatrixMap<T> e(entries.data(), static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
    RowMatrix<T> screen(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(count));
    gemm(screen, q, e.transpose());
    const T margin = T(64) * static_cast<T>(dim) * std::numeric_limits<T>::epsilon();

    std::vector<std::size_t> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto qi = static_cast<Eigen::Index>(i);
        T top = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < count; ++j) top = std::max(top, screen(qi, static_cast<Eigen::Index>(j)) / norms[j]);
        const auto qrow = queries.subspan(i * dim, dim);
        const T threshold = top - margin * qnorms[i];
        std::size_t best = 0;
        T best_sim = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < count; ++j) {
            if (screen(qi, static_cast<Eigen::Index>(j)) / norms[j] < threshold) continue;
            const T sim = dot(qrow, entries.subspan(j * dim, dim)) / (qnorms[i] * norms[j]);
            if (sim > best_sim) {
                best_sim = sim;
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

template <class T>
void require_slot_dim(const SlotSet<T>& s, const MemoryDictionary<T>& m, const char* op) {
    if (s.slots.rank() != 2 || s.dim() != m.dim()) {
        throw ShapeError(std::string(op) + ": slots " + shape_str(s.slots.shape()) + " do not match memory dimension " +
                         std::to_string(m.dim()));
    }
}

}  // namespace detail

template <class T>
std::size_t nearest_entry(std::span<const T> query, const MemoryDictionary<T>& m, MemoryHalf half) {
    if (query.size() != m.dim()) {
        throw ShapeError("nearest_entry: query dimension " + std::to_string(query.size()) + " vs memory " +
                         std::to_string(m.dim()));
    }
    return detail::nearest_indices(query, 1, m.entries(half), m.count(), m.dim()).front();
}

template <class T>
std::size_t nearest_key(std::span<const T> query, const MemoryDictionary<T>& m) {
    return nearest_entry(query, m, MemoryHalf::keys);
}

template <class T>
std::vector<std::size_t> nearest_entries(const SlotSet<T>& s, const MemoryDictionary<T>& m, MemoryHalf half) {
    detail::require_slot_dim(s, m, "nearest_entries");
    return detail::nearest_indices(s.slots.data(), s.count(), m.entries(half), m.count(), m.dim());
}

// Self-supervised EMA update. Every photo slot is assigned to its nearest
// key and every sketch slot to its nearest value (assignments use the
// dictionary as it was before the call); each assigned entry then moves once
// toward the mean of its slots: e <- alpha * e + (1 - alpha) * mean.
// Entries without slots are untouched. Slot gradients are not tracked.
template <class T>
void update_memory(MemoryDictionary<T>& m, std::span<const SlotSet<T>> photo, std::span<const SlotSet<T>> sketch) {
    if (photo.size() != sketch.size()) {
        throw ShapeError("update_memory: " + std::to_string(photo.size()) + " photo slot sets vs " +
                         std::to_string(sketch.size()) + " sketch slot sets");
    }
    for (std::size_t b = 0; b < photo.size(); ++b) {
        detail::require_slot_dim(photo[b], m, "update_memory");
        detail::require_slot_dim(sketch[b], m, "update_memory");
        if (photo[b].count() != sketch[b].count()) {
            throw ShapeError("update_memory: slot counts differ, " + std::to_string(photo[b].count()) + " vs " +
                             std::to_string(sketch[b].count()));
        }
    }
    if (m.alpha() == T(1)) return;

    const std::size_t dim = m.dim();
    auto update_half = [&](MemoryHalf half, std::span<const SlotSet<T>> sets) {
        std::vector<double> sums(m.count() * dim, 0.0);
        std::vector<std::size_t> counts(m.count(), 0);
        for (const auto& s : sets) {
            const auto idx = detail::nearest_indices(s.slots.data(), s.count(), m.entries(half), m.count(), dim);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto slot = s.slot(i);
                ++counts[idx[i]];
                for (std::size_t d = 0; d < dim; ++d) sums[idx[i] * dim + d] += slot[d];
            }
        }
        auto entries = m.mutable_entries(half);
        const T a = m.alpha();
        for (std::size_t j = 0; j < m.count(); ++j) {
            if (counts[j] == 0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
                const T avg = static_cast<T>(sums[j * dim + d] / static_cast<double>(counts[j]));
                entries[j * dim + d] = a * entries[j * dim + d] + (T(1) - a) * avg;
            }
        }
    };
    // Both halves are assigned against the pre-update dictionary; keys and
    // values are disjoint so the order does not matter.
    update_half(MemoryHalf::keys, photo);
    update_half(MemoryHalf::values, sketch);
}

template <class T>
void update_memory(MemoryDictionary<T>& m, const SlotSet<T>& photo, const SlotSet<T>& sketch) {
    update_memory(m, std::span<const SlotSet<T>>(&photo, 1), std::span<const SlotSet<T>>(&sketch, 1));
}

// scale * cos(slot_i, entry_j) as an N x K tensor. Differentiable with
// respect to the slots; the entries are constants.
template <class T>
Tensor<T> cosine_logits(const Tensor<T>& slots, std::span<const T> entries, std::size_t count, T scale = T(1)) {
    if (slots.rank() != 2) throw ShapeError("cosine_logits: slots must be N x c, got " + shape_str(slots.shape()));
    const std::size_t n = slots.dim(0), c = slots.dim(1);
    if (entries.size() != count * c) {
        throw ShapeError("cosine_logits: slots " + shape_str(slots.shape()) + " vs entries of " +
                         std::to_string(entries.size() / std::max<std::size_t>(count, 1)) + " dimensions");
    }
    const auto entry_norm = detail::entry_norms(entries, count, c);
    RowMatrix<T> e_hat(count, c);
    for (std::size_t j = 0; j < count; ++j)
        for (std::size_t d = 0; d < c; ++d) e_hat(j, d) = entries[j * c + d] / entry_norm[j];

    auto f_hat = std::make_shared<RowMatrix<T>>(n, c);
    auto f_norm = std::make_shared<std::vector<T>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = slots.data().subspan(i * c, c);
        const T nn = norm(row);
        if (!(nn > kNormEpsilon)) {
            throw MemoryError("cosine_logits: query slot " + std::to_string(i) + " has near-zero norm " +
                              detail::num_str(nn));
        }
        (*f_norm)[i] = nn;
        for (std::size_t d = 0; d < c; ++d) (*f_hat)(i, d) = row[d] / nn;
    }
    std::vector<T> out(n * count);
    detail::gemm(MatrixMap<T>(out.data(), n, count), *f_hat, e_hat.transpose());
    for (auto& v : out) v *= scale;

    auto e_hat_shared = std::make_shared<RowMatrix<T>>(std::move(e_hat));
    return Tensor<T>::from_op(Shape{n, count}, std::move(out), "cosine_logits", {slots},
                              [slots, f_hat, f_norm, e_hat_shared, n, c, count, scale](const Node<T>& self) {
                                  if (!slots.requires_grad()) return;
                                  RowMatrix<T> d_hat(n, c);
                                  detail::gemm(d_hat, ConstMatrixMap<T>(self.grad.data(), n, count), *e_hat_shared);
                                  d_hat *= scale;
                                  auto g = slots.node()->grad_buffer();
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const T radial = d_hat.row(i).dot(f_hat->row(i));
                                      for (std::size_t d = 0; d < c; ++d)
                                          g[i * c + d] += (d_hat(i, d) - radial * (*f_hat)(i, d)) / (*f_norm)[i];
                                  }
                              });
}

// Attentive read: s_hat_i = sum_j softmax_j(cos(f_i, k_j) / temperature) v_j.
// Gradients reach the query slots through the weights; the dictionary is
// constant. The default temperature of 1 is the plain cosine softmax.
template <class T>
SlotSet<T> attentive_read(const MemoryDictionary<T>& m, const SlotSet<T>& query, T temperature = T(1)) {
    detail::require_slot_dim(query, m, "attentive_read");
    if (!(temperature > T(0))) throw MemoryError("attentive_read: temperature must be positive");
    const auto weights = softmax_rows(cosine_logits(query.slots, m.keys(), m.count(), T(1) / temperature));
    const Tensor<T> values(Shape{m.count(), m.dim()}, std::vector<T>(m.values().begin(), m.values().end()));
    return {matmul(weights, values), query.height, query.width};
}

// Attention weights used by attentive_read, exposed for inspection.
template <class T>
Tensor<T> attention_weights(const MemoryDictionary<T>& m, const SlotSet<T>& query, T temperature = T(1)) {
    detail::require_slot_dim(query, m, "attention_weights");
    return softmax_rows(cosine_logits(query.slots, m.keys(), m.count(), T(1) / temperature));
}

enum class AssignmentMode { hard, soft };

// Rows are distributions over the K entries of one memory half: one-hot at
// the nearest entry (hard) or softmax(cos / tau) (soft, differentiable).
template <class T>
Tensor<T> assignment_matrix(const SlotSet<T>& s, const MemoryDictionary<T>& m, MemoryHalf half, AssignmentMode mode,
                            T tau = T(0.1)) {
    detail::require_slot_dim(s, m, "assignment_matrix");
    if (mode == AssignmentMode::soft) {
        if (!(tau > T(0))) {
            throw MemoryError("assignment_matrix: temperature must be positive, got " +
                              detail::num_str(tau));
        }
        return softmax_rows(cosine_logits(s.slots, m.entries(half), m.count(), T(1) / tau));
    }
    const auto idx = nearest_entries(s, m, half);
    std::vector<T> rows(s.count() * m.count(), T(0));
    for (std::size_t i = 0; i < idx.size(); ++i) rows[i * m.count() + idx[i]] = T(1);
    return Tensor<T>(Shape{s.count(), m.count()}, std::move(rows));
}

// Memory refinement loss (1 / 2N) sum_i |SIM_f(i, .) - SIM_s(i, .)|_1 where
// SIM_f assigns photo slots to keys and SIM_s assigns sketch slots to values.
// In hard mode this is the fraction of slots whose two assignments disagree.
template <class T>
Tensor<T> mr_loss(const SlotSet<T>& photo, const SlotSet<T>& sketch, const MemoryDictionary<T>& m, AssignmentMode mode,
                  T tau = T(0.1)) {
    if (photo.slots.shape() != sketch.slots.shape()) {
        throw ShapeError("mr_loss: photo slots " + shape_str(photo.slots.shape()) + " vs sketch slots " +
                         shape_str(sketch.slots.shape()));
    }
    const auto sim_f = assignment_matrix(photo, m, MemoryHalf::keys, mode, tau);
    const auto sim_s = assignment_matrix(sketch, m, MemoryHalf::values, mode, tau);
    return scale(sum(abs(sub(sim_f, sim_s))), T(1) / (T(2) * static_cast<T>(photo.count())));
}

}  // namespace mostnet
