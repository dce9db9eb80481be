#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphfuse/common.hpp"

namespace graphfuse {

// Thread-local autograd switch, PyTorch-style.
struct GradMode {
    static bool& flag() {
        thread_local bool enabled = true;
        return enabled;
    }
    static bool enabled() { return flag(); }
    static void set_enabled(bool on) { flag() = on; }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }

private:
    bool prev_;
};

template <typename T>
class Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// Dense row-major tensor with reverse-mode differentiation. Data is
// immutable after construction (ops return fresh tensors); only `grad`
// accumulates. Gradients add up across backward() calls until zero_grad().
template <typename T>
class Tensor : public std::enable_shared_from_this<Tensor<T>> {
public:
    Dims dims;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;

    // Reverse graph: inputs of the op that produced this tensor, and the
    // closure that pushes this->grad into their grads.
    std::vector<TensorPtr<T>> parents;
    std::function<void(Tensor<T>&)> backward_fn;

    // Zero-size dims are allowed (degenerate but useful for e.g. a
    // sensor-less modality); negative sizes are not.
    static TensorPtr<T> create(Dims d, std::vector<T> values, bool track = false) {
        for (auto s : d) {
            if (s < 0) throw ShapeError("tensor dims must be nonnegative, got " + dims_to_string(d));
        }
        if (static_cast<std::int64_t>(values.size()) != numel_of(d)) {
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match dims " + dims_to_string(d));
        }
        auto t = std::make_shared<Tensor<T>>();
        t->dims = std::move(d);
        t->data = std::move(values);
        t->requires_grad = track;
        return t;
    }

    static TensorPtr<T> zeros(Dims d, bool track = false) {
        std::vector<T> v(static_cast<std::size_t>(numel_of(d)), T(0));
        return create(std::move(d), std::move(v), track);
    }

    static TensorPtr<T> full(Dims d, T value, bool track = false) {
        std::vector<T> v(static_cast<std::size_t>(numel_of(d)), value);
        return create(std::move(d), std::move(v), track);
    }

    static TensorPtr<T> scalar(T value, bool track = false) {
        return create({1}, {value}, track);
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::size_t ndim() const { return dims.size(); }
    std::int64_t dim(std::size_t i) const { return dims.at(i); }
    bool is_leaf() const { return !backward_fn; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw UsageError("item() on non-scalar tensor " + dims_to_string(dims));
        return data[0];
    }
};

namespace detail {

template <typename T>
TensorPtr<T> make_result(Dims dims, std::vector<T> values, std::vector<TensorPtr<T>> parents,
                         std::function<void(Tensor<T>&)> bw) {
    bool track = false;
    if (GradMode::enabled()) {
        for (const auto& p : parents) track = track || p->requires_grad;
    }
    auto out = Tensor<T>::create(std::move(dims), std::move(values));
    if (track) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(bw);
    }
    return out;
}

template <typename T>
void check_same_dims(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dims != b.dims) {
        throw ShapeError(std::string(op) + ": shape mismatch " + dims_to_string(a.dims) +
                         " vs " + dims_to_string(b.dims));
    }
}

// outer/len/inner split around one axis.
inline void axis_split(const Dims& dims, std::size_t axis, std::int64_t& outer,
                       std::int64_t& len, std::int64_t& inner) {
    outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
    len = dims[axis];
    inner = 1;
    for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
}

// Raw permute on contiguous buffers: out multi-index J has J[k] = I[perm[k]].
template <typename T>
std::vector<T> permute_raw(const std::vector<T>& in, const Dims& in_dims,
                           const std::vector<std::size_t>& perm, Dims& out_dims) {
    const std::size_t nd = in_dims.size();
    out_dims.assign(nd, 0);
    for (std::size_t k = 0; k < nd; ++k) out_dims[k] = in_dims[perm[k]];
    Dims in_strides = strides_of(in_dims);
    std::vector<std::int64_t> gather_stride(nd);
    for (std::size_t k = 0; k < nd; ++k) gather_stride[k] = in_strides[perm[k]];

    std::vector<T> out(in.size());
    Dims idx(nd, 0);
    std::int64_t src = 0;
    const std::int64_t total = static_cast<std::int64_t>(in.size());
    for (std::int64_t o = 0; o < total; ++o) {
        out[o] = in[src];
        for (std::int64_t k = static_cast<std::int64_t>(nd) - 1; k >= 0; --k) {
            src += gather_stride[k];
            if (++idx[k] < out_dims[k]) break;
            src -= gather_stride[k] * out_dims[k];
            idx[k] = 0;
        }
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode accumulation from a scalar root. Leaf gradients accumulate
// across calls (running backward twice doubles them); interior buffers are
// reset per call.
template <typename T>
void backward(const TensorPtr<T>& root) {
    if (root->numel() != 1) {
        throw UsageError("backward: root must be scalar, got " + dims_to_string(root->dims));
    }
    if (!root->requires_grad) {
        throw UsageError("backward: root does not require grad");
    }

    std::vector<Tensor<T>*> order;  // producers first
    std::unordered_set<Tensor<T>*> visited{root.get()};
    struct Frame {
        Tensor<T>* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.get(), 0}};
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            Tensor<T>* p = f.node->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (Tensor<T>* n : order) {
        n->ensure_grad();
        if (!n->is_leaf()) n->zero_grad();
    }
    if (root->is_leaf()) {
        root->grad[0] += T(1);
    } else {
        root->grad[0] = T(1);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims("add", *a, *b);
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] + b->data[i];
    return detail::make_result<T>(
        a->dims, std::move(v), {a, b}, [a, b](Tensor<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
            }
        });
}

template <typename T>
TensorPtr<T> sub(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims("sub", *a, *b);
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] - b->data[i];
    return detail::make_result<T>(
        a->dims, std::move(v), {a, b}, [a, b](Tensor<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
            }
        });
}

template <typename T>
TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::check_same_dims("mul", *a, *b);
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] * b->data[i];
    return detail::make_result<T>(
        a->dims, std::move(v), {a, b}, [a, b](Tensor<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i] * a->data[i];
            }
        });
}

template <typename T>
TensorPtr<T> scalar_mul(const TensorPtr<T>& a, T s) {
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] * s;
    return detail::make_result<T>(
        a->dims, std::move(v), {a}, [a, s](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * s;
        });
}

template <typename T>
TensorPtr<T> scalar_add(const TensorPtr<T>& a, T s) {
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] + s;
    return detail::make_result<T>(
        a->dims, std::move(v), {a}, [a](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        });
}

// ReLU with subgradient 0 at 0.
template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& a) {
    std::vector<T> v(a->data.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->data[i] > T(0) ? a->data[i] : T(0);
    return detail::make_result<T>(
        a->dims, std::move(v), {a}, [a](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (a->data[i] > T(0)) a->grad[i] += self.grad[i];
            }
        });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> reshape(const TensorPtr<T>& a, Dims new_dims) {
    if (numel_of(new_dims) != a->numel()) {
        throw ShapeError("reshape: cannot view " + dims_to_string(a->dims) + " as " +
                         dims_to_string(new_dims));
    }
    return detail::make_result<T>(
        std::move(new_dims), std::vector<T>(a->data), {a}, [a](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        });
}

template <typename T>
TensorPtr<T> permute(const TensorPtr<T>& a, std::vector<std::size_t> perm) {
    const std::size_t nd = a->ndim();
    if (perm.size() != nd) throw UsageError("permute: rank mismatch");
    std::vector<bool> seen(nd, false);
    for (auto p : perm) {
        if (p >= nd || seen[p]) throw UsageError("permute: not a permutation");
        seen[p] = true;
    }
    Dims out_dims;
    std::vector<T> v = detail::permute_raw(a->data, a->dims, perm, out_dims);
    // inverse permutation routes the gradient back
    std::vector<std::size_t> inv(nd);
    for (std::size_t k = 0; k < nd; ++k) inv[perm[k]] = k;
    Dims fwd_out = out_dims;
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {a}, [a, inv, fwd_out](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            Dims gd;
            std::vector<T> g = detail::permute_raw(self.grad, fwd_out, inv, gd);
            for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
        });
}

template <typename T>
TensorPtr<T> concat(const std::vector<TensorPtr<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw UsageError("concat: no inputs");
    const Dims& d0 = parts[0]->dims;
    if (axis >= d0.size()) throw UsageError("concat: axis out of range");
    std::int64_t axis_total = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Dims& dp = parts[p]->dims;
        if (dp.size() != d0.size()) {
            throw ShapeError("concat: rank mismatch at input " + std::to_string(p) + ": " +
                             dims_to_string(dp) + " vs " + dims_to_string(d0));
        }
        for (std::size_t k = 0; k < d0.size(); ++k) {
            if (k != axis && dp[k] != d0[k]) {
                throw ShapeError("concat: input " + std::to_string(p) + " has shape " +
                                 dims_to_string(dp) + ", incompatible with " + dims_to_string(d0) +
                                 " along non-concat axis " + std::to_string(k));
            }
        }
        axis_total += dp[axis];
    }
    Dims out_dims = d0;
    out_dims[axis] = axis_total;

    std::int64_t outer, len_out, inner;
    detail::axis_split(out_dims, axis, outer, len_out, inner);
    std::vector<T> v(static_cast<std::size_t>(outer * len_out * inner));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t len_p = p->dims[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = p->data.data() + o * len_p * inner;
            T* dst = v.data() + (o * len_out + offset) * inner;
            std::copy(src, src + len_p * inner, dst);
        }
        offset += len_p;
    }

    std::vector<TensorPtr<T>> parent_vec = parts;
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), parent_vec,
        [parent_vec, axis, outer, len_out, inner](Tensor<T>& self) {
            std::int64_t off = 0;
            for (const auto& p : parent_vec) {
                const std::int64_t len_p = p->dims[axis];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + (o * len_out + off) * inner;
                        T* dst = p->grad.data() + o * len_p * inner;
                        for (std::int64_t i = 0; i < len_p * inner; ++i) dst[i] += g[i];
                    }
                }
                off += len_p;
            }
        });
}

template <typename T>
TensorPtr<T> slice(const TensorPtr<T>& a, std::size_t axis, std::int64_t start, std::int64_t len) {
    if (axis >= a->ndim()) throw UsageError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > a->dims[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis size " +
                         std::to_string(a->dims[axis]));
    }
    std::int64_t outer, len_in, inner;
    detail::axis_split(a->dims, axis, outer, len_in, inner);
    Dims out_dims = a->dims;
    out_dims[axis] = len;
    std::vector<T> v(static_cast<std::size_t>(outer * len * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        const T* src = a->data.data() + (o * len_in + start) * inner;
        std::copy(src, src + len * inner, v.data() + o * len * inner);
    }
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {a},
        [a, outer, len_in, inner, start, len](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * len * inner;
                T* dst = a->grad.data() + (o * len_in + start) * inner;
                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        });
}

// Repeats a size-1 axis n times; a no-op copy when the axis already has
// size n.
template <typename T>
TensorPtr<T> broadcast_repeat(const TensorPtr<T>& a, std::size_t axis, std::int64_t n) {
    if (axis >= a->ndim()) throw UsageError("broadcast_repeat: axis out of range");
    if (n <= 0) throw UsageError("broadcast_repeat: target size must be positive");
    const std::int64_t src_len = a->dims[axis];
    if (src_len != 1 && src_len != n) {
        throw ShapeError("broadcast_repeat: axis " + std::to_string(axis) + " has size " +
                         std::to_string(src_len) + ", needs 1 or " + std::to_string(n));
    }
    if (src_len == n) {
        return detail::make_result<T>(
            a->dims, std::vector<T>(a->data), {a}, [a](Tensor<T>& self) {
                if (!a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            });
    }
    std::int64_t outer, len, inner;
    detail::axis_split(a->dims, axis, outer, len, inner);
    Dims out_dims = a->dims;
    out_dims[axis] = n;
    std::vector<T> v(static_cast<std::size_t>(outer * n * inner));
    for (std::int64_t o = 0; o < outer; ++o) {
        const T* src = a->data.data() + o * inner;
        for (std::int64_t r = 0; r < n; ++r) {
            std::copy(src, src + inner, v.data() + (o * n + r) * inner);
        }
    }
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {a}, [a, outer, inner, n](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                T* dst = a->grad.data() + o * inner;
                for (std::int64_t r = 0; r < n; ++r) {
                    const T* g = self.grad.data() + (o * n + r) * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
            }
        });
}

namespace detail {

// Per-axis output stride for reductions (0 on reduced axes).
inline std::vector<std::int64_t> reduce_out_strides(const Dims& dims,
                                                    const std::vector<std::size_t>& axes,
                                                    Dims& out_dims) {
    std::vector<bool> reduced(dims.size(), false);
    for (auto ax : axes) {
        if (ax >= dims.size()) throw UsageError("reduce: axis out of range");
        if (reduced[ax]) throw UsageError("reduce: duplicate axis");
        reduced[ax] = true;
    }
    out_dims.clear();
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (!reduced[k]) out_dims.push_back(dims[k]);
    }
    if (out_dims.empty()) out_dims.push_back(1);
    Dims kept_dims;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (!reduced[k]) kept_dims.push_back(dims[k]);
    }
    Dims kept_strides = strides_of(kept_dims);
    std::vector<std::int64_t> out_stride(dims.size(), 0);
    std::size_t kept = 0;
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (!reduced[k]) out_stride[k] = kept_strides[kept++];
    }
    return out_stride;
}

}  // namespace detail

// Mean over the given axes (reduced axes are squeezed; the full reduction
// yields a scalar of dims {1}).
template <typename T>
TensorPtr<T> reduce_mean(const TensorPtr<T>& a, std::vector<std::size_t> axes) {
    Dims out_dims;
    std::vector<std::int64_t> out_stride = detail::reduce_out_strides(a->dims, axes, out_dims);
    const std::int64_t out_n = numel_of(out_dims);
    const std::int64_t count = a->numel() / out_n;
    const T inv = T(1) / static_cast<T>(count);

    std::vector<T> v(static_cast<std::size_t>(out_n), T(0));
    const std::size_t nd = a->ndim();
    Dims idx(nd, 0);
    std::int64_t dst = 0;
    for (std::int64_t i = 0; i < a->numel(); ++i) {
        v[dst] += a->data[i];
        for (std::int64_t k = static_cast<std::int64_t>(nd) - 1; k >= 0; --k) {
            dst += out_stride[k];
            if (++idx[k] < a->dims[k]) break;
            dst -= out_stride[k] * a->dims[k];
            idx[k] = 0;
        }
    }
    for (auto& x : v) x *= inv;

    Dims in_dims = a->dims;
    return detail::make_result<T>(
        std::move(out_dims), std::move(v), {a}, [a, out_stride, in_dims, inv](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const std::size_t nd = in_dims.size();
            Dims idx(nd, 0);
            std::int64_t src = 0;
            for (std::int64_t i = 0; i < a->numel(); ++i) {
                a->grad[i] += self.grad[src] * inv;
                for (std::int64_t k = static_cast<std::int64_t>(nd) - 1; k >= 0; --k) {
                    src += out_stride[k];
                    if (++idx[k] < in_dims[k]) break;
                    src -= out_stride[k] * in_dims[k];
                    idx[k] = 0;
                }
            }
        });
}

// Global average pool: mean over the trailing spatial axes.
template <typename T>
TensorPtr<T> global_avg_pool(const TensorPtr<T>& a, std::size_t spatial_axes = 2) {
    if (a->ndim() <= spatial_axes) throw UsageError("global_avg_pool: rank too small");
    std::vector<std::size_t> axes;
    for (std::size_t k = a->ndim() - spatial_axes; k < a->ndim(); ++k) axes.push_back(k);
    return reduce_mean(a, axes);
}

template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& a) {
    T s = T(0);
    for (auto x : a->data) s += x;
    return detail::make_result<T>(
        {1}, {s}, {a}, [a](Tensor<T>& self) {
            if (!a->requires_grad) return;
            a->ensure_grad();
            const T g = self.grad[0];
            for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
        });
}

// Adds a length-K bias vector along the last axis.
template <typename T>
TensorPtr<T> add_bias(const TensorPtr<T>& x, const TensorPtr<T>& b) {
    if (b->ndim() != 1 || b->dims[0] != x->dims.back()) {
        throw ShapeError("add_bias: bias " + dims_to_string(b->dims) + " does not match last axis of " +
                         dims_to_string(x->dims));
    }
    const std::int64_t k = b->dims[0];
    const std::int64_t rows = x->numel() / k;
    std::vector<T> v(x->data.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < k; ++j) v[r * k + j] = x->data[r * k + j] + b->data[j];
    }
    return detail::make_result<T>(
        x->dims, std::move(v), {x, b}, [x, b, rows, k](Tensor<T>& self) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < k; ++j) b->grad[j] += self.grad[r * k + j];
                }
            }
        });
}

// Stack along a new leading axis.
template <typename T>
TensorPtr<T> stack(const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw UsageError("stack: no inputs");
    std::vector<TensorPtr<T>> reshaped;
    reshaped.reserve(parts.size());
    for (const auto& p : parts) {
        Dims d = p->dims;
        d.insert(d.begin(), 1);
        reshaped.push_back(reshape(p, std::move(d)));
    }
    return concat(reshaped, 0);
}

// Copy with the graph cut.
template <typename T>
TensorPtr<T> detach(const TensorPtr<T>& a) {
    return Tensor<T>::create(a->dims, a->data);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (auto x : t.data) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (auto& x : t.data) x = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace graphfuse
