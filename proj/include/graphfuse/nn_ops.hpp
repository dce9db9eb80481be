#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "graphfuse/tensor.hpp"

#if defined(_OPENMP)
#define GF_PRAGMA(text) _Pragma(#text)
#define GF_OMP_FOR(cond) GF_PRAGMA(omp parallel for schedule(static) if (cond))
#include <omp.h>
#else
#define GF_OMP_FOR(cond)
#endif

namespace graphfuse {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n) {
    const bool big = m * k * n > (1 << 16);
    (void)big;
    GF_OMP_FOR(big)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T a = A[i * k + p];
            const T* brow = B + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename T>
void mm_nt(const T* A, const T* B, T* C, std::int64_t m, std::int64_t n, std::int64_t k) {
    const bool big = m * k * n > (1 << 16);
    (void)big;
    GF_OMP_FOR(big)
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = A + i * n;
        for (std::int64_t l = 0; l < k; ++l) {
            const T* brow = B + l * n;
            T acc = T(0);
            for (std::int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            C[i * k + l] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void mm_tn(const T* A, const T* B, T* C, std::int64_t m, std::int64_t k, std::int64_t n) {
    const bool big = m * k * n > (1 << 16);
    (void)big;
    GF_OMP_FOR(big)
    for (std::int64_t l = 0; l < k; ++l) {
        T* crow = C + l * n;
        for (std::int64_t i = 0; i < m; ++i) {
            const T a = A[i * k + l];
            const T* brow = B + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// Output index range [lo, hi] such that o*stride + off lands in [0, limit).
inline void conv_valid_range(std::int64_t off, std::int64_t stride, std::int64_t limit,
                             std::int64_t out_len, std::int64_t& lo, std::int64_t& hi) {
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    std::int64_t top = limit - 1 - off;
    hi = top < 0 ? -1 : top / stride;
    if (hi > out_len - 1) hi = out_len - 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul / bmm
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->dims[1] != b->dims[0]) {
        throw ShapeError("matmul: incompatible shapes " + dims_to_string(a->dims) + " x " +
                         dims_to_string(b->dims));
    }
    const std::int64_t m = a->dims[0], k = a->dims[1], n = b->dims[1];
    std::vector<T> v(static_cast<std::size_t>(m * n), T(0));
    detail::mm_nn(a->data.data(), b->data.data(), v.data(), m, k, n);
    return detail::make_result<T>(
        {m, n}, std::move(v), {a, b}, [a, b, m, k, n](Tensor<T>& self) {
            if (a->requires_grad) {
                a->ensure_grad();
                detail::mm_nt(self.grad.data(), b->data.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                detail::mm_tn(a->data.data(), self.grad.data(), b->grad.data(), m, k, n);
            }
        });
}

// Batched matmul over a shared leading axis.
template <typename T>
TensorPtr<T> bmm(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->ndim() != 3 || b->ndim() != 3 || a->dims[0] != b->dims[0] || a->dims[2] != b->dims[1]) {
        throw ShapeError("bmm: incompatible shapes " + dims_to_string(a->dims) + " x " +
                         dims_to_string(b->dims));
    }
    const std::int64_t bs = a->dims[0], m = a->dims[1], k = a->dims[2], n = b->dims[2];
    std::vector<T> v(static_cast<std::size_t>(bs * m * n), T(0));
    for (std::int64_t i = 0; i < bs; ++i) {
        detail::mm_nn(a->data.data() + i * m * k, b->data.data() + i * k * n, v.data() + i * m * n,
                      m, k, n);
    }
    return detail::make_result<T>(
        {bs, m, n}, std::move(v), {a, b}, [a, b, bs, m, k, n](Tensor<T>& self) {
            for (std::int64_t i = 0; i < bs; ++i) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::mm_nt(self.grad.data() + i * m * n, b->data.data() + i * k * n,
                                  a->grad.data() + i * m * k, m, n, k);
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::mm_tn(a->data.data() + i * m * k, self.grad.data() + i * m * n,
                                  b->grad.data() + i * k * n, m, k, n);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvSpec {
    std::int64_t stride_h = 1, stride_w = 1;
    std::int64_t pad_h = 0, pad_w = 0;
};

// Cross-correlation over (B, C_in, H, W) with kernel (C_out, C_in, kh, kw).
// H' = floor((H + 2*pad_h - kh)/stride_h) + 1, analogously W'.
template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& bias,
                    ConvSpec spec = {}) {
    if (x->ndim() != 4 || w->ndim() != 4) {
        throw ShapeError("conv2d: expects 4-d input and kernel, got " + dims_to_string(x->dims) +
                         " and " + dims_to_string(w->dims));
    }
    if (x->dims[1] != w->dims[1]) {
        throw ShapeError("conv2d: input channels " + dims_to_string(x->dims) +
                         " do not match kernel " + dims_to_string(w->dims));
    }
    if (spec.stride_h < 1 || spec.stride_w < 1 || spec.pad_h < 0 || spec.pad_w < 0) {
        throw ConfigError("conv2d: invalid stride/padding");
    }
    const std::int64_t B = x->dims[0], Cin = x->dims[1], H = x->dims[2], W = x->dims[3];
    const std::int64_t Cout = w->dims[0], kh = w->dims[2], kw = w->dims[3];
    if (kh > H + 2 * spec.pad_h || kw > W + 2 * spec.pad_w) {
        throw ShapeError("conv2d: kernel " + dims_to_string(w->dims) + " larger than padded input " +
                         dims_to_string(x->dims));
    }
    if (bias && (bias->ndim() != 1 || bias->dims[0] != Cout)) {
        throw ShapeError("conv2d: bias " + dims_to_string(bias->dims) + " does not match C_out " +
                         std::to_string(Cout));
    }
    const std::int64_t OH = (H + 2 * spec.pad_h - kh) / spec.stride_h + 1;
    const std::int64_t OW = (W + 2 * spec.pad_w - kw) / spec.stride_w + 1;

    std::vector<T> v(static_cast<std::size_t>(B * Cout * OH * OW), T(0));
    const bool big = B * Cout * OH * OW * Cin * kh * kw > (1 << 15);
    (void)big;
    GF_OMP_FOR(big)
    for (std::int64_t bc = 0; bc < B * Cout; ++bc) {
        const std::int64_t b = bc / Cout, co = bc % Cout;
        T* out_plane = v.data() + bc * OH * OW;
        if (bias) {
            const T bv = bias->data[co];
            for (std::int64_t i = 0; i < OH * OW; ++i) out_plane[i] = bv;
        }
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
            const T* x_plane = x->data.data() + (b * Cin + ci) * H * W;
            for (std::int64_t r = 0; r < kh; ++r) {
                std::int64_t oh_lo, oh_hi;
                detail::conv_valid_range(r - spec.pad_h, spec.stride_h, H, OH, oh_lo, oh_hi);
                for (std::int64_t c = 0; c < kw; ++c) {
                    const T wv = w->data[((co * Cin + ci) * kh + r) * kw + c];
                    std::int64_t ow_lo, ow_hi;
                    detail::conv_valid_range(c - spec.pad_w, spec.stride_w, W, OW, ow_lo, ow_hi);
                    for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                        const std::int64_t ih = oh * spec.stride_h + r - spec.pad_h;
                        const T* x_row = x_plane + ih * W;
                        T* o_row = out_plane + oh * OW;
                        for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                            o_row[ow] += wv * x_row[ow * spec.stride_w + c - spec.pad_w];
                        }
                    }
                }
            }
        }
    }

    std::vector<TensorPtr<T>> parents{x, w};
    if (bias) parents.push_back(bias);
    return detail::make_result<T>(
        {B, Cout, OH, OW}, std::move(v), std::move(parents),
        [x, w, bias, spec, B, Cin, H, W, Cout, kh, kw, OH, OW](Tensor<T>& self) {
            const T* g = self.grad.data();
            if (x->requires_grad) {
                x->ensure_grad();
                T* dx = x->grad.data();
                const bool big2 = B * Cin > 1 && self.grad.size() > (1u << 12);
                (void)big2;
                GF_OMP_FOR(big2)
                for (std::int64_t bc = 0; bc < B * Cin; ++bc) {
                    const std::int64_t b = bc / Cin, ci = bc % Cin;
                    T* dx_plane = dx + bc * H * W;
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const T* g_plane = g + (b * Cout + co) * OH * OW;
                        for (std::int64_t r = 0; r < kh; ++r) {
                            std::int64_t oh_lo, oh_hi;
                            detail::conv_valid_range(r - spec.pad_h, spec.stride_h, H, OH, oh_lo, oh_hi);
                            for (std::int64_t c = 0; c < kw; ++c) {
                                const T wv = w->data[((co * Cin + ci) * kh + r) * kw + c];
                                std::int64_t ow_lo, ow_hi;
                                detail::conv_valid_range(c - spec.pad_w, spec.stride_w, W, OW, ow_lo, ow_hi);
                                for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                    const std::int64_t ih = oh * spec.stride_h + r - spec.pad_h;
                                    T* dx_row = dx_plane + ih * W;
                                    const T* g_row = g_plane + oh * OW;
                                    for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                        dx_row[ow * spec.stride_w + c - spec.pad_w] += g_row[ow] * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if (w->requires_grad) {
                w->ensure_grad();
                T* dw = w->grad.data();
                const bool big2 = Cout > 1 && self.grad.size() > (1u << 12);
                (void)big2;
                GF_OMP_FOR(big2)
                for (std::int64_t co = 0; co < Cout; ++co) {
                    for (std::int64_t ci = 0; ci < Cin; ++ci) {
                        for (std::int64_t r = 0; r < kh; ++r) {
                            std::int64_t oh_lo, oh_hi;
                            detail::conv_valid_range(r - spec.pad_h, spec.stride_h, H, OH, oh_lo, oh_hi);
                            for (std::int64_t c = 0; c < kw; ++c) {
                                std::int64_t ow_lo, ow_hi;
                                detail::conv_valid_range(c - spec.pad_w, spec.stride_w, W, OW, ow_lo, ow_hi);
                                T acc = T(0);
                                for (std::int64_t b = 0; b < B; ++b) {
                                    const T* g_plane = g + (b * Cout + co) * OH * OW;
                                    const T* x_plane = x->data.data() + (b * Cin + ci) * H * W;
                                    for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                                        const std::int64_t ih = oh * spec.stride_h + r - spec.pad_h;
                                        const T* x_row = x_plane + ih * W;
                                        const T* g_row = g_plane + oh * OW;
                                        for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow) {
                                            acc += g_row[ow] * x_row[ow * spec.stride_w + c - spec.pad_w];
                                        }
                                    }
                                }
                                dw[((co * Cin + ci) * kh + r) * kw + c] += acc;
                            }
                        }
                    }
                }
            }
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t b = 0; b < B; ++b) {
                    for (std::int64_t co = 0; co < Cout; ++co) {
                        const T* g_plane = g + (b * Cout + co) * OH * OW;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < OH * OW; ++i) acc += g_plane[i];
                        bias->grad[co] += acc;
                    }
                }
            }
        });
}

template <typename T>
TensorPtr<T> conv2d(const TensorPtr<T>& x, const TensorPtr<T>& w, ConvSpec spec = {}) {
    return conv2d(x, w, TensorPtr<T>(), spec);
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

// Normalizes axis 1 over all other axes. Training mode uses batch statistics
// (biased variance) and updates running stats in place with `momentum`
// (unbiased variance, matching the usual convention); eval mode uses the
// running stats. `running_*` tensors are plain buffers - never tracked.
template <typename T>
TensorPtr<T> batch_norm(const TensorPtr<T>& x, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                        const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var,
                        bool training, double momentum, double eps) {
    if (eps <= 0) throw ConfigError("batch_norm: eps must be positive");
    if (x->ndim() < 2) throw ShapeError("batch_norm: input rank must be >= 2");
    const std::int64_t C = x->dims[1];
    for (const auto& p : {gamma, beta, running_mean, running_var}) {
        if (p->ndim() != 1 || p->dims[0] != C) {
            throw ShapeError("batch_norm: parameter " + dims_to_string(p->dims) +
                             " does not match channel count " + std::to_string(C));
        }
    }
    const std::int64_t B = x->dims[0];
    std::int64_t inner = 1;
    for (std::size_t k = 2; k < x->ndim(); ++k) inner *= x->dims[k];
    const std::int64_t m = B * inner;  // reduce count per channel

    std::vector<T> mean(C), inv_std(C);
    if (training) {
        for (std::int64_t c = 0; c < C; ++c) {
            T s = T(0);
            for (std::int64_t b = 0; b < B; ++b) {
                const T* row = x->data.data() + (b * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) s += row[i];
            }
            const T mu = s / static_cast<T>(m);
            T sq = T(0);
            for (std::int64_t b = 0; b < B; ++b) {
                const T* row = x->data.data() + (b * C + c) * inner;
                for (std::int64_t i = 0; i < inner; ++i) {
                    const T d = row[i] - mu;
                    sq += d * d;
                }
            }
            const T var = sq / static_cast<T>(m);
            mean[c] = mu;
            inv_std[c] = T(1) / std::sqrt(var + static_cast<T>(eps));
            const T unbiased = m > 1 ? sq / static_cast<T>(m - 1) : var;
            running_mean->data[c] =
                static_cast<T>((1.0 - momentum) * running_mean->data[c] + momentum * mu);
            running_var->data[c] =
                static_cast<T>((1.0 - momentum) * running_var->data[c] + momentum * unbiased);
        }
    } else {
        for (std::int64_t c = 0; c < C; ++c) {
            mean[c] = running_mean->data[c];
            inv_std[c] = T(1) / std::sqrt(running_var->data[c] + static_cast<T>(eps));
        }
    }

    std::vector<T> v(x->data.size());
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T* row = x->data.data() + (b * C + c) * inner;
            T* out = v.data() + (b * C + c) * inner;
            const T g = gamma->data[c], bt = beta->data[c], mu = mean[c], is = inv_std[c];
            for (std::int64_t i = 0; i < inner; ++i) out[i] = g * (row[i] - mu) * is + bt;
        }
    }

    return detail::make_result<T>(
        x->dims, std::move(v), {x, gamma, beta},
        [x, gamma, beta, mean, inv_std, training, B, C, inner, m](Tensor<T>& self) {
            // per channel: S1 = sum g_i, S2 = sum g_i * xhat_i
            std::vector<T> s1(C, T(0)), s2(C, T(0));
            for (std::int64_t b = 0; b < B; ++b) {
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* gr = self.grad.data() + (b * C + c) * inner;
                    const T* row = x->data.data() + (b * C + c) * inner;
                    const T mu = mean[c], is = inv_std[c];
                    T a1 = T(0), a2 = T(0);
                    for (std::int64_t i = 0; i < inner; ++i) {
                        a1 += gr[i];
                        a2 += gr[i] * (row[i] - mu) * is;
                    }
                    s1[c] += a1;
                    s2[c] += a2;
                }
            }
            if (gamma->requires_grad) {
                gamma->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) gamma->grad[c] += s2[c];
            }
            if (beta->requires_grad) {
                beta->ensure_grad();
                for (std::int64_t c = 0; c < C; ++c) beta->grad[c] += s1[c];
            }
            if (x->requires_grad) {
                x->ensure_grad();
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::int64_t b = 0; b < B; ++b) {
                    for (std::int64_t c = 0; c < C; ++c) {
                        const T* gr = self.grad.data() + (b * C + c) * inner;
                        const T* row = x->data.data() + (b * C + c) * inner;
                        T* dx = x->grad.data() + (b * C + c) * inner;
                        const T gis = gamma->data[c] * inv_std[c];
                        if (training) {
                            const T mu = mean[c], is = inv_std[c];
                            const T c1 = s1[c] * inv_m, c2 = s2[c] * inv_m;
                            for (std::int64_t i = 0; i < inner; ++i) {
                                const T xhat = (row[i] - mu) * is;
                                dx[i] += gis * (gr[i] - c1 - xhat * c2);
                            }
                        } else {
                            for (std::int64_t i = 0; i < inner; ++i) dx[i] += gis * gr[i];
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// softmax / cross entropy
// ---------------------------------------------------------------------------

template <typename T>
TensorPtr<T> softmax(const TensorPtr<T>& x, std::size_t axis) {
    if (axis >= x->ndim()) throw UsageError("softmax: axis out of range");
    std::int64_t outer, len, inner;
    detail::axis_split(x->dims, axis, outer, len, inner);
    std::vector<T> v(x->data.size());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const T* lane = x->data.data() + o * len * inner + i;
            T* out = v.data() + o * len * inner + i;
            T mx = lane[0];
            for (std::int64_t l = 1; l < len; ++l) mx = std::max(mx, lane[l * inner]);
            T sum = T(0);
            for (std::int64_t l = 0; l < len; ++l) {
                const T e = std::exp(lane[l * inner] - mx);
                out[l * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (std::int64_t l = 0; l < len; ++l) out[l * inner] *= inv;
        }
    }
    std::vector<T> probs = v;  // captured for backward
    return detail::make_result<T>(
        x->dims, std::move(v), {x}, [x, probs, outer, len, inner](Tensor<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * len * inner + i;
                    T dot = T(0);
                    for (std::int64_t l = 0; l < len; ++l) {
                        dot += self.grad[base + l * inner] * probs[base + l * inner];
                    }
                    for (std::int64_t l = 0; l < len; ++l) {
                        const std::int64_t k = base + l * inner;
                        x->grad[k] += probs[k] * (self.grad[k] - dot);
                    }
                }
            }
        });
}

// Mean over the batch of -log softmax(logits)[label]; max-subtraction
// stabilized.
template <typename T>
TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits,
                                   const std::vector<std::int64_t>& labels) {
    if (logits->ndim() != 2) {
        throw ShapeError("softmax_cross_entropy: logits must be 2-d, got " +
                         dims_to_string(logits->dims));
    }
    const std::int64_t B = logits->dims[0], K = logits->dims[1];
    if (static_cast<std::int64_t>(labels.size()) != B) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(B));
    }
    for (auto y : labels) {
        if (y < 0 || y >= K) {
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                            " outside [0," + std::to_string(K) + ")");
        }
    }
    std::vector<T> probs(logits->data.size());
    T loss = T(0);
    for (std::int64_t b = 0; b < B; ++b) {
        const T* row = logits->data.data() + b * K;
        T* p = probs.data() + b * K;
        T mx = row[0];
        for (std::int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < K; ++j) {
            p[j] = std::exp(row[j] - mx);
            sum += p[j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < K; ++j) p[j] *= inv;
        loss -= (row[labels[b]] - mx) - std::log(sum);
    }
    loss /= static_cast<T>(B);

    return detail::make_result<T>(
        {1}, {loss}, {logits}, [logits, probs, labels, B, K](Tensor<T>& self) {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            const T g = self.grad[0] / static_cast<T>(B);
            for (std::int64_t b = 0; b < B; ++b) {
                const T* p = probs.data() + b * K;
                T* d = logits->grad.data() + b * K;
                for (std::int64_t j = 0; j < K; ++j) d[j] += g * p[j];
                d[labels[b]] -= g;
            }
        });
}

}  // namespace graphfuse
