#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <vector>

#include "vlkd/tensor.hpp"

namespace vlkd {

// Differentiable primitives. Every op takes the tape as a nullable pointer:
// passing nullptr runs forward-only (used for the frozen teacher and for
// decoding), in which case the result never requires a gradient.

namespace detail {

template <typename T>
inline bool want_grad(Tape<T>* tape, std::initializer_list<TensorPtr<T>> ins) {
    if (!tape) return false;
    for (const auto& t : ins)
        if (t->requires_grad) return true;
    return false;
}

template <typename T>
inline void expect_2d(const TensorPtr<T>& x, const char* op) {
    if (x->shape.size() != 2) throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(x->shape));
}

template <typename T>
inline void expect_same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
}

} // namespace detail

// ---------------------------------------------------------------- matmul

template <typename T>
TensorPtr<T> matmul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::expect_2d(a, "matmul");
    detail::expect_2d(b, "matmul");
    const int m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a->shape) + " x " + shape_str(b->shape));
    auto out = make_tensor<T>({m, n});
    const T* av = a->v.data();
    const T* bv = b->v.data();
    T* ov = out->v.data();
    for (int i = 0; i < m; ++i) {
        T* orow = ov + static_cast<size_t>(i) * n;
        const T* arow = av + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = bv + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    if (detail::want_grad(tape, {a, b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [a, b, out, m, k, n] {
                const T* oc = out->g.data();
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            T s = T(0);
                            const T* orow = oc + static_cast<size_t>(i) * n;
                            const T* brow = b->v.data() + static_cast<size_t>(kk) * n;
                            for (int j = 0; j < n; ++j) s += orow[j] * brow[j];
                            a->g[static_cast<size_t>(i) * k + kk] += s;
                        }
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            const T aik = a->v[static_cast<size_t>(i) * k + kk];
                            T* brow = b->g.data() + static_cast<size_t>(kk) * n;
                            const T* orow = oc + static_cast<size_t>(i) * n;
                            for (int j = 0; j < n; ++j) brow[j] += aik * orow[j];
                        }
                }
            },
            out);
    }
    return out;
}

// a . b^T without materializing the transpose: a[m,k] x b[n,k] -> [m,n]
template <typename T>
TensorPtr<T> matmul_nt(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::expect_2d(a, "matmul_nt");
    detail::expect_2d(b, "matmul_nt");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (k != b->shape[1])
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a->shape) + " x " +
                         shape_str(b->shape) + "^T");
    auto out = make_tensor<T>({m, n});
    for (int i = 0; i < m; ++i) {
        const T* arow = a->v.data() + static_cast<size_t>(i) * k;
        T* orow = out->v.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b->v.data() + static_cast<size_t>(j) * k;
            T s = T(0);
            for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            orow[j] = s;
        }
    }
    if (detail::want_grad(tape, {a, b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [a, b, out, m, k, n] {
                const T* oc = out->g.data();
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (int i = 0; i < m; ++i) {
                        T* arow = a->g.data() + static_cast<size_t>(i) * k;
                        const T* orow = oc + static_cast<size_t>(i) * n;
                        for (int j = 0; j < n; ++j) {
                            const T gij = orow[j];
                            const T* brow = b->v.data() + static_cast<size_t>(j) * k;
                            for (int kk = 0; kk < k; ++kk) arow[kk] += gij * brow[kk];
                        }
                    }
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int i = 0; i < m; ++i) {
                        const T* arow = a->v.data() + static_cast<size_t>(i) * k;
                        const T* orow = oc + static_cast<size_t>(i) * n;
                        for (int j = 0; j < n; ++j) {
                            const T gij = orow[j];
                            T* brow = b->g.data() + static_cast<size_t>(j) * k;
                            for (int kk = 0; kk < k; ++kk) brow[kk] += gij * arow[kk];
                        }
                    }
                }
            },
            out);
    }
    return out;
}

// ------------------------------------------------------------ elementwise

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::expect_same_shape(a, b, "add");
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
    if (detail::want_grad(tape, {a, b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [a, b, out] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i];
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::expect_same_shape(a, b, "sub");
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] - b->v[i];
    if (detail::want_grad(tape, {a, b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [a, b, out] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) b->g[i] -= out->g[i];
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::expect_same_shape(a, b, "mul");
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < a->v.size(); ++i) out->v[i] = a->v[i] * b->v[i];
    if (detail::want_grad(tape, {a, b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [a, b, out] {
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i] * b->v[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i] * a->v[i];
                }
            },
            out);
    }
    return out;
}

// x[m,n] + bias[n], broadcast over rows. The only broadcast in the engine.
template <typename T>
TensorPtr<T> add_rowvec(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& bias) {
    detail::expect_2d(x, "add_rowvec");
    const int m = x->shape[0], n = x->shape[1];
    if (bias->numel() != n)
        throw ShapeError("add_rowvec: bias " + shape_str(bias->shape) + " does not match row width " +
                         std::to_string(n));
    auto out = make_tensor<T>(x->shape);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->at(i, j) = x->at(i, j) + bias->v[j];
    if (detail::want_grad(tape, {x, bias})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, bias, out, m, n] {
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i];
                }
                if (bias->requires_grad) {
                    bias->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j) bias->g[j] += out->g[static_cast<size_t>(i) * n + j];
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& x, double c) {
    auto out = make_tensor<T>(x->shape);
    const T tc = static_cast<T>(c);
    for (size_t i = 0; i < x->v.size(); ++i) out->v[i] = x->v[i] * tc;
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, tc] {
                x->ensure_grad();
                for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i] * tc;
            },
            out);
    }
    return out;
}

// broadcast multiply by a scalar tensor (shape [1]); both factors get grads
template <typename T>
TensorPtr<T> mul_scalar(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& s) {
    if (!s->is_scalar()) throw ShapeError("mul_scalar: scale must be scalar, got " + shape_str(s->shape));
    auto out = make_tensor<T>(x->shape);
    const T sv = s->v[0];
    for (size_t i = 0; i < x->v.size(); ++i) out->v[i] = x->v[i] * sv;
    if (detail::want_grad(tape, {x, s})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, s, out, sv] {
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i] * sv;
                }
                if (s->requires_grad) {
                    s->ensure_grad();
                    T acc = T(0);
                    for (size_t i = 0; i < out->g.size(); ++i) acc += out->g[i] * x->v[i];
                    s->g[0] += acc;
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> exp_op(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->v.size(); ++i) out->v[i] = std::exp(x->v[i]);
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out] {
                x->ensure_grad();
                for (size_t i = 0; i < out->g.size(); ++i) x->g[i] += out->g[i] * out->v[i];
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> gelu(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>(x->shape);
    for (size_t i = 0; i < x->v.size(); ++i) {
        const double xv = static_cast<double>(x->v[i]);
        out->v[i] = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * M_SQRT1_2)));
    }
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out] {
                x->ensure_grad();
                constexpr double inv_sqrt_2pi = 0.3989422804014327;
                for (size_t i = 0; i < out->g.size(); ++i) {
                    const double xv = static_cast<double>(x->v[i]);
                    const double cdf = 0.5 * (1.0 + std::erf(xv * M_SQRT1_2));
                    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
                    x->g[i] += out->g[i] * static_cast<T>(cdf + xv * pdf);
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1});
    T s = T(0);
    for (T v : x->v) s += v;
    out->v[0] = s;
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out] {
                x->ensure_grad();
                const T go = out->g[0];
                for (size_t i = 0; i < x->g.size(); ++i) x->g[i] += go;
            },
            out);
    }
    return out;
}

// running mean of scalar losses, fixed left-to-right evaluation order
template <typename T>
TensorPtr<T> mean_scalars(Tape<T>* tape, const std::vector<TensorPtr<T>>& xs) {
    if (xs.empty()) throw ContractError("mean_scalars: no inputs");
    auto total = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) total = add(tape, total, xs[i]);
    return scale(tape, total, 1.0 / static_cast<double>(xs.size()));
}

// ------------------------------------------------------- gather / stitching

template <typename T>
TensorPtr<T> embed_rows(Tape<T>* tape, const TensorPtr<T>& table, const std::vector<int>& ids) {
    detail::expect_2d(table, "embed_rows");
    const int v = table->shape[0], d = table->shape[1];
    for (int id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embed_rows: id " + std::to_string(id) + " outside table of " + std::to_string(v));
    auto out = make_tensor<T>({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table->v.data() + static_cast<size_t>(ids[i]) * d, d, out->v.data() + i * d);
    if (detail::want_grad(tape, {table})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [table, out, ids, d] {
                table->ensure_grad();
                for (size_t i = 0; i < ids.size(); ++i) {
                    T* trow = table->g.data() + static_cast<size_t>(ids[i]) * d;
                    const T* orow = out->g.data() + i * d;
                    for (int j = 0; j < d; ++j) trow[j] += orow[j];
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> slice_rows(Tape<T>* tape, const TensorPtr<T>& x, int r0, int r1) {
    detail::expect_2d(x, "slice_rows");
    const int m = x->shape[0], n = x->shape[1];
    if (r0 < 0 || r1 > m || r0 >= r1)
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) + ") on " +
                         shape_str(x->shape));
    auto out = make_tensor<T>({r1 - r0, n});
    std::copy_n(x->v.data() + static_cast<size_t>(r0) * n, static_cast<size_t>(r1 - r0) * n, out->v.data());
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, r0, n] {
                x->ensure_grad();
                for (size_t i = 0; i < out->g.size(); ++i) x->g[static_cast<size_t>(r0) * n + i] += out->g[i];
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> slice_cols(Tape<T>* tape, const TensorPtr<T>& x, int c0, int c1) {
    detail::expect_2d(x, "slice_cols");
    const int m = x->shape[0], n = x->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) + ") on " +
                         shape_str(x->shape));
    const int w = c1 - c0;
    auto out = make_tensor<T>({m, w});
    for (int i = 0; i < m; ++i)
        std::copy_n(x->v.data() + static_cast<size_t>(i) * n + c0, w, out->v.data() + static_cast<size_t>(i) * w);
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, c0, n, w, m] {
                x->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        x->g[static_cast<size_t>(i) * n + c0 + j] += out->g[static_cast<size_t>(i) * w + j];
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> concat_rows(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int n = parts[0]->cols();
    int m = 0;
    bool need = false;
    for (const auto& p : parts) {
        detail::expect_2d(p, "concat_rows");
        if (p->shape[1] != n)
            throw ShapeError("concat_rows: column mismatch " + shape_str(p->shape) + " vs width " + std::to_string(n));
        m += p->shape[0];
        need = need || p->requires_grad;
    }
    auto out = make_tensor<T>({m, n});
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->v.begin(), p->v.end(), out->v.begin() + off);
        off += p->v.size();
    }
    if (tape && need) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [parts, out] {
                size_t o = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (size_t i = 0; i < p->v.size(); ++i) p->g[i] += out->g[o + i];
                    }
                    o += p->v.size();
                }
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> concat_cols(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int m = parts[0]->rows();
    int n = 0;
    bool need = false;
    for (const auto& p : parts) {
        detail::expect_2d(p, "concat_cols");
        if (p->shape[0] != m)
            throw ShapeError("concat_cols: row mismatch " + shape_str(p->shape) + " vs height " + std::to_string(m));
        n += p->shape[1];
        need = need || p->requires_grad;
    }
    auto out = make_tensor<T>({m, n});
    int coff = 0;
    for (const auto& p : parts) {
        const int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            std::copy_n(p->v.data() + static_cast<size_t>(i) * w, w,
                        out->v.data() + static_cast<size_t>(i) * n + coff);
        coff += w;
    }
    if (tape && need) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [parts, out, m, n] {
                int co = 0;
                for (const auto& p : parts) {
                    const int w = p->shape[1];
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < w; ++j)
                                p->g[static_cast<size_t>(i) * w + j] += out->g[static_cast<size_t>(i) * n + co + j];
                    }
                    co += w;
                }
            },
            out);
    }
    return out;
}

// --------------------------------------------------------- normalizations

namespace detail {

// iterate slices of a 1-d or 2-d tensor along `axis`; fn(base, stride, count)
template <typename T, typename Fn>
inline void for_each_slice(const TensorPtr<T>& x, int axis, Fn&& fn) {
    if (x->shape.size() == 1) {
        fn(0, 1, x->shape[0]);
        return;
    }
    expect_2d(x, "slice iteration");
    const int m = x->shape[0], n = x->shape[1];
    if (axis == 1) {
        for (int i = 0; i < m; ++i) fn(static_cast<size_t>(i) * n, 1, n);
    } else if (axis == 0) {
        for (int j = 0; j < n; ++j) fn(static_cast<size_t>(j), static_cast<size_t>(n), m);
    } else {
        throw ShapeError("invalid axis " + std::to_string(axis) + " for " + shape_str(x->shape));
    }
}

} // namespace detail

// numerically stable softmax along axis (max subtraction per slice)
template <typename T>
TensorPtr<T> softmax(Tape<T>* tape, const TensorPtr<T>& x, int axis = 1) {
    auto out = make_tensor<T>(x->shape);
    detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
        T mx = x->v[base];
        for (int i = 1; i < count; ++i) mx = std::max(mx, x->v[base + stride * i]);
        T denom = T(0);
        for (int i = 0; i < count; ++i) {
            const T e = std::exp(x->v[base + stride * i] - mx);
            out->v[base + stride * i] = e;
            denom += e;
        }
        for (int i = 0; i < count; ++i) out->v[base + stride * i] /= denom;
    });
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, axis] {
                x->ensure_grad();
                detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
                    T dot = T(0);
                    for (int i = 0; i < count; ++i) dot += out->g[base + stride * i] * out->v[base + stride * i];
                    for (int i = 0; i < count; ++i) {
                        const size_t k = base + stride * i;
                        x->g[k] += out->v[k] * (out->g[k] - dot);
                    }
                });
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> log_softmax(Tape<T>* tape, const TensorPtr<T>& x, int axis = 1) {
    auto out = make_tensor<T>(x->shape);
    detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
        T mx = x->v[base];
        for (int i = 1; i < count; ++i) mx = std::max(mx, x->v[base + stride * i]);
        T denom = T(0);
        for (int i = 0; i < count; ++i) denom += std::exp(x->v[base + stride * i] - mx);
        const T lse = mx + std::log(denom);
        for (int i = 0; i < count; ++i) out->v[base + stride * i] = x->v[base + stride * i] - lse;
    });
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, axis] {
                x->ensure_grad();
                detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
                    T gsum = T(0);
                    for (int i = 0; i < count; ++i) gsum += out->g[base + stride * i];
                    for (int i = 0; i < count; ++i) {
                        const size_t k = base + stride * i;
                        x->g[k] += out->g[k] - std::exp(out->v[k]) * gsum;
                    }
                });
            },
            out);
    }
    return out;
}

template <typename T>
TensorPtr<T> l2_normalize(Tape<T>* tape, const TensorPtr<T>& x, int axis = 1) {
    auto out = make_tensor<T>(x->shape);
    detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
        T sq = T(0);
        for (int i = 0; i < count; ++i) sq += x->v[base + stride * i] * x->v[base + stride * i];
        const T r = std::sqrt(sq);
        if (!(r > T(1e-12)))
            throw DegenerateInputError("l2_normalize: slice has zero norm");
        for (int i = 0; i < count; ++i) out->v[base + stride * i] = x->v[base + stride * i] / r;
    });
    if (detail::want_grad(tape, {x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, out, axis] {
                x->ensure_grad();
                detail::for_each_slice(x, axis, [&](size_t base, size_t stride, int count) {
                    T sq = T(0), dot = T(0);
                    for (int i = 0; i < count; ++i) {
                        const size_t k = base + stride * i;
                        sq += x->v[k] * x->v[k];
                        dot += x->v[k] * out->g[k];
                    }
                    const T r = std::sqrt(sq);
                    const T r3 = r * r * r;
                    for (int i = 0; i < count; ++i) {
                        const size_t k = base + stride * i;
                        x->g[k] += out->g[k] / r - x->v[k] * dot / r3;
                    }
                });
            },
            out);
    }
    return out;
}

// per-row layer normalization with affine gain/bias over the last dimension
template <typename T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gain, const TensorPtr<T>& bias,
                        double eps = 1e-5) {
    detail::expect_2d(x, "layer_norm");
    const int m = x->shape[0], n = x->shape[1];
    if (gain->numel() != n || bias->numel() != n)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain->shape) + "/" + shape_str(bias->shape) +
                         " do not match last dimension " + std::to_string(n));
    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<Tensor<T>>(Shape{m, n});
    std::vector<T> inv_sigma(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const T* row = x->v.data() + static_cast<size_t>(i) * n;
        T mean = T(0);
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<T>(n);
        T var = T(0);
        for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_sigma[static_cast<size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const T xh = (row[j] - mean) * is;
            xhat->at(i, j) = xh;
            out->at(i, j) = gain->v[j] * xh + bias->v[j];
        }
    }
    if (detail::want_grad(tape, {x, gain, bias})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [x, gain, bias, out, xhat, inv_sigma, m, n] {
                for (int i = 0; i < m; ++i) {
                    const T* go = out->g.data() + static_cast<size_t>(i) * n;
                    const T* xh = xhat->v.data() + static_cast<size_t>(i) * n;
                    if (x->requires_grad) {
                        x->ensure_grad();
                        T mean_dxh = T(0), mean_dxh_xh = T(0);
                        for (int j = 0; j < n; ++j) {
                            const T dxh = go[j] * gain->v[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= static_cast<T>(n);
                        mean_dxh_xh /= static_cast<T>(n);
                        T* gx = x->g.data() + static_cast<size_t>(i) * n;
                        const T is = inv_sigma[static_cast<size_t>(i)];
                        for (int j = 0; j < n; ++j) {
                            const T dxh = go[j] * gain->v[j];
                            gx[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    if (gain->requires_grad) {
                        gain->ensure_grad();
                        for (int j = 0; j < n; ++j) gain->g[j] += go[j] * xh[j];
                    }
                    if (bias->requires_grad) {
                        bias->ensure_grad();
                        for (int j = 0; j < n; ++j) bias->g[j] += go[j];
                    }
                }
            },
            out);
    }
    return out;
}

// -------------------------------------------------------------- objectives

// Mean label-smoothed negative log-likelihood over non-ignored positions.
// Targets equal to ignore_id are excluded from both the mean and the grad.
template <typename T>
TensorPtr<T> cross_entropy_smoothed(Tape<T>* tape, const TensorPtr<T>& logits, const std::vector<int>& targets,
                                    double smoothing = 0.0, int ignore_id = -1) {
    detail::expect_2d(logits, "cross_entropy_smoothed");
    const int l = logits->shape[0], vsz = logits->shape[1];
    if (static_cast<int>(targets.size()) != l)
        throw ShapeError("cross_entropy_smoothed: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(l) + " logit rows");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw ContractError("cross_entropy_smoothed: smoothing must lie in [0,1), got " + std::to_string(smoothing));
    for (int t : targets)
        if (t != ignore_id && (t < 0 || t >= vsz))
            throw IndexError("cross_entropy_smoothed: target id " + std::to_string(t) + " outside vocab of " +
                             std::to_string(vsz));

    auto probs = std::make_shared<Tensor<T>>(Shape{l, vsz});
    int included = 0;
    T total = T(0);
    const T eps = static_cast<T>(smoothing);
    const T uniform = eps / static_cast<T>(vsz);
    for (int i = 0; i < l; ++i) {
        if (targets[i] == ignore_id) continue;
        ++included;
        const T* row = logits->v.data() + static_cast<size_t>(i) * vsz;
        T mx = row[0];
        for (int j = 1; j < vsz; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int j = 0; j < vsz; ++j) denom += std::exp(row[j] - mx);
        const T lse = mx + std::log(denom);
        T loss_i = T(0);
        for (int j = 0; j < vsz; ++j) {
            const T logp = row[j] - lse;
            probs->at(i, j) = std::exp(logp);
            T y = uniform;
            if (j == targets[i]) y += T(1) - eps;
            loss_i -= y * logp;
        }
        total += loss_i;
    }
    auto out = make_tensor<T>({1});
    out->v[0] = included > 0 ? total / static_cast<T>(included) : T(0);
    if (included > 0 && detail::want_grad(tape, {logits})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape->record(
            [logits, out, probs, targets, ignore_id, l, vsz, eps, uniform, included] {
                logits->ensure_grad();
                const T go = out->g[0] / static_cast<T>(included);
                for (int i = 0; i < l; ++i) {
                    if (targets[i] == ignore_id) continue;
                    T* grow = logits->g.data() + static_cast<size_t>(i) * vsz;
                    const T* prow = probs->v.data() + static_cast<size_t>(i) * vsz;
                    for (int j = 0; j < vsz; ++j) {
                        T y = uniform;
                        if (j == targets[i]) y += T(1) - eps;
                        grow[j] += go * (prow[j] - y);
                    }
                }
            },
            out);
    }
    return out;
}

} // namespace vlkd
