#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "texvit/tape.hpp"
#include "texvit/threads.hpp"

namespace texvit {

namespace detail {

// C(m,n) += A(m,k) * B(k,n). i-k-j loop order: for a fixed output element the
// reduction index ascends, so results do not depend on the thread split.
template <typename T>
void mm_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    auto rows = [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            T* crow = c + i * n;
            const T* arow = a + i * k;
            for (int64_t t = 0; t < k; ++t) {
                const T av = arow[t];
                const T* brow = b + t * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (m * n * k >= 1 << 16)
        parallel_for(m, rows);
    else
        rows(0, m);
}

// C(m,n) += A(m,k) * B(n,k)^T  (dot products of rows).
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    auto rows = [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
                crow[j] += acc;
            }
        }
    };
    if (m * n * k >= 1 << 16)
        parallel_for(m, rows);
    else
        rows(0, m);
}

// C(m,n) += A(k,m)^T * B(k,n).
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    auto rows = [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            T* crow = c + i * n;
            for (int64_t t = 0; t < k; ++t) {
                const T av = a[t * m + i];
                const T* brow = b + t * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (m * n * k >= 1 << 16)
        parallel_for(m, rows);
    else
        rows(0, m);
}

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// im2col for one sample: x (C,H,W) -> col (C*kh*kw, oh*ow), zero padding.
template <typename T>
void im2col(const T* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t oh, int64_t ow, T* col) {
    const int64_t l = oh * ow;
    int64_t row = 0;
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                T* dst = col + row * l;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int64_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* src = plane + iy * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        dst[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

// Scatter-add of a column matrix back into an image; inverse of im2col.
template <typename T>
void col2im_acc(const T* col, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* x) {
    const int64_t l = oh * ow;
    int64_t row = 0;
    for (int64_t ci = 0; ci < c; ++ci) {
        T* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx, ++row) {
                const T* src = col + row * l;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        plane[iy * w + ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> permuted(const Tensor<T>& in, const std::vector<int>& perm) {
    const int r = in.rank();
    if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: rank mismatch");
    Shape out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = in.dim(perm[static_cast<size_t>(i)]);
    Tensor<T> out(out_shape);
    std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * in.dim(i + 1);
    std::vector<int64_t> step(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) step[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t src = 0;
    for (int64_t o = 0; o < out.numel(); ++o) {
        out[o] = in[src];
        for (int i = r - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)]++;
            src += step[static_cast<size_t>(i)];
            if (idx[static_cast<size_t>(i)] < out_shape[static_cast<size_t>(i)]) break;
            src -= step[static_cast<size_t>(i)] * out_shape[static_cast<size_t>(i)];
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

} // namespace detail

namespace ops_detail {
template <typename T>
void check_same_tape(Var<T> a, Var<T> b, const char* what) {
    if (a.tape != b.tape) throw ContractError(std::string(what) + ": operands on different tapes");
}
} // namespace ops_detail

// ---- elementwise -----------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "add");
    require_same_shape(a.val(), b.val(), "add");
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid}, [aid, bid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
    return {a.tape, id};
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "sub");
    require_same_shape(a.val(), b.val(), "sub");
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid}, [aid, bid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
    return {a.tape, id};
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "mul");
    require_same_shape(a.val(), b.val(), "mul");
    Tensor<T> out = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid}, [aid, bid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& av = t.value(aid);
        const Tensor<T>& bv2 = t.value(bid);
        Tensor<T>& ga = t.grad(aid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t i = 0; i < g.numel(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av[i];
        }
    });
    return {a.tape, id};
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
    Tensor<T> out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid, c](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
    });
    return {a.tape, id};
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tensor<T> out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i)
        if (out[i] < T(0)) out[i] = T(0);
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& x = t.value(aid);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (x[i] > T(0)) ga[i] += g[i];
    });
    return {a.tape, id};
}

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf (no tanh approximation),
// so finite differences have a single ground truth.
template <typename T>
Var<T> gelu(Var<T> a) {
    Tensor<T> out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double x = static_cast<double>(out[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * M_SQRT1_2)));
    }
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xs = t.value(aid);
        Tensor<T>& ga = t.grad(aid);
        constexpr double inv_sqrt_2pi = 0.3989422804014326779;
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double x = static_cast<double>(xs[i]);
            const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga[i] += g[i] * static_cast<T>(phi + x * pdf);
        }
    });
    return {a.tape, id};
}

// ---- structure -------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
    Tensor<T> out = a.val().reshaped(std::move(s));
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
    return {a.tape, id};
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> perm) {
    Tensor<T> out = detail::permuted(a.val(), perm);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid, inv](Tape<T>& t, int self) {
        Tensor<T> gp = detail::permuted(t.grad(self), inv);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < gp.numel(); ++i) ga[i] += gp[i];
    });
    return {a.tape, id};
}

template <typename T>
Var<T> transpose2d(Var<T> a) {
    if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
    return permute(a, {1, 0});
}

template <typename T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
    ops_detail::check_same_tape(a, b, "concat");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < sa.size(); ++i)
        if (static_cast<int>(i) != axis && sa[i] != sb[i])
            throw ShapeError("concat: shape mismatch " + shape_str(sa) + " vs " + shape_str(sb));
    Shape so = sa;
    so[static_cast<size_t>(axis)] += sb[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sa[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sa.size(); ++i) inner *= sa[i];
    const int64_t wa = sa[static_cast<size_t>(axis)] * inner;
    const int64_t wb = sb[static_cast<size_t>(axis)] * inner;
    Tensor<T> out(so);
    const Tensor<T>& av = a.val();
    const Tensor<T>& bv = b.val();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * (wa + wb), av.data() + o * wa, sizeof(T) * static_cast<size_t>(wa));
        std::memcpy(out.data() + o * (wa + wb) + wa, bv.data() + o * wb, sizeof(T) * static_cast<size_t>(wb));
    }
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid},
                            [aid, bid, outer, wa, wb](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t o = 0; o < outer; ++o) {
            const T* src = g.data() + o * (wa + wb);
            for (int64_t i = 0; i < wa; ++i) ga[o * wa + i] += src[i];
            for (int64_t i = 0; i < wb; ++i) gb[o * wb + i] += src[wa + i];
        }
    });
    return {a.tape, id};
}

template <typename T>
Var<T> slice(Var<T> a, int axis, int64_t start, int64_t len) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()) || start < 0 || len < 1 ||
        start + len > s[static_cast<size_t>(axis)])
        throw ShapeError("slice: range out of bounds for shape " + shape_str(s));
    Shape so = s;
    so[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t in_w = s[static_cast<size_t>(axis)] * inner;
    const int64_t out_w = len * inner;
    Tensor<T> out(so);
    const Tensor<T>& av = a.val();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_w, av.data() + o * in_w + start * inner,
                    sizeof(T) * static_cast<size_t>(out_w));
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid},
                            [aid, outer, inner, in_w, out_w, start](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t o = 0; o < outer; ++o) {
            T* dst = ga.data() + o * in_w + start * inner;
            const T* src = g.data() + o * out_w;
            for (int64_t i = 0; i < out_w; ++i) dst[i] += src[i];
        }
    });
    return {a.tape, id};
}

// Tile x along a new leading dimension of size b; backward sums over it.
template <typename T>
Var<T> tile_leading(Var<T> a, int64_t b) {
    const Shape& s = a.shape();
    Shape so;
    so.push_back(b);
    so.insert(so.end(), s.begin(), s.end());
    const int64_t w = a.val().numel();
    Tensor<T> out(so);
    for (int64_t i = 0; i < b; ++i)
        std::memcpy(out.data() + i * w, a.val().data(), sizeof(T) * static_cast<size_t>(w));
    int aid = a.id;
    int id = a.tape->add_op(std::move(out), {aid}, [aid, b, w](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < w; ++j) ga[j] += g[i * w + j];
    });
    return {a.tape, id};
}

// x (B, ...) + p (...) broadcast over the leading dim.
template <typename T>
Var<T> add_broadcast_leading(Var<T> x, Var<T> p) {
    ops_detail::check_same_tape(x, p, "add_broadcast_leading");
    const int64_t b = x.dim(0);
    const int64_t w = p.val().numel();
    if (x.val().numel() != b * w)
        throw ShapeError("add_broadcast_leading: " + shape_str(x.shape()) + " vs " +
                         shape_str(p.shape()));
    Tensor<T> out = x.val();
    const Tensor<T>& pv = p.val();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < w; ++j) out[i * w + j] += pv[j];
    int xid = x.id, pid = p.id;
    int id = x.tape->add_op(std::move(out), {xid, pid}, [xid, pid, b, w](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        Tensor<T>& gp = t.grad(pid);
        for (int64_t i = 0; i < b * w; ++i) gx[i] += g[i];
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < w; ++j) gp[j] += g[i * w + j];
    });
    return {x.tape, id};
}

// Per-sample scaling of x (B, ...) by coef[b]; the stochastic-depth primitive.
template <typename T>
Var<T> scale_rows(Var<T> x, Tensor<T> coef) {
    const int64_t b = x.dim(0);
    if (coef.numel() != b) throw ShapeError("scale_rows: coefficient count mismatch");
    const int64_t w = x.val().numel() / b;
    Tensor<T> out = x.val();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < w; ++j) out[i * w + j] *= coef[i];
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid}, [xid, coef, b, w](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < w; ++j) gx[i * w + j] += g[i * w + j] * coef[i];
    });
    return {x.tape, id};
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
    double acc = 0.0;
    const Tensor<T>& av = a.val();
    for (int64_t i = 0; i < av.numel(); ++i) acc += static_cast<double>(av[i]);
    int aid = a.id;
    int id = a.tape->add_op(Tensor<T>::scalar(static_cast<T>(acc)), {aid},
                            [aid](Tape<T>& t, int self) {
        const T g = t.grad(self)[0];
        Tensor<T>& ga = t.grad(aid);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
    return {a.tape, id};
}

template <typename T>
Var<T> mean_all(Var<T> a) {
    return scale(sum_all(a), static_cast<T>(1.0 / static_cast<double>(a.val().numel())));
}

// ---- matrix products -------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    detail::mm_acc(a.val().data(), b.val().data(), out.data(), m, k, n);
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid}, [aid, bid, m, k, n](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        detail::mm_nt_acc(g.data(), t.value(bid).data(), t.grad(aid).data(), m, n, k);
        detail::mm_tn_acc(t.value(aid).data(), g.data(), t.grad(bid).data(), k, m, n);
    });
    return {a.tape, id};
}

// Batched matmul: (B,m,k) x (B,k,n) -> (B,m,n).
template <typename T>
Var<T> bmm(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "bmm");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> out({bs, m, n});
    {
        const T* ap = a.val().data();
        const T* bp = b.val().data();
        T* cp = out.data();
        parallel_for_work(bs, bs * m * k * n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i)
                detail::mm_acc(ap + i * m * k, bp + i * k * n, cp + i * m * n, m, k, n);
        });
    }
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid},
                            [aid, bid, bs, m, k, n](Tape<T>& t, int self) {
        const T* g = t.grad(self).data();
        const T* av = t.value(aid).data();
        const T* bv = t.value(bid).data();
        T* ga = t.grad(aid).data();
        T* gb = t.grad(bid).data();
        parallel_for_work(bs, 2 * bs * m * k * n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                detail::mm_nt_acc(g + i * m * n, bv + i * k * n, ga + i * m * k, m, n, k);
                detail::mm_tn_acc(av + i * m * k, g + i * m * n, gb + i * k * n, k, m, n);
            }
        });
    });
    return {a.tape, id};
}

// Batched A * B^T: (B,m,k) x (B,n,k) -> (B,m,n).
template <typename T>
Var<T> bmm_nt(Var<T> a, Var<T> b) {
    ops_detail::check_same_tape(a, b, "bmm_nt");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw ShapeError("bmm_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> out({bs, m, n});
    {
        const T* ap = a.val().data();
        const T* bp = b.val().data();
        T* cp = out.data();
        parallel_for_work(bs, bs * m * k * n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i)
                detail::mm_nt_acc(ap + i * m * k, bp + i * n * k, cp + i * m * n, m, k, n);
        });
    }
    int aid = a.id, bid = b.id;
    int id = a.tape->add_op(std::move(out), {aid, bid},
                            [aid, bid, bs, m, k, n](Tape<T>& t, int self) {
        const T* g = t.grad(self).data();
        const T* av = t.value(aid).data();
        const T* bv = t.value(bid).data();
        T* ga = t.grad(aid).data();
        T* gb = t.grad(bid).data();
        parallel_for_work(bs, 2 * bs * m * k * n, [&](int64_t lo, int64_t hi) {
            for (int64_t i = lo; i < hi; ++i) {
                // dA = dC * B ; dB = dC^T * A
                detail::mm_acc(g + i * m * n, bv + i * n * k, ga + i * m * k, m, n, k);
                detail::mm_tn_acc(g + i * m * n, av + i * m * k, gb + i * n * k, n, m, k);
            }
        });
    });
    return {a.tape, id};
}

// x (..., Din) * W (Din, Dout) + bias (Dout). Leading dims are flattened.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    ops_detail::check_same_tape(x, w, "linear");
    const int64_t din = w.dim(0), dout = w.dim(1);
    if (x.shape().back() != din)
        throw ShapeError("linear: input width " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    const int64_t rows = x.val().numel() / din;
    Tensor<T> out_flat({rows, dout});
    detail::mm_acc(x.val().data(), w.val().data(), out_flat.data(), rows, din, dout);
    if (bias.id >= 0) {
        const Tensor<T>& bv = bias.val();
        if (bv.numel() != dout) throw ShapeError("linear: bias size mismatch");
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < dout; ++j) out_flat[i * dout + j] += bv[j];
    }
    Shape so = x.shape();
    so.back() = dout;
    Tensor<T> out = out_flat.reshaped(so);
    int xid = x.id, wid = w.id, bid = bias.id;
    std::vector<int> parents = {xid, wid};
    if (bid >= 0) parents.push_back(bid);
    int id = x.tape->add_op(std::move(out), parents,
                            [xid, wid, bid, rows, din, dout](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        detail::mm_nt_acc(g.data(), t.value(wid).data(), t.grad(xid).data(), rows, dout, din);
        detail::mm_tn_acc(t.value(xid).data(), g.data(), t.grad(wid).data(), din, rows, dout);
        if (bid >= 0) {
            Tensor<T>& gb = t.grad(bid);
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
        }
    });
    return {x.tape, id};
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
    return linear(x, w, Var<T>{x.tape, -1});
}

// ---- convolution & pooling -------------------------------------------------

// Direct cross-correlation (no kernel flip), zero padding.
// x (N,C,H,W), w (O,C,kh,kw), bias (O) optional.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int64_t stride, int64_t pad) {
    ops_detail::check_same_tape(x, w, "conv2d");
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
        throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (kh > h + 2 * pad || kw > wd + 2 * pad)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    const int64_t oh = detail::conv_out_dim(h, kh, stride, pad);
    const int64_t ow = detail::conv_out_dim(wd, kw, stride, pad);
    const int64_t ckk = c * kh * kw, l = oh * ow;
    Tensor<T> out({n, o, oh, ow});
    const bool has_bias = bias.id >= 0;
    if (has_bias && bias.val().numel() != o) throw ShapeError("conv2d: bias size mismatch");
    {
        const T* xp = x.val().data();
        const T* wp = w.val().data();
        const T* bp = has_bias ? bias.val().data() : nullptr;
        T* op = out.data();
        parallel_for_work(n, n * o * ckk * l, [&](int64_t lo, int64_t hi) {
            std::vector<T> col(static_cast<size_t>(ckk * l));
            for (int64_t i = lo; i < hi; ++i) {
                detail::im2col(xp + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                               col.data());
                T* dst = op + i * o * l;
                detail::mm_acc(wp, col.data(), dst, o, ckk, l);
                if (bp)
                    for (int64_t oc = 0; oc < o; ++oc)
                        for (int64_t j = 0; j < l; ++j) dst[oc * l + j] += bp[oc];
            }
        });
    }
    int xid = x.id, wid = w.id, bid = bias.id;
    std::vector<int> parents = {xid, wid};
    if (bid >= 0) parents.push_back(bid);
    int id = x.tape->add_op(std::move(out), parents,
                            [xid, wid, bid, n, c, h, wd, o, kh, kw, stride, pad, oh, ow, ckk,
                             l](Tape<T>& t, int self) {
        const T* g = t.grad(self).data();
        const T* xp = t.value(xid).data();
        const T* wp = t.value(wid).data();
        // dX: per-sample scatter, parallel over disjoint samples.
        {
            T* gx = t.grad(xid).data();
            parallel_for_work(n, n * o * ckk * l, [&](int64_t lo, int64_t hi) {
                std::vector<T> colg(static_cast<size_t>(ckk * l));
                for (int64_t i = lo; i < hi; ++i) {
                    std::fill(colg.begin(), colg.end(), T(0));
                    detail::mm_tn_acc(wp, g + i * o * l, colg.data(), ckk, o, l);
                    detail::col2im_acc(colg.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                                       gx + i * c * h * wd);
                }
            });
        }
        // dW: serial over samples so the reduction order is fixed.
        {
            T* gw = t.grad(wid).data();
            std::vector<T> col(static_cast<size_t>(ckk * l));
            for (int64_t i = 0; i < n; ++i) {
                detail::im2col(xp + i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                               col.data());
                detail::mm_nt_acc(g + i * o * l, col.data(), gw, o, l, ckk);
            }
        }
        if (bid >= 0) {
            Tensor<T>& gb = t.grad(bid);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t oc = 0; oc < o; ++oc) {
                    T acc = T(0);
                    const T* src = g + (i * o + oc) * l;
                    for (int64_t j = 0; j < l; ++j) acc += src[j];
                    gb[oc] += acc;
                }
        }
    });
    return {x.tape, id};
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int64_t stride, int64_t pad) {
    return conv2d(x, w, Var<T>{x.tape, -1}, stride, pad);
}

enum class PoolKind { Max, Avg };

// Window max/mean, stride s, no padding.
template <typename T>
Var<T> pool2d(Var<T> x, PoolKind kind, int64_t k, int64_t s) {
    if (x.rank() != 4) throw ShapeError("pool2d: expected 4-d input, got " + shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (k > h || k > w)
        throw ShapeError("pool2d: window " + std::to_string(k) + " exceeds input " +
                         shape_str(x.shape()));
    if (s < 1) throw ContractError("pool2d: stride must be >= 1");
    const int64_t oh = (h - k) / s + 1, ow = (w - k) / s + 1;
    Tensor<T> out({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<int32_t>>();
    if (kind == PoolKind::Max) argmax->resize(static_cast<size_t>(out.numel()));
    const Tensor<T>& xv = x.val();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data() + nc * h * w;
        T* dst = out.data() + nc * oh * ow;
        int32_t* am = kind == PoolKind::Max ? argmax->data() + nc * oh * ow : nullptr;
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t y0 = oy * s, x0 = ox * s;
                if (kind == PoolKind::Max) {
                    T best = plane[y0 * w + x0];
                    int32_t bi = static_cast<int32_t>(y0 * w + x0);
                    for (int64_t dy = 0; dy < k; ++dy)
                        for (int64_t dx = 0; dx < k; ++dx) {
                            const int64_t ii = (y0 + dy) * w + (x0 + dx);
                            if (plane[ii] > best) {
                                best = plane[ii];
                                bi = static_cast<int32_t>(ii);
                            }
                        }
                    dst[oy * ow + ox] = best;
                    am[oy * ow + ox] = bi;
                } else {
                    double acc = 0.0;
                    for (int64_t dy = 0; dy < k; ++dy)
                        for (int64_t dx = 0; dx < k; ++dx)
                            acc += static_cast<double>(plane[(y0 + dy) * w + (x0 + dx)]);
                    dst[oy * ow + ox] = static_cast<T>(acc / static_cast<double>(k * k));
                }
            }
    }
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid},
                            [xid, kind, n, c, h, w, k, s, oh, ow, argmax](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        const T inv = static_cast<T>(1.0 / static_cast<double>(k * k));
        for (int64_t nc = 0; nc < n * c; ++nc) {
            T* dplane = gx.data() + nc * h * w;
            const T* src = g.data() + nc * oh * ow;
            if (kind == PoolKind::Max) {
                const int32_t* am = argmax->data() + nc * oh * ow;
                for (int64_t i = 0; i < oh * ow; ++i) dplane[am[i]] += src[i];
            } else {
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const T v = src[oy * ow + ox] * inv;
                        for (int64_t dy = 0; dy < k; ++dy)
                            for (int64_t dx = 0; dx < k; ++dx)
                                dplane[(oy * s + dy) * w + (ox * s + dx)] += v;
                    }
            }
        }
    });
    return {x.tape, id};
}

// Average pooling to an arbitrary output grid; window i covers
// [floor(i*In/Out), ceil((i+1)*In/Out)).
template <typename T>
Var<T> adaptive_avg_pool2d(Var<T> x, int64_t out_h, int64_t out_w) {
    if (x.rank() != 4) throw ShapeError("adaptive_avg_pool2d: expected 4-d input");
    if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool2d: target smaller than 1x1");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto lo_of = [](int64_t i, int64_t in, int64_t out) { return (i * in) / out; };
    auto hi_of = [](int64_t i, int64_t in, int64_t out) {
        return ((i + 1) * in + out - 1) / out;
    };
    Tensor<T> out({n, c, out_h, out_w});
    const Tensor<T>& xv = x.val();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data() + nc * h * w;
        T* dst = out.data() + nc * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
            const int64_t y0 = lo_of(oy, h, out_h), y1 = hi_of(oy, h, out_h);
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const int64_t x0 = lo_of(ox, w, out_w), x1 = hi_of(ox, w, out_w);
                double acc = 0.0;
                for (int64_t yy = y0; yy < y1; ++yy)
                    for (int64_t xx = x0; xx < x1; ++xx)
                        acc += static_cast<double>(plane[yy * w + xx]);
                dst[oy * out_w + ox] = static_cast<T>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
        }
    }
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid},
                            [xid, n, c, h, w, out_h, out_w, lo_of, hi_of](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        for (int64_t nc = 0; nc < n * c; ++nc) {
            T* dplane = gx.data() + nc * h * w;
            const T* src = g.data() + nc * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const int64_t y0 = lo_of(oy, h, out_h), y1 = hi_of(oy, h, out_h);
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const int64_t x0 = lo_of(ox, w, out_w), x1 = hi_of(ox, w, out_w);
                    const T v = src[oy * out_w + ox] /
                                static_cast<T>((y1 - y0) * (x1 - x0));
                    for (int64_t yy = y0; yy < y1; ++yy)
                        for (int64_t xx = x0; xx < x1; ++xx) dplane[yy * w + xx] += v;
                }
            }
        }
    });
    return {x.tape, id};
}

// ---- normalization ---------------------------------------------------------

// Layer norm over the last dimension; statistics accumulated at double.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    const int64_t d = x.shape().back();
    if (gamma.val().numel() != d || beta.val().numel() != d)
        throw ShapeError("layer_norm: affine size " + shape_str(gamma.shape()) +
                         " does not match feature width " + std::to_string(d));
    const int64_t rows = x.val().numel() / d;
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<Tensor<T>>(x.shape());
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const Tensor<T>& xv = x.val();
    const Tensor<T>& gv = gamma.val();
    const Tensor<T>& bv = beta.val();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double dv = static_cast<double>(row[j]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[static_cast<size_t>(r)] = static_cast<T>(is);
        for (int64_t j = 0; j < d; ++j) {
            const T xh = static_cast<T>((static_cast<double>(row[j]) - mean) * is);
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = gv[j] * xh + bv[j];
        }
    }
    int xid = x.id, gid = gamma.id, bid = beta.id;
    int id = x.tape->add_op(std::move(out), {xid, gid, bid},
                            [xid, gid, bid, rows, d, xhat, invstd](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& gv = t.value(gid);
        Tensor<T>& gx = t.grad(xid);
        Tensor<T>& gg = t.grad(gid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g.data() + r * d;
            const T* xh = xhat->data() + r * d;
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                const double dy = static_cast<double>(grow[j]) * static_cast<double>(gv[j]);
                sum_dy += dy;
                sum_dy_xh += dy * static_cast<double>(xh[j]);
                gg[j] += grow[j] * xh[j];
                gb[j] += grow[j];
            }
            const double is = static_cast<double>((*invstd)[static_cast<size_t>(r)]);
            const double inv_d = 1.0 / static_cast<double>(d);
            for (int64_t j = 0; j < d; ++j) {
                const double dy = static_cast<double>(grow[j]) * static_cast<double>(gv[j]);
                gx[r * d + j] += static_cast<T>(
                    is * (dy - sum_dy * inv_d - static_cast<double>(xh[j]) * sum_dy_xh * inv_d));
            }
        }
    });
    return {x.tape, id};
}

enum class NormMode { Train, Infer };

// Batch norm over N,H,W per channel. Train mode normalizes by batch
// statistics (biased variance) and updates running stats in place with
// unbiased variance; infer mode uses the stored stats. `count` tracks whether
// the running stats were ever written.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, Tensor<T>& count, NormMode mode, double momentum = 0.1,
                  double eps = 1e-5) {
    if (x.rank() != 4) throw ShapeError("batch_norm: expected 4-d input");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (gamma.val().numel() != c || beta.val().numel() != c || running_mean.numel() != c ||
        running_var.numel() != c)
        throw ShapeError("batch_norm: channel count mismatch for input " + shape_str(x.shape()));
    const int64_t m = n * h * w;
    const int64_t plane = h * w;
    Tensor<T> out(x.shape());
    auto mean_s = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    auto invstd_s = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    const Tensor<T>& xv = x.val();
    const Tensor<T>& gv = gamma.val();
    const Tensor<T>& bv = beta.val();
    if (mode == NormMode::Infer && count[0] == T(0))
        throw ContractError("batch_norm: infer mode with uninitialized running statistics");
    for (int64_t ci = 0; ci < c; ++ci) {
        double mean, var;
        if (mode == NormMode::Train) {
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const T* p = xv.data() + (i * c + ci) * plane;
                for (int64_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
            }
            mean = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const T* p = xv.data() + (i * c + ci) * plane;
                for (int64_t j = 0; j < plane; ++j) {
                    const double dv = static_cast<double>(p[j]) - mean;
                    vacc += dv * dv;
                }
            }
            var = vacc / static_cast<double>(m);
            const double unbiased = m > 1 ? vacc / static_cast<double>(m - 1) : vacc;
            running_mean[ci] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[ci]) +
                                              momentum * mean);
            running_var[ci] = static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[ci]) +
                                             momentum * unbiased);
        } else {
            mean = static_cast<double>(running_mean[ci]);
            var = static_cast<double>(running_var[ci]);
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean_s)[static_cast<size_t>(ci)] = mean;
        (*invstd_s)[static_cast<size_t>(ci)] = is;
        const double gc = static_cast<double>(gv[ci]);
        const double bc = static_cast<double>(bv[ci]);
        for (int64_t i = 0; i < n; ++i) {
            const T* p = xv.data() + (i * c + ci) * plane;
            T* q = out.data() + (i * c + ci) * plane;
            for (int64_t j = 0; j < plane; ++j)
                q[j] = static_cast<T>((static_cast<double>(p[j]) - mean) * is * gc + bc);
        }
    }
    if (mode == NormMode::Train) count[0] = T(1);
    int xid = x.id, gid = gamma.id, bid = beta.id;
    const bool train = mode == NormMode::Train;
    int id = x.tape->add_op(std::move(out), {xid, gid, bid},
                            [xid, gid, bid, n, c, plane, m, mean_s, invstd_s,
                             train](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv2 = t.value(xid);
        const Tensor<T>& gv2 = t.value(gid);
        Tensor<T>& gx = t.grad(xid);
        Tensor<T>& gg = t.grad(gid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t ci = 0; ci < c; ++ci) {
            const double mean = (*mean_s)[static_cast<size_t>(ci)];
            const double is = (*invstd_s)[static_cast<size_t>(ci)];
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const T* gp = g.data() + (i * c + ci) * plane;
                const T* xp = xv2.data() + (i * c + ci) * plane;
                for (int64_t j = 0; j < plane; ++j) {
                    const double dy = static_cast<double>(gp[j]);
                    const double xh = (static_cast<double>(xp[j]) - mean) * is;
                    sum_dy += dy;
                    sum_dy_xh += dy * xh;
                }
            }
            gg[ci] += static_cast<T>(sum_dy_xh);
            gb[ci] += static_cast<T>(sum_dy);
            const double gc = static_cast<double>(gv2[ci]);
            const double inv_m = 1.0 / static_cast<double>(m);
            for (int64_t i = 0; i < n; ++i) {
                const T* gp = g.data() + (i * c + ci) * plane;
                const T* xp = xv2.data() + (i * c + ci) * plane;
                T* dp = gx.data() + (i * c + ci) * plane;
                for (int64_t j = 0; j < plane; ++j) {
                    const double dy = static_cast<double>(gp[j]);
                    const double xh = (static_cast<double>(xp[j]) - mean) * is;
                    if (train)
                        dp[j] += static_cast<T>(gc * is *
                                                (dy - sum_dy * inv_m - xh * sum_dy_xh * inv_m));
                    else
                        dp[j] += static_cast<T>(gc * is * dy);
                }
            }
        }
    });
    return {x.tape, id};
}

// Per-sample normalization over all of (C,H,W) with per-channel affine; the
// layer-norm backbone variant.
template <typename T>
Var<T> group_norm_all(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    if (x.rank() != 4) throw ShapeError("group_norm_all: expected 4-d input");
    const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gamma.val().numel() != c || beta.val().numel() != c)
        throw ShapeError("group_norm_all: channel count mismatch");
    const int64_t m = c * plane;
    Tensor<T> out(x.shape());
    auto mean_s = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    auto invstd_s = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    const Tensor<T>& xv = x.val();
    const Tensor<T>& gv = gamma.val();
    const Tensor<T>& bv = beta.val();
    for (int64_t i = 0; i < n; ++i) {
        const T* p = xv.data() + i * m;
        double mean = 0.0;
        for (int64_t j = 0; j < m; ++j) mean += static_cast<double>(p[j]);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t j = 0; j < m; ++j) {
            const double dv = static_cast<double>(p[j]) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean_s)[static_cast<size_t>(i)] = mean;
        (*invstd_s)[static_cast<size_t>(i)] = is;
        T* q = out.data() + i * m;
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t j = 0; j < plane; ++j) {
                const int64_t k = ci * plane + j;
                q[k] = static_cast<T>((static_cast<double>(p[k]) - mean) * is *
                                          static_cast<double>(gv[ci]) +
                                      static_cast<double>(bv[ci]));
            }
    }
    int xid = x.id, gid = gamma.id, bid = beta.id;
    int id = x.tape->add_op(std::move(out), {xid, gid, bid},
                            [xid, gid, bid, n, c, plane, m, mean_s, invstd_s](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv2 = t.value(xid);
        const Tensor<T>& gv2 = t.value(gid);
        Tensor<T>& gx = t.grad(xid);
        Tensor<T>& gg = t.grad(gid);
        Tensor<T>& gb = t.grad(bid);
        for (int64_t i = 0; i < n; ++i) {
            const double mean = (*mean_s)[static_cast<size_t>(i)];
            const double is = (*invstd_s)[static_cast<size_t>(i)];
            const T* gp = g.data() + i * m;
            const T* xp = xv2.data() + i * m;
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t j = 0; j < plane; ++j) {
                    const int64_t k = ci * plane + j;
                    const double dy = static_cast<double>(gp[k]) * static_cast<double>(gv2[ci]);
                    const double xh = (static_cast<double>(xp[k]) - mean) * is;
                    sum_dy += dy;
                    sum_dy_xh += dy * xh;
                    gg[ci] += static_cast<T>(static_cast<double>(gp[k]) * xh);
                    gb[ci] += gp[k];
                }
            const double inv_m = 1.0 / static_cast<double>(m);
            T* dp = gx.data() + i * m;
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t j = 0; j < plane; ++j) {
                    const int64_t k = ci * plane + j;
                    const double dy = static_cast<double>(gp[k]) * static_cast<double>(gv2[ci]);
                    const double xh = (static_cast<double>(xp[k]) - mean) * is;
                    dp[k] += static_cast<T>(is * (dy - sum_dy * inv_m - xh * sum_dy_xh * inv_m));
                }
        }
    });
    return {x.tape, id};
}

// ---- softmax family --------------------------------------------------------

// Numerically stable softmax over the last dimension (max subtraction).
template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.val().numel() / d;
    Tensor<T> out(x.shape());
    const Tensor<T>& xv = x.val();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T* q = out.data() + r * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double e = std::exp(static_cast<double>(row[j] - mx));
            q[j] = static_cast<T>(e);
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j < d; ++j) q[j] = static_cast<T>(static_cast<double>(q[j]) * inv);
    }
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid}, [xid, rows, d](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gx = t.grad(xid);
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g.data() + r * d;
            const T* yrow = y.data() + r * d;
            double dot = 0.0;
            for (int64_t j = 0; j < d; ++j)
                dot += static_cast<double>(grow[j]) * static_cast<double>(yrow[j]);
            for (int64_t j = 0; j < d; ++j)
                gx[r * d + j] += static_cast<T>(
                    static_cast<double>(yrow[j]) * (static_cast<double>(grow[j]) - dot));
        }
    });
    return {x.tape, id};
}

// softmax over an arbitrary axis: bring the axis last, normalize, restore.
template <typename T>
Var<T> softmax(Var<T> x, int axis) {
    const int r = x.rank();
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(x.shape()));
    if (axis == r - 1) return softmax_lastdim(x);
    std::vector<int> to_last, back(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
        if (i != axis) to_last.push_back(i);
    to_last.push_back(axis);
    for (int i = 0; i < r; ++i) back[static_cast<size_t>(to_last[static_cast<size_t>(i)])] = i;
    return permute(softmax_lastdim(permute(x, to_last)), back);
}

// log(softmax(x)) over the last dimension, computed in log space.
template <typename T>
Var<T> log_softmax_lastdim(Var<T> x) {
    const int64_t d = x.shape().back();
    const int64_t rows = x.val().numel() / d;
    Tensor<T> out(x.shape());
    const Tensor<T>& xv = x.val();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T* q = out.data() + r * d;
        T mx = row[0];
        for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < d; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        const double log_denom = std::log(denom) + static_cast<double>(mx);
        for (int64_t j = 0; j < d; ++j)
            q[j] = static_cast<T>(static_cast<double>(row[j]) - log_denom);
    }
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid}, [xid, rows, d](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& y = t.value(self);
        Tensor<T>& gx = t.grad(xid);
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g.data() + r * d;
            const T* yrow = y.data() + r * d;
            double gsum = 0.0;
            for (int64_t j = 0; j < d; ++j) gsum += static_cast<double>(grow[j]);
            for (int64_t j = 0; j < d; ++j)
                gx[r * d + j] += static_cast<T>(static_cast<double>(grow[j]) -
                                                std::exp(static_cast<double>(yrow[j])) * gsum);
        }
    });
    return {x.tape, id};
}

// ---- texture ----------------------------------------------------------------

// Batched Gram matrix. F (B,C,M) -> G (B,C,C); G[b,i,j] = sum_k F[b,i,k]F[b,j,k],
// optionally divided by C*M. Computed for i <= j and mirrored, so the output
// is symmetric by construction.
template <typename T>
Var<T> gram_batched(Var<T> f, bool normalize) {
    if (f.rank() != 3) throw ShapeError("gram_batched: expected (B,C,M), got " + shape_str(f.shape()));
    const int64_t b = f.dim(0), c = f.dim(1), m = f.dim(2);
    const double norm = normalize ? 1.0 / static_cast<double>(c * m) : 1.0;
    Tensor<T> out({b, c, c});
    const Tensor<T>& fv = f.val();
    parallel_for_work(b, b * c * c * m / 2, [&](int64_t lo, int64_t hi) {
        for (int64_t bi = lo; bi < hi; ++bi) {
            const T* fmat = fv.data() + bi * c * m;
            T* gmat = out.data() + bi * c * c;
            for (int64_t i = 0; i < c; ++i)
                for (int64_t j = i; j < c; ++j) {
                    T acc = T(0);
                    const T* ri = fmat + i * m;
                    const T* rj = fmat + j * m;
                    for (int64_t k = 0; k < m; ++k) acc += ri[k] * rj[k];
                    const T v = static_cast<T>(static_cast<double>(acc) * norm);
                    gmat[i * c + j] = v;
                    gmat[j * c + i] = v;
                }
        }
    });
    int fid = f.id;
    int id = f.tape->add_op(std::move(out), {fid}, [fid, b, c, m, norm](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& fv2 = t.value(fid);
        Tensor<T>& gf = t.grad(fid);
        parallel_for_work(b, b * c * c * m, [&](int64_t lo, int64_t hi) {
            for (int64_t bi = lo; bi < hi; ++bi) {
                const T* gmat = g.data() + bi * c * c;
                const T* fmat = fv2.data() + bi * c * m;
                T* dmat = gf.data() + bi * c * m;
                // dF = (dG + dG^T) F * norm
                for (int64_t i = 0; i < c; ++i)
                    for (int64_t j = 0; j < c; ++j) {
                        const T w = static_cast<T>(
                            (static_cast<double>(gmat[i * c + j]) +
                             static_cast<double>(gmat[j * c + i])) * norm);
                        const T* rj = fmat + j * m;
                        T* di = dmat + i * m;
                        for (int64_t k = 0; k < m; ++k) di[k] += w * rj[k];
                    }
            }
        });
    });
    return {f.tape, id};
}

// ---- patches ----------------------------------------------------------------

// (B,C,H,W) -> (B, T, P*P*C) with T = (H/P)*(W/P); patches in row-major grid
// order, each flattened channel-major.
template <typename T>
Var<T> unfold_patches(Var<T> x, int64_t p) {
    if (x.rank() != 4) throw ShapeError("unfold_patches: expected 4-d input");
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw ShapeError("unfold_patches: patch size " + std::to_string(p) +
                         " does not divide grid " + shape_str(x.shape()));
    const int64_t gh = h / p, gw = w / p, t_cnt = gh * gw, pw = p * p * c;
    Tensor<T> out({b, t_cnt, pw});
    const Tensor<T>& xv = x.val();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t gy = 0; gy < gh; ++gy)
            for (int64_t gx2 = 0; gx2 < gw; ++gx2) {
                T* dst = out.data() + (bi * t_cnt + gy * gw + gx2) * pw;
                int64_t o = 0;
                for (int64_t ci = 0; ci < c; ++ci)
                    for (int64_t py = 0; py < p; ++py)
                        for (int64_t px = 0; px < p; ++px, ++o)
                            dst[o] = xv[((bi * c + ci) * h + gy * p + py) * w + gx2 * p + px];
            }
    int xid = x.id;
    int id = x.tape->add_op(std::move(out), {xid},
                            [xid, b, c, h, w, p, gh, gw, t_cnt, pw](Tape<T>& t, int self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t gy = 0; gy < gh; ++gy)
                for (int64_t gx2 = 0; gx2 < gw; ++gx2) {
                    const T* src = g.data() + (bi * t_cnt + gy * gw + gx2) * pw;
                    int64_t o = 0;
                    for (int64_t ci = 0; ci < c; ++ci)
                        for (int64_t py = 0; py < p; ++py)
                            for (int64_t px = 0; px < p; ++px, ++o)
                                gx[((bi * c + ci) * h + gy * p + py) * w + gx2 * p + px] += src[o];
                }
    });
    return {x.tape, id};
}

} // namespace texvit
