#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "bar/gemm.hpp"
#include "bar/graph.hpp"

namespace bar {

// ===== shape plumbing =====

template <class T>
void require_rank(const TensorT<T>& t, int rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " +
                                    std::to_string(rank) + ", got shape " + t.shape_str());
}

inline int conv_out_dim(int in, int kernel, int stride, int pad, const char* op) {
    const int span = in + 2 * pad - kernel;
    if (span < 0 || stride < 1)
        throw std::invalid_argument(std::string(op) + ": kernel " + std::to_string(kernel) +
                                    " with pad " + std::to_string(pad) + " does not fit input " +
                                    std::to_string(in));
    return span / stride + 1;
}

// ===== elementwise =====

template <class T>
VarT<T> relu(VarT<T> x) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.data.size(); ++i) out.data[i] = xv.data[i] > T(0) ? xv.data[i] : T(0);
    const bool rg = g.requires_grad(x.id);
    int id = g.add(std::move(out), {x.id}, rg, [xid = x.id](GraphT<T>& gr, int self) {
        if (!gr.requires_grad(xid)) return;
        const TensorT<T>& dy = gr.grad_buffer(self);
        const TensorT<T>& xv = gr.value(xid);
        TensorT<T>& dx = gr.grad_buffer(xid);
        for (std::size_t i = 0; i < dx.data.size(); ++i)
            if (xv.data[i] > T(0)) dx.data[i] += dy.data[i];
    });
    return {&g, id};
}

template <class T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = g.value(a.id);
    const TensorT<T>& bv = g.value(b.id);
    check_same_shape(av, bv, "add");
    TensorT<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    const bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
    int id = g.add(std::move(out), {a.id, b.id}, rg, [aid = a.id, bid = b.id](GraphT<T>& gr, int self) {
        const TensorT<T>& dy = gr.grad_buffer(self);
        for (int pid : {aid, bid}) {
            if (!gr.requires_grad(pid)) continue;
            TensorT<T>& dp = gr.grad_buffer(pid);
            for (std::size_t i = 0; i < dp.data.size(); ++i) dp.data[i] += dy.data[i];
        }
    });
    return {&g, id};
}

template <class T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = g.value(a.id);
    const TensorT<T>& bv = g.value(b.id);
    check_same_shape(av, bv, "mul");
    TensorT<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    const bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
    int id = g.add(std::move(out), {a.id, b.id}, rg, [aid = a.id, bid = b.id](GraphT<T>& gr, int self) {
        const TensorT<T>& dy = gr.grad_buffer(self);
        const TensorT<T>& av = gr.value(aid);
        const TensorT<T>& bv = gr.value(bid);
        if (gr.requires_grad(aid)) {
            TensorT<T>& da = gr.grad_buffer(aid);
            for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += dy.data[i] * bv.data[i];
        }
        if (gr.requires_grad(bid)) {
            TensorT<T>& db = gr.grad_buffer(bid);
            for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] += dy.data[i] * av.data[i];
        }
    });
    return {&g, id};
}

/// y = c * x with a compile-time-constant coefficient (no gradient to c).
template <class T>
VarT<T> scale(VarT<T> x, T c) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    TensorT<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * xv.data[i];
    int id = g.add(std::move(out), {x.id}, g.requires_grad(x.id),
                   [xid = x.id, c](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(xid)) return;
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       TensorT<T>& dx = gr.grad_buffer(xid);
                       for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += c * dy.data[i];
                   });
    return {&g, id};
}

template <class T>
VarT<T> sum(VarT<T> x) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    T acc = T(0);
    for (T v : xv.data) acc += v;
    int id = g.add(TensorT<T>::scalar(acc), {x.id}, g.requires_grad(x.id),
                   [xid = x.id](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(xid)) return;
                       const T gy = gr.grad_buffer(self).data[0];
                       TensorT<T>& dx = gr.grad_buffer(xid);
                       for (auto& v : dx.data) v += gy;
                   });
    return {&g, id};
}

// ===== structure ops =====

template <class T>
VarT<T> concat_channels(VarT<T> a, VarT<T> b) {
    GraphT<T>& g = *a.graph;
    const TensorT<T>& av = g.value(a.id);
    const TensorT<T>& bv = g.value(b.id);
    require_rank(av, 4, "concat_channels", "lhs");
    require_rank(bv, 4, "concat_channels", "rhs");
    if (av.shape[0] != bv.shape[0] || av.shape[2] != bv.shape[2] || av.shape[3] != bv.shape[3])
        throw std::invalid_argument("concat_channels: non-channel dims differ, " + av.shape_str() +
                                    " vs " + bv.shape_str());
    const int n = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
    const int hw = av.shape[2] * av.shape[3];
    TensorT<T> out({n, ca + cb, av.shape[2], av.shape[3]});
    for (int i = 0; i < n; ++i) {
        std::copy_n(&av.data[static_cast<std::size_t>(i) * ca * hw], static_cast<std::size_t>(ca) * hw,
                    &out.data[static_cast<std::size_t>(i) * (ca + cb) * hw]);
        std::copy_n(&bv.data[static_cast<std::size_t>(i) * cb * hw], static_cast<std::size_t>(cb) * hw,
                    &out.data[static_cast<std::size_t>(i) * (ca + cb) * hw + static_cast<std::size_t>(ca) * hw]);
    }
    const bool rg = g.requires_grad(a.id) || g.requires_grad(b.id);
    int id = g.add(std::move(out), {a.id, b.id}, rg,
                   [aid = a.id, bid = b.id, n, ca, cb, hw](GraphT<T>& gr, int self) {
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       if (gr.requires_grad(aid)) {
                           TensorT<T>& da = gr.grad_buffer(aid);
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < ca * hw; ++j)
                                   da.data[static_cast<std::size_t>(i) * ca * hw + j] +=
                                       dy.data[static_cast<std::size_t>(i) * (ca + cb) * hw + j];
                       }
                       if (gr.requires_grad(bid)) {
                           TensorT<T>& db = gr.grad_buffer(bid);
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < cb * hw; ++j)
                                   db.data[static_cast<std::size_t>(i) * cb * hw + j] +=
                                       dy.data[static_cast<std::size_t>(i) * (ca + cb) * hw +
                                               static_cast<std::size_t>(ca) * hw + j];
                       }
                   });
    return {&g, id};
}

template <class T>
VarT<T> global_avg_pool(VarT<T> x) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    require_rank(xv, 4, "global_avg_pool", "input");
    const int n = xv.shape[0], c = xv.shape[1], hw = xv.shape[2] * xv.shape[3];
    if (hw == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    TensorT<T> out({n, c});
    for (int i = 0; i < n * c; ++i) {
        T acc = T(0);
        const T* p = &xv.data[static_cast<std::size_t>(i) * hw];
        for (int j = 0; j < hw; ++j) acc += p[j];
        out.data[static_cast<std::size_t>(i)] = acc / static_cast<T>(hw);
    }
    int id = g.add(std::move(out), {x.id}, g.requires_grad(x.id),
                   [xid = x.id, n, c, hw](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(xid)) return;
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       TensorT<T>& dx = gr.grad_buffer(xid);
                       for (int i = 0; i < n * c; ++i) {
                           const T gy = dy.data[static_cast<std::size_t>(i)] / static_cast<T>(hw);
                           T* p = &dx.data[static_cast<std::size_t>(i) * hw];
                           for (int j = 0; j < hw; ++j) p[j] += gy;
                       }
                   });
    return {&g, id};
}

template <class T>
VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> b) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    const TensorT<T>& wv = g.value(w.id);
    const TensorT<T>& bv = g.value(b.id);
    require_rank(xv, 2, "linear", "input");
    require_rank(wv, 2, "linear", "weight");
    require_rank(bv, 1, "linear", "bias");
    const int n = xv.shape[0], f = xv.shape[1], k = wv.shape[0];
    if (wv.shape[1] != f)
        throw std::invalid_argument("linear: weight expects " + std::to_string(wv.shape[1]) +
                                    " features, input has " + std::to_string(f));
    if (bv.shape[0] != k)
        throw std::invalid_argument("linear: bias size " + std::to_string(bv.shape[0]) +
                                    " does not match " + std::to_string(k) + " outputs");
    TensorT<T> out({n, k});
    gemm_nt(n, k, f, xv.data.data(), wv.data.data(), out.data.data(), false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) out.data[static_cast<std::size_t>(i) * k + j] += bv.data[static_cast<std::size_t>(j)];
    const bool rg = g.requires_grad(x.id) || g.requires_grad(w.id) || g.requires_grad(b.id);
    int id = g.add(std::move(out), {x.id, w.id, b.id}, rg,
                   [xid = x.id, wid = w.id, bid = b.id, n, f, k](GraphT<T>& gr, int self) {
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       if (gr.requires_grad(xid))
                           gemm_nn(n, f, k, dy.data.data(), gr.value(wid).data.data(),
                                   gr.grad_buffer(xid).data.data(), true);
                       if (gr.requires_grad(wid))
                           gemm_tn(k, f, n, dy.data.data(), gr.value(xid).data.data(),
                                   gr.grad_buffer(wid).data.data(), true);
                       if (gr.requires_grad(bid)) {
                           TensorT<T>& db = gr.grad_buffer(bid);
                           for (int i = 0; i < n; ++i)
                               for (int j = 0; j < k; ++j) db.data[static_cast<std::size_t>(j)] += dy.data[static_cast<std::size_t>(i) * k + j];
                       }
                   });
    return {&g, id};
}

// ===== convolution =====

template <class T>
void im2col(const TensorT<T>& x, int kernel, int stride, int pad, int out_h, int out_w,
            std::vector<T>& col) {
    const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const int cols = n * out_h * out_w;
    col.assign(static_cast<std::size_t>(c) * kernel * kernel * cols, T(0));
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < kernel; ++ki)
            for (int kj = 0; kj < kernel; ++kj) {
                T* row = &col[(static_cast<std::size_t>(ci) * kernel * kernel +
                               static_cast<std::size_t>(ki) * kernel + kj) * cols];
                for (int ni = 0; ni < n; ++ni) {
                    const T* xc = &x.data[(static_cast<std::size_t>(ni) * c + ci) * h * w];
                    for (int oh = 0; oh < out_h; ++oh) {
                        const int ih = oh * stride + ki - pad;
                        T* dst = row + (static_cast<std::size_t>(ni) * out_h + oh) * out_w;
                        if (ih < 0 || ih >= h) continue;
                        const T* src = xc + static_cast<std::size_t>(ih) * w;
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride + kj - pad;
                            if (iw >= 0 && iw < w) dst[ow] = src[iw];
                        }
                    }
                }
            }
}

template <class T>
void col2im_add(const std::vector<T>& col, int kernel, int stride, int pad, int out_h, int out_w,
                TensorT<T>& dx) {
    const int n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3];
    const int cols = n * out_h * out_w;
    for (int ci = 0; ci < c; ++ci)
        for (int ki = 0; ki < kernel; ++ki)
            for (int kj = 0; kj < kernel; ++kj) {
                const T* row = &col[(static_cast<std::size_t>(ci) * kernel * kernel +
                                     static_cast<std::size_t>(ki) * kernel + kj) * cols];
                for (int ni = 0; ni < n; ++ni) {
                    T* xc = &dx.data[(static_cast<std::size_t>(ni) * c + ci) * h * w];
                    for (int oh = 0; oh < out_h; ++oh) {
                        const int ih = oh * stride + ki - pad;
                        if (ih < 0 || ih >= h) continue;
                        const T* src = row + (static_cast<std::size_t>(ni) * out_h + oh) * out_w;
                        T* dst = xc + static_cast<std::size_t>(ih) * w;
                        for (int ow = 0; ow < out_w; ++ow) {
                            const int iw = ow * stride + kj - pad;
                            if (iw >= 0 && iw < w) dst[iw] += src[ow];
                        }
                    }
                }
            }
}

/// 2-D convolution, square kernel, no bias (the following batch norm owns the
/// affine part). Keeps the unfolded input alive for the weight gradient.
template <class T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, int stride, int pad) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    const TensorT<T>& wv = g.value(w.id);
    require_rank(xv, 4, "conv2d", "input");
    require_rank(wv, 4, "conv2d", "weight");
    if (wv.shape[2] != wv.shape[3])
        throw std::invalid_argument("conv2d: kernel must be square, got " + wv.shape_str());
    if (wv.shape[1] != xv.shape[1])
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(wv.shape[1]) +
                                    " input channels, input has " + std::to_string(xv.shape[1]));
    const int n = xv.shape[0], cin = xv.shape[1];
    const int cout = wv.shape[0], kernel = wv.shape[2];
    const int out_h = conv_out_dim(xv.shape[2], kernel, stride, pad, "conv2d");
    const int out_w = conv_out_dim(xv.shape[3], kernel, stride, pad, "conv2d");
    const int cols = n * out_h * out_w;
    const int krows = cin * kernel * kernel;

    auto col = std::make_shared<std::vector<T>>();
    im2col(xv, kernel, stride, pad, out_h, out_w, *col);

    std::vector<T> y2d(static_cast<std::size_t>(cout) * cols);
    gemm_nn(cout, cols, krows, wv.data.data(), col->data(), y2d.data(), false);

    TensorT<T> out({n, cout, out_h, out_w});
    const int hw = out_h * out_w;
    for (int ni = 0; ni < n; ++ni)
        for (int co = 0; co < cout; ++co)
            std::copy_n(&y2d[static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(ni) * hw],
                        hw, &out.data[(static_cast<std::size_t>(ni) * cout + co) * hw]);

    const bool rg = g.requires_grad(x.id) || g.requires_grad(w.id);
    int id = g.add(
        std::move(out), {x.id, w.id}, rg,
        [xid = x.id, wid = w.id, col, n, cout, kernel, stride, pad, out_h, out_w, cols,
         krows](GraphT<T>& gr, int self) {
            const TensorT<T>& dy = gr.grad_buffer(self);
            const int hw = out_h * out_w;
            std::vector<T> dy2d(static_cast<std::size_t>(cout) * cols);
            for (int ni = 0; ni < n; ++ni)
                for (int co = 0; co < cout; ++co)
                    std::copy_n(&dy.data[(static_cast<std::size_t>(ni) * cout + co) * hw], hw,
                                &dy2d[static_cast<std::size_t>(co) * cols + static_cast<std::size_t>(ni) * hw]);
            if (gr.requires_grad(wid))
                gemm_nt(cout, krows, cols, dy2d.data(), col->data(),
                        gr.grad_buffer(wid).data.data(), true);
            if (gr.requires_grad(xid)) {
                std::vector<T> dcol(static_cast<std::size_t>(krows) * cols);
                gemm_tn(krows, cols, cout, gr.value(wid).data.data(), dy2d.data(), dcol.data(),
                        false);
                col2im_add(dcol, kernel, stride, pad, out_h, out_w, gr.grad_buffer(xid));
            }
        });
    return {&g, id};
}

// ===== batch normalization =====

/// Per-channel batch norm over [N,C,H,W]. In training mode the batch statistics
/// are used and the running estimates (owned by the caller) are updated in
/// place; in eval mode the running estimates are read and nothing is mutated.
template <class T>
VarT<T> batchnorm2d(VarT<T> x, VarT<T> gamma, VarT<T> beta, std::vector<T>* running_mean,
                    std::vector<T>* running_var, bool training, T momentum = T(0.1),
                    T eps = T(1e-5)) {
    GraphT<T>& g = *x.graph;
    const TensorT<T>& xv = g.value(x.id);
    const TensorT<T>& gv = g.value(gamma.id);
    const TensorT<T>& bv = g.value(beta.id);
    require_rank(xv, 4, "batchnorm2d", "input");
    const int n = xv.shape[0], c = xv.shape[1], hw = xv.shape[2] * xv.shape[3];
    if (gv.numel() != c || bv.numel() != c)
        throw std::invalid_argument("batchnorm2d: affine params must have " + std::to_string(c) +
                                    " channels");
    if (!running_mean || !running_var || static_cast<int>(running_mean->size()) != c ||
        static_cast<int>(running_var->size()) != c)
        throw std::invalid_argument("batchnorm2d: running stats must have " + std::to_string(c) +
                                    " channels");
    const int m = n * hw;
    if (m == 0) throw std::invalid_argument("batchnorm2d: empty batch");

    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            T acc = T(0), acc2 = T(0);
            for (int ni = 0; ni < n; ++ni) {
                const T* p = &xv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                for (int j = 0; j < hw; ++j) {
                    acc += p[j];
                    acc2 += p[j] * p[j];
                }
            }
            const T mu = acc / static_cast<T>(m);
            T var = acc2 / static_cast<T>(m) - mu * mu;
            if (var < T(0)) var = T(0);
            (*mean)[static_cast<std::size_t>(ci)] = mu;
            (*inv)[static_cast<std::size_t>(ci)] = T(1) / std::sqrt(var + eps);
            (*running_mean)[static_cast<std::size_t>(ci)] =
                (T(1) - momentum) * (*running_mean)[static_cast<std::size_t>(ci)] + momentum * mu;
            const T var_unbiased = m > 1 ? var * static_cast<T>(m) / static_cast<T>(m - 1) : var;
            (*running_var)[static_cast<std::size_t>(ci)] =
                (T(1) - momentum) * (*running_var)[static_cast<std::size_t>(ci)] + momentum * var_unbiased;
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            (*mean)[static_cast<std::size_t>(ci)] = (*running_mean)[static_cast<std::size_t>(ci)];
            (*inv)[static_cast<std::size_t>(ci)] =
                T(1) / std::sqrt((*running_var)[static_cast<std::size_t>(ci)] + eps);
        }
    }

    TensorT<T> out(xv.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const T mu = (*mean)[static_cast<std::size_t>(ci)];
            const T iv = (*inv)[static_cast<std::size_t>(ci)];
            const T ga = gv.data[static_cast<std::size_t>(ci)];
            const T be = bv.data[static_cast<std::size_t>(ci)];
            const T* p = &xv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
            T* q = &out.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
            for (int j = 0; j < hw; ++j) q[j] = ga * (p[j] - mu) * iv + be;
        }

    const bool rg = g.requires_grad(x.id) || g.requires_grad(gamma.id) || g.requires_grad(beta.id);
    int id = g.add(
        std::move(out), {x.id, gamma.id, beta.id}, rg,
        [xid = x.id, gid = gamma.id, bid = beta.id, mean, inv, n, c, hw, training](GraphT<T>& gr,
                                                                                   int self) {
            const TensorT<T>& dy = gr.grad_buffer(self);
            const TensorT<T>& xv = gr.value(xid);
            const TensorT<T>& gv = gr.value(gid);
            const int m = n * hw;
            const bool need_x = gr.requires_grad(xid);
            const bool need_g = gr.requires_grad(gid);
            const bool need_b = gr.requires_grad(bid);
            for (int ci = 0; ci < c; ++ci) {
                const T mu = (*mean)[static_cast<std::size_t>(ci)];
                const T iv = (*inv)[static_cast<std::size_t>(ci)];
                T sum_dy = T(0), sum_dy_xhat = T(0);
                if (need_x || need_g || need_b) {
                    for (int ni = 0; ni < n; ++ni) {
                        const T* py = &dy.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                        const T* px = &xv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                        for (int j = 0; j < hw; ++j) {
                            sum_dy += py[j];
                            sum_dy_xhat += py[j] * (px[j] - mu) * iv;
                        }
                    }
                }
                if (need_g) gr.grad_buffer(gid).data[static_cast<std::size_t>(ci)] += sum_dy_xhat;
                if (need_b) gr.grad_buffer(bid).data[static_cast<std::size_t>(ci)] += sum_dy;
                if (need_x) {
                    TensorT<T>& dx = gr.grad_buffer(xid);
                    const T ga = gv.data[static_cast<std::size_t>(ci)];
                    if (training) {
                        const T k1 = sum_dy / static_cast<T>(m);
                        const T k2 = sum_dy_xhat / static_cast<T>(m);
                        for (int ni = 0; ni < n; ++ni) {
                            const T* py = &dy.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                            const T* px = &xv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                            T* pd = &dx.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                            for (int j = 0; j < hw; ++j) {
                                const T xhat = (px[j] - mu) * iv;
                                pd[j] += ga * iv * (py[j] - k1 - xhat * k2);
                            }
                        }
                    } else {
                        for (int ni = 0; ni < n; ++ni) {
                            const T* py = &dy.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                            T* pd = &dx.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                            for (int j = 0; j < hw; ++j) pd[j] += ga * iv * py[j];
                        }
                    }
                }
            }
        });
    return {&g, id};
}

// ===== gating =====

/// Multiplies every channel of a [N,C,H,W] activation by its gate value z[C].
template <class T>
VarT<T> apply_gates(VarT<T> h, VarT<T> z) {
    GraphT<T>& g = *h.graph;
    const TensorT<T>& hv = g.value(h.id);
    const TensorT<T>& zv = g.value(z.id);
    require_rank(hv, 4, "apply_gates", "activation");
    require_rank(zv, 1, "apply_gates", "gates");
    const int n = hv.shape[0], c = hv.shape[1], hw = hv.shape[2] * hv.shape[3];
    if (zv.shape[0] != c)
        throw std::invalid_argument("apply_gates: " + std::to_string(zv.shape[0]) +
                                    " gates for " + std::to_string(c) + " channels");
    TensorT<T> out(hv.shape);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const T zc = zv.data[static_cast<std::size_t>(ci)];
            const T* p = &hv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
            T* q = &out.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
            for (int j = 0; j < hw; ++j) q[j] = zc * p[j];
        }
    const bool rg = g.requires_grad(h.id) || g.requires_grad(z.id);
    int id = g.add(std::move(out), {h.id, z.id}, rg,
                   [hid = h.id, zid = z.id, n, c, hw](GraphT<T>& gr, int self) {
                       const TensorT<T>& dy = gr.grad_buffer(self);
                       const TensorT<T>& hv = gr.value(hid);
                       const TensorT<T>& zv = gr.value(zid);
                       if (gr.requires_grad(hid)) {
                           TensorT<T>& dh = gr.grad_buffer(hid);
                           for (int ni = 0; ni < n; ++ni)
                               for (int ci = 0; ci < c; ++ci) {
                                   const T zc = zv.data[static_cast<std::size_t>(ci)];
                                   const T* py = &dy.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                                   T* pd = &dh.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                                   for (int j = 0; j < hw; ++j) pd[j] += zc * py[j];
                               }
                       }
                       if (gr.requires_grad(zid)) {
                           TensorT<T>& dz = gr.grad_buffer(zid);
                           for (int ni = 0; ni < n; ++ni)
                               for (int ci = 0; ci < c; ++ci) {
                                   const T* py = &dy.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                                   const T* ph = &hv.data[(static_cast<std::size_t>(ni) * c + ci) * hw];
                                   T acc = T(0);
                                   for (int j = 0; j < hw; ++j) acc += py[j] * ph[j];
                                   dz.data[static_cast<std::size_t>(ci)] += acc;
                               }
                       }
                   });
    return {&g, id};
}

// ===== losses =====

/// Mean cross-entropy between logits [N,C] and integer labels, computed via a
/// max-shifted log-sum-exp.
template <class T>
VarT<T> cross_entropy_logits(VarT<T> logits, const std::vector<int>& labels) {
    GraphT<T>& g = *logits.graph;
    const TensorT<T>& lv = g.value(logits.id);
    require_rank(lv, 2, "cross_entropy_logits", "logits");
    const int n = lv.shape[0], c = lv.shape[1];
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("cross_entropy_logits: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c);
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c)
            throw std::invalid_argument("cross_entropy_logits: label " + std::to_string(y) +
                                        " out of range for " + std::to_string(c) + " classes");
        const T* row = &lv.data[static_cast<std::size_t>(i) * c];
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const T lse = mx + std::log(z);
        for (int j = 0; j < c; ++j)
            (*probs)[static_cast<std::size_t>(i) * c + j] = std::exp(row[j] - mx) / z;
        loss += lse - row[y];
    }
    loss /= static_cast<T>(n);
    int id = g.add(TensorT<T>::scalar(loss), {logits.id}, g.requires_grad(logits.id),
                   [lid = logits.id, probs, labels, n, c](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(lid)) return;
                       const T gy = gr.grad_buffer(self).data[0];
                       TensorT<T>& dl = gr.grad_buffer(lid);
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < c; ++j) {
                               T v = (*probs)[static_cast<std::size_t>(i) * c + j];
                               if (j == labels[static_cast<std::size_t>(i)]) v -= T(1);
                               dl.data[static_cast<std::size_t>(i) * c + j] += gy * v / static_cast<T>(n);
                           }
                   });
    return {&g, id};
}

/// Mean cross-entropy between temperature-softened logits and a constant
/// probability target (rows of `target` must each sum to 1).
template <class T>
VarT<T> soft_cross_entropy(VarT<T> logits, const TensorT<T>& target, T temperature) {
    GraphT<T>& g = *logits.graph;
    const TensorT<T>& lv = g.value(logits.id);
    require_rank(lv, 2, "soft_cross_entropy", "logits");
    check_same_shape(lv, target, "soft_cross_entropy");
    if (!(temperature > T(0)))
        throw std::invalid_argument("soft_cross_entropy: temperature must be positive");
    const int n = lv.shape[0], c = lv.shape[1];
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c);
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
        const T* row = &lv.data[static_cast<std::size_t>(i) * c];
        T mx = row[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j] / temperature);
        T z = T(0);
        for (int j = 0; j < c; ++j) z += std::exp(row[j] / temperature - mx);
        const T lse = mx + std::log(z);
        for (int j = 0; j < c; ++j) {
            const T lp = row[j] / temperature - lse;
            (*probs)[static_cast<std::size_t>(i) * c + j] = std::exp(lp);
            loss -= target.data[static_cast<std::size_t>(i) * c + j] * lp;
        }
    }
    loss /= static_cast<T>(n);
    auto tgt = std::make_shared<TensorT<T>>(target);
    int id = g.add(TensorT<T>::scalar(loss), {logits.id}, g.requires_grad(logits.id),
                   [lid = logits.id, probs, tgt, n, c, temperature](GraphT<T>& gr, int self) {
                       if (!gr.requires_grad(lid)) return;
                       const T gy = gr.grad_buffer(self).data[0];
                       TensorT<T>& dl = gr.grad_buffer(lid);
                       for (int i = 0; i < n; ++i)
                           for (int j = 0; j < c; ++j) {
                               const T p = (*probs)[static_cast<std::size_t>(i) * c + j];
                               const T t = tgt->data[static_cast<std::size_t>(i) * c + j];
                               dl.data[static_cast<std::size_t>(i) * c + j] +=
                                   gy * (p - t) / (static_cast<T>(n) * temperature);
                           }
                   });
    return {&g, id};
}

// ===== plain helpers (no graph) =====

template <class T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

/// Row-wise softmax of logits/temperature, no autodiff involvement.
template <class T>
TensorT<T> softmax_rows(const TensorT<T>& logits, T temperature) {
    require_rank(logits, 2, "softmax_rows", "logits");
    const int n = logits.shape[0], c = logits.shape[1];
    TensorT<T> out(logits.shape);
    for (int i = 0; i < n; ++i) {
        const T* row = &logits.data[static_cast<std::size_t>(i) * c];
        T mx = row[0] / temperature;
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j] / temperature);
        T z = T(0);
        for (int j = 0; j < c; ++j) z += std::exp(row[j] / temperature - mx);
        for (int j = 0; j < c; ++j)
            out.data[static_cast<std::size_t>(i) * c + j] = std::exp(row[j] / temperature - mx) / z;
    }
    return out;
}

}  // namespace bar
