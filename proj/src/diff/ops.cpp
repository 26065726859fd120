#include "lpq/diff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace lpq::diff {
namespace {

template <typename T>
using TT = BasicTensor<T>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<const RowMat<T>> cmap(const T* p, std::int64_t r, std::int64_t c) {
    return Eigen::Map<const RowMat<T>>(p, r, c);
}

template <typename T>
Eigen::Map<RowMat<T>> mmap(T* p, std::int64_t r, std::int64_t c) {
    return Eigen::Map<RowMat<T>>(p, r, c);
}

template <typename T>
void same_shape_or_throw(const char* op, Var<T> a, Var<T> b) {
    if (a.tape != b.tape) throw ValidationError(std::string(op) + ": operands on different tapes");
    if (a.dims() != b.dims())
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " +
                              shape_str(b.dims()));
}

void rank_or_throw(const char* op, const Shape& d, std::size_t rank) {
    if (d.size() != rank)
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                              shape_str(d));
}

// y = f(x); dx += g * df(x, y)
template <typename T, typename F, typename DF>
Var<T> unary(const char* op, Var<T> a, F f, DF df) {
    const TT<T>& x = a.value();
    TT<T> y(x.dims());
    for (std::int64_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const int ia = a.id;
    return a.tape->record(op, std::move(y), {ia}, [ia, df](Tape<T>& tp, int self) {
        const TT<T>& x = tp.value(ia);
        const TT<T>& y = tp.value(self);
        const TT<T>& g = tp.grad_of_node(self);
        TT<T>& gx = tp.grad_slot(ia);
        for (std::int64_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
    });
}

template <typename T>
T clampv(T v, T lo, T hi) {
    return std::min(std::max(v, lo), hi);
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    same_shape_or_throw("add", a, b);
    TT<T> y(a.dims());
    const auto& x1 = a.value();
    const auto& x2 = b.value();
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] = x1[i] + x2[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("add", std::move(y), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        for (int p : {ia, ib}) {
            if (!tp.requires_grad(p)) continue;
            auto& gp = tp.grad_slot(p);
            for (std::int64_t i = 0; i < g.size(); ++i) gp[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    same_shape_or_throw("sub", a, b);
    TT<T> y(a.dims());
    const auto& x1 = a.value();
    const auto& x2 = b.value();
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] = x1[i] - x2[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("sub", std::move(y), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_slot(ia);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_slot(ib);
            for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    same_shape_or_throw("mul", a, b);
    TT<T> y(a.dims());
    const auto& x1 = a.value();
    const auto& x2 = b.value();
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] = x1[i] * x2[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("mul", std::move(y), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        const auto& x1 = tp.value(ia);
        const auto& x2 = tp.value(ib);
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_slot(ia);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * x2[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_slot(ib);
            for (std::int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x1[i];
        }
    });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    same_shape_or_throw("div", a, b);
    TT<T> y(a.dims());
    const auto& x1 = a.value();
    const auto& x2 = b.value();
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] = x1[i] / x2[i];
    const int ia = a.id, ib = b.id;
    return a.tape->record("div", std::move(y), {ia, ib}, [ia, ib](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        const auto& x2 = tp.value(ib);
        const auto& y = tp.value(self);
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_slot(ia);
            for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x2[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_slot(ib);
            for (std::int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * y[i] / x2[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    return unary<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
    return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
    return unary<T>("tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    return unary<T>(
        "sigmoid", a,
        [](T x) {
            if (x >= 0) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(Var<T> a) {
    return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
    return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> square(Var<T> a) {
    return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> abs(Var<T> a) {
    return unary<T>(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
    return unary<T>(
        "clamp", a, [lo, hi](T x) { return clampv(x, lo, hi); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> hardtanh(Var<T> a, T bound) {
    return unary<T>(
        "hardtanh", a, [bound](T x) { return clampv(x, -bound, bound); },
        [bound](T x, T) { return std::abs(x) <= bound ? T(1) : T(0); });
}

template <typename T>
Var<T> ste_sign(Var<T> a, T bound) {
    return unary<T>(
        "ste_sign", a, [](T x) { return x >= 0 ? T(1) : T(-1); },
        [bound](T x, T) { return std::abs(x) <= bound ? T(1) : T(0); });
}

template <typename T>
Var<T> binary_entropy(Var<T> p, T eps) {
    return unary<T>(
        "binary_entropy", p,
        [eps](T x) {
            const T c = clampv(x, eps, T(1) - eps);
            return -(c * std::log(c) + (T(1) - c) * std::log(T(1) - c));
        },
        [eps](T x, T) {
            if (x <= eps || x >= T(1) - eps) return T(0);
            return std::log((T(1) - x) / x);
        });
}

template <typename T>
Var<T> bernoulli_kl(Var<T> p, Var<T> q, T eps) {
    same_shape_or_throw("bernoulli_kl", p, q);
    const auto& pv = p.value();
    const auto& qv = q.value();
    TT<T> y(pv.dims());
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const T a = clampv(pv[i], eps, T(1) - eps);
        const T b = clampv(qv[i], eps, T(1) - eps);
        y[i] = a * std::log(a / b) + (T(1) - a) * std::log((T(1) - a) / (T(1) - b));
    }
    const int ip = p.id, iq = q.id;
    return p.tape->record("bernoulli_kl", std::move(y), {ip, iq}, [ip, iq, eps](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        const auto& pv = tp.value(ip);
        const auto& qv = tp.value(iq);
        auto inside = [eps](T v) { return v > eps && v < T(1) - eps; };
        if (tp.requires_grad(ip)) {
            auto& gp = tp.grad_slot(ip);
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (!inside(pv[i])) continue;
                const T a = pv[i];
                const T b = clampv(qv[i], eps, T(1) - eps);
                gp[i] += g[i] * (std::log(a / b) - std::log((T(1) - a) / (T(1) - b)));
            }
        }
        if (tp.requires_grad(iq)) {
            auto& gq = tp.grad_slot(iq);
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (!inside(qv[i])) continue;
                const T a = clampv(pv[i], eps, T(1) - eps);
                const T b = qv[i];
                gq[i] += g[i] * (-a / b + (T(1) - a) / (T(1) - b));
            }
        }
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    const auto& x = a.value();
    T s = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
    const int ia = a.id;
    return a.tape->record("sum", TT<T>::scalar(s), {ia}, [ia](Tape<T>& tp, int self) {
        const T g = tp.grad_of_node(self)[0];
        auto& gx = tp.grad_slot(ia);
        for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> reshape(Var<T> a, Shape dims) {
    TT<T> y = a.value().reshaped(std::move(dims));
    const int ia = a.id;
    return a.tape->record("reshape", std::move(y), {ia}, [ia](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ia);
        for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Var<T> detach(Var<T> a) {
    return a.tape->constant(a.value());
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    rank_or_throw("matmul", a.dims(), 2);
    rank_or_throw("matmul", b.dims(), 2);
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ValidationError("matmul: inner extents differ " + shape_str(a.dims()) + " x " + shape_str(b.dims()));
    TT<T> y({m, n});
    mmap<T>(y.data(), m, n).noalias() = cmap<T>(a.value().data(), m, k) * cmap<T>(b.value().data(), k, n);
    const int ia = a.id, ib = b.id;
    return a.tape->record("matmul", std::move(y), {ia, ib}, [ia, ib, m, k, n](Tape<T>& tp, int self) {
        auto G = cmap<T>(tp.grad_of_node(self).data(), m, n);
        if (tp.requires_grad(ia))
            mmap<T>(tp.grad_slot(ia).data(), m, k).noalias() += G * cmap<T>(tp.value(ib).data(), k, n).transpose();
        if (tp.requires_grad(ib))
            mmap<T>(tp.grad_slot(ib).data(), k, n).noalias() += cmap<T>(tp.value(ia).data(), m, k).transpose() * G;
    });
}

template <typename T>
Var<T> layer_norm_rows(Var<T> x, T eps) {
    rank_or_throw("layer_norm_rows", x.dims(), 2);
    const std::int64_t m = x.dim(0), n = x.dim(1);
    TT<T> y({m, n});
    std::vector<T> inv(static_cast<std::size_t>(m));
    const T* X = x.value().data();
    for (std::int64_t i = 0; i < m; ++i) {
        T mu = 0, var = 0;
        for (std::int64_t j = 0; j < n; ++j) mu += X[i * n + j];
        mu /= T(n);
        for (std::int64_t j = 0; j < n; ++j) var += (X[i * n + j] - mu) * (X[i * n + j] - mu);
        var /= T(n);
        const T s = T(1) / std::sqrt(var + eps);
        inv[static_cast<std::size_t>(i)] = s;
        for (std::int64_t j = 0; j < n; ++j) y[i * n + j] = (X[i * n + j] - mu) * s;
    }
    const int ix = x.id;
    return x.tape->record("layer_norm_rows", std::move(y), {ix}, [ix, m, n, inv](Tape<T>& tp, int self) {
        const T* G = tp.grad_of_node(self).data();
        const T* Y = tp.value(self).data();
        T* GX = tp.grad_slot(ix).data();
        for (std::int64_t i = 0; i < m; ++i) {
            T gm = 0, gy = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                gm += G[i * n + j];
                gy += G[i * n + j] * Y[i * n + j];
            }
            gm /= T(n);
            gy /= T(n);
            const T s = inv[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < n; ++j) GX[i * n + j] += s * (G[i * n + j] - gm - Y[i * n + j] * gy);
        }
    });
}

template <typename T>
Var<T> transpose(Var<T> a) {
    rank_or_throw("transpose", a.dims(), 2);
    const std::int64_t m = a.dim(0), n = a.dim(1);
    TT<T> y({n, m});
    const auto& x = a.value();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
    const int ia = a.id;
    return a.tape->record("transpose", std::move(y), {ia}, [ia, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ia);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
    rank_or_throw("add_bias", bias.dims(), 1);
    if (x.dims().empty() || x.dim(0) != bias.dim(0))
        throw ValidationError("add_bias: leading extent of " + shape_str(x.dims()) + " vs bias " +
                              shape_str(bias.dims()));
    const std::int64_t c = bias.dim(0);
    const std::int64_t inner = x.size() / c;
    TT<T> y = x.value();
    const auto& bv = bias.value();
    for (std::int64_t r = 0; r < c; ++r)
        for (std::int64_t i = 0; i < inner; ++i) y[r * inner + i] += bv[r];
    const int ix = x.id, ib = bias.id;
    return x.tape->record("add_bias", std::move(y), {ix, ib}, [ix, ib, c, inner](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        if (tp.requires_grad(ix)) {
            auto& gx = tp.grad_slot(ix);
            for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_slot(ib);
            for (std::int64_t r = 0; r < c; ++r) {
                T acc = 0;
                for (std::int64_t i = 0; i < inner; ++i) acc += g[r * inner + i];
                gb[r] += acc;
            }
        }
    });
}

template <typename T>
Var<T> expand_cols(Var<T> v, std::int64_t cols) {
    rank_or_throw("expand_cols", v.dims(), 1);
    const std::int64_t n = v.dim(0);
    TT<T> y({n, cols});
    const auto& x = v.value();
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < cols; ++j) y[r * cols + j] = x[r];
    const int iv = v.id;
    return v.tape->record("expand_cols", std::move(y), {iv}, [iv, n, cols](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gv = tp.grad_slot(iv);
        for (std::int64_t r = 0; r < n; ++r) {
            T acc = 0;
            for (std::int64_t j = 0; j < cols; ++j) acc += g[r * cols + j];
            gv[r] += acc;
        }
    });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::int64_t begin, std::int64_t end) {
    rank_or_throw("slice_cols", x.dims(), 2);
    const std::int64_t m = x.dim(0), n = x.dim(1);
    if (begin < 0 || end > n || begin >= end) throw ValidationError("slice_cols: bad range");
    const std::int64_t w = end - begin;
    TT<T> y({m, w});
    const auto& xv = x.value();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < w; ++j) y[i * w + j] = xv[i * n + begin + j];
    const int ix = x.id;
    return x.tape->record("slice_cols", std::move(y), {ix}, [ix, m, n, w, begin](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no inputs");
    const std::int64_t m = parts[0].dim(0);
    std::int64_t n = 0;
    std::vector<int> ids;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        rank_or_throw("concat_cols", p.dims(), 2);
        if (p.dim(0) != m) throw ValidationError("concat_cols: row count mismatch");
        ids.push_back(p.id);
        widths.push_back(p.dim(1));
        n += p.dim(1);
    }
    TT<T> y({m, n});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        const std::int64_t w = p.dim(1);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j) y[i * n + off + j] = pv[i * w + j];
        off += w;
    }
    return parts[0].tape->record("concat_cols", std::move(y), ids, [ids, widths, m, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        std::int64_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::int64_t w = widths[k];
            if (tp.requires_grad(ids[k])) {
                auto& gp = tp.grad_slot(ids[k]);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off + j];
            }
            off += w;
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::int64_t begin, std::int64_t end) {
    rank_or_throw("slice_rows", x.dims(), 2);
    const std::int64_t m = x.dim(0), n = x.dim(1);
    if (begin < 0 || end > m || begin >= end) throw ValidationError("slice_rows: bad range");
    const auto& xv = x.value();
    std::vector<T> data(xv.data() + begin * n, xv.data() + end * n);
    TT<T> y({end - begin, n}, std::move(data));
    const int ix = x.id;
    return x.tape->record("slice_rows", std::move(y), {ix}, [ix, begin, n](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ValidationError("concat_rows: no inputs");
    const std::int64_t n = parts[0].dim(1);
    std::int64_t m = 0;
    std::vector<int> ids;
    std::vector<T> data;
    for (const auto& p : parts) {
        rank_or_throw("concat_rows", p.dims(), 2);
        if (p.dim(1) != n) throw ValidationError("concat_rows: column count mismatch");
        ids.push_back(p.id);
        m += p.dim(0);
        const auto& pv = p.value();
        data.insert(data.end(), pv.data(), pv.data() + pv.size());
    }
    TT<T> y({m, n}, std::move(data));
    return parts[0].tape->record("concat_rows", std::move(y), ids, [ids](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        std::int64_t off = 0;
        for (int id : ids) {
            const std::int64_t sz = tp.value(id).size();
            if (tp.requires_grad(id)) {
                auto& gp = tp.grad_slot(id);
                for (std::int64_t i = 0; i < sz; ++i) gp[i] += g[off + i];
            }
            off += sz;
        }
    });
}

namespace {

// Row softmax over the first `limit(i)` columns; the rest are exact zeros.
template <typename T, typename Limit>
TT<T> softmax_impl(const TT<T>& x, Limit limit) {
    const std::int64_t m = x.dim(0), n = x.dim(1);
    TT<T> y({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t lim = limit(i);
        const T* xr = x.data() + i * n;
        T* yr = y.data() + i * n;
        T mx = xr[0];
        for (std::int64_t j = 1; j < lim; ++j) mx = std::max(mx, xr[j]);
        T s = 0;
        for (std::int64_t j = 0; j < lim; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        for (std::int64_t j = 0; j < lim; ++j) yr[j] /= s;
    }
    return y;
}

template <typename T>
void softmax_backward(Tape<T>& tp, int self, int ix) {
    const auto& y = tp.value(self);
    const auto& g = tp.grad_of_node(self);
    auto& gx = tp.grad_slot(ix);
    const std::int64_t m = y.dim(0), n = y.dim(1);
    for (std::int64_t i = 0; i < m; ++i) {
        const T* yr = y.data() + i * n;
        const T* gr = g.data() + i * n;
        T dot = 0;
        for (std::int64_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
        T* gxr = gx.data() + i * n;
        for (std::int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
}

}  // namespace

template <typename T>
Var<T> softmax_rows(Var<T> x) {
    rank_or_throw("softmax_rows", x.dims(), 2);
    const std::int64_t n = x.dim(1);
    TT<T> y = softmax_impl<T>(x.value(), [n](std::int64_t) { return n; });
    const int ix = x.id;
    return x.tape->record("softmax_rows", std::move(y), {ix},
                          [ix](Tape<T>& tp, int self) { softmax_backward(tp, self, ix); });
}

template <typename T>
Var<T> causal_softmax_rows(Var<T> x) {
    rank_or_throw("causal_softmax_rows", x.dims(), 2);
    if (x.dim(0) != x.dim(1)) throw ValidationError("causal_softmax_rows: square input required");
    TT<T> y = softmax_impl<T>(x.value(), [](std::int64_t i) { return i + 1; });
    const int ix = x.id;
    return x.tape->record("causal_softmax_rows", std::move(y), {ix},
                          [ix](Tape<T>& tp, int self) { softmax_backward(tp, self, ix); });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
    rank_or_throw("log_softmax_rows", x.dims(), 2);
    const auto& xv = x.value();
    const std::int64_t m = x.dim(0), n = x.dim(1);
    TT<T> y({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const T* xr = xv.data() + i * n;
        T mx = xr[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        T s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += std::exp(xr[j] - mx);
        const T lse = mx + std::log(s);
        for (std::int64_t j = 0; j < n; ++j) y[i * n + j] = xr[j] - lse;
    }
    const int ix = x.id;
    return x.tape->record("log_softmax_rows", std::move(y), {ix}, [ix, m, n](Tape<T>& tp, int self) {
        const auto& y = tp.value(self);
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t i = 0; i < m; ++i) {
            T gs = 0;
            for (std::int64_t j = 0; j < n; ++j) gs += g[i * n + j];
            for (std::int64_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
        }
    });
}

template <typename T>
Var<T> cross_entropy_rows(Var<T> logits, const std::vector<int>& targets) {
    rank_or_throw("cross_entropy_rows", logits.dims(), 2);
    const std::int64_t m = logits.dim(0), n = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != m)
        throw ValidationError("cross_entropy_rows: one target per row required");
    const auto& xv = logits.value();
    TT<T> probs({m, n});
    T total = 0;
    std::int64_t counted = 0;
    for (std::int64_t i = 0; i < m; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        if (t >= n) throw ValidationError("cross_entropy_rows: target id exceeds vocabulary");
        const T* xr = xv.data() + i * n;
        T mx = xr[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        T s = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            probs[i * n + j] = std::exp(xr[j] - mx);
            s += probs[i * n + j];
        }
        for (std::int64_t j = 0; j < n; ++j) probs[i * n + j] /= s;
        total += mx + std::log(s) - xr[t];
        ++counted;
    }
    const T denom = counted > 0 ? static_cast<T>(counted) : T(1);
    const int ix = logits.id;
    auto tg = targets;
    return logits.tape->record(
        "cross_entropy_rows", TT<T>::scalar(total / denom), {ix},
        [ix, m, n, denom, tg = std::move(tg), probs = std::move(probs)](Tape<T>& tp, int self) {
            const T g = tp.grad_of_node(self)[0] / denom;
            auto& gx = tp.grad_slot(ix);
            for (std::int64_t i = 0; i < m; ++i) {
                const int t = tg[static_cast<std::size_t>(i)];
                if (t < 0) continue;
                for (std::int64_t j = 0; j < n; ++j) gx[i * n + j] += g * probs[i * n + j];
                gx[i * n + t] -= g;
            }
        });
}

template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
    rank_or_throw("embedding", table.dims(), 2);
    const std::int64_t v = table.dim(0), d = table.dim(1);
    const std::int64_t m = static_cast<std::int64_t>(ids.size());
    if (m == 0) throw ValidationError("embedding: empty id list");
    TT<T> y({m, d});
    const auto& tv = table.value();
    for (std::int64_t i = 0; i < m; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= v) throw ValidationError("embedding: token id " + std::to_string(id) + " out of table");
        for (std::int64_t j = 0; j < d; ++j) y[i * d + j] = tv[id * d + j];
    }
    const int it = table.id;
    auto idc = ids;
    return table.tape->record("embedding", std::move(y), {it}, [it, d, idc = std::move(idc)](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gt = tp.grad_slot(it);
        for (std::size_t i = 0; i < idc.size(); ++i)
            for (std::int64_t j = 0; j < d; ++j)
                gt[idc[i] * d + j] += g[static_cast<std::int64_t>(i) * d + j];
    });
}

namespace {

struct ConvGeom {
    std::int64_t ci, t, h, w, co, to, ho, wo;
    int st, ss;
};

// Visits every (output, input, weight) triple of the padded 3x3x3 correlation.
template <typename F>
void conv_visit(const ConvGeom& g, F&& f) {
    for (std::int64_t o = 0; o < g.co; ++o)
        for (std::int64_t c = 0; c < g.ci; ++c)
            for (int kt = 0; kt < 3; ++kt)
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const std::int64_t widx = (((o * g.ci + c) * 3 + kt) * 3 + kh) * 3 + kw;
                        for (std::int64_t ot = 0; ot < g.to; ++ot) {
                            const std::int64_t it = ot * g.st + kt - 1;
                            if (it < 0 || it >= g.t) continue;
                            for (std::int64_t oh = 0; oh < g.ho; ++oh) {
                                const std::int64_t ih = oh * g.ss + kh - 1;
                                if (ih < 0 || ih >= g.h) continue;
                                const std::int64_t obase = ((o * g.to + ot) * g.ho + oh) * g.wo;
                                const std::int64_t ibase = ((c * g.t + it) * g.h + ih) * g.w;
                                std::int64_t ow0 = 0;
                                while (ow0 < g.wo && ow0 * g.ss + kw - 1 < 0) ++ow0;
                                std::int64_t ow1 = g.wo;
                                while (ow1 > ow0 && (ow1 - 1) * g.ss + kw - 1 >= g.w) --ow1;
                                f(widx, obase, ibase + kw - 1, ow0, ow1);
                            }
                        }
                    }
}

}  // namespace

template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, int stride_t, int stride_s) {
    rank_or_throw("conv3d", x.dims(), 4);
    rank_or_throw("conv3d", w.dims(), 5);
    if (w.dim(1) != x.dim(0) || w.dim(2) != 3 || w.dim(3) != 3 || w.dim(4) != 3)
        throw ValidationError("conv3d: weight " + shape_str(w.dims()) + " incompatible with input " +
                              shape_str(x.dims()));
    if (stride_t < 1 || stride_s < 1) throw ValidationError("conv3d: stride must be >= 1");
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), 0, 0, 0, stride_t, stride_s};
    g.to = (g.t - 1) / stride_t + 1;
    g.ho = (g.h - 1) / stride_s + 1;
    g.wo = (g.w - 1) / stride_s + 1;
    TT<T> y({g.co, g.to, g.ho, g.wo});
    const T* X = x.value().data();
    const T* W = w.value().data();
    T* Y = y.data();
    const std::int64_t ss = stride_s;
    conv_visit(g, [&](std::int64_t widx, std::int64_t ob, std::int64_t ib, std::int64_t a, std::int64_t b) {
        const T wv = W[widx];
        for (std::int64_t ow = a; ow < b; ++ow) Y[ob + ow] += wv * X[ib + ow * ss];
    });
    const int ixv = x.id, iw = w.id;
    return x.tape->record("conv3d", std::move(y), {ixv, iw}, [ixv, iw, g](Tape<T>& tp, int self) {
        const T* G = tp.grad_of_node(self).data();
        const T* X = tp.value(ixv).data();
        const T* W = tp.value(iw).data();
        T* GX = tp.requires_grad(ixv) ? tp.grad_slot(ixv).data() : nullptr;
        T* GW = tp.requires_grad(iw) ? tp.grad_slot(iw).data() : nullptr;
        const std::int64_t ss = g.ss;
        conv_visit(g, [&](std::int64_t widx, std::int64_t ob, std::int64_t ib, std::int64_t a, std::int64_t b) {
            if (GX) {
                const T wv = W[widx];
                for (std::int64_t ow = a; ow < b; ++ow) GX[ib + ow * ss] += wv * G[ob + ow];
            }
            if (GW) {
                T acc = 0;
                for (std::int64_t ow = a; ow < b; ++ow) acc += X[ib + ow * ss] * G[ob + ow];
                GW[widx] += acc;
            }
        });
    });
}

template <typename T>
Var<T> avg_pool3d(Var<T> x, int ft, int fh, int fw) {
    rank_or_throw("avg_pool3d", x.dims(), 4);
    const std::int64_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (ft < 1 || fh < 1 || fw < 1 || t % ft || h % fh || w % fw)
        throw ValidationError("avg_pool3d: factors must divide extents " + shape_str(x.dims()));
    const std::int64_t to = t / ft, ho = h / fh, wo = w / fw;
    const T inv = T(1) / static_cast<T>(ft * fh * fw);
    TT<T> y({c, to, ho, wo});
    const auto& xv = x.value();
    auto src = [=](std::int64_t cc, std::int64_t tt, std::int64_t hh, std::int64_t ww) {
        return ((cc * t + tt) * h + hh) * w + ww;
    };
    for (std::int64_t cc = 0; cc < c; ++cc)
        for (std::int64_t tt = 0; tt < t; ++tt)
            for (std::int64_t hh = 0; hh < h; ++hh)
                for (std::int64_t ww = 0; ww < w; ++ww)
                    y[((cc * to + tt / ft) * ho + hh / fh) * wo + ww / fw] += inv * xv[src(cc, tt, hh, ww)];
    const int ix = x.id;
    return x.tape->record("avg_pool3d", std::move(y), {ix}, [=](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t cc = 0; cc < c; ++cc)
            for (std::int64_t tt = 0; tt < t; ++tt)
                for (std::int64_t hh = 0; hh < h; ++hh)
                    for (std::int64_t ww = 0; ww < w; ++ww)
                        gx[src(cc, tt, hh, ww)] += inv * g[((cc * to + tt / ft) * ho + hh / fh) * wo + ww / fw];
    });
}

template <typename T>
Var<T> upsample_nearest3d(Var<T> x, int ft, int fh, int fw) {
    rank_or_throw("upsample_nearest3d", x.dims(), 4);
    if (ft < 1 || fh < 1 || fw < 1) throw ValidationError("upsample_nearest3d: factors must be >= 1");
    const std::int64_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t to = t * ft, ho = h * fh, wo = w * fw;
    TT<T> y({c, to, ho, wo});
    const auto& xv = x.value();
    auto src = [=](std::int64_t cc, std::int64_t tt, std::int64_t hh, std::int64_t ww) {
        return ((cc * t + tt / ft) * h + hh / fh) * w + ww / fw;
    };
    for (std::int64_t cc = 0; cc < c; ++cc)
        for (std::int64_t tt = 0; tt < to; ++tt)
            for (std::int64_t hh = 0; hh < ho; ++hh)
                for (std::int64_t ww = 0; ww < wo; ++ww)
                    y[((cc * to + tt) * ho + hh) * wo + ww] = xv[src(cc, tt, hh, ww)];
    const int ix = x.id;
    return x.tape->record("upsample_nearest3d", std::move(y), {ix}, [=](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t cc = 0; cc < c; ++cc)
            for (std::int64_t tt = 0; tt < to; ++tt)
                for (std::int64_t hh = 0; hh < ho; ++hh)
                    for (std::int64_t ww = 0; ww < wo; ++ww)
                        gx[src(cc, tt, hh, ww)] += g[((cc * to + tt) * ho + hh) * wo + ww];
    });
}

template <typename T>
Var<T> filter2d_valid(Var<T> x, const BasicTensor<T>& kernel) {
    rank_or_throw("filter2d_valid", x.dims(), 3);
    rank_or_throw("filter2d_valid", kernel.dims(), 2);
    const std::int64_t k = kernel.dim(0);
    if (kernel.dim(1) != k) throw ValidationError("filter2d_valid: square kernel required");
    const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h < k || w < k) throw ValidationError("filter2d_valid: plane smaller than kernel");
    const std::int64_t ho = h - k + 1, wo = w - k + 1;
    TT<T> y({n, ho, wo});
    const auto& xv = x.value();
    for (std::int64_t p = 0; p < n; ++p)
        for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
                const T kv = kernel[a * k + b];
                for (std::int64_t i = 0; i < ho; ++i) {
                    const T* xr = xv.data() + (p * h + i + a) * w + b;
                    T* yr = y.data() + (p * ho + i) * wo;
                    for (std::int64_t j = 0; j < wo; ++j) yr[j] += kv * xr[j];
                }
            }
    const int ix = x.id;
    return x.tape->record("filter2d_valid", std::move(y), {ix}, [=](Tape<T>& tp, int self) {
        const auto& g = tp.grad_of_node(self);
        auto& gx = tp.grad_slot(ix);
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t a = 0; a < k; ++a)
                for (std::int64_t b = 0; b < k; ++b) {
                    const T kv = kernel[a * k + b];
                    for (std::int64_t i = 0; i < ho; ++i) {
                        T* gr = gx.data() + (p * h + i + a) * w + b;
                        const T* yr = g.data() + (p * ho + i) * wo;
                        for (std::int64_t j = 0; j < wo; ++j) gr[j] += kv * yr[j];
                    }
                }
    });
}

#define LPQ_INSTANTIATE_OPS(T)                                                              \
    template Var<T> add(Var<T>, Var<T>);                                                    \
    template Var<T> sub(Var<T>, Var<T>);                                                    \
    template Var<T> mul(Var<T>, Var<T>);                                                    \
    template Var<T> div(Var<T>, Var<T>);                                                    \
    template Var<T> scale(Var<T>, T);                                                       \
    template Var<T> add_scalar(Var<T>, T);                                                  \
    template Var<T> tanh(Var<T>);                                                           \
    template Var<T> sigmoid(Var<T>);                                                        \
    template Var<T> exp(Var<T>);                                                            \
    template Var<T> log(Var<T>);                                                            \
    template Var<T> square(Var<T>);                                                         \
    template Var<T> abs(Var<T>);                                                            \
    template Var<T> clamp(Var<T>, T, T);                                                    \
    template Var<T> hardtanh(Var<T>, T);                                                    \
    template Var<T> ste_sign(Var<T>, T);                                                    \
    template Var<T> binary_entropy(Var<T>, T);                                              \
    template Var<T> bernoulli_kl(Var<T>, Var<T>, T);                                        \
    template Var<T> sum(Var<T>);                                                            \
    template Var<T> mean(Var<T>);                                                           \
    template Var<T> reshape(Var<T>, Shape);                                                 \
    template Var<T> detach(Var<T>);                                                         \
    template Var<T> matmul(Var<T>, Var<T>);                                                 \
    template Var<T> layer_norm_rows(Var<T>, T);                                              \
    template Var<T> transpose(Var<T>);                                                      \
    template Var<T> add_bias(Var<T>, Var<T>);                                               \
    template Var<T> expand_cols(Var<T>, std::int64_t);                                      \
    template Var<T> slice_cols(Var<T>, std::int64_t, std::int64_t);                         \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                                \
    template Var<T> slice_rows(Var<T>, std::int64_t, std::int64_t);                         \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                \
    template Var<T> softmax_rows(Var<T>);                                                   \
    template Var<T> log_softmax_rows(Var<T>);                                               \
    template Var<T> causal_softmax_rows(Var<T>);                                            \
    template Var<T> cross_entropy_rows(Var<T>, const std::vector<int>&);                    \
    template Var<T> embedding(Var<T>, const std::vector<int>&);                             \
    template Var<T> conv3d(Var<T>, Var<T>, int, int);                                       \
    template Var<T> avg_pool3d(Var<T>, int, int, int);                                      \
    template Var<T> upsample_nearest3d(Var<T>, int, int, int);                              \
    template Var<T> filter2d_valid(Var<T>, const BasicTensor<T>&);

LPQ_INSTANTIATE_OPS(float)
LPQ_INSTANTIATE_OPS(double)

}  // namespace lpq::diff
