#include "pifi/autograd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pifi/autograd/rng.hpp"

namespace pifi {

namespace kernels {

template <typename T>
void gemm_acc(T* __restrict c, const T* __restrict a, const T* __restrict b, std::size_t m, std::size_t k,
              std::size_t n) {
    // Four rows at a time so each loaded row of b feeds four accumulators.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* __restrict c0 = c + i * n;
        T* __restrict c1 = c0 + n;
        T* __restrict c2 = c1 + n;
        T* __restrict c3 = c2 + n;
        const T* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T bv = bp[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <typename T>
void gemm_tn_acc(T* __restrict c, const T* __restrict a, const T* __restrict b, std::size_t m, std::size_t k,
                 std::size_t n) {
    // Four input rows per pass over c.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = a + i * k;
        const T* b0 = b + i * n;
        const T* b1 = b0 + n;
        const T* b2 = b1 + n;
        const T* b3 = b2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
    }
    for (; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <typename T>
void gemm_nt_acc(T* c, const T* a, const T* b, std::size_t m, std::size_t n, std::size_t k) {
    std::vector<T> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    gemm_acc(c, a, bt.data(), m, n, k);
}

template void gemm_acc(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
template void gemm_acc(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
template void gemm_tn_acc(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
template void gemm_nt_acc(double*, const double*, const double*, std::size_t, std::size_t, std::size_t);

}  // namespace kernels

namespace {

std::size_t last_dim(const Shape& s) {
    return s.empty() ? 1 : s.back();
}

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b, const char* op) {
    if (a.graph != b.graph) throw ContractError(std::string(op) + ": operands belong to different graphs");
    return *a.graph;
}

template <typename T>
bool is_suffix(const Shape& full, const Shape& suffix) {
    if (suffix.size() > full.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_elementwise(Var<T> x, OpKind op, Fwd fwd, Bwd dfdx) {
    Graph<T>& g = *x.graph;
    auto xv = x.value();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return g.emplace(op, {x.id}, x.shape(), std::move(out), [xid = x.id, dfdx](Graph<T>& g, NodeId self) {
        auto dx = g.grad_acc(xid);
        if (dx.empty()) return;
        auto dy = g.grad(self);
        auto xv = g.value(xid);
        auto yv = g.value(self);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * dfdx(xv[i], yv[i]);
    });
}

}  // namespace

BoolMask BoolMask::key_padding(std::size_t batch, std::size_t s_kv, std::vector<std::uint8_t> valid) {
    if (valid.size() != batch * s_kv)
        throw DimensionError("key_padding: expected " + std::to_string(batch * s_kv) + " flags, got " +
                             std::to_string(valid.size()));
    return BoolMask{Shape{batch, 1, s_kv}, std::move(valid)};
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw DimensionError("matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<T> out(m * n, T{0});
    kernels::gemm_acc(out.data(), a.value().data(), b.value().data(), m, k, n);
    return g.emplace(OpKind::matmul, {a.id, b.id}, Shape{m, n}, std::move(out),
                     [aid = a.id, bid = b.id, m, k, n](Graph<T>& g, NodeId self) {
                         auto dc = g.grad(self);
                         if (auto da = g.grad_acc(aid); !da.empty())
                             kernels::gemm_nt_acc(da.data(), dc.data(), g.value(bid).data(), m, n, k);
                         if (auto db = g.grad_acc(bid); !db.empty())
                             kernels::gemm_tn_acc(db.data(), g.value(aid).data(), dc.data(), m, k, n);
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
    Graph<T>& g = same_graph(x, weight, "linear");
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sw.size() != 2 || last_dim(sx) != sw[0])
        throw DimensionError("linear: input " + shape_str(sx) + " does not match weight " + shape_str(sw));
    const std::size_t in = sw[0], out_w = sw[1], rows = x.numel() / in;
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != out_w))
        throw DimensionError("linear: bias " + shape_str(bias->shape()) + " does not match weight " + shape_str(sw));

    std::vector<T> out(rows * out_w, T{0});
    if (bias) {
        auto bv = bias->value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * out_w);
    }
    kernels::gemm_acc(out.data(), x.value().data(), weight.value().data(), rows, in, out_w);

    Shape os = sx;
    os.back() = out_w;
    std::vector<NodeId> inputs{x.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const NodeId bid = bias ? bias->id : NodeId{0};
    const bool has_bias = bias.has_value();
    return g.emplace(OpKind::linear, std::move(inputs), std::move(os), std::move(out),
                     [xid = x.id, wid = weight.id, bid, has_bias, rows, in, out_w](Graph<T>& g, NodeId self) {
                         auto dy = g.grad(self);
                         if (auto dx = g.grad_acc(xid); !dx.empty())
                             kernels::gemm_nt_acc(dx.data(), dy.data(), g.value(wid).data(), rows, out_w, in);
                         if (auto dw = g.grad_acc(wid); !dw.empty())
                             kernels::gemm_tn_acc(dw.data(), g.value(xid).data(), dy.data(), rows, in, out_w);
                         if (has_bias) {
                             if (auto db = g.grad_acc(bid); !db.empty())
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < out_w; ++j) db[j] += dy[r * out_w + j];
                         }
                     });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "add");
    if (!is_suffix<T>(a.shape(), b.shape()))
        throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
    auto av = a.value();
    auto bv = b.value();
    const std::size_t nb = bv.size();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % nb];
    return g.emplace(OpKind::add, {a.id, b.id}, a.shape(), std::move(out),
                     [aid = a.id, bid = b.id, nb](Graph<T>& g, NodeId self) {
                         auto dy = g.grad(self);
                         if (auto da = g.grad_acc(aid); !da.empty())
                             for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                         if (auto db = g.grad_acc(bid); !db.empty())
                             for (std::size_t i = 0; i < dy.size(); ++i) db[i % nb] += dy[i];
                     });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Graph<T>& g = same_graph(a, b, "mul");
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto av = a.value();
    auto bv = b.value();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return g.emplace(OpKind::mul, {a.id, b.id}, a.shape(), std::move(out),
                     [aid = a.id, bid = b.id](Graph<T>& g, NodeId self) {
                         auto dy = g.grad(self);
                         auto av = g.value(aid);
                         auto bv = g.value(bid);
                         if (auto da = g.grad_acc(aid); !da.empty())
                             for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
                         if (auto db = g.grad_acc(bid); !db.empty())
                             for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
                     });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
    const T f = static_cast<T>(factor);
    return unary_elementwise<T>(
        a, OpKind::scale, [f](T x) { return x * f; }, [f](T, T) { return f; });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
    Graph<T>& g = *x.graph;
    const std::size_t n = last_dim(x.shape());
    const std::size_t rows = x.numel() / n;
    auto xv = x.value();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * n;
        T* yr = out.data() + r * n;
        const T mx = *std::max_element(xr, xr + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += (yr[j] = std::exp(xr[j] - mx));
        for (std::size_t j = 0; j < n; ++j) yr[j] /= s;
    }
    return g.emplace(OpKind::softmax, {x.id}, x.shape(), std::move(out),
                     [xid = x.id, rows, n](Graph<T>& g, NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         auto y = g.value(self);
                         for (std::size_t r = 0; r < rows; ++r) {
                             T dot = 0;
                             for (std::size_t j = 0; j < n; ++j) dot += dy[r * n + j] * y[r * n + j];
                             for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[r * n + j] * (dy[r * n + j] - dot);
                         }
                     });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps) {
    Graph<T>& g = same_graph(x, gain, "layer_norm");
    const std::size_t d = last_dim(x.shape());
    if (gain.numel() != d || bias.numel() != d)
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " do not match input " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / d;
    auto xv = x.value();
    auto gv = gain.value();
    auto bv = bias.value();
    std::vector<T> out(xv.size());
    std::vector<T> xhat(xv.size());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mu) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return g.emplace(
        OpKind::layer_norm, {x.id, gain.id, bias.id}, x.shape(), std::move(out),
        [xid = x.id, gid = gain.id, bid = bias.id, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](
            Graph<T>& g, NodeId self) {
            auto dy = g.grad(self);
            auto gv = g.value(gid);
            if (auto dg = g.grad_acc(gid); !dg.empty())
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xhat[r * d + j];
            if (auto db = g.grad_acc(bid); !db.empty())
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
            auto dx = g.grad_acc(xid);
            if (dx.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                T m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T dh = dy[r * d + j] * gv[j];
                    m1 += dh;
                    m2 += dh * xhat[r * d + j];
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const T dh = dy[r * d + j] * gv[j];
                    dx[r * d + j] += rstd[r] * (dh - m1 - xhat[r * d + j] * m2);
                }
            }
        });
}

template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps) {
    Graph<T>& g = same_graph(x, gain, "rms_norm");
    const std::size_t d = last_dim(x.shape());
    if (gain.numel() != d)
        throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " does not match input " +
                             shape_str(x.shape()));
    const std::size_t rows = x.numel() / d;
    auto xv = x.value();
    auto gv = gain.value();
    std::vector<T> out(xv.size());
    std::vector<T> rinv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * d;
        T ms = 0;
        for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
        ms /= static_cast<T>(d);
        const T ri = T{1} / std::sqrt(ms + static_cast<T>(eps));
        rinv[r] = ri;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * ri * gv[j];
    }
    return g.emplace(OpKind::rms_norm, {x.id, gain.id}, x.shape(), std::move(out),
                     [xid = x.id, gid = gain.id, rows, d, rinv = std::move(rinv)](Graph<T>& g, NodeId self) {
                         auto dy = g.grad(self);
                         auto xv = g.value(xid);
                         auto gv = g.value(gid);
                         if (auto dg = g.grad_acc(gid); !dg.empty())
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * xv[r * d + j] * rinv[r];
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         for (std::size_t r = 0; r < rows; ++r) {
                             const T ri = rinv[r];
                             T dot = 0;
                             for (std::size_t j = 0; j < d; ++j) dot += dy[r * d + j] * gv[j] * xv[r * d + j];
                             const T coef = ri * ri * ri * dot / static_cast<T>(d);
                             for (std::size_t j = 0; j < d; ++j)
                                 dx[r * d + j] += dy[r * d + j] * gv[j] * ri - xv[r * d + j] * coef;
                         }
                     });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    constexpr T c = static_cast<T>(0.7978845608028654);  // √(2/π)
    constexpr T a = static_cast<T>(0.044715);
    Graph<T>& g = *x.graph;
    auto xv = x.value();
    std::vector<T> out(xv.size());
    // The backward pass reuses the forward tanh values.
    std::vector<T> th(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const T v = xv[i];
        th[i] = std::tanh(c * (v + a * v * v * v));
        out[i] = T{0.5} * v * (T{1} + th[i]);
    }
    return g.emplace(OpKind::gelu, {x.id}, x.shape(), std::move(out),
                     [xid = x.id, th = std::move(th)](Graph<T>& g, NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         auto xv = g.value(xid);
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                             const T v = xv[i], t = th[i];
                             dx[i] += dy[i] * (T{0.5} * (T{1} + t) +
                                               T{0.5} * v * (T{1} - t * t) * c * (T{1} + T{3} * a * v * v));
                         }
                     });
}

template <typename T>
Var<T> silu(Var<T> x) {
    return unary_elementwise<T>(
        x, OpKind::silu, [](T v) { return v / (T{1} + std::exp(-v)); },
        [](T v, T) {
            const T s = T{1} / (T{1} + std::exp(-v));
            return s * (T{1} + v * (T{1} - s));
        });
}

template <typename T>
Var<T> tanh(Var<T> x) {
    return unary_elementwise<T>(
        x, OpKind::tanh, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids, const Shape& ids_shape) {
    Graph<T>& g = *table.graph;
    const Shape& st = table.shape();
    if (st.size() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(st));
    if (shape_numel(ids_shape) != ids.size())
        throw DimensionError("embedding: ids shape " + shape_str(ids_shape) + " does not match " +
                             std::to_string(ids.size()) + " ids");
    const std::size_t vocab = st[0], d = st[1];
    auto tv = table.value();
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                 std::to_string(vocab));
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Shape os = ids_shape;
    os.push_back(d);
    return g.emplace(OpKind::embedding, {table.id}, std::move(os), std::move(out),
                     [tid = table.id, idv = std::vector<std::int32_t>(ids.begin(), ids.end()), d](Graph<T>& g,
                                                                                                 NodeId self) {
                         auto dt = g.grad_acc(tid);
                         if (dt.empty()) return;
                         auto dy = g.grad(self);
                         for (std::size_t i = 0; i < idv.size(); ++i) {
                             T* row = dt.data() + static_cast<std::size_t>(idv[i]) * d;
                             for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
                         }
                     });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
    Graph<T>& g = *x.graph;
    const std::size_t d = last_dim(x.shape());
    const std::size_t n = x.numel() / d;
    auto xv = x.value();
    std::vector<T> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n)
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " outside " + std::to_string(n));
        std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);
    }
    return g.emplace(OpKind::gather_rows, {x.id}, Shape{rows.size(), d}, std::move(out),
                     [xid = x.id, rv = std::vector<std::size_t>(rows.begin(), rows.end()), d](Graph<T>& g,
                                                                                             NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         for (std::size_t i = 0; i < rv.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j) dx[rv[i] * d + j] += dy[i * d + j];
                     });
}

template <typename T>
Var<T> masked_mean(Var<T> x, std::span<const T> weights) {
    Graph<T>& g = *x.graph;
    const Shape& sx = x.shape();
    if (sx.size() != 3 || weights.size() != sx[0] * sx[1])
        throw DimensionError("masked_mean: expected [b x s x d] input and b*s weights, got " + shape_str(sx) +
                             " and " + std::to_string(weights.size()));
    const std::size_t b = sx[0], s = sx[1], d = sx[2];
    std::vector<T> norm(b, T{0});
    for (std::size_t i = 0; i < b; ++i) {
        T total = 0;
        for (std::size_t t = 0; t < s; ++t) total += weights[i * s + t];
        norm[i] = total > T{0} ? T{1} / total : T{0};
    }
    auto xv = x.value();
    std::vector<T> out(b * d, T{0});
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < s; ++t) {
            const T w = weights[i * s + t] * norm[i];
            if (w == T{0}) continue;
            for (std::size_t j = 0; j < d; ++j) out[i * d + j] += w * xv[(i * s + t) * d + j];
        }
    return g.emplace(OpKind::masked_mean, {x.id}, Shape{b, d}, std::move(out),
                     [xid = x.id, w = std::vector<T>(weights.begin(), weights.end()), norm = std::move(norm), b, s,
                      d](Graph<T>& g, NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t t = 0; t < s; ++t) {
                                 const T wt = w[i * s + t] * norm[i];
                                 for (std::size_t j = 0; j < d; ++j) dx[(i * s + t) * d + j] += wt * dy[i * d + j];
                             }
                     });
}

namespace {

// Strides that broadcast a mask onto [b, s_q, s_kv].
struct MaskIndexer {
    std::size_t sb = 0, sq = 0, sk = 0;
    const std::uint8_t* keep = nullptr;

    MaskIndexer(const BoolMask* mask, std::size_t b, std::size_t s_q, std::size_t s_kv) {
        if (!mask) return;
        const Shape& ms = mask->shape;
        if (ms.size() > 3 || shape_numel(ms) != mask->keep.size())
            throw DimensionError("attention: malformed mask " + shape_str(ms));
        const std::size_t target[3] = {b, s_q, s_kv};
        std::size_t dims[3] = {1, 1, 1};
        std::copy(ms.begin(), ms.end(), dims + (3 - ms.size()));
        for (int i = 0; i < 3; ++i)
            if (dims[i] != target[i] && dims[i] != 1)
                throw DimensionError("attention: mask " + shape_str(ms) + " not broadcastable to " +
                                     shape_str(Shape{b, s_q, s_kv}));
        sk = dims[2] == 1 ? 0 : 1;
        sq = dims[1] == 1 ? 0 : dims[2];
        sb = dims[0] == 1 ? 0 : dims[1] * dims[2];
        keep = mask->keep.data();
    }

    bool operator()(std::size_t bi, std::size_t qi, std::size_t ki) const {
        return !keep || keep[bi * sb + qi * sq + ki * sk] != 0;
    }
};

}  // namespace

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionGeometry& geom, const BoolMask* mask) {
    Graph<T>& g = same_graph(q, k, "attention");
    const std::size_t H = geom.n_heads, KV = geom.n_kv_heads, hd = geom.head_dim;
    if (H == 0 || KV == 0 || hd == 0 || H % KV != 0)
        throw ConfigError("attention: n_heads must be a positive multiple of n_kv_heads");
    const Shape& sq_ = q.shape();
    const Shape& sk_ = k.shape();
    const Shape& sv_ = v.shape();
    if (sq_.size() != 3 || sk_.size() != 3 || sk_ != sv_ || sq_[0] != sk_[0] || sq_[2] != H * hd ||
        sk_[2] != KV * hd)
        throw DimensionError("attention: q " + shape_str(sq_) + ", k " + shape_str(sk_) + ", v " + shape_str(sv_) +
                             " inconsistent with " + std::to_string(H) + " heads / " + std::to_string(KV) +
                             " kv heads of width " + std::to_string(hd));
    const std::size_t B = sq_[0], Sq = sq_[1], Sk = sk_[1];
    const MaskIndexer keep(mask, B, Sq, Sk);
    const std::size_t group = H / KV;
    const std::size_t qw = H * hd, kw = KV * hd;
    const T scl = T{1} / std::sqrt(static_cast<T>(hd));
    const std::size_t causal_offset = Sk >= Sq ? Sk - Sq : 0;

    auto qv = q.value();
    auto kv = k.value();
    auto vv = v.value();
    std::vector<T> out(B * Sq * qw, T{0});
    std::vector<T> probs(B * H * Sq * Sk, T{0});
    std::vector<T> row(Sk);

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t kh = h / group;
            for (std::size_t i = 0; i < Sq; ++i) {
                const T* qi = qv.data() + (b * Sq + i) * qw + h * hd;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < Sk; ++j) {
                    const bool ok = keep(b, i, j) && (!geom.causal || j <= i + causal_offset);
                    if (!ok) {
                        row[j] = -std::numeric_limits<T>::infinity();
                        continue;
                    }
                    const T* kj = kv.data() + (b * Sk + j) * kw + kh * hd;
                    T s = 0;
                    for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
                    row[j] = s * scl;
                    mx = std::max(mx, row[j]);
                }
                T* p = probs.data() + ((b * H + h) * Sq + i) * Sk;
                if (mx == -std::numeric_limits<T>::infinity()) continue;
                T total = 0;
                for (std::size_t j = 0; j < Sk; ++j) {
                    p[j] = row[j] == -std::numeric_limits<T>::infinity() ? T{0} : std::exp(row[j] - mx);
                    total += p[j];
                }
                T* oi = out.data() + (b * Sq + i) * qw + h * hd;
                for (std::size_t j = 0; j < Sk; ++j) {
                    p[j] /= total;
                    if (p[j] == T{0}) continue;
                    const T* vj = vv.data() + (b * Sk + j) * kw + kh * hd;
                    for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
                }
            }
        }

    return g.emplace(
        OpKind::attention, {q.id, k.id, v.id}, Shape{B, Sq, qw}, std::move(out),
        [qid = q.id, kid = k.id, vid = v.id, probs = std::move(probs), B, Sq, Sk, H, hd, group, qw, kw, scl](
            Graph<T>& g, NodeId self) {
            auto dout = g.grad(self);
            auto qv = g.value(qid);
            auto kv = g.value(kid);
            auto vv = g.value(vid);
            auto dq = g.grad_acc(qid);
            auto dk = g.grad_acc(kid);
            auto dv = g.grad_acc(vid);
            std::vector<T> ds(Sk);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < H; ++h) {
                    const std::size_t kh = h / group;
                    for (std::size_t i = 0; i < Sq; ++i) {
                        const T* p = probs.data() + ((b * H + h) * Sq + i) * Sk;
                        const T* doi = dout.data() + (b * Sq + i) * qw + h * hd;
                        T dot = 0;
                        for (std::size_t j = 0; j < Sk; ++j) {
                            if (p[j] == T{0}) {
                                ds[j] = 0;
                                continue;
                            }
                            const T* vj = vv.data() + (b * Sk + j) * kw + kh * hd;
                            T dp = 0;
                            for (std::size_t c = 0; c < hd; ++c) dp += doi[c] * vj[c];
                            ds[j] = dp;
                            dot += dp * p[j];
                            if (!dv.empty()) {
                                T* dvj = dv.data() + (b * Sk + j) * kw + kh * hd;
                                for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * doi[c];
                            }
                        }
                        const T* qi = qv.data() + (b * Sq + i) * qw + h * hd;
                        T* dqi = dq.empty() ? nullptr : dq.data() + (b * Sq + i) * qw + h * hd;
                        for (std::size_t j = 0; j < Sk; ++j) {
                            if (p[j] == T{0}) continue;
                            const T dsj = p[j] * (ds[j] - dot) * scl;
                            const T* kj = kv.data() + (b * Sk + j) * kw + kh * hd;
                            if (dqi)
                                for (std::size_t c = 0; c < hd; ++c) dqi[c] += dsj * kj[c];
                            if (!dk.empty()) {
                                T* dkj = dk.data() + (b * Sk + j) * kw + kh * hd;
                                for (std::size_t c = 0; c < hd; ++c) dkj[c] += dsj * qi[c];
                            }
                        }
                    }
                }
        });
}

template <typename T>
Var<T> rope(Var<T> x, std::size_t n_heads, std::size_t head_dim, std::span<const std::size_t> positions,
            double theta) {
    Graph<T>& g = *x.graph;
    if (head_dim % 2 != 0) throw ConfigError("rope: head_dim must be even, got " + std::to_string(head_dim));
    const Shape& sx = x.shape();
    if (sx.size() != 3 || sx[2] != n_heads * head_dim || positions.size() != sx[1])
        throw DimensionError("rope: input " + shape_str(sx) + " inconsistent with " + std::to_string(n_heads) +
                             " heads of width " + std::to_string(head_dim) + " and " +
                             std::to_string(positions.size()) + " positions");
    const std::size_t B = sx[0], S = sx[1], half = head_dim / 2;
    std::vector<T> cosv(S * half), sinv(S * half);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < half; ++i) {
            const double ang = static_cast<double>(positions[s]) *
                               std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            cosv[s * half + i] = static_cast<T>(std::cos(ang));
            sinv[s * half + i] = static_cast<T>(std::sin(ang));
        }
    auto xv = x.value();
    std::vector<T> out(xv.size());
    const std::size_t w = sx[2];
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t h = 0; h < n_heads; ++h)
                for (std::size_t i = 0; i < half; ++i) {
                    const std::size_t o = (b * S + s) * w + h * head_dim + 2 * i;
                    const T c = cosv[s * half + i], sn = sinv[s * half + i];
                    out[o] = xv[o] * c - xv[o + 1] * sn;
                    out[o + 1] = xv[o] * sn + xv[o + 1] * c;
                }
    return g.emplace(OpKind::rope, {x.id}, sx, std::move(out),
                     [xid = x.id, cosv = std::move(cosv), sinv = std::move(sinv), B, S, n_heads, head_dim, half, w](
                         Graph<T>& g, NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         for (std::size_t b = 0; b < B; ++b)
                             for (std::size_t s = 0; s < S; ++s)
                                 for (std::size_t h = 0; h < n_heads; ++h)
                                     for (std::size_t i = 0; i < half; ++i) {
                                         const std::size_t o = (b * S + s) * w + h * head_dim + 2 * i;
                                         const T c = cosv[s * half + i], sn = sinv[s * half + i];
                                         dx[o] += dy[o] * c + dy[o + 1] * sn;
                                         dx[o + 1] += -dy[o] * sn + dy[o + 1] * c;
                                     }
                     });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, std::uint64_t key) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
    Graph<T>& g = *x.graph;
    auto xv = x.value();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> maskv(xv.size());
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        maskv[i] = counter_uniform(key, i) >= p ? keep_scale : T{0};
        out[i] = xv[i] * maskv[i];
    }
    return g.emplace(OpKind::dropout, {x.id}, x.shape(), std::move(out),
                     [xid = x.id, maskv = std::move(maskv)](Graph<T>& g, NodeId self) {
                         auto dx = g.grad_acc(xid);
                         if (dx.empty()) return;
                         auto dy = g.grad(self);
                         for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * maskv[i];
                     });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto xv = x.value();
    return x.graph->emplace(OpKind::reshape, {x.id}, std::move(shape), std::vector<T>(xv.begin(), xv.end()),
                            [xid = x.id](Graph<T>& g, NodeId self) {
                                auto dx = g.grad_acc(xid);
                                if (dx.empty()) return;
                                auto dy = g.grad(self);
                                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                            });
}

template <typename T>
Var<T> sum(Var<T> x) {
    T s = 0;
    for (T v : x.value()) s += v;
    return x.graph->emplace(OpKind::sum, {x.id}, Shape{1}, std::vector<T>{s}, [xid = x.id](Graph<T>& g, NodeId self) {
        auto dx = g.grad_acc(xid);
        if (dx.empty()) return;
        const T dy = g.grad(self)[0];
        for (auto& v : dx) v += dy;
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::optional<std::int32_t> ignore_index) {
    Graph<T>& g = *logits.graph;
    const Shape& sl = logits.shape();
    if (sl.size() != 2 || targets.size() != sl[0])
        throw DimensionError("cross_entropy: logits " + shape_str(sl) + " vs " + std::to_string(targets.size()) +
                             " targets");
    const std::size_t n = sl[0], C = sl[1];
    auto lv = logits.value();
    std::vector<T> probs(n * C, T{0});
    std::size_t counted = 0;
    double total = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (ignore_index && targets[r] == *ignore_index) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= C)
            throw ContractError("cross_entropy: target " + std::to_string(targets[r]) + " outside [0, " +
                                std::to_string(C) + ")");
        const T* x = lv.data() + r * C;
        const T mx = *std::max_element(x, x + C);
        double s = 0;
        for (std::size_t j = 0; j < C; ++j) s += std::exp(static_cast<double>(x[j] - mx));
        for (std::size_t j = 0; j < C; ++j)
            probs[r * C + j] = static_cast<T>(std::exp(static_cast<double>(x[j] - mx)) / s);
        total += std::log(s) - static_cast<double>(x[targets[r]] - mx);
        ++counted;
    }
    if (counted == 0) throw ContractError("cross_entropy: every row is ignored");
    const T loss = static_cast<T>(total / static_cast<double>(counted));
    return g.emplace(OpKind::cross_entropy, {logits.id}, Shape{1}, std::vector<T>{loss},
                     [lid = logits.id, probs = std::move(probs), tg = std::vector<std::int32_t>(targets.begin(), targets.end()),
                      ignore_index, n, C, counted](Graph<T>& g, NodeId self) {
                         auto dl = g.grad_acc(lid);
                         if (dl.empty()) return;
                         const T dy = g.grad(self)[0] / static_cast<T>(counted);
                         for (std::size_t r = 0; r < n; ++r) {
                             if (ignore_index && tg[r] == *ignore_index) continue;
                             for (std::size_t j = 0; j < C; ++j) dl[r * C + j] += dy * probs[r * C + j];
                             dl[r * C + static_cast<std::size_t>(tg[r])] -= dy;
                         }
                     });
}

#define PIFI_INSTANTIATE_OPS(T)                                                                                   \
    template Var<T> matmul(Var<T>, Var<T>);                                                                       \
    template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                                                \
    template Var<T> add(Var<T>, Var<T>);                                                                          \
    template Var<T> mul(Var<T>, Var<T>);                                                                          \
    template Var<T> scale(Var<T>, double);                                                                        \
    template Var<T> softmax_rows(Var<T>);                                                                         \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                                                   \
    template Var<T> rms_norm(Var<T>, Var<T>, double);                                                             \
    template Var<T> gelu(Var<T>);                                                                                 \
    template Var<T> silu(Var<T>);                                                                                 \
    template Var<T> tanh(Var<T>);                                                                                 \
    template Var<T> embedding(Var<T>, std::span<const std::int32_t>, const Shape&);                               \
    template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                                            \
    template Var<T> masked_mean(Var<T>, std::span<const T>);                                                      \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionGeometry&, const BoolMask*);                 \
    template Var<T> rope(Var<T>, std::size_t, std::size_t, std::span<const std::size_t>, double);                 \
    template Var<T> dropout(Var<T>, double, std::uint64_t);                                                       \
    template Var<T> reshape(Var<T>, Shape);                                                                       \
    template Var<T> sum(Var<T>);                                                                                  \
    template Var<T> mean(Var<T>);                                                                                 \
    template Var<T> cross_entropy(Var<T>, std::span<const std::int32_t>, std::optional<std::int32_t>);

PIFI_INSTANTIATE_OPS(float)
PIFI_INSTANTIATE_OPS(double)

}  // namespace pifi
