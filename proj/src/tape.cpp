#include "haht/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace haht {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// C[m x n] += or = A[m x k] * B[k x n]; accumulate controls += vs =.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (!accumulate) c.fill(0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* cd = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = ad + i * k;
        double* crow = cd + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = bd + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tensor transpose_of(const Tensor& a) {
    Tensor t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

}  // namespace

Tape::NodeId Tape::push(Tensor val, std::function<void()> back, std::string param_name) {
    Node n;
    n.grad = Tensor(val.shape());
    n.val = std::move(val);
    n.back = std::move(back);
    n.param_name = std::move(param_name);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::input(Tensor v) { return push(std::move(v)); }

Tape::NodeId Tape::param(const std::string& name, const ParameterStore& store) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    NodeId id = push(store.value(name), {}, name);
    param_nodes_.emplace(name, id);
    return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (!av.same_shape(bv)) throw std::invalid_argument("Tape::add: shape mismatch");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out(i) += bv(i);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o] {
        const Tensor& g = nodes_[o].grad;
        Tensor& ga = nodes_[a].grad;
        Tensor& gb = nodes_[b].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            ga(i) += g(i);
            gb(i) += g(i);
        }
    };
    return o;
}

Tape::NodeId Tape::scale(NodeId a, double s) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out(i) *= s;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o, s] {
        const Tensor& g = nodes_[o].grad;
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) ga(i) += s * g(i);
    };
    return o;
}

Tape::NodeId Tape::add_rowvec(NodeId m, NodeId v) {
    const Tensor& mv = val(m);
    const Tensor& vv = val(v);
    if (vv.numel() != mv.cols()) throw std::invalid_argument("Tape::add_rowvec: width mismatch");
    Tensor out = mv;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += vv(j);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, m, v, o] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gm = nodes_[m].grad;
        Tensor& gv = nodes_[v].grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) {
                gm(i, j) += g(i, j);
                gv(j) += g(i, j);
            }
    };
    return o;
}

Tape::NodeId Tape::tanh_op(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out(i) = std::tanh(out(i));
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& y = nodes_[o].val;
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) ga(i) += g(i) * (1.0 - y(i) * y(i));
    };
    return o;
}

Tape::NodeId Tape::gelu(NodeId a) {
    // Exact (erf) form; smooth everywhere, which keeps finite differences clean.
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double x = out(i);
        out(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& x = nodes_[a].val;
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            double xi = x(i);
            double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
            ga(i) += g(i) * (cdf + xi * pdf);
        }
    };
    return o;
}

Tape::NodeId Tape::log_op(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out(i) = std::log(out(i));
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& x = nodes_[a].val;
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) ga(i) += g(i) / x(i);
    };
    return o;
}

Tape::NodeId Tape::transpose(NodeId a) {
    NodeId o = push(transpose_of(val(a)));
    nodes_[o].back = [this, a, o] {
        const Tensor& g = nodes_[o].grad;
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
    };
    return o;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    if (av.cols() != bv.rows()) throw std::invalid_argument("Tape::matmul: inner dim mismatch");
    Tensor out(av.rows(), bv.cols());
    matmul_into(av, bv, out, false);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, b, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& av2 = nodes_[a].val;
        const Tensor& bv2 = nodes_[b].val;
        Tensor bt = transpose_of(bv2);
        matmul_into(g, bt, nodes_[a].grad, true);
        Tensor at = transpose_of(av2);
        matmul_into(at, g, nodes_[b].grad, true);
    };
    return o;
}

Tape::NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Tensor& xv = val(x);
    const std::size_t r = xv.rows(), c = xv.cols();
    if (val(gain).numel() != c || val(bias).numel() != c)
        throw std::invalid_argument("Tape::layer_norm: gain/bias width mismatch");
    Tensor out(r, c);
    const Tensor& gv = val(gain);
    const Tensor& bv = val(bias);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = xv(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) = gv(j) * (xv(i, j) - mean) * inv + bv(j);
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, gain, bias, o, eps] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& xv2 = nodes_[x].val;
        const Tensor& gv2 = nodes_[gain].val;
        Tensor& gx = nodes_[x].grad;
        Tensor& gg = nodes_[gain].grad;
        Tensor& gb = nodes_[bias].grad;
        const std::size_t r2 = xv2.rows(), c2 = xv2.cols();
        const double n = static_cast<double>(c2);
        for (std::size_t i = 0; i < r2; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < c2; ++j) mean += xv2(i, j);
            mean /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < c2; ++j) {
                double d = xv2(i, j) - mean;
                var += d * d;
            }
            var /= n;
            double inv = 1.0 / std::sqrt(var + eps);
            // dxhat, plus the two reduction terms of the layer-norm backward.
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < c2; ++j) {
                double xhat = (xv2(i, j) - mean) * inv;
                double dxhat = g(i, j) * gv2(j);
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                gg(j) += g(i, j) * xhat;
                gb(j) += g(i, j);
            }
            for (std::size_t j = 0; j < c2; ++j) {
                double xhat = (xv2(i, j) - mean) * inv;
                double dxhat = g(i, j) * gv2(j);
                gx(i, j) += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
            }
        }
    };
    return o;
}

Tape::NodeId Tape::softmax_rows(NodeId x) {
    const Tensor& xv = val(x);
    Tensor out(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double mx = xv(i, 0);
        for (std::size_t j = 1; j < xv.cols(); ++j) mx = std::max(mx, xv(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) {
            out(i, j) = std::exp(xv(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) /= sum;
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& s = nodes_[o].val;
        Tensor& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < s.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < s.cols(); ++j) dot += g(i, j) * s(i, j);
            for (std::size_t j = 0; j < s.cols(); ++j)
                gx(i, j) += s(i, j) * (g(i, j) - dot);
        }
    };
    return o;
}

Tape::NodeId Tape::softmax_rows_masked(NodeId x, std::vector<std::uint8_t> mask) {
    const Tensor& xv = val(x);
    const std::size_t r = xv.rows(), c = xv.cols();
    if (mask.size() != r * c) throw std::invalid_argument("softmax_rows_masked: mask size mismatch");
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = 0.0;
        bool any = false;
        for (std::size_t j = 0; j < c; ++j) {
            if (!mask[i * c + j]) continue;
            mx = any ? std::max(mx, xv(i, j)) : xv(i, j);
            any = true;
        }
        if (!any) throw std::invalid_argument("softmax_rows_masked: fully masked row");
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (mask[i * c + j]) {
                out(i, j) = std::exp(xv(i, j) - mx);
                sum += out(i, j);
            } else {
                out(i, j) = 0.0;
            }
        }
        for (std::size_t j = 0; j < c; ++j)
            if (mask[i * c + j]) out(i, j) /= sum;
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o, mask = std::move(mask)] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& s = nodes_[o].val;
        Tensor& gx = nodes_[x].grad;
        const std::size_t c2 = s.cols();
        for (std::size_t i = 0; i < s.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c2; ++j)
                if (mask[i * c2 + j]) dot += g(i, j) * s(i, j);
            for (std::size_t j = 0; j < c2; ++j)
                if (mask[i * c2 + j]) gx(i, j) += s(i, j) * (g(i, j) - dot);
        }
    };
    return o;
}

Tape::NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    std::size_t rows = 0;
    const std::size_t cols = val(parts[0]).cols();
    for (NodeId p : parts) {
        if (val(p).cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
        rows += val(p).rows();
    }
    Tensor out(rows, cols);
    std::size_t r = 0;
    for (NodeId p : parts) {
        const Tensor& pv = val(p);
        std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + r * cols);
        r += pv.rows();
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, parts, o] {
        const Tensor& g = nodes_[o].grad;
        std::size_t r2 = 0;
        for (NodeId p : parts) {
            Tensor& gp = nodes_[p].grad;
            const std::size_t pr = gp.rows(), pc = gp.cols();
            for (std::size_t i = 0; i < pr; ++i)
                for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(r2 + i, j);
            r2 += pr;
        }
    };
    return o;
}

Tape::NodeId Tape::slice_rows(NodeId x, std::size_t r0, std::size_t r1) {
    const Tensor& xv = val(x);
    if (r1 < r0 || r1 > xv.rows()) throw std::invalid_argument("slice_rows: bad range");
    Tensor out(r1 - r0, xv.cols());
    std::copy(xv.data().begin() + r0 * xv.cols(), xv.data().begin() + r1 * xv.cols(),
              out.data().begin());
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o, r0] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gx(r0 + i, j) += g(i, j);
    };
    return o;
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t rows = val(parts[0]).rows();
    std::size_t cols = 0;
    for (NodeId p : parts) {
        if (val(p).rows() != rows) throw std::invalid_argument("concat_cols: height mismatch");
        cols += val(p).cols();
    }
    Tensor out(rows, cols);
    std::size_t c = 0;
    for (NodeId p : parts) {
        const Tensor& pv = val(p);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out(i, c + j) = pv(i, j);
        c += pv.cols();
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, parts, o] {
        const Tensor& g = nodes_[o].grad;
        std::size_t c2 = 0;
        for (NodeId p : parts) {
            Tensor& gp = nodes_[p].grad;
            for (std::size_t i = 0; i < gp.rows(); ++i)
                for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += g(i, c2 + j);
            c2 += gp.cols();
        }
    };
    return o;
}

Tape::NodeId Tape::slice_cols(NodeId x, std::size_t c0, std::size_t c1) {
    const Tensor& xv = val(x);
    if (c1 < c0 || c1 > xv.cols()) throw std::invalid_argument("slice_cols: bad range");
    Tensor out(xv.rows(), c1 - c0);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = xv(i, j);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o, c0] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gx(i, c0 + j) += g(i, j);
    };
    return o;
}

Tape::NodeId Tape::tile_rows(NodeId v, std::size_t n) {
    const Tensor& vv = val(v);
    if (vv.rows() != 1) throw std::invalid_argument("tile_rows: expected 1 x c");
    Tensor out(n, vv.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < vv.cols(); ++j) out(i, j) = vv(0, j);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, v, o] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gv = nodes_[v].grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
    };
    return o;
}

Tape::NodeId Tape::max_pool_rows(NodeId x, std::vector<std::uint8_t> row_mask) {
    const Tensor& xv = val(x);
    const std::size_t r = xv.rows(), c = xv.cols();
    if (row_mask.size() != r) throw std::invalid_argument("max_pool_rows: mask size mismatch");
    std::vector<std::size_t> arg(c, r);
    Tensor out(1, c);
    bool any = false;
    for (std::size_t i = 0; i < r; ++i) {
        if (!row_mask[i]) continue;
        for (std::size_t j = 0; j < c; ++j) {
            if (arg[j] == r || xv(i, j) > out(0, j)) {
                out(0, j) = xv(i, j);
                arg[j] = i;
            }
        }
        any = true;
    }
    if (!any) throw std::invalid_argument("max_pool_rows: all rows masked");
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o, arg = std::move(arg)] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gx = nodes_[x].grad;
        for (std::size_t j = 0; j < g.cols(); ++j) gx(arg[j], j) += g(0, j);
    };
    return o;
}

Tape::NodeId Tape::embedding_rows(NodeId table, std::vector<int> ids) {
    const Tensor& tv = val(table);
    const std::size_t d = tv.cols();
    Tensor out(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
            throw std::out_of_range("embedding_rows: id out of range");
        for (std::size_t j = 0; j < d; ++j) out(i, j) = tv(static_cast<std::size_t>(ids[i]), j);
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, table, o, ids = std::move(ids)] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gt = nodes_[table].grad;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                gt(static_cast<std::size_t>(ids[i]), j) += g(i, j);
    };
    return o;
}

Tape::NodeId Tape::dropout(NodeId x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const Tensor& xv = val(x);
    std::vector<double> keep(xv.numel());
    const double scale = 1.0 / (1.0 - rate);
    for (double& k : keep) k = rng.uniform() < rate ? 0.0 : scale;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.numel(); ++i) out(i) *= keep[i];
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, x, o, keep = std::move(keep)] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gx = nodes_[x].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) gx(i) += g(i) * keep[i];
    };
    return o;
}

Tape::NodeId Tape::mixture(NodeId pvg, NodeId alphas, NodeId pvh) {
    const Tensor& pg = val(pvg);
    const Tensor& al = val(alphas);
    const Tensor& ph = val(pvh);
    const std::size_t n = pg.rows(), v = pg.cols();
    if (al.rows() != n || al.cols() != 2 || ph.rows() != 1 || ph.cols() != v)
        throw std::invalid_argument("mixture: shape mismatch");
    Tensor out(n, v);
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < v; ++j)
            out(t, j) = al(t, 0) * pg(t, j) + al(t, 1) * ph(0, j);
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, pvg, alphas, pvh, o] {
        const Tensor& g = nodes_[o].grad;
        const Tensor& pg2 = nodes_[pvg].val;
        const Tensor& al2 = nodes_[alphas].val;
        const Tensor& ph2 = nodes_[pvh].val;
        Tensor& gpg = nodes_[pvg].grad;
        Tensor& gal = nodes_[alphas].grad;
        Tensor& gph = nodes_[pvh].grad;
        for (std::size_t t = 0; t < g.rows(); ++t) {
            double da0 = 0.0, da1 = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) {
                gpg(t, j) += g(t, j) * al2(t, 0);
                gph(0, j) += g(t, j) * al2(t, 1);
                da0 += g(t, j) * pg2(t, j);
                da1 += g(t, j) * ph2(0, j);
            }
            gal(t, 0) += da0;
            gal(t, 1) += da1;
        }
    };
    return o;
}

Tape::NodeId Tape::pick_per_row(NodeId p, std::vector<int> ids) {
    const Tensor& pv = val(p);
    if (ids.size() != pv.rows()) throw std::invalid_argument("pick_per_row: id count mismatch");
    Tensor out(1, ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= pv.cols())
            throw std::out_of_range("pick_per_row: id out of range");
        out(0, t) = pv(t, static_cast<std::size_t>(ids[t]));
    }
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, p, o, ids = std::move(ids)] {
        const Tensor& g = nodes_[o].grad;
        Tensor& gp = nodes_[p].grad;
        for (std::size_t t = 0; t < ids.size(); ++t)
            gp(t, static_cast<std::size_t>(ids[t])) += g(0, t);
    };
    return o;
}

Tape::NodeId Tape::sum_all(NodeId a) {
    const Tensor& av = val(a);
    Tensor out(1, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < av.numel(); ++i) s += av(i);
    out(0, 0) = s;
    NodeId o = push(std::move(out));
    nodes_[o].back = [this, a, o] {
        const double g = nodes_[o].grad(0, 0);
        Tensor& ga = nodes_[a].grad;
        for (std::size_t i = 0; i < ga.numel(); ++i) ga(i) += g;
    };
    return o;
}

void Tape::backward(NodeId root) {
    if (backward_done_) throw std::logic_error("Tape::backward: already run");
    backward_done_ = true;
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (r.val.numel() != 1) throw std::invalid_argument("Tape::backward: root must be scalar");
    r.grad(0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back();
    }
}

void Tape::accumulate_param_grads(ParameterStore& store, double scale) const {
    for (const auto& [name, id] : param_nodes_) {
        const Tensor& g = nodes_[static_cast<std::size_t>(id)].grad;
        Tensor& dst = store.grad(name);
        for (std::size_t i = 0; i < g.numel(); ++i) dst(i) += scale * g(i);
    }
}

void Tape::accumulate_param_grads_into(std::map<std::string, Tensor>& acc, double scale) const {
    for (const auto& [name, id] : param_nodes_) {
        const Tensor& g = nodes_[static_cast<std::size_t>(id)].grad;
        auto it = acc.find(name);
        if (it == acc.end()) it = acc.emplace(name, Tensor(g.shape())).first;
        Tensor& dst = it->second;
        for (std::size_t i = 0; i < g.numel(); ++i) dst(i) += scale * g(i);
    }
}

}  // namespace haht
