#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "npn/param.hpp"
#include "npn/rng.hpp"
#include "npn/tensor.hpp"

namespace npn {

/// Handle into a Graph's node table.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Define-by-run reverse-mode differentiation tape. A graph is built fresh
/// for every forward pass and backpropagated at most once.
///
/// Elementwise binary ops accept equal shapes or a scalar ({1}) on either
/// side; the scalar side receives the summed gradient.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // ---- leaves ----

    Var leaf(Tensor value) {
        nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    /// Leaf bound to a learned parameter; memoized so each Param has one node
    /// per graph. backward() adds the node gradient into param.grad once.
    Var param(Param& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var{it->second};
        nodes_.push_back(Node{p.value, Tensor{}, {}, &p});
        int id = static_cast<int>(nodes_.size()) - 1;
        param_nodes_[&p] = id;
        return Var{id};
    }

    // ---- accessors ----

    const Tensor& value(Var v) const { return node(v).val; }
    /// Gradient of the last backward()'s loss w.r.t. this node; zeros if the
    /// node is unreachable from the loss.
    Tensor grad(Var v) const {
        const Node& n = node(v);
        if (n.grad.data.empty()) return Tensor::zeros(n.val.shape);
        return n.grad;
    }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise binary ----

    Var add(Var a, Var b) { return ew_binary("add", a, b, [](double x, double y) { return x + y; }, EwKind::Add); }
    Var sub(Var a, Var b) { return ew_binary("sub", a, b, [](double x, double y) { return x - y; }, EwKind::Sub); }
    Var mul(Var a, Var b) { return ew_binary("mul", a, b, [](double x, double y) { return x * y; }, EwKind::Mul); }
    Var div(Var a, Var b) { return ew_binary("div", a, b, [](double x, double y) { return x / y; }, EwKind::Div); }

    // ---- elementwise unary ----

    Var sigmoid(Var a) {
        const Tensor& x = val(a);
        Tensor out = Tensor::zeros(x.shape);
        for (int i = 0; i < x.numel(); ++i) {
            double z = x[i];
            out[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        }
        int oid = push(std::move(out));
        int aid = a.id;
        nodes_[oid].back = [aid, oid](Graph& g) {
            const Tensor& y = g.nodes_[oid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& ga = g.touch(aid);
            for (int i = 0; i < y.numel(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
        };
        return Var{oid};
    }

    Var tanh_(Var a) {
        const Tensor& x = val(a);
        Tensor out = Tensor::zeros(x.shape);
        for (int i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
        int oid = push(std::move(out));
        int aid = a.id;
        nodes_[oid].back = [aid, oid](Graph& g) {
            const Tensor& y = g.nodes_[oid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& ga = g.touch(aid);
            for (int i = 0; i < y.numel(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
        };
        return Var{oid};
    }

    Var relu(Var a) {
        const Tensor& x = val(a);
        Tensor out = Tensor::zeros(x.shape);
        for (int i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        int oid = push(std::move(out));
        int aid = a.id;
        nodes_[oid].back = [aid, oid](Graph& g) {
            const Tensor& x2 = g.nodes_[aid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& ga = g.touch(aid);
            for (int i = 0; i < x2.numel(); ++i)
                if (x2[i] > 0.0) ga[i] += go[i];
        };
        return Var{oid};
    }

    Var log_(Var a) {
        const Tensor& x = val(a);
        Tensor out = Tensor::zeros(x.shape);
        for (int i = 0; i < x.numel(); ++i) out[i] = std::log(x[i]);
        int oid = push(std::move(out));
        int aid = a.id;
        nodes_[oid].back = [aid, oid](Graph& g) {
            const Tensor& x2 = g.nodes_[aid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& ga = g.touch(aid);
            for (int i = 0; i < x2.numel(); ++i) ga[i] += go[i] / x2[i];
        };
        return Var{oid};
    }

    /// out = a*x + b, elementwise with constants.
    Var affine(Var x, double a, double b) {
        const Tensor& xv = val(x);
        Tensor out = Tensor::zeros(xv.shape);
        for (int i = 0; i < xv.numel(); ++i) out[i] = a * xv[i] + b;
        int oid = push(std::move(out));
        int xid = x.id;
        nodes_[oid].back = [xid, oid, a](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gx = g.touch(xid);
            for (int i = 0; i < go.numel(); ++i) gx[i] += a * go[i];
        };
        return Var{oid};
    }

    Var scale(Var x, double a) { return affine(x, a, 0.0); }
    Var one_minus(Var x) { return affine(x, -1.0, 1.0); }

    /// Clamp to [lo, hi]; gradient passes only where the input is interior.
    Var clamp(Var x, double lo, double hi) {
        const Tensor& xv = val(x);
        Tensor out = Tensor::zeros(xv.shape);
        for (int i = 0; i < xv.numel(); ++i) out[i] = std::min(hi, std::max(lo, xv[i]));
        int oid = push(std::move(out));
        int xid = x.id;
        nodes_[oid].back = [xid, oid, lo, hi](Graph& g) {
            const Tensor& x2 = g.nodes_[xid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gx = g.touch(xid);
            for (int i = 0; i < x2.numel(); ++i)
                if (x2[i] > lo && x2[i] < hi) gx[i] += go[i];
        };
        return Var{oid};
    }

    /// Forward identity, backward zero.
    Var detach(Var x) { return leaf(val(x)); }

    /// Inverted dropout: identity in inference mode, mask-and-rescale in
    /// training mode. The mask is drawn from the caller's stream.
    Var dropout(Var x, double rate, bool training, std::mt19937_64& rng) {
        if (!training || rate <= 0.0) return x;
        if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
        const Tensor& xv = val(x);
        double keep = 1.0 - rate;
        std::vector<double> mask(static_cast<size_t>(xv.numel()));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& m : mask) m = (u(rng) < keep) ? 1.0 / keep : 0.0;
        Tensor out = Tensor::zeros(xv.shape);
        for (int i = 0; i < xv.numel(); ++i) out[i] = xv[i] * mask[static_cast<size_t>(i)];
        int oid = push(std::move(out));
        int xid = x.id;
        nodes_[oid].back = [xid, oid, mask = std::move(mask)](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gx = g.touch(xid);
            for (int i = 0; i < go.numel(); ++i) gx[i] += go[i] * mask[static_cast<size_t>(i)];
        };
        return Var{oid};
    }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape) + " x " + shape_str(B.shape));
        int m = A.dim(0), k = A.dim(1), n = B.dim(1);
        Tensor out = Tensor::zeros({m, n});
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                double av = A.at2(i, p);
                if (av == 0.0) continue;
                const double* brow = &B.data[static_cast<size_t>(p) * n];
                double* orow = &out.data[static_cast<size_t>(i) * n];
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        int oid = push(std::move(out));
        int aid = a.id, bid = b.id;
        nodes_[oid].back = [aid, bid, oid, m, k, n](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            const Tensor& A2 = g.nodes_[aid].val;
            const Tensor& B2 = g.nodes_[bid].val;
            Tensor& gA = g.touch(aid);
            Tensor& gB = g.touch(bid);
            // dA = gO * B^T ; dB = A^T * gO
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += go.at2(i, j) * B2.at2(p, j);
                    gA.at2(i, p) += s;
                }
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i) s += A2.at2(i, p) * go.at2(i, j);
                    gB.at2(p, j) += s;
                }
        };
        return Var{oid};
    }

    /// (m,k) matrix times length-k vector -> length-m vector.
    Var matvec(Var w, Var x) {
        const Tensor& W = val(w);
        const Tensor& X = val(x);
        if (W.rank() != 2 || X.rank() != 1 || W.dim(1) != X.dim(0))
            throw std::invalid_argument("matvec: incompatible shapes " + shape_str(W.shape) + " x " + shape_str(X.shape));
        int m = W.dim(0), k = W.dim(1);
        Tensor out = Tensor::zeros({m});
        for (int i = 0; i < m; ++i) out[i] = dot_raw(&W.data[static_cast<size_t>(i) * k], X.data.data(), static_cast<size_t>(k));
        int oid = push(std::move(out));
        int wid = w.id, xid = x.id;
        nodes_[oid].back = [wid, xid, oid, m, k](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            const Tensor& W2 = g.nodes_[wid].val;
            const Tensor& X2 = g.nodes_[xid].val;
            Tensor& gW = g.touch(wid);
            Tensor& gX = g.touch(xid);
            for (int i = 0; i < m; ++i) {
                double gi = go[i];
                if (gi == 0.0) continue;
                double* gwrow = &gW.data[static_cast<size_t>(i) * k];
                const double* wrow = &W2.data[static_cast<size_t>(i) * k];
                for (int j = 0; j < k; ++j) {
                    gwrow[j] += gi * X2[j];
                    gX[j] += gi * wrow[j];
                }
            }
        };
        return Var{oid};
    }

    /// length-k vector times (k,n) matrix -> length-n vector.
    Var vecmat(Var x, Var w) {
        const Tensor& X = val(x);
        const Tensor& W = val(w);
        if (X.rank() != 1 || W.rank() != 2 || X.dim(0) != W.dim(0))
            throw std::invalid_argument("vecmat: incompatible shapes " + shape_str(X.shape) + " x " + shape_str(W.shape));
        int k = W.dim(0), n = W.dim(1);
        Tensor out = Tensor::zeros({n});
        for (int i = 0; i < k; ++i) {
            double xi = X[i];
            if (xi == 0.0) continue;
            const double* wrow = &W.data[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) out[j] += xi * wrow[j];
        }
        int oid = push(std::move(out));
        int xid = x.id, wid = w.id;
        nodes_[oid].back = [xid, wid, oid, k, n](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            const Tensor& X2 = g.nodes_[xid].val;
            const Tensor& W2 = g.nodes_[wid].val;
            Tensor& gX = g.touch(xid);
            Tensor& gW = g.touch(wid);
            for (int i = 0; i < k; ++i) {
                const double* wrow = &W2.data[static_cast<size_t>(i) * n];
                double* gwrow = &gW.data[static_cast<size_t>(i) * n];
                double s = 0.0;
                double xi = X2[i];
                for (int j = 0; j < n; ++j) {
                    s += go[j] * wrow[j];
                    gwrow[j] += xi * go[j];
                }
                gX[i] += s;
            }
        };
        return Var{oid};
    }

    Var dot(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != 1 || B.rank() != 1 || A.dim(0) != B.dim(0))
            throw std::invalid_argument("dot: incompatible shapes " + shape_str(A.shape) + " x " + shape_str(B.shape));
        Tensor out = Tensor::scalar(dot_raw(A.data.data(), B.data.data(), A.data.size()));
        int oid = push(std::move(out));
        int aid = a.id, bid = b.id;
        nodes_[oid].back = [aid, bid, oid](Graph& g) {
            double go = g.nodes_[oid].grad[0];
            const Tensor& A2 = g.nodes_[aid].val;
            const Tensor& B2 = g.nodes_[bid].val;
            Tensor& gA = g.touch(aid);
            Tensor& gB = g.touch(bid);
            for (int i = 0; i < A2.numel(); ++i) {
                gA[i] += go * B2[i];
                gB[i] += go * A2[i];
            }
        };
        return Var{oid};
    }

    /// Trilinear form: out_k = sum_{i,j} x_i W[i,j,k] y_j with W of shape (p,q,r).
    Var bilinear3(Var x, Var w, Var y) {
        const Tensor& X = val(x);
        const Tensor& W = val(w);
        const Tensor& Y = val(y);
        if (X.rank() != 1 || Y.rank() != 1 || W.rank() != 3 || W.dim(0) != X.dim(0) || W.dim(1) != Y.dim(0))
            throw std::invalid_argument("bilinear3: incompatible shapes " + shape_str(X.shape) + ", " +
                                        shape_str(W.shape) + ", " + shape_str(Y.shape));
        int p = W.dim(0), q = W.dim(1), r = W.dim(2);
        Tensor out = Tensor::zeros({r});
        for (int i = 0; i < p; ++i) {
            double xi = X[i];
            if (xi == 0.0) continue;
            for (int j = 0; j < q; ++j) {
                double c = xi * Y[j];
                if (c == 0.0) continue;
                const double* wk = &W.data[(static_cast<size_t>(i) * q + j) * r];
                for (int k2 = 0; k2 < r; ++k2) out[k2] += c * wk[k2];
            }
        }
        int oid = push(std::move(out));
        int xid = x.id, wid = w.id, yid = y.id;
        nodes_[oid].back = [xid, wid, yid, oid, p, q, r](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            const Tensor& X2 = g.nodes_[xid].val;
            const Tensor& W2 = g.nodes_[wid].val;
            const Tensor& Y2 = g.nodes_[yid].val;
            Tensor& gX = g.touch(xid);
            Tensor& gW = g.touch(wid);
            Tensor& gY = g.touch(yid);
            for (int i = 0; i < p; ++i) {
                double gxi = 0.0;
                for (int j = 0; j < q; ++j) {
                    const double* wk = &W2.data[(static_cast<size_t>(i) * q + j) * r];
                    double* gwk = &gW.data[(static_cast<size_t>(i) * q + j) * r];
                    double s = 0.0;
                    for (int k2 = 0; k2 < r; ++k2) {
                        s += go[k2] * wk[k2];
                        gwk[k2] += X2[i] * Y2[j] * go[k2];
                    }
                    gxi += s * Y2[j];
                    gY[j] += s * X2[i];
                }
                gX[i] += gxi;
            }
        };
        return Var{oid};
    }

    // ---- shape ops ----

    Var concat(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() != 1 || B.rank() != 1)
            throw std::invalid_argument("concat: expects 1-d inputs, got " + shape_str(A.shape) + " and " + shape_str(B.shape));
        int na = A.dim(0);
        Tensor out = Tensor::zeros({na + B.dim(0)});
        std::copy(A.data.begin(), A.data.end(), out.data.begin());
        std::copy(B.data.begin(), B.data.end(), out.data.begin() + na);
        int oid = push(std::move(out));
        int aid = a.id, bid = b.id;
        nodes_[oid].back = [aid, bid, oid, na](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gA = g.touch(aid);
            Tensor& gB = g.touch(bid);
            for (int i = 0; i < na; ++i) gA[i] += go[i];
            for (int i = na; i < go.numel(); ++i) gB[i - na] += go[i];
        };
        return Var{oid};
    }

    /// Select row r of a matrix as a vector (embedding lookup).
    Var row(Var m, int r) {
        const Tensor& M = val(m);
        if (M.rank() != 2 || r < 0 || r >= M.dim(0))
            throw std::invalid_argument("row: index " + std::to_string(r) + " out of range for " + shape_str(M.shape));
        int cols = M.dim(1);
        Tensor out = Tensor::zeros({cols});
        std::copy(M.data.begin() + static_cast<size_t>(r) * cols, M.data.begin() + static_cast<size_t>(r + 1) * cols,
                  out.data.begin());
        int oid = push(std::move(out));
        int mid = m.id;
        nodes_[oid].back = [mid, oid, r, cols](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gM = g.touch(mid);
            double* grow = &gM.data[static_cast<size_t>(r) * cols];
            for (int i = 0; i < cols; ++i) grow[i] += go[i];
        };
        return Var{oid};
    }

    /// Element i of a vector as a scalar ({1}).
    Var at(Var v, int i) {
        const Tensor& X = val(v);
        if (X.rank() != 1 || i < 0 || i >= X.dim(0))
            throw std::invalid_argument("at: index " + std::to_string(i) + " out of range for " + shape_str(X.shape));
        Tensor out = Tensor::scalar(X[i]);
        int oid = push(std::move(out));
        int vid = v.id;
        nodes_[oid].back = [vid, oid, i](Graph& g) {
            g.touch(vid)[i] += g.nodes_[oid].grad[0];
        };
        return Var{oid};
    }

    Var stack(const std::vector<Var>& scalars) {
        if (scalars.empty()) throw std::invalid_argument("stack: empty input");
        Tensor out = Tensor::zeros({static_cast<int>(scalars.size())});
        std::vector<int> ids;
        ids.reserve(scalars.size());
        for (size_t i = 0; i < scalars.size(); ++i) {
            const Tensor& s = val(scalars[i]);
            if (!s.is_scalar()) throw std::invalid_argument("stack: input " + std::to_string(i) + " is not scalar");
            out[static_cast<int>(i)] = s[0];
            ids.push_back(scalars[i].id);
        }
        int oid = push(std::move(out));
        nodes_[oid].back = [ids = std::move(ids), oid](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            for (size_t i = 0; i < ids.size(); ++i) g.touch(ids[i])[0] += go[static_cast<int>(i)];
        };
        return Var{oid};
    }

    // ---- reductions & normalizers ----

    Var sum(Var a) {
        const Tensor& X = val(a);
        double s = 0.0;
        for (double v : X.data) s += v;
        int oid = push(Tensor::scalar(s));
        int aid = a.id;
        nodes_[oid].back = [aid, oid](Graph& g) {
            double go = g.nodes_[oid].grad[0];
            Tensor& gA = g.touch(aid);
            for (int i = 0; i < gA.numel(); ++i) gA[i] += go;
        };
        return Var{oid};
    }

    Var mean(Var a) {
        int n = val(a).numel();
        return scale(sum(a), 1.0 / n);
    }

    /// Softmax over the last axis. Outputs are strictly positive and each
    /// slice sums to 1.
    Var softmax(Var a) {
        const Tensor& X = val(a);
        if (X.rank() < 1) throw std::invalid_argument("softmax: needs rank >= 1");
        int last = X.dim(X.rank() - 1);
        int rows = X.numel() / last;
        Tensor out = Tensor::zeros(X.shape);
        for (int rI = 0; rI < rows; ++rI) {
            const double* xr = &X.data[static_cast<size_t>(rI) * last];
            double* yr = &out.data[static_cast<size_t>(rI) * last];
            double mx = xr[0];
            for (int i = 1; i < last; ++i) mx = std::max(mx, xr[i]);
            double z = 0.0;
            for (int i = 0; i < last; ++i) {
                yr[i] = std::exp(xr[i] - mx);
                z += yr[i];
            }
            for (int i = 0; i < last; ++i) yr[i] /= z;
        }
        int oid = push(std::move(out));
        int aid = a.id;
        nodes_[oid].back = [aid, oid, last, rows](Graph& g) {
            const Tensor& y = g.nodes_[oid].val;
            const Tensor& go = g.nodes_[oid].grad;
            Tensor& gA = g.touch(aid);
            for (int rI = 0; rI < rows; ++rI) {
                const double* yr = &y.data[static_cast<size_t>(rI) * last];
                const double* gr = &go.data[static_cast<size_t>(rI) * last];
                double* ga = &gA.data[static_cast<size_t>(rI) * last];
                double gy = 0.0;
                for (int i = 0; i < last; ++i) gy += gr[i] * yr[i];
                for (int i = 0; i < last; ++i) ga[i] += yr[i] * (gr[i] - gy);
            }
        };
        return Var{oid};
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Reachable Param leaves accumulate
    /// into Param::grad (unless deferred for external merging). A graph can
    /// be backpropagated only once; a second call is an error.
    void backward(Var loss, bool accumulate_into_params = true) {
        if (backward_done_) throw std::logic_error("backward: graph already backpropagated; build a fresh graph");
        const Tensor& lv = val(loss);
        if (!lv.is_scalar())
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lv.shape));
        backward_done_ = true;
        touch(loss.id)[0] = 1.0;
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.grad.data.empty()) continue;  // unreachable from loss
            if (n.back) n.back(*this);
            if (n.param && accumulate_into_params) {
                for (int i = 0; i < n.grad.numel(); ++i) n.param->grad[i] += n.grad[i];
            }
        }
    }

    /// Param leaves of this graph with their local gradients (empty tensor if
    /// the leaf was unreachable). For deferred merging across worker threads.
    std::vector<std::pair<Param*, const Tensor*>> param_grads() const {
        std::vector<std::pair<Param*, const Tensor*>> out;
        out.reserve(param_nodes_.size());
        for (const auto& [p, id] : param_nodes_)
            out.emplace_back(const_cast<Param*>(p), &nodes_[static_cast<size_t>(id)].grad);
        return out;
    }

    /// Gradient w.r.t. a given param in this graph (valid after backward).
    Tensor param_grad(const Param& p) const {
        auto it = param_nodes_.find(&p);
        if (it == param_nodes_.end()) return Tensor::zeros(p.value.shape);
        const Node& n = nodes_[static_cast<size_t>(it->second)];
        if (n.grad.data.empty()) return Tensor::zeros(p.value.shape);
        return n.grad;
    }

  private:
    enum class EwKind { Add, Sub, Mul, Div };

    struct Node {
        Tensor val;
        Tensor grad;  // empty until touched during backward
        std::function<void(Graph&)> back;
        Param* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const Param*, int> param_nodes_;
    bool backward_done_ = false;

    const Node& node(Var v) const {
        if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) throw std::out_of_range("Graph: invalid Var");
        return nodes_[static_cast<size_t>(v.id)];
    }
    const Tensor& val(Var v) const { return node(v).val; }

    int push(Tensor t) {
        nodes_.push_back(Node{std::move(t), Tensor{}, {}, nullptr});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor& touch(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
        return n.grad;
    }

    template <typename F>
    Var ew_binary(const char* name, Var a, Var b, F f, EwKind kind) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        bool a_scalar = A.is_scalar() && !B.is_scalar();
        bool b_scalar = B.is_scalar() && !A.is_scalar();
        if (!a_scalar && !b_scalar && !A.same_shape(B))
            throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(A.shape) + " vs " +
                                        shape_str(B.shape));
        const Tensor& big = a_scalar ? B : A;
        Tensor out = Tensor::zeros(big.shape);
        for (int i = 0; i < big.numel(); ++i) {
            double x = a_scalar ? A[0] : A[i];
            double y = b_scalar ? B[0] : B[i];
            out[i] = f(x, y);
        }
        int oid = push(std::move(out));
        int aid = a.id, bid = b.id;
        nodes_[oid].back = [aid, bid, oid, a_scalar, b_scalar, kind](Graph& g) {
            const Tensor& go = g.nodes_[oid].grad;
            const Tensor& A2 = g.nodes_[aid].val;
            const Tensor& B2 = g.nodes_[bid].val;
            Tensor& gA = g.touch(aid);
            Tensor& gB = g.touch(bid);
            for (int i = 0; i < go.numel(); ++i) {
                double x = a_scalar ? A2[0] : A2[i];
                double y = b_scalar ? B2[0] : B2[i];
                double da = 0.0, db = 0.0;
                switch (kind) {
                    case EwKind::Add: da = 1.0; db = 1.0; break;
                    case EwKind::Sub: da = 1.0; db = -1.0; break;
                    case EwKind::Mul: da = y; db = x; break;
                    case EwKind::Div: da = 1.0 / y; db = -x / (y * y); break;
                }
                gA[a_scalar ? 0 : i] += go[i] * da;
                gB[b_scalar ? 0 : i] += go[i] * db;
            }
        };
        return Var{oid};
    }
};

/// One gated-recurrent-unit cell. Convention: h = (1-z) . h_prev + z . h~
/// with z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// h~ = tanh(Wh x + Uh (r . h) + bh).
struct GruCell {
    Param* Wz;
    Param* Uz;
    Param* bz;
    Param* Wr;
    Param* Ur;
    Param* br;
    Param* Wh;
    Param* Uh;
    Param* bh;

    int hidden_dim() const { return Wz->value.dim(0); }
    int input_dim() const { return Wz->value.dim(1); }

    static GruCell create(ParamStore& store, const std::string& prefix, int hidden, int input,
                          std::mt19937_64& rng) {
        auto mk = [&](const char* nm, std::vector<int> shape) -> Param* {
            return &store.create(prefix + "/" + nm, glorot_tensor(std::move(shape), rng));
        };
        GruCell c;
        c.Wz = mk("Wz", {hidden, input});
        c.Uz = mk("Uz", {hidden, hidden});
        c.bz = &store.create(prefix + "/bz", Tensor::zeros({hidden}));
        c.Wr = mk("Wr", {hidden, input});
        c.Ur = mk("Ur", {hidden, hidden});
        c.br = &store.create(prefix + "/br", Tensor::zeros({hidden}));
        c.Wh = mk("Wh", {hidden, input});
        c.Uh = mk("Uh", {hidden, hidden});
        c.bh = &store.create(prefix + "/bh", Tensor::zeros({hidden}));
        return c;
    }

    std::vector<Param*> params() const { return {Wz, Uz, bz, Wr, Ur, br, Wh, Uh, bh}; }
};

inline Var gru_step(Graph& g, Var x, Var h_prev, const GruCell& cell) {
    const Tensor& xv = g.value(x);
    const Tensor& hv = g.value(h_prev);
    if (xv.rank() != 1 || xv.dim(0) != cell.input_dim())
        throw std::invalid_argument("gru_step: input shape " + shape_str(xv.shape) + " does not match cell input dim " +
                                    std::to_string(cell.input_dim()));
    if (hv.rank() != 1 || hv.dim(0) != cell.hidden_dim())
        throw std::invalid_argument("gru_step: hidden shape " + shape_str(hv.shape) + " does not match cell hidden dim " +
                                    std::to_string(cell.hidden_dim()));
    Var z = g.sigmoid(g.add(g.add(g.matvec(g.param(*cell.Wz), x), g.matvec(g.param(*cell.Uz), h_prev)), g.param(*cell.bz)));
    Var r = g.sigmoid(g.add(g.add(g.matvec(g.param(*cell.Wr), x), g.matvec(g.param(*cell.Ur), h_prev)), g.param(*cell.br)));
    Var hc = g.tanh_(g.add(g.add(g.matvec(g.param(*cell.Wh), x), g.matvec(g.param(*cell.Uh), g.mul(r, h_prev))),
                           g.param(*cell.bh)));
    return g.add(g.mul(g.one_minus(z), h_prev), g.mul(z, hc));
}

}  // namespace npn
