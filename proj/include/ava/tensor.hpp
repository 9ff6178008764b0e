#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "ava/errors.hpp"

namespace ava {

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // scatters this->grad into parents

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool& debug_checks_flag() {
#ifdef NDEBUG
    thread_local bool enabled = false;
#else
    thread_local bool enabled = true;
#endif
    return enabled;
}

}  // namespace detail

/// Disables gradient recording for the enclosing scope (RAII).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Toggles the post-op NaN/Inf scan (on by default in debug builds).
inline void set_debug_checks(bool on) { detail::debug_checks_flag() = on; }
inline bool debug_checks() { return detail::debug_checks_flag(); }

/// Dense row-major double tensor participating in a define-by-run gradient graph.
/// Copies are shallow: two Tensor values may share the same node.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::Node>()) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeMismatch("Tensor: zero dimension");
            n *= d;
        }
        if (n != data.size())
            throw ShapeMismatch("Tensor: shape/product mismatch (" + std::to_string(n) + " vs " +
                                std::to_string(data.size()) + ")");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
        if (debug_checks()) check_finite("Tensor()");
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->data.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    double item() const {
        if (size() != 1) throw ShapeMismatch("item() on non-scalar tensor");
        return node_->data[0];
    }

    double operator()(std::size_t i, std::size_t j) const {
        return node_->data[i * node_->shape[1] + j];
    }
    double& operator()(std::size_t i, std::size_t j) {
        return node_->data[i * node_->shape[1] + j];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool is_leaf() const { return node_->parents.empty(); }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw Error("grad(): no gradient computed for this tensor");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    /// Value copy cut off from the gradient graph.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    /// Reverse-mode pass from a scalar loss. Populates .grad on every
    /// requires_grad node reachable from it. A second call on the same
    /// loss node throws DoubleBackward.
    void backward() const {
        if (size() != 1) throw NonScalarLoss("backward() requires a scalar loss");
        if (node_->backward_done) throw DoubleBackward("backward() already ran on this loss");
        node_->backward_done = true;

        // Iterative DFS post-order: chains can be thousands of nodes deep.
        std::vector<detail::Node*> topo;
        std::unordered_set<detail::Node*> visited;
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                detail::Node* p = n->parents[next++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                topo.push_back(n);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] = 1.0;
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backward_fn && n->grad.size() == n->data.size()) n->backward_fn(*n);
        }
    }

    void check_finite(const std::string& where) const {
        for (double v : node_->data)
            if (!std::isfinite(v)) throw NonFiniteValue("non-finite value after " + where);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(std::vector<std::size_t> shape, std::vector<double> data,
                                 std::vector<Tensor> inputs,
                                 std::function<void(detail::Node&)> backward_fn,
                                 const char* opname);
};

/// Builds an op output node, wiring parents and the backward closure only
/// when gradients are both enabled and needed.
inline Tensor make_op_result(std::vector<std::size_t> shape, std::vector<double> data,
                             std::vector<Tensor> inputs,
                             std::function<void(detail::Node&)> backward_fn, const char* opname) {
    Tensor out(std::move(shape), std::move(data));
    bool need = false;
    if (grad_enabled())
        for (const Tensor& t : inputs)
            if (t.requires_grad()) need = true;
    if (need) {
        out.node_->requires_grad = true;
        for (const Tensor& t : inputs) out.node_->parents.push_back(t.node());
        out.node_->backward_fn = std::move(backward_fn);
    }
    if (debug_checks()) out.check_finite(opname);
    return out;
}

namespace detail {
inline void accumulate(Node& parent, const std::vector<double>& g) {
    parent.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
}
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeMismatch(std::string(op) + ": shape mismatch");
}
}  // namespace detail

// ---- elementwise ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            detail::accumulate(*n.parents[0], n.grad);
            detail::accumulate(*n.parents[1], n.grad);
        },
        "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            detail::accumulate(*n.parents[0], n.grad);
            auto& p = *n.parents[1];
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] -= n.grad[i];
        },
        "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                pa.grad[i] += n.grad[i] * pb.data[i];
                pb.grad[i] += n.grad[i] * pa.data[i];
            }
        },
        "mul");
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    return make_op_result(
        a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                double inv = 1.0 / pb.data[i];
                pa.grad[i] += n.grad[i] * inv;
                pb.grad[i] -= n.grad[i] * pa.data[i] * inv * inv;
            }
        },
        "div");
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
    return make_op_result(
        a.shape(), std::move(out), {a},
        [](detail::Node& n) { detail::accumulate(*n.parents[0], n.grad); }, "add_scalar");
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return make_op_result(
        a.shape(), std::move(out), {a},
        [c](detail::Node& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
        },
        "mul_scalar");
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    return make_op_result(
        a.shape(), std::move(out), {a},
        [](detail::Node& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                if (p.data[i] > 0.0) p.grad[i] += n.grad[i];
        },
        "relu");
}

/// x - s with s scalar, broadcast over every element of x.
inline Tensor sub_bcast(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw ShapeMismatch("sub_bcast: second argument must be scalar");
    double sv = s.data()[0];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] - sv;
    return make_op_result(
        x.shape(), std::move(out), {x, s},
        [](detail::Node& n) {
            detail::accumulate(*n.parents[0], n.grad);
            auto& ps = *n.parents[1];
            ps.ensure_grad();
            double g = 0.0;
            for (double v : n.grad) g += v;
            ps.grad[0] -= g;
        },
        "sub_bcast");
}

// ---- reductions ----

inline Tensor mean_all(const Tensor& a) {
    double m = std::accumulate(a.data().begin(), a.data().end(), 0.0) / double(a.size());
    std::size_t n = a.size();
    return make_op_result(
        {1}, {m}, {a},
        [n](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            double g = nd.grad[0] / double(n);
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
        },
        "mean_all");
}

inline Tensor sum_all(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    return make_op_result(
        {1}, {s}, {a},
        [](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[0];
        },
        "sum_all");
}

/// Population variance of all elements, built from primitive ops so the
/// gradient comes out of the graph.
inline Tensor variance_all(const Tensor& a) {
    Tensor centered = sub_bcast(a, mean_all(a));
    return mean_all(mul(centered, centered));
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeMismatch("matmul: rank-2 tensors required");
    std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeMismatch("matmul: inner dimensions disagree (" + std::to_string(k) + " vs " +
                            std::to_string(k2) + ")");
    std::vector<double> out(m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* Ci = out.data() + i * n;
        const double* Ai = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            double aip = Ai[p];
            const double* Bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    }
    return make_op_result(
        {m, n}, std::move(out), {a, b},
        [m, k, n](detail::Node& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            const double* G = nd.grad.data();
            const double* A = pa.data.data();
            const double* B = pb.data.data();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* Gi = G + i * n;
                double* dAi = pa.grad.data() + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* Bp = B + p * n;
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                    dAi[p] += s;
                }
            }
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i) {
                const double* Gi = G + i * n;
                const double* Ai = A + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    double aip = Ai[p];
                    double* dBp = pb.grad.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) dBp[j] += aip * Gi[j];
                }
            }
        },
        "matmul");
}

/// Row-stochastic softmax, stabilized by subtracting each row's max.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeMismatch("softmax_rows: rank-2 tensor required");
    std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* xi = x.data().data() + i * n;
        double* yi = out.data() + i * n;
        double mx = *std::max_element(xi, xi + n);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        for (std::size_t j = 0; j < n; ++j) yi[j] /= sum;
    }
    return make_op_result(
        {m, n}, std::move(out), {x},
        [m, n](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = nd.data.data() + i * n;
                const double* g = nd.grad.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
                double* px = p.grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) px[j] += y[j] * (g[j] - dot);
            }
        },
        "softmax_rows");
}

// ---- convolutions ----

/// Dilated causal 1-D convolution. x is [C_in x T], w is [C_out x C_in x K];
/// left zero-padding of (K-1)*dilation keeps the output length at T, so
/// y[t] sees only x[t - i*dilation] for i in [0, K).
inline Tensor conv1d_causal(const Tensor& x, const Tensor& w, std::size_t dilation = 1) {
    if (x.rank() != 2 || w.rank() != 3) throw ShapeMismatch("conv1d_causal: need x[Cin x T], w[Cout x Cin x K]");
    if (dilation < 1) throw ShapeMismatch("conv1d_causal: dilation must be >= 1");
    std::size_t cin = x.dim(0), T = x.dim(1);
    std::size_t cout = w.dim(0), wcin = w.dim(1), K = w.dim(2);
    if (cin != wcin) throw ShapeMismatch("conv1d_causal: channel mismatch");
    std::vector<double> out(cout * T, 0.0);
    const double* X = x.data().data();
    const double* W = w.data().data();
    for (std::size_t co = 0; co < cout; ++co) {
        double* y = out.data() + co * T;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = X + ci * T;
            const double* wk = W + (co * cin + ci) * K;
            for (std::size_t k = 0; k < K; ++k) {
                double wv = wk[k];
                std::size_t off = k * dilation;
                for (std::size_t t = off; t < T; ++t) y[t] += wv * xc[t - off];
            }
        }
    }
    return make_op_result(
        {cout, T}, std::move(out), {x, w},
        [cin, cout, T, K, dilation](detail::Node& nd) {
            auto& px = *nd.parents[0];
            auto& pw = *nd.parents[1];
            px.ensure_grad();
            pw.ensure_grad();
            const double* G = nd.grad.data();
            const double* X = px.data.data();
            const double* W = pw.data.data();
            for (std::size_t co = 0; co < cout; ++co) {
                const double* g = G + co * T;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* xc = X + ci * T;
                    double* dx = px.grad.data() + ci * T;
                    const double* wk = W + (co * cin + ci) * K;
                    double* dw = pw.grad.data() + (co * cin + ci) * K;
                    for (std::size_t k = 0; k < K; ++k) {
                        std::size_t off = k * dilation;
                        double wv = wk[k];
                        double s = 0.0;
                        for (std::size_t t = off; t < T; ++t) {
                            s += g[t] * xc[t - off];
                            dx[t - off] += g[t] * wv;
                        }
                        dw[k] += s;
                    }
                }
            }
        },
        "conv1d_causal");
}

/// 2-D convolution over [N x C x H x W] with odd square kernel and
/// same-padding of K/2. Used by the stand-in visual backbone.
inline Tensor conv2d(const Tensor& x, const Tensor& w) {
    if (x.rank() != 4 || w.rank() != 4) throw ShapeMismatch("conv2d: need x[NxCxHxW], w[CoxCixKxK]");
    std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
    std::size_t Co = w.dim(0), Ci = w.dim(1), K = w.dim(2);
    if (C != Ci || w.dim(3) != K || K % 2 == 0) throw ShapeMismatch("conv2d: bad kernel shape");
    std::ptrdiff_t P = std::ptrdiff_t(K / 2);
    std::vector<double> out(N * Co * H * Wd, 0.0);
    const double* X = x.data().data();
    const double* W = w.data().data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Co; ++co) {
            double* y = out.data() + (n * Co + co) * H * Wd;
            for (std::size_t ci = 0; ci < C; ++ci) {
                const double* xc = X + (n * C + ci) * H * Wd;
                const double* wk = W + (co * C + ci) * K * K;
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        double wv = wk[ky * K + kx];
                        std::ptrdiff_t dy = std::ptrdiff_t(ky) - P, dx = std::ptrdiff_t(kx) - P;
                        std::size_t y0 = std::size_t(std::max<std::ptrdiff_t>(0, -dy));
                        std::size_t y1 = std::size_t(std::min<std::ptrdiff_t>(H, std::ptrdiff_t(H) - dy));
                        std::size_t x0 = std::size_t(std::max<std::ptrdiff_t>(0, -dx));
                        std::size_t x1 = std::size_t(std::min<std::ptrdiff_t>(Wd, std::ptrdiff_t(Wd) - dx));
                        for (std::size_t iy = y0; iy < y1; ++iy) {
                            double* yr = y + iy * Wd;
                            const double* xr = xc + (iy + dy) * Wd + dx;
                            for (std::size_t ix = x0; ix < x1; ++ix) yr[ix] += wv * xr[ix];
                        }
                    }
            }
        }
    return make_op_result(
        {N, Co, H, Wd}, std::move(out), {x, w},
        [N, C, Co, H, Wd, K, P](detail::Node& nd) {
            auto& px = *nd.parents[0];
            auto& pw = *nd.parents[1];
            px.ensure_grad();
            pw.ensure_grad();
            const double* G = nd.grad.data();
            const double* X = px.data.data();
            const double* W = pw.data.data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t co = 0; co < Co; ++co) {
                    const double* g = G + (n * Co + co) * H * Wd;
                    for (std::size_t ci = 0; ci < C; ++ci) {
                        const double* xc = X + (n * C + ci) * H * Wd;
                        double* dxc = px.grad.data() + (n * C + ci) * H * Wd;
                        const double* wk = W + (co * C + ci) * K * K;
                        double* dwk = pw.grad.data() + (co * C + ci) * K * K;
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                double wv = wk[ky * K + kx];
                                double ws = 0.0;
                                std::ptrdiff_t dy = std::ptrdiff_t(ky) - P, dx = std::ptrdiff_t(kx) - P;
                                std::size_t y0 = std::size_t(std::max<std::ptrdiff_t>(0, -dy));
                                std::size_t y1 = std::size_t(std::min<std::ptrdiff_t>(H, std::ptrdiff_t(H) - dy));
                                std::size_t x0 = std::size_t(std::max<std::ptrdiff_t>(0, -dx));
                                std::size_t x1 = std::size_t(std::min<std::ptrdiff_t>(Wd, std::ptrdiff_t(Wd) - dx));
                                for (std::size_t iy = y0; iy < y1; ++iy) {
                                    const double* gr = g + iy * Wd;
                                    const double* xr = xc + (iy + dy) * Wd + dx;
                                    double* dxr = dxc + (iy + dy) * Wd + dx;
                                    for (std::size_t ix = x0; ix < x1; ++ix) {
                                        ws += gr[ix] * xr[ix];
                                        dxr[ix] += gr[ix] * wv;
                                    }
                                }
                                dwk[ky * K + kx] += ws;
                            }
                    }
                }
        },
        "conv2d");
}

/// 2x2 max pooling with stride 2 over [N x C x H x W]; H and W must be even.
inline Tensor maxpool2(const Tensor& x) {
    if (x.rank() != 4) throw ShapeMismatch("maxpool2: rank-4 tensor required");
    std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw ShapeMismatch("maxpool2: H and W must be even");
    std::size_t Ho = H / 2, Wo = W / 2;
    std::vector<double> out(N * C * Ho * Wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const double* X = x.data().data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* xc = X + nc * H * W;
        double* y = out.data() + nc * Ho * Wo;
        std::size_t* am = argmax->data() + nc * Ho * Wo;
        for (std::size_t iy = 0; iy < Ho; ++iy)
            for (std::size_t ix = 0; ix < Wo; ++ix) {
                std::size_t base = (2 * iy) * W + 2 * ix;
                std::size_t best = base;
                double bv = xc[base];
                for (std::size_t c : {base + 1, base + W, base + W + 1})
                    if (xc[c] > bv) {
                        bv = xc[c];
                        best = c;
                    }
                y[iy * Wo + ix] = bv;
                am[iy * Wo + ix] = nc * H * W + best;
            }
    }
    return make_op_result(
        {N, C, Ho, Wo}, std::move(out), {x},
        [argmax](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[(*argmax)[i]] += nd.grad[i];
        },
        "maxpool2");
}

/// Spatial mean over [N x C x H x W] -> [N x C].
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeMismatch("global_avg_pool: rank-4 tensor required");
    std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(N * C, 0.0);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* xc = x.data().data() + nc * HW;
        double s = 0.0;
        for (std::size_t i = 0; i < HW; ++i) s += xc[i];
        out[nc] = s / double(HW);
    }
    return make_op_result(
        {N, C}, std::move(out), {x},
        [HW](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t nc = 0; nc < nd.grad.size(); ++nc) {
                double g = nd.grad[nc] / double(HW);
                double* d = p.grad.data() + nc * HW;
                for (std::size_t i = 0; i < HW; ++i) d[i] += g;
            }
        },
        "global_avg_pool");
}

// ---- shape ops ----

/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeMismatch("concat: no inputs");
    if (axis > 1) throw ShapeMismatch("concat: axis must be 0 or 1");
    for (const Tensor& t : parts)
        if (t.rank() != 2) throw ShapeMismatch("concat: rank-2 tensors required");
    std::size_t other = axis == 0 ? 1 : 0;
    std::size_t common = parts[0].dim(other);
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        if (t.dim(other) != common) throw ShapeMismatch("concat: non-concat dimension mismatch");
        total += t.dim(axis);
    }
    std::size_t rows = axis == 0 ? total : common;
    std::size_t cols = axis == 0 ? common : total;
    std::vector<double> out(rows * cols);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Tensor& t : parts) {
        offsets.push_back(off);
        if (axis == 0) {
            std::copy(t.data().begin(), t.data().end(), out.begin() + off * cols);
            off += t.dim(0);
        } else {
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(t.data().begin() + r * t.dim(1), t.data().begin() + (r + 1) * t.dim(1),
                          out.begin() + r * cols + off);
            off += t.dim(1);
        }
    }
    std::vector<std::size_t> widths;
    for (const Tensor& t : parts) widths.push_back(t.dim(axis));
    return make_op_result(
        {rows, cols}, std::move(out), parts,
        [axis, rows, cols, offsets, widths](detail::Node& nd) {
            for (std::size_t pi = 0; pi < nd.parents.size(); ++pi) {
                auto& p = *nd.parents[pi];
                p.ensure_grad();
                if (axis == 0) {
                    std::size_t start = offsets[pi] * cols;
                    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += nd.grad[start + i];
                } else {
                    std::size_t w = widths[pi];
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                            p.grad[r * w + c] += nd.grad[r * cols + offsets[pi] + c];
                }
            }
        },
        "concat");
}

inline Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeMismatch("transpose: rank-2 tensor required");
    std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.data()[i * n + j];
    return make_op_result(
        {n, m}, std::move(out), {x},
        [m, n](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += nd.grad[j * m + i];
        },
        "transpose");
}

/// Rows [start, start+len) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.rank() != 2) throw ShapeMismatch("slice_rows: rank-2 tensor required");
    std::size_t cols = x.dim(1);
    if (start + len > x.dim(0)) throw ShapeMismatch("slice_rows: range out of bounds");
    std::vector<double> out(x.data().begin() + start * cols, x.data().begin() + (start + len) * cols);
    return make_op_result(
        {len, cols}, std::move(out), {x},
        [start, cols](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            std::size_t off = start * cols;
            for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[off + i] += nd.grad[i];
        },
        "slice_rows");
}

/// Columns [start, start+len) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.rank() != 2) throw ShapeMismatch("slice_cols: rank-2 tensor required");
    std::size_t rows = x.dim(0), cols = x.dim(1);
    if (start + len > cols) throw ShapeMismatch("slice_cols: range out of bounds");
    std::vector<double> out(rows * len);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < len; ++c) out[r * len + c] = x.data()[r * cols + start + c];
    return make_op_result(
        {rows, len}, std::move(out), {x},
        [start, rows, cols, len](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < len; ++c)
                    p.grad[r * cols + start + c] += nd.grad[r * len + c];
        },
        "slice_cols");
}

/// x[C x T] + b[C] broadcast over the time axis (per-channel conv bias).
inline Tensor add_colvec(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(0))
        throw ShapeMismatch("add_colvec: need x[C x T], b[C]");
    std::size_t C = x.dim(0), T = x.dim(1);
    std::vector<double> out(x.data());
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) out[c * T + t] += b.data()[c];
    return make_op_result(
        {C, T}, std::move(out), {x, b},
        [C, T](detail::Node& nd) {
            detail::accumulate(*nd.parents[0], nd.grad);
            auto& pb = *nd.parents[1];
            pb.ensure_grad();
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) pb.grad[c] += nd.grad[c * T + t];
        },
        "add_colvec");
}

/// Same data, new shape (element count must match). Gradient passes through.
inline Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (n != x.size()) throw ShapeMismatch("reshape: element count mismatch");
    return make_op_result(
        std::move(shape), x.data(), {x},
        [](detail::Node& nd) { detail::accumulate(*nd.parents[0], nd.grad); }, "reshape");
}

/// x[T x d] + b[d] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeMismatch("add_rowvec: need x[T x d], b[d]");
    std::size_t T = x.dim(0), d = x.dim(1);
    std::vector<double> out(x.data());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) out[t * d + j] += b.data()[j];
    return make_op_result(
        {T, d}, std::move(out), {x, b},
        [T, d](detail::Node& nd) {
            detail::accumulate(*nd.parents[0], nd.grad);
            auto& pb = *nd.parents[1];
            pb.ensure_grad();
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t j = 0; j < d; ++j) pb.grad[j] += nd.grad[t * d + j];
        },
        "add_rowvec");
}

/// Affine map x[T x in] * W[in x out] + b[out].
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

/// Per-row layer normalization over the feature axis, with learnable gain
/// and bias of width d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() != 2) throw ShapeMismatch("layer_norm: rank-2 tensor required");
    std::size_t T = x.dim(0), d = x.dim(1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeMismatch("layer_norm: gain/bias width mismatch");
    std::vector<double> out(T * d);
    auto stats = std::make_shared<std::vector<double>>(2 * T);  // mean, inv_std per row
    for (std::size_t t = 0; t < T; ++t) {
        const double* xr = x.data().data() + t * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += xr[j];
        m /= double(d);
        double v = 0.0;
        for (std::size_t j = 0; j < d; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= double(d);
        double istd = 1.0 / std::sqrt(v + eps);
        (*stats)[2 * t] = m;
        (*stats)[2 * t + 1] = istd;
        for (std::size_t j = 0; j < d; ++j)
            out[t * d + j] = (xr[j] - m) * istd * gain.data()[j] + bias.data()[j];
    }
    return make_op_result(
        {T, d}, std::move(out), {x, gain, bias},
        [T, d, stats](detail::Node& nd) {
            auto& px = *nd.parents[0];
            auto& pg = *nd.parents[1];
            auto& pb = *nd.parents[2];
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            for (std::size_t t = 0; t < T; ++t) {
                double m = (*stats)[2 * t], istd = (*stats)[2 * t + 1];
                const double* xr = px.data.data() + t * d;
                const double* g = nd.grad.data() + t * d;
                double sum_gh = 0.0, sum_ghx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (xr[j] - m) * istd;
                    double gh = g[j] * pg.data[j];
                    pg.grad[j] += g[j] * xhat;
                    pb.grad[j] += g[j];
                    sum_gh += gh;
                    sum_ghx += gh * xhat;
                }
                double* dx = px.grad.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) {
                    double xhat = (xr[j] - m) * istd;
                    double gh = g[j] * pg.data[j];
                    dx[j] += istd * (gh - sum_gh / double(d) - xhat * sum_ghx / double(d));
                }
            }
        },
        "layer_norm");
}

/// Inverted dropout with a caller-supplied mask decision function; the mask
/// is frozen at call time so replays are deterministic.
inline Tensor dropout(const Tensor& x, double rate, std::function<double()> uniform01) {
    if (rate <= 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    double scale = 1.0 / (1.0 - rate);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        (*mask)[i] = uniform01() < rate ? 0.0 : scale;
        out[i] = x.data()[i] * (*mask)[i];
    }
    return make_op_result(
        x.shape(), std::move(out), {x},
        [mask](detail::Node& nd) {
            auto& p = *nd.parents[0];
            p.ensure_grad();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) p.grad[i] += nd.grad[i] * (*mask)[i];
        },
        "dropout");
}

}  // namespace ava
