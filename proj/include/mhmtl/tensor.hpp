// SPDX-License-Identifier: Apache-2.0
//
// Dense n-d tensor with reverse-mode automatic differentiation.
//
// Design: a Tensor<T> is a cheap handle onto a heap node holding the value,
// an optional gradient accumulator, and (for op outputs) the parent nodes
// plus a backward closure. backward() on a scalar loss topologically sorts
// the reachable graph and replays the chain rule once per node. Leaf
// gradients accumulate with += across backward calls; interior gradients are
// recomputed fresh each call.
//
// Layout is N,C,H,W row-major throughout. T is float for training and
// double for gradient checks.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mhmtl/common.hpp"

namespace mhmtl {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first needed; same length as data once allocated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // empty for leaves

    bool is_leaf() const { return !backward_fn; }
};

// Forward-op results must stay finite when inputs are finite. The check is
// active in debug builds (or when forced with MHMTL_CHECK_FINITE).
#if !defined(NDEBUG) || defined(MHMTL_CHECK_FINITE)
template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            throw ContractError(std::string("non-finite value produced by op '") + op + "'");
    }
}
#else
template <typename T>
inline void check_finite(const std::vector<T>&, const char*) {}
#endif

}  // namespace detail

/// Thread-local autograd switch; NoGradGuard disables graph recording in a scope.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

class NoGradGuard {
public:
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("from_data: extents " + shape_str(shape) + " do not match data length " +
                             std::to_string(data.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    /// Uniform(lo, hi) fill from the given engine; draws in flat index order.
    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng, bool requires_grad = false) {
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        std::vector<T> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<T>(dist(rng));
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->data.size(); }

    std::vector<T>& data() { return n_->data; }
    const std::vector<T>& data() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    /// Only meaningful on leaves, before the tensor is used in ops.
    void set_requires_grad(bool rg) {
        if (!n_->is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
        n_->requires_grad = rg;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<T>& grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->data.size(), T(0));
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        if (n_->grad.empty()) throw ContractError("grad accessed before backward");
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }
    /// Drops the grad buffer entirely; has_grad() becomes false until the
    /// next backward sweep reaches this tensor.
    void clear_grad() { n_->grad.clear(); }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor");
        return n_->data[0];
    }

    /// Reverse-mode sweep from this scalar. Leaf grads accumulate (+=);
    /// calling twice without zero_grad doubles them.
    void backward() const;

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

template <typename T>
inline void topo_visit(Node<T>* root, std::vector<Node<T>*>& order) {
    // Iterative post-order DFS over parents; each node appears once, after
    // all nodes it feeds into have been emitted when iterated in reverse.
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

template <typename T>
inline void accumulate(Node<T>& parent, const T* g, std::size_t n) {
    if (!parent.requires_grad) return;
    if (parent.grad.empty()) parent.grad.assign(parent.data.size(), T(0));
    assert(parent.grad.size() == n);
    T* dst = parent.grad.data();
    for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace detail

template <typename T>
void Tensor<T>::backward() const {
    if (!n_) throw ContractError("backward on an undefined tensor");
    if (numel() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));
    if (!n_->requires_grad) throw ContractError("backward on a tensor that does not require grad");

    std::vector<Node*> order;
    detail::topo_visit(n_.get(), order);

    // Interior grads are scratch: reset them every sweep. Leaf grads persist.
    for (Node* node : order) {
        if (!node->is_leaf())
            node->grad.assign(node->data.size(), T(0));
        else if (node->requires_grad && node->grad.empty())
            node->grad.assign(node->data.size(), T(0));
    }
    n_->grad[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// Op construction helper
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline Tensor<T> make_op_result(Shape shape, std::vector<T> data, const char* op_name,
                                std::vector<Tensor<T>> inputs,
                                std::function<void(Node<T>&)> backward_fn) {
    check_finite(data, op_name);
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool rg = false;
    if (grad_mode()) {
        for (const auto& in : inputs) rg = rg || in.requires_grad();
    }
    if (rg) {
        n->requires_grad = true;
        n->parents.reserve(inputs.size());
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    return detail::make_op_result<T>(a.shape(), std::move(out), "add", {a, b}, [](detail::Node<T>& self) {
        detail::accumulate(*self.parents[0], self.grad.data(), self.grad.size());
        detail::accumulate(*self.parents[1], self.grad.data(), self.grad.size());
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    return detail::make_op_result<T>(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node<T>& self) {
        const std::size_t m = self.grad.size();
        auto& pa_ = *self.parents[0];
        auto& pb_ = *self.parents[1];
        if (pa_.requires_grad) {
            std::vector<T> g(m);
            for (std::size_t i = 0; i < m; ++i) g[i] = self.grad[i] * pb_.data[i];
            detail::accumulate(pa_, g.data(), m);
        }
        if (pb_.requires_grad) {
            std::vector<T> g(m);
            for (std::size_t i = 0; i < m; ++i) g[i] = self.grad[i] * pa_.data[i];
            detail::accumulate(pb_, g.data(), m);
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * s;
    return detail::make_op_result<T>(a.shape(), std::move(out), "scale", {a}, [s](detail::Node<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * s;
        detail::accumulate(*self.parents[0], g.data(), g.size());
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    return detail::make_op_result<T>(a.shape(), std::move(out), "relu", {a}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = p.data[i] > T(0) ? self.grad[i] : T(0);
        detail::accumulate(p, g.data(), g.size());
    });
}

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_scalar(a.data()[i]);
    return detail::make_op_result<T>(a.shape(), std::move(out), "sigmoid", {a}, [](detail::Node<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T s = self.data[i];
            g[i] = self.grad[i] * s * (T(1) - s);
        }
        detail::accumulate(*self.parents[0], g.data(), g.size());
    });
}

inline constexpr double kLogClampEps = 1e-12;

/// log with inputs clamped at 1e-12 so downstream cross-entropy is total.
/// In the clamped region the output is constant, so the gradient there is 0.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T eps = static_cast<T>(kLogClampEps);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::log(std::max(a.data()[i], eps));
    return detail::make_op_result<T>(a.shape(), std::move(out), "log", {a}, [eps](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = p.data[i] > eps ? self.grad[i] / p.data[i] : T(0);
        detail::accumulate(p, g.data(), g.size());
    });
}

/// Softmax along one axis; other axes index independent distributions.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("softmax: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
    const std::size_t k = static_cast<std::size_t>(s[axis]);

    std::vector<T> out(a.numel());
    const T* in = a.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * k * inner + i;
            T mx = in[base];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, in[base + c * inner]);
            T sum = T(0);
            for (std::size_t c = 0; c < k; ++c) {
                const T e = std::exp(in[base + c * inner] - mx);
                out[base + c * inner] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < k; ++c) out[base + c * inner] /= sum;
        }
    }
    return detail::make_op_result<T>(s, std::move(out), "softmax", {a},
                                     [outer, inner, k](detail::Node<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * k * inner + i;
                T dot = T(0);
                for (std::size_t c = 0; c < k; ++c)
                    dot += self.grad[base + c * inner] * self.data[base + c * inner];
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t idx = base + c * inner;
                    g[idx] = self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
        detail::accumulate(*self.parents[0], g.data(), g.size());
    });
}

/// Inverted dropout: at train time zero each element with probability `rate`
/// and scale survivors by 1/(1-rate); identity at eval time. rate==0 draws
/// nothing from the engine.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, bool train, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0,1)");
    if (!train || rate == 0.0) {
        // Identity pass-through still records a node so the graph stays uniform.
        std::vector<T> out(a.data());
        return detail::make_op_result<T>(a.shape(), std::move(out), "dropout", {a},
                                         [](detail::Node<T>& self) {
            detail::accumulate(*self.parents[0], self.grad.data(), self.grad.size());
        });
    }
    const std::size_t n = a.numel();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) mask[i] = u(rng) < rate ? T(0) : keep_scale;
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * mask[i];
    return detail::make_op_result<T>(a.shape(), std::move(out), "dropout", {a},
                                     [mask = std::move(mask)](detail::Node<T>& self) {
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * mask[i];
        detail::accumulate(*self.parents[0], g.data(), g.size());
    });
}

/// y[n,o] = sum_i x[n,i] * w[o,i] + b[o]   (fully connected projection)
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("affine: expected x[N,I], w[O,I], b[O]");
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in || b.dim(0) != out_dim)
        throw ShapeError("affine: inner extents mismatch x" + shape_str(x.shape()) + " w" +
                         shape_str(w.shape()) + " b" + shape_str(b.shape()));

    std::vector<T> y(static_cast<std::size_t>(n) * out_dim);
    const T* px = x.data().data();
    const T* pw = w.data().data();
    const T* pb = b.data().data();
    for (int r = 0; r < n; ++r) {
        for (int o = 0; o < out_dim; ++o) {
            T acc = pb[o];
            const T* xr = px + static_cast<std::size_t>(r) * in;
            const T* wr = pw + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            y[static_cast<std::size_t>(r) * out_dim + o] = acc;
        }
    }
    return detail::make_op_result<T>({n, out_dim}, std::move(y), "affine", {x, w, b},
                                     [n, in, out_dim](detail::Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const T* g = self.grad.data();
        if (xn.requires_grad) {
            std::vector<T> gx(static_cast<std::size_t>(n) * in, T(0));
            for (int r = 0; r < n; ++r)
                for (int o = 0; o < out_dim; ++o) {
                    const T go = g[static_cast<std::size_t>(r) * out_dim + o];
                    const T* wr = wn.data.data() + static_cast<std::size_t>(o) * in;
                    T* gxr = gx.data() + static_cast<std::size_t>(r) * in;
                    for (int i = 0; i < in; ++i) gxr[i] += go * wr[i];
                }
            detail::accumulate(xn, gx.data(), gx.size());
        }
        if (wn.requires_grad) {
            std::vector<T> gw(static_cast<std::size_t>(out_dim) * in, T(0));
            for (int r = 0; r < n; ++r)
                for (int o = 0; o < out_dim; ++o) {
                    const T go = g[static_cast<std::size_t>(r) * out_dim + o];
                    const T* xr = xn.data.data() + static_cast<std::size_t>(r) * in;
                    T* gwr = gw.data() + static_cast<std::size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gwr[i] += go * xr[i];
                }
            detail::accumulate(wn, gw.data(), gw.size());
        }
        if (bn.requires_grad) {
            std::vector<T> gb(static_cast<std::size_t>(out_dim), T(0));
            for (int r = 0; r < n; ++r)
                for (int o = 0; o < out_dim; ++o) gb[o] += g[static_cast<std::size_t>(r) * out_dim + o];
            detail::accumulate(bn, gb.data(), gb.size());
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions and channel plumbing
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (const T v : a.data()) acc += v;
    return detail::make_op_result<T>({1}, {acc}, "sum", {a}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(p.data.size(), self.grad[0]);
        detail::accumulate(p, g.data(), g.size());
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const T inv = T(1) / static_cast<T>(a.numel());
    T acc = T(0);
    for (const T v : a.data()) acc += v;
    acc *= inv;
    return detail::make_op_result<T>({1}, {acc}, "mean", {a}, [inv](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        std::vector<T> g(p.data.size(), self.grad[0] * inv);
        detail::accumulate(p, g.data(), g.size());
    });
}

/// Channels [c0, c1) of an N,C,H,W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int c1) {
    if (a.rank() != 4) throw ShapeError("slice_channels: expected N,C,H,W");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_channels: bad channel range");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int kc = c1 - c0;
    std::vector<T> out(static_cast<std::size_t>(n) * kc * plane);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < kc; ++ch)
            std::copy_n(a.data().data() + ((static_cast<std::size_t>(b) * c + c0 + ch) * plane), plane,
                        out.data() + ((static_cast<std::size_t>(b) * kc + ch) * plane));
    return detail::make_op_result<T>({n, kc, h, w}, std::move(out), "slice_channels", {a},
                                     [c, c0, kc, plane, n](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        std::vector<T> g(p.data.size(), T(0));
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < kc; ++ch)
                std::copy_n(self.grad.data() + ((static_cast<std::size_t>(b) * kc + ch) * plane), plane,
                            g.data() + ((static_cast<std::size_t>(b) * c + c0 + ch) * plane));
        detail::accumulate(p, g.data(), g.size());
    });
}

/// Concatenation along the channel axis of two N,C,H,W tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 4 || b.rank() != 4) throw ShapeError("concat_channels: expected N,C,H,W");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: non-channel extents differ");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> out(static_cast<std::size_t>(n) * (ca + cb) * plane);
    for (int bi = 0; bi < n; ++bi) {
        std::copy_n(a.data().data() + static_cast<std::size_t>(bi) * ca * plane, ca * plane,
                    out.data() + static_cast<std::size_t>(bi) * (ca + cb) * plane);
        std::copy_n(b.data().data() + static_cast<std::size_t>(bi) * cb * plane, cb * plane,
                    out.data() + static_cast<std::size_t>(bi) * (ca + cb) * plane + ca * plane);
    }
    return detail::make_op_result<T>({n, ca + cb, h, w}, std::move(out), "concat_channels", {a, b},
                                     [n, ca, cb, plane](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            std::vector<T> g(pa.data.size());
            for (int bi = 0; bi < n; ++bi)
                std::copy_n(self.grad.data() + static_cast<std::size_t>(bi) * (ca + cb) * plane, ca * plane,
                            g.data() + static_cast<std::size_t>(bi) * ca * plane);
            detail::accumulate(pa, g.data(), g.size());
        }
        if (pb.requires_grad) {
            std::vector<T> g(pb.data.size());
            for (int bi = 0; bi < n; ++bi)
                std::copy_n(self.grad.data() + static_cast<std::size_t>(bi) * (ca + cb) * plane + ca * plane,
                            cb * plane, g.data() + static_cast<std::size_t>(bi) * cb * plane);
            detail::accumulate(pb, g.data(), g.size());
        }
    });
}

}  // namespace mhmtl
