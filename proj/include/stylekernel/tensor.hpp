#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A TensorT<S> is a cheap handle to a shared node holding the value buffer,
// an optional gradient buffer, and the tape edge to its inputs. Operations
// are free functions that record a backward closure when gradients are
// enabled and any input requires them. Buffers are never mutated by
// operations; in-place writes through data() are reserved for leaves
// (parameter updates, finite-difference probing).
//
// Feature maps are rank-3 [H, W, C] with channels fastest. Matrices are
// rank-2 [rows, cols].

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sk {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline void check(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// Gradient recording is on by default; NoGrad suspends it for a scope.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward_fn;
    const char* op = "leaf";

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), S(0));
    }
};

template <typename S>
class TensorT {
public:
    using Node = TensorNode<S>;
    using NodePtr = std::shared_ptr<Node>;

    TensorT() = default;
    explicit TensorT(NodePtr n) : n_(std::move(n)) {}

    static TensorT zeros(Shape shape) { return full(std::move(shape), S(0)); }

    static TensorT full(Shape shape, S value) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data.assign(static_cast<std::size_t>(shape_numel(n->shape)), value);
        return TensorT(std::move(n));
    }

    static TensorT from(Shape shape, std::vector<S> values) {
        check(shape_numel(shape) == static_cast<std::int64_t>(values.size()),
              "tensor: " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                  " values");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return TensorT(std::move(n));
    }

    static TensorT scalar(S value) { return full({}, value); }

    template <typename Rng>
    static TensorT randn(Shape shape, Rng& rng, S stddev = S(1)) {
        TensorT t = zeros(std::move(shape));
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : t.data()) v = static_cast<S>(dist(rng)) * stddev;
        return t;
    }

    template <typename Rng>
    static TensorT uniform(Shape shape, Rng& rng, S lo = S(0), S hi = S(1)) {
        TensorT t = zeros(std::move(shape));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                    static_cast<double>(hi));
        for (auto& v : t.data()) v = static_cast<S>(dist(rng));
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return n_->numel(); }

    std::vector<S>& data() { return n_->data; }
    const std::vector<S>& data() const { return n_->data; }

    S value() const {
        check(numel() == 1, "value(): tensor " + shape_str(shape()) + " is not a scalar");
        return n_->data[0];
    }

    S at(std::initializer_list<int> idx) const {
        check(static_cast<int>(idx.size()) == rank(), "at(): index rank mismatch");
        std::int64_t off = 0;
        int d = 0;
        for (int i : idx) {
            off = off * dim(d) + i;
            ++d;
        }
        return n_->data[static_cast<std::size_t>(off)];
    }

    TensorT& set_requires_grad(bool v) {
        n_->requires_grad = v;
        return *this;
    }
    bool requires_grad() const { return n_->requires_grad; }

    // Gradient of the last backward pass; zeros if the leaf was not reached.
    std::vector<S> grad() const {
        if (n_->grad.empty()) return std::vector<S>(n_->data.size(), S(0));
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->data.size(), S(0)); }

    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = n_->shape;
        n->data = n_->data;
        return TensorT(std::move(n));
    }

    TensorT clone() const { return detach(); }

    const NodePtr& node() const { return n_; }

private:
    NodePtr n_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

// Builds the result node; attaches tape edges only when recording applies.
template <typename S>
TensorT<S> make_op(Shape shape, std::vector<S> data, const char* op,
                   std::vector<std::shared_ptr<TensorNode<S>>> parents,
                   std::function<void(TensorNode<S>&)> backward_fn) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    bool track = false;
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p->requires_grad) track = true;
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return TensorT<S>(std::move(n));
}

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar root. Visits each recorded node exactly
// once in reverse topological order; gradients accumulate additively over
// fan-out into every reachable leaf that requires grad.
template <typename S>
void backward(const TensorT<S>& root) {
    check(root.numel() == 1, "backward: root " + shape_str(root.shape()) + " is not a scalar");
    auto* rn = root.node().get();
    if (!rn->requires_grad) return;

    // Iterative post-order DFS over the recorded subgraph; the reversed order
    // is a topological order, so every consumer runs before its inputs.
    std::vector<TensorNode<S>*> order;
    std::vector<std::pair<TensorNode<S>*, std::size_t>> stack;
    std::unordered_set<TensorNode<S>*> seen;
    stack.push_back({rn, 0});
    seen.insert(rn);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<S>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    rn->ensure_grad();
    rn->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

// Shapes must be equal, or one operand must be a single-element tensor.
template <typename S>
void binary_shapes(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() == b.shape()) return;
    if (a.numel() == 1 || b.numel() == 1) return;
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

template <typename S>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b, const char* name,
                     S (*fwd)(S, S), S (*dfa)(S, S, S), S (*dfb)(S, S, S)) {
    binary_shapes(a, b, name);
    const bool a_scalar = a.numel() == 1 && b.numel() != 1;
    const bool b_scalar = b.numel() == 1 && a.numel() != 1;
    const Shape& out_shape = b_scalar || a.numel() >= b.numel() ? a.shape() : b.shape();
    const std::size_t n = static_cast<std::size_t>(shape_numel(out_shape));
    std::vector<S> out(n);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = fwd(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);

    auto an = a.node();
    auto bn = b.node();
    return make_op<S>(
        out_shape, std::move(out), name, {an, bn},
        [an, bn, a_scalar, b_scalar, dfa, dfb](TensorNode<S>& o) {
            const std::size_t n = o.data.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    S av = an->data[a_scalar ? 0 : i];
                    S bv = bn->data[b_scalar ? 0 : i];
                    an->grad[a_scalar ? 0 : i] += o.grad[i] * dfa(av, bv, o.data[i]);
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    S av = an->data[a_scalar ? 0 : i];
                    S bv = bn->data[b_scalar ? 0 : i];
                    bn->grad[b_scalar ? 0 : i] += o.grad[i] * dfb(av, bv, o.data[i]);
                }
            }
        });
}

template <typename S>
TensorT<S> unary_op(const TensorT<S>& a, const char* name, S (*fwd)(S),
                    S (*dfx)(S, S)) {
    const std::size_t n = static_cast<std::size_t>(a.numel());
    std::vector<S> out(n);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
    auto an = a.node();
    return make_op<S>(a.shape(), std::move(out), name, {an},
                      [an, dfx](TensorNode<S>& o) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < o.data.size(); ++i)
                              an->grad[i] += o.grad[i] * dfx(an->data[i], o.data[i]);
                      });
}

}  // namespace detail

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        a, b, "add", [](S x, S y) { return x + y; }, [](S, S, S) { return S(1); },
        [](S, S, S) { return S(1); });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        a, b, "sub", [](S x, S y) { return x - y; }, [](S, S, S) { return S(1); },
        [](S, S, S) { return S(-1); });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        a, b, "mul", [](S x, S y) { return x * y; }, [](S, S y, S) { return y; },
        [](S x, S, S) { return x; });
}

template <typename S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        a, b, "div", [](S x, S y) { return x / y; }, [](S, S y, S) { return S(1) / y; },
        [](S x, S y, S) { return -x / (y * y); });
}

template <typename S>
TensorT<S> maximum(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_op<S>(
        a, b, "maximum", [](S x, S y) { return x > y ? x : y; },
        [](S x, S y, S) { return x >= y ? S(1) : S(0); },
        [](S x, S y, S) { return x >= y ? S(0) : S(1); });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, S s) {
    return add(a, TensorT<S>::scalar(s));
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, S s) {
    return sub(a, TensorT<S>::scalar(s));
}

template <typename S>
TensorT<S> sub(S s, const TensorT<S>& a) {
    return sub(TensorT<S>::scalar(s), a);
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, S s) {
    return mul(a, TensorT<S>::scalar(s));
}

template <typename S>
TensorT<S> div(const TensorT<S>& a, S s) {
    return div(a, TensorT<S>::scalar(s));
}

template <typename S>
TensorT<S> neg(const TensorT<S>& a) {
    return mul(a, S(-1));
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
    return detail::unary_op<S>(
        a, "relu", [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
TensorT<S> tanh(const TensorT<S>& a) {
    return detail::unary_op<S>(
        a, "tanh", [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
TensorT<S> exp(const TensorT<S>& a) {
    return detail::unary_op<S>(
        a, "exp", [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

// 1 for strictly positive input, 0 otherwise; gradient defined as zero.
template <typename S>
TensorT<S> sign(const TensorT<S>& a) {
    return detail::unary_op<S>(
        a, "sign", [](S x) { return x > S(0) ? S(1) : S(0); }, [](S, S) { return S(0); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
    S acc = 0;
    for (S v : a.data()) acc += v;
    auto an = a.node();
    return detail::make_op<S>({}, {acc}, "sum", {an}, [an](TensorNode<S>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (auto& g : an->grad) g += o.grad[0];
    });
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
    const S inv = S(1) / static_cast<S>(a.numel());
    S acc = 0;
    for (S v : a.data()) acc += v;
    acc *= inv;
    auto an = a.node();
    return detail::make_op<S>({}, {acc}, "mean", {an}, [an, inv](TensorNode<S>& o) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (auto& g : an->grad) g += o.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
    check(shape_numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) +
                                               " cannot become " + shape_str(shape));
    auto an = a.node();
    return detail::make_op<S>(std::move(shape), a.data(), "reshape", {an},
                              [an](TensorNode<S>& o) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  for (std::size_t i = 0; i < o.data.size(); ++i)
                                      an->grad[i] += o.grad[i];
                              });
}

// Channel slice of an [H, W, C] map: keeps channels [c0, c1).
template <typename S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int c1) {
    check(x.rank() == 3, "slice_channels: expected rank-3, got " + shape_str(x.shape()));
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    check(0 <= c0 && c0 < c1 && c1 <= C,
          "slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
              ") out of " + std::to_string(C) + " channels");
    const int Cs = c1 - c0;
    std::vector<S> out(static_cast<std::size_t>(H) * W * Cs);
    const auto& xd = x.data();
    for (int p = 0; p < H * W; ++p)
        std::copy(xd.begin() + static_cast<std::size_t>(p) * C + c0,
                  xd.begin() + static_cast<std::size_t>(p) * C + c1,
                  out.begin() + static_cast<std::size_t>(p) * Cs);
    auto xn = x.node();
    return detail::make_op<S>({H, W, Cs}, std::move(out), "slice_channels", {xn},
                              [xn, C, c0, Cs, H, W](TensorNode<S>& o) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (int p = 0; p < H * W; ++p)
                                      for (int c = 0; c < Cs; ++c)
                                          xn->grad[static_cast<std::size_t>(p) * C + c0 + c] +=
                                              o.grad[static_cast<std::size_t>(p) * Cs + c];
                              });
}

// Concatenates [H, W, C_i] maps along the channel axis.
template <typename S>
TensorT<S> concat_channels(const std::vector<TensorT<S>>& parts) {
    check(!parts.empty(), "concat_channels: empty input");
    const int H = parts[0].dim(0), W = parts[0].dim(1);
    int C = 0;
    for (const auto& p : parts) {
        check(p.rank() == 3 && p.dim(0) == H && p.dim(1) == W,
              "concat_channels: spatial mismatch " + shape_str(p.shape()));
        C += p.dim(2);
    }
    std::vector<S> out(static_cast<std::size_t>(H) * W * C);
    std::vector<int> offs;
    int off = 0;
    for (const auto& p : parts) {
        const int Cp = p.dim(2);
        const auto& pd = p.data();
        for (int q = 0; q < H * W; ++q)
            std::copy(pd.begin() + static_cast<std::size_t>(q) * Cp,
                      pd.begin() + static_cast<std::size_t>(q) * Cp + Cp,
                      out.begin() + static_cast<std::size_t>(q) * C + off);
        offs.push_back(off);
        off += Cp;
    }
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op<S>(
        {H, W, C}, std::move(out), "concat_channels", nodes,
        [nodes, offs, H, W, C](TensorNode<S>& o) {
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                auto& pn = nodes[k];
                if (!pn->requires_grad) continue;
                pn->ensure_grad();
                const int Cp = pn->shape[2];
                for (int q = 0; q < H * W; ++q)
                    for (int c = 0; c < Cp; ++c)
                        pn->grad[static_cast<std::size_t>(q) * Cp + c] +=
                            o.grad[static_cast<std::size_t>(q) * C + offs[k] + c];
            }
        });
}

// ---------------------------------------------------------------------------
// matrix operations
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    check(a.rank() == 2 && b.rank() == 2,
          "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
    const int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
    check(K == K2, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    {
        detail::ECMap<S> am(a.data().data(), M, K);
        detail::ECMap<S> bm(b.data().data(), K, N);
        detail::EMap<S> om(out.data(), M, N);
        om.noalias() = am * bm;
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op<S>(
        {M, N}, std::move(out), "matmul", {an, bn}, [an, bn, M, K, N](TensorNode<S>& o) {
            detail::EMap<S> go(o.grad.data(), M, N);
            if (an->requires_grad) {
                an->ensure_grad();
                detail::EMap<S> ga(an->grad.data(), M, K);
                detail::ECMap<S> bm(bn->data.data(), K, N);
                ga.noalias() += go * bm.transpose();
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                detail::EMap<S> gb(bn->grad.data(), K, N);
                detail::ECMap<S> am(an->data.data(), M, K);
                gb.noalias() += am.transpose() * go;
            }
        });
}

template <typename S>
TensorT<S> transpose(const TensorT<S>& a) {
    check(a.rank() == 2, "transpose: expected rank-2, got " + shape_str(a.shape()));
    const int M = a.dim(0), N = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    const auto& ad = a.data();
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            out[static_cast<std::size_t>(j) * M + i] = ad[static_cast<std::size_t>(i) * N + j];
    auto an = a.node();
    return detail::make_op<S>({N, M}, std::move(out), "transpose", {an},
                              [an, M, N](TensorNode<S>& o) {
                                  if (!an->requires_grad) return;
                                  an->ensure_grad();
                                  for (int i = 0; i < M; ++i)
                                      for (int j = 0; j < N; ++j)
                                          an->grad[static_cast<std::size_t>(i) * N + j] +=
                                              o.grad[static_cast<std::size_t>(j) * M + i];
                              });
}

// Row-wise softmax, stabilized by row-max subtraction.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
    check(x.rank() == 2, "softmax_rows: expected rank-2, got " + shape_str(x.shape()));
    const int M = x.dim(0), N = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    const auto& xd = x.data();
    for (int i = 0; i < M; ++i) {
        const S* row = xd.data() + static_cast<std::size_t>(i) * N;
        S* orow = out.data() + static_cast<std::size_t>(i) * N;
        S mx = row[0];
        for (int j = 1; j < N; ++j) mx = std::max(mx, row[j]);
        S denom = 0;
        for (int j = 0; j < N; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (int j = 0; j < N; ++j) orow[j] /= denom;
    }
    auto xn = x.node();
    return detail::make_op<S>(
        {M, N}, std::move(out), "softmax_rows", {xn}, [xn, M, N](TensorNode<S>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < M; ++i) {
                const S* y = o.data.data() + static_cast<std::size_t>(i) * N;
                const S* gy = o.grad.data() + static_cast<std::size_t>(i) * N;
                S dot = 0;
                for (int j = 0; j < N; ++j) dot += gy[j] * y[j];
                S* gx = xn->grad.data() + static_cast<std::size_t>(i) * N;
                for (int j = 0; j < N; ++j) gx[j] += (gy[j] - dot) * y[j];
            }
        });
}

// Per-row mean of a rank-2 tensor: [M, N] -> [M].
template <typename S>
TensorT<S> row_mean(const TensorT<S>& x) {
    check(x.rank() == 2, "row_mean: expected rank-2, got " + shape_str(x.shape()));
    const int M = x.dim(0), N = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M));
    const auto& xd = x.data();
    const S inv = S(1) / static_cast<S>(N);
    for (int i = 0; i < M; ++i) {
        S acc = 0;
        for (int j = 0; j < N; ++j) acc += xd[static_cast<std::size_t>(i) * N + j];
        out[i] = acc * inv;
    }
    auto xn = x.node();
    return detail::make_op<S>({M}, std::move(out), "row_mean", {xn},
                              [xn, M, N, inv](TensorNode<S>& o) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (int i = 0; i < M; ++i)
                                      for (int j = 0; j < N; ++j)
                                          xn->grad[static_cast<std::size_t>(i) * N + j] +=
                                              o.grad[i] * inv;
                              });
}

namespace detail {
template <typename S>
void check_rowvec(const TensorT<S>& a, const TensorT<S>& v, const char* op) {
    check(a.rank() == 2 && v.rank() == 1 && v.dim(0) == a.dim(0),
          std::string(op) + ": " + shape_str(a.shape()) + " with row vector " +
              shape_str(v.shape()));
}
}  // namespace detail

// y[i,j] = a[i,j] * v[i]
template <typename S>
TensorT<S> scale_rows(const TensorT<S>& a, const TensorT<S>& v) {
    detail::check_rowvec(a, v, "scale_rows");
    const int M = a.dim(0), N = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            out[static_cast<std::size_t>(i) * N + j] =
                a.data()[static_cast<std::size_t>(i) * N + j] * v.data()[i];
    auto an = a.node();
    auto vn = v.node();
    return detail::make_op<S>(
        {M, N}, std::move(out), "scale_rows", {an, vn}, [an, vn, M, N](TensorNode<S>& o) {
            for (int i = 0; i < M; ++i) {
                for (int j = 0; j < N; ++j) {
                    const std::size_t k = static_cast<std::size_t>(i) * N + j;
                    if (an->requires_grad) {
                        an->ensure_grad();
                        an->grad[k] += o.grad[k] * vn->data[i];
                    }
                    if (vn->requires_grad) {
                        vn->ensure_grad();
                        vn->grad[i] += o.grad[k] * an->data[k];
                    }
                }
            }
        });
}

// y[i,j] = a[i,j] + v[i]
template <typename S>
TensorT<S> shift_rows(const TensorT<S>& a, const TensorT<S>& v) {
    detail::check_rowvec(a, v, "shift_rows");
    const int M = a.dim(0), N = a.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            out[static_cast<std::size_t>(i) * N + j] =
                a.data()[static_cast<std::size_t>(i) * N + j] + v.data()[i];
    auto an = a.node();
    auto vn = v.node();
    return detail::make_op<S>({M, N}, std::move(out), "shift_rows", {an, vn},
                              [an, vn, M, N](TensorNode<S>& o) {
                                  for (int i = 0; i < M; ++i)
                                      for (int j = 0; j < N; ++j) {
                                          const std::size_t k =
                                              static_cast<std::size_t>(i) * N + j;
                                          if (an->requires_grad) {
                                              an->ensure_grad();
                                              an->grad[k] += o.grad[k];
                                          }
                                          if (vn->requires_grad) {
                                              vn->ensure_grad();
                                              vn->grad[i] += o.grad[k];
                                          }
                                      }
                              });
}

// Rows scaled to unit L2 norm; norms below `floor` divide by `floor` instead.
template <typename S>
TensorT<S> normalize_rows(const TensorT<S>& x, S floor) {
    check(x.rank() == 2, "normalize_rows: expected rank-2, got " + shape_str(x.shape()));
    const int M = x.dim(0), N = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M) * N);
    std::vector<S> norms(static_cast<std::size_t>(M));
    const auto& xd = x.data();
    for (int i = 0; i < M; ++i) {
        S sq = 0;
        for (int j = 0; j < N; ++j) {
            S v = xd[static_cast<std::size_t>(i) * N + j];
            sq += v * v;
        }
        norms[i] = std::sqrt(sq);
        const S d = std::max(norms[i], floor);
        for (int j = 0; j < N; ++j)
            out[static_cast<std::size_t>(i) * N + j] = xd[static_cast<std::size_t>(i) * N + j] / d;
    }
    auto xn = x.node();
    return detail::make_op<S>(
        {M, N}, std::move(out), "normalize_rows", {xn},
        [xn, M, N, norms, floor](TensorNode<S>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int i = 0; i < M; ++i) {
                const S* xi = xn->data.data() + static_cast<std::size_t>(i) * N;
                const S* gy = o.grad.data() + static_cast<std::size_t>(i) * N;
                S* gx = xn->grad.data() + static_cast<std::size_t>(i) * N;
                const S n = norms[i];
                if (n > floor) {
                    S dot = 0;
                    for (int j = 0; j < N; ++j) dot += xi[j] * gy[j];
                    const S inv = S(1) / n;
                    const S inv3 = inv * inv * inv;
                    for (int j = 0; j < N; ++j) gx[j] += gy[j] * inv - xi[j] * dot * inv3;
                } else {
                    for (int j = 0; j < N; ++j) gx[j] += gy[j] / floor;
                }
            }
        });
}

// Per-row minimum with argmin routing: [M, N] -> [M].
template <typename S>
TensorT<S> min_rows(const TensorT<S>& x) {
    check(x.rank() == 2, "min_rows: expected rank-2, got " + shape_str(x.shape()));
    const int M = x.dim(0), N = x.dim(1);
    std::vector<S> out(static_cast<std::size_t>(M));
    std::vector<int> arg(static_cast<std::size_t>(M));
    const auto& xd = x.data();
    for (int i = 0; i < M; ++i) {
        int best = 0;
        for (int j = 1; j < N; ++j)
            if (xd[static_cast<std::size_t>(i) * N + j] <
                xd[static_cast<std::size_t>(i) * N + best])
                best = j;
        arg[i] = best;
        out[i] = xd[static_cast<std::size_t>(i) * N + best];
    }
    auto xn = x.node();
    return detail::make_op<S>({M}, std::move(out), "min_rows", {xn},
                              [xn, N, arg](TensorNode<S>& o) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < o.data.size(); ++i)
                                      xn->grad[i * N + arg[i]] += o.grad[i];
                              });
}

template <typename S>
TensorT<S> min_cols(const TensorT<S>& x) {
    return min_rows(transpose(x));
}

// ---------------------------------------------------------------------------
// channel statistics (instance normalization pieces)
// ---------------------------------------------------------------------------

// Spatial mean per channel of an [H, W, C] map: -> [C].
template <typename S>
TensorT<S> channel_mean(const TensorT<S>& x) {
    check(x.rank() == 3, "channel_mean: expected rank-3, got " + shape_str(x.shape()));
    const int P = x.dim(0) * x.dim(1), C = x.dim(2);
    std::vector<S> out(static_cast<std::size_t>(C), S(0));
    const auto& xd = x.data();
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) out[c] += xd[static_cast<std::size_t>(p) * C + c];
    const S inv = S(1) / static_cast<S>(P);
    for (auto& v : out) v *= inv;
    auto xn = x.node();
    return detail::make_op<S>({C}, std::move(out), "channel_mean", {xn},
                              [xn, P, C, inv](TensorNode<S>& o) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (int p = 0; p < P; ++p)
                                      for (int c = 0; c < C; ++c)
                                          xn->grad[static_cast<std::size_t>(p) * C + c] +=
                                              o.grad[c] * inv;
                              });
}

// Spatial standard deviation per channel, floored at `floor`: -> [C].
// Population form (divide by H*W); gradient is zero where the floor binds.
template <typename S>
TensorT<S> channel_std(const TensorT<S>& x, S floor = S(1e-5)) {
    check(x.rank() == 3, "channel_std: expected rank-3, got " + shape_str(x.shape()));
    const int P = x.dim(0) * x.dim(1), C = x.dim(2);
    std::vector<S> mu(static_cast<std::size_t>(C), S(0));
    const auto& xd = x.data();
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) mu[c] += xd[static_cast<std::size_t>(p) * C + c];
    const S inv = S(1) / static_cast<S>(P);
    for (auto& v : mu) v *= inv;
    std::vector<S> raw(static_cast<std::size_t>(C), S(0));
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) {
            S d = xd[static_cast<std::size_t>(p) * C + c] - mu[c];
            raw[c] += d * d;
        }
    std::vector<S> out(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        raw[c] = std::sqrt(raw[c] * inv);
        out[c] = std::max(raw[c], floor);
    }
    auto xn = x.node();
    return detail::make_op<S>(
        {C}, std::move(out), "channel_std", {xn},
        [xn, P, C, inv, mu, raw, floor](TensorNode<S>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int c = 0; c < C; ++c) {
                if (raw[c] <= floor) continue;
                const S coef = o.grad[c] * inv / raw[c];
                for (int p = 0; p < P; ++p)
                    xn->grad[static_cast<std::size_t>(p) * C + c] +=
                        coef * (xn->data[static_cast<std::size_t>(p) * C + c] - mu[c]);
            }
        });
}

// y[p,c] = (x[p,c] - mu[c]) / sigma[c]
template <typename S>
TensorT<S> channel_affine(const TensorT<S>& x, const TensorT<S>& mu, const TensorT<S>& sigma) {
    check(x.rank() == 3, "channel_affine: expected rank-3, got " + shape_str(x.shape()));
    const int P = x.dim(0) * x.dim(1), C = x.dim(2);
    check(mu.rank() == 1 && mu.dim(0) == C && sigma.rank() == 1 && sigma.dim(0) == C,
          "channel_affine: stats " + shape_str(mu.shape()) + "/" + shape_str(sigma.shape()) +
              " do not match " + std::to_string(C) + " channels");
    std::vector<S> out(static_cast<std::size_t>(P) * C);
    const auto& xd = x.data();
    for (int p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c)
            out[static_cast<std::size_t>(p) * C + c] =
                (xd[static_cast<std::size_t>(p) * C + c] - mu.data()[c]) / sigma.data()[c];
    auto xn = x.node();
    auto mn = mu.node();
    auto sn = sigma.node();
    return detail::make_op<S>(
        x.shape(), std::move(out), "channel_affine", {xn, mn, sn},
        [xn, mn, sn, P, C](TensorNode<S>& o) {
            if (xn->requires_grad) xn->ensure_grad();
            if (mn->requires_grad) mn->ensure_grad();
            if (sn->requires_grad) sn->ensure_grad();
            for (int p = 0; p < P; ++p) {
                for (int c = 0; c < C; ++c) {
                    const std::size_t k = static_cast<std::size_t>(p) * C + c;
                    const S g = o.grad[k];
                    const S sig = sn->data[c];
                    if (xn->requires_grad) xn->grad[k] += g / sig;
                    if (mn->requires_grad) mn->grad[c] -= g / sig;
                    if (sn->requires_grad) sn->grad[c] -= g * o.data[k] / sig;
                }
            }
        });
}

// Per-channel spatial mean and floored standard deviation of an [H, W, C] map.
template <typename S>
std::pair<TensorT<S>, TensorT<S>> instance_norm_stats(const TensorT<S>& x,
                                                      S floor = S(1e-5)) {
    return {channel_mean(x), channel_std(x, floor)};
}

template <typename S>
TensorT<S> instance_normalize(const TensorT<S>& x, S floor = S(1e-5)) {
    auto [mu, sigma] = instance_norm_stats(x, floor);
    return channel_affine(x, mu, sigma);
}

// ---------------------------------------------------------------------------
// convolution and resampling
// ---------------------------------------------------------------------------

namespace detail {

// Patch layout inside the GEMM: column index = (dy*kw + dx)*Cin + ci, matching
// the channel-fastest memory order of [H, W, C] maps.
template <typename S>
void im2col_rows(const S* x, int H, int W, int Cin, int kh, int kw, int stride, int pad,
                 int Wo, int row0, int rows, S* col) {
    const int K = kh * kw * Cin;
    for (int r = 0; r < rows; ++r) {
        const int p = row0 + r;
        const int oy = p / Wo, ox = p % Wo;
        S* dst = col + static_cast<std::size_t>(r) * K;
        for (int dy = 0; dy < kh; ++dy) {
            const int iy = oy * stride - pad + dy;
            for (int dx = 0; dx < kw; ++dx) {
                const int ix = ox * stride - pad + dx;
                S* d = dst + (dy * kw + dx) * Cin;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                    std::fill(d, d + Cin, S(0));
                } else {
                    const S* s = x + (static_cast<std::size_t>(iy) * W + ix) * Cin;
                    std::copy(s, s + Cin, d);
                }
            }
        }
    }
}

template <typename S>
void col2im_rows(const S* col, int H, int W, int Cin, int kh, int kw, int stride, int pad,
                 int Wo, int row0, int rows, S* gx) {
    const int K = kh * kw * Cin;
    for (int r = 0; r < rows; ++r) {
        const int p = row0 + r;
        const int oy = p / Wo, ox = p % Wo;
        const S* src = col + static_cast<std::size_t>(r) * K;
        for (int dy = 0; dy < kh; ++dy) {
            const int iy = oy * stride - pad + dy;
            if (iy < 0 || iy >= H) continue;
            for (int dx = 0; dx < kw; ++dx) {
                const int ix = ox * stride - pad + dx;
                if (ix < 0 || ix >= W) continue;
                const S* s = src + (dy * kw + dx) * Cin;
                S* d = gx + (static_cast<std::size_t>(iy) * W + ix) * Cin;
                for (int c = 0; c < Cin; ++c) d[c] += s[c];
            }
        }
    }
}

// Weight [Cout, Cin, kh, kw] -> GEMM matrix [K, Cout] in im2col column order.
template <typename S>
std::vector<S> weight_to_gemm(const S* w, int Cout, int Cin, int kh, int kw) {
    const int K = kh * kw * Cin;
    std::vector<S> wm(static_cast<std::size_t>(K) * Cout);
    for (int co = 0; co < Cout; ++co)
        for (int ci = 0; ci < Cin; ++ci)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx)
                    wm[(static_cast<std::size_t>((dy * kw + dx) * Cin + ci)) * Cout + co] =
                        w[((static_cast<std::size_t>(co) * Cin + ci) * kh + dy) * kw + dx];
    return wm;
}

inline int conv_rows_per_chunk(int K, int total_rows) {
    // Keep the im2col scratch around 16 MiB.
    const std::int64_t target = std::int64_t(4) << 20;
    int rows = static_cast<int>(std::max<std::int64_t>(1, target / std::max(1, K)));
    return std::min(rows, total_rows);
}

}  // namespace detail

// Cross-correlation of an [H, W, Cin] map with [Cout, Cin, kh, kw] weights and
// a [Cout] bias. Output extent = floor((H + 2*pad - kh)/stride) + 1.
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, int stride = 1,
                  int pad = 0) {
    check(x.rank() == 3, "conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
    check(w.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape()));
    const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == Cin, "conv2d: input has " + std::to_string(Cin) +
                               " channels but weight expects " + std::to_string(w.dim(1)));
    check(b.rank() == 1 && b.dim(0) == Cout,
          "conv2d: bias " + shape_str(b.shape()) + " does not match " + std::to_string(Cout) +
              " output channels");
    check(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    check(Ho > 0 && Wo > 0, "conv2d: nonpositive output extent for input " +
                                shape_str(x.shape()) + " with kernel " + std::to_string(kh) +
                                "x" + std::to_string(kw));

    const int K = kh * kw * Cin;
    std::vector<S> out(static_cast<std::size_t>(Ho) * Wo * Cout);
    std::vector<S> wm = detail::weight_to_gemm(w.data().data(), Cout, Cin, kh, kw);
    detail::ECMap<S> wmat(wm.data(), K, Cout);
    const int total = Ho * Wo;
    const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
    if (pointwise) {
        detail::ECMap<S> xin(x.data().data(), total, Cin);
        detail::EMap<S> om(out.data(), total, Cout);
        om.noalias() = xin * wmat;
    } else {
        const int chunk = detail::conv_rows_per_chunk(K, total);
        std::vector<S> col(static_cast<std::size_t>(chunk) * K);
        for (int r0 = 0; r0 < total; r0 += chunk) {
            const int rows = std::min(chunk, total - r0);
            detail::im2col_rows(x.data().data(), H, W, Cin, kh, kw, stride, pad, Wo, r0, rows,
                                col.data());
            detail::ECMap<S> cm(col.data(), rows, K);
            detail::EMap<S> om(out.data() + static_cast<std::size_t>(r0) * Cout, rows, Cout);
            om.noalias() = cm * wmat;
        }
    }
    for (int p = 0; p < total; ++p)
        for (int c = 0; c < Cout; ++c) out[static_cast<std::size_t>(p) * Cout + c] += b.data()[c];

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_op<S>(
        {Ho, Wo, Cout}, std::move(out), "conv2d", {xn, wn, bn},
        [xn, wn, bn, H, W, Cin, Cout, kh, kw, stride, pad, Ho, Wo](TensorNode<S>& o) {
            const int K = kh * kw * Cin;
            const int total = Ho * Wo;
            const bool pointwise = (kh == 1 && kw == 1 && stride == 1 && pad == 0);
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int p = 0; p < total; ++p)
                    for (int c = 0; c < Cout; ++c)
                        bn->grad[c] += o.grad[static_cast<std::size_t>(p) * Cout + c];
            }
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            if (!need_x && !need_w) return;
            std::vector<S> wm = detail::weight_to_gemm(wn->data.data(), Cout, Cin, kh, kw);
            std::vector<S> gwm;
            if (need_w) gwm.assign(static_cast<std::size_t>(K) * Cout, S(0));
            if (need_x) xn->ensure_grad();
            detail::ECMap<S> wmat(wm.data(), K, Cout);
            if (pointwise) {
                detail::ECMap<S> go(o.grad.data(), total, Cout);
                if (need_x) {
                    detail::EMap<S> gx(xn->grad.data(), total, Cin);
                    gx.noalias() += go * wmat.transpose();
                }
                if (need_w) {
                    detail::ECMap<S> xin(xn->data.data(), total, Cin);
                    detail::EMap<S> gw(gwm.data(), K, Cout);
                    gw.noalias() += xin.transpose() * go;
                }
            } else {
                const int chunk = detail::conv_rows_per_chunk(K, total);
                std::vector<S> col(static_cast<std::size_t>(chunk) * K);
                for (int r0 = 0; r0 < total; r0 += chunk) {
                    const int rows = std::min(chunk, total - r0);
                    detail::ECMap<S> go(o.grad.data() + static_cast<std::size_t>(r0) * Cout,
                                        rows, Cout);
                    if (need_x) {
                        detail::EMap<S> cm(col.data(), rows, K);
                        cm.noalias() = go * wmat.transpose();
                        detail::col2im_rows(col.data(), H, W, Cin, kh, kw, stride, pad, Wo, r0,
                                            rows, xn->grad.data());
                    }
                    if (need_w) {
                        detail::im2col_rows(xn->data.data(), H, W, Cin, kh, kw, stride, pad, Wo,
                                            r0, rows, col.data());
                        detail::ECMap<S> cm(col.data(), rows, K);
                        detail::EMap<S> gw(gwm.data(), K, Cout);
                        gw.noalias() += cm.transpose() * go;
                    }
                }
            }
            if (need_w) {
                wn->ensure_grad();
                for (int co = 0; co < Cout; ++co)
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int dy = 0; dy < kh; ++dy)
                            for (int dx = 0; dx < kw; ++dx)
                                wn->grad[((static_cast<std::size_t>(co) * Cin + ci) * kh + dy) *
                                             kw +
                                         dx] +=
                                    gwm[(static_cast<std::size_t>((dy * kw + dx) * Cin + ci)) *
                                            Cout +
                                        co];
            }
        });
}

// Nearest-neighbour 2x upsample of an [H, W, C] map.
template <typename S>
TensorT<S> upsample_nearest2x(const TensorT<S>& x) {
    check(x.rank() == 3, "upsample_nearest2x: expected rank-3, got " + shape_str(x.shape()));
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    std::vector<S> out(static_cast<std::size_t>(4) * H * W * C);
    const auto& xd = x.data();
    for (int y = 0; y < 2 * H; ++y)
        for (int xcol = 0; xcol < 2 * W; ++xcol) {
            const S* s = xd.data() + (static_cast<std::size_t>(y / 2) * W + xcol / 2) * C;
            S* d = out.data() + (static_cast<std::size_t>(y) * 2 * W + xcol) * C;
            std::copy(s, s + C, d);
        }
    auto xn = x.node();
    return detail::make_op<S>(
        {2 * H, 2 * W, C}, std::move(out), "upsample_nearest2x", {xn},
        [xn, H, W, C](TensorNode<S>& o) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int y = 0; y < 2 * H; ++y)
                for (int x2 = 0; x2 < 2 * W; ++x2) {
                    const S* g = o.grad.data() + (static_cast<std::size_t>(y) * 2 * W + x2) * C;
                    S* d = xn->grad.data() + (static_cast<std::size_t>(y / 2) * W + x2 / 2) * C;
                    for (int c = 0; c < C; ++c) d[c] += g[c];
                }
        });
}

// 2x2 stride-2 max pooling; ties route the gradient to the first maximum in
// scan order.
template <typename S>
TensorT<S> maxpool2x2(const TensorT<S>& x) {
    check(x.rank() == 3, "maxpool2x2: expected rank-3, got " + shape_str(x.shape()));
    const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    check(H % 2 == 0 && W % 2 == 0,
          "maxpool2x2: extents must be even, got " + shape_str(x.shape()));
    const int Ho = H / 2, Wo = W / 2;
    std::vector<S> out(static_cast<std::size_t>(Ho) * Wo * C);
    std::vector<std::int32_t> arg(out.size());
    const auto& xd = x.data();
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox)
            for (int c = 0; c < C; ++c) {
                S best = -std::numeric_limits<S>::infinity();
                std::int32_t bi = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t k =
                            (static_cast<std::size_t>(2 * oy + dy) * W + 2 * ox + dx) * C + c;
                        if (xd[k] > best) {
                            best = xd[k];
                            bi = static_cast<std::int32_t>(k);
                        }
                    }
                const std::size_t ok = (static_cast<std::size_t>(oy) * Wo + ox) * C + c;
                out[ok] = best;
                arg[ok] = bi;
            }
    auto xn = x.node();
    return detail::make_op<S>({Ho, Wo, C}, std::move(out), "maxpool2x2", {xn},
                              [xn, arg](TensorNode<S>& o) {
                                  if (!xn->requires_grad) return;
                                  xn->ensure_grad();
                                  for (std::size_t i = 0; i < o.data.size(); ++i)
                                      xn->grad[static_cast<std::size_t>(arg[i])] += o.grad[i];
                              });
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Central finite differences against the tape. `fn` must be a deterministic
// scalar-valued function of `x`. Returns max over elements of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename S, typename F>
S grad_check(F fn, TensorT<S> x, S eps = S(1e-4)) {
    x.set_requires_grad(true);
    x.zero_grad();
    TensorT<S> y = fn(x);
    check(y.numel() == 1, "grad_check: fn must be scalar-valued");
    backward(y);
    std::vector<S> analytic = x.grad();

    S worst = 0;
    NoGrad ng;
    auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const S saved = xd[i];
        xd[i] = saved + eps;
        const S fp = fn(x).value();
        xd[i] = saved - eps;
        const S fm = fn(x).value();
        xd[i] = saved;
        const S numeric = (fp - fm) / (2 * eps);
        const S denom = std::max(S(1), std::max(std::abs(analytic[i]), std::abs(numeric)));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace sk
