#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "gopstream/error.hpp"
#include "gopstream/tensor.hpp"

namespace gopstream::ad {

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
};

/// Owns a model's parameters. Addresses stay stable for the store's lifetime,
/// so modules keep plain pointers into it.
template <class T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Parameter<T>& add(std::string name, Tensor<T> init, bool trainable = true) {
        if (index_.contains(name)) {
            throw Error(Errc::Precondition, "duplicate parameter name '" + name + "'");
        }
        index_.emplace(name, params_.size());
        params_.push_back({std::move(name), std::move(init), trainable});
        return params_.back();
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }

    /// Marks every parameter whose name starts with `prefix`.
    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& p : params_) {
            if (p.name.starts_with(prefix)) {
                p.trainable = trainable;
            }
        }
    }

    std::size_t count(bool trainable_only = false) const {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += (!trainable_only || p.trainable) ? p.value.size() : 0;
        }
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const { return params_.size(); }

private:
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients keyed by parameter. One store per graph shard; shards are
/// reduced by summation in a fixed order.
template <class T>
class GradStore {
public:
    Buffer<T>& slot(const Parameter<T>* p) {
        auto [it, inserted] = grads_.try_emplace(p);
        if (inserted) {
            it->second.assign(p->value.size(), T(0));
        }
        return it->second;
    }

    const Buffer<T>* get(const Parameter<T>* p) const {
        auto it = grads_.find(p);
        return it == grads_.end() ? nullptr : &it->second;
    }

    void accumulate(const GradStore& other) {
        for (const auto& [p, g] : other.grads_) {
            auto& dst = slot(p);
            for (std::size_t i = 0; i < g.size(); ++i) {
                dst[i] += g[i];
            }
        }
    }

    void scale(T s) {
        for (auto& [p, g] : grads_) {
            for (auto& v : g) {
                v *= s;
            }
        }
    }

    void clear() { grads_.clear(); }
    bool empty() const { return grads_.empty(); }

    auto begin() const { return grads_.begin(); }
    auto end() const { return grads_.end(); }

private:
    std::map<const Parameter<T>*, Buffer<T>> grads_;
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Each forward op appends one node; backward() walks the
/// nodes in reverse and accumulates gradients additively.
template <class T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Buffer<T> grad;
        bool needs_grad = false;
        Parameter<T>* param = nullptr;
        std::function<void(Tape&, std::size_t)> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> v) {
        if (!v.all_finite()) {
            throw Error(Errc::NonFiniteInput, "constant with shape " + shape_str(v.shape()) + " is not finite");
        }
        nodes_.push_back({std::move(v), {}, false, nullptr, {}});
        return {this, nodes_.size() - 1};
    }

    /// Leaf for a parameter. Repeated uses of the same parameter share a node.
    Var<T> param(Parameter<T>& p) {
        if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
            return {this, it->second};
        }
        nodes_.push_back({p.value, {}, p.trainable, &p, {}});
        param_nodes_.emplace(&p, nodes_.size() - 1);
        return {this, nodes_.size() - 1};
    }

    Var<T> push(Tensor<T> value, bool needs_grad, std::function<void(Tape&, std::size_t)> bw) {
        nodes_.push_back({std::move(value), {}, needs_grad, nullptr, needs_grad ? std::move(bw) : nullptr});
        return {this, nodes_.size() - 1};
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }

    /// Gradient buffer of a node, zero-initialised on first access.
    Buffer<T>& grad(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) {
            n.grad.assign(n.value.size(), T(0));
        }
        return n.grad;
    }
    Buffer<T>& grad(Var<T> v) { return grad(v.id); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients into `out`.
    void backward(Var<T> loss, GradStore<T>& out) {
        if (value(loss).size() != 1) {
            throw Error(Errc::ShapeMismatch, "backward() needs a scalar loss, got " + shape_str(value(loss).shape()));
        }
        if (!nodes_[loss.id].needs_grad) {
            return;
        }
        grad(loss.id)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty()) {
                continue;
            }
            if (n.param != nullptr) {
                auto& dst = out.slot(n.param);
                for (std::size_t k = 0; k < dst.size(); ++k) {
                    dst[k] += n.grad[k];
                }
            } else if (n.backward) {
                n.backward(*this, i);
            }
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::deque<Node> nodes_;  // deque: value() references survive later pushes
    std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Eigen views

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

namespace detail {

template <class T>
void add_into(Buffer<T>& dst, std::span<const T> src) {
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] += src[i];
    }
}

inline void check(bool ok, Errc code, const std::string& what) {
    if (!ok) {
        throw Error(code, what);
    }
}

template <class T>
void same_tape(Var<T> a, Var<T> b) {
    check(a.tape == b.tape, Errc::Precondition, "operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops

/// (m,k) x (k,n) -> (m,n)
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::same_tape(a, b);
    auto& tp = *a.tape;
    const auto& A = a.value();
    const auto& B = b.value();
    detail::check(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), Errc::ShapeMismatch,
                  "matmul " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor<T> out({m, n});
    MatMap<T>(out.ptr(), m, n).noalias() = CMatMap<T>(A.ptr(), m, k) * CMatMap<T>(B.ptr(), k, n);
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.push(std::move(out), ng, [ai = a.id, bi = b.id, m, k, n](Tape<T>& t, std::size_t self) {
        CMatMap<T> G(t.grad(self).data(), m, n);
        if (t.needs_grad(Var<T>{&t, ai})) {
            MatMap<T>(t.grad(ai).data(), m, k).noalias() += G * CMatMap<T>(t.value(bi).ptr(), k, n).transpose();
        }
        if (t.needs_grad(Var<T>{&t, bi})) {
            MatMap<T>(t.grad(bi).data(), k, n).noalias() += CMatMap<T>(t.value(ai).ptr(), m, k).transpose() * G;
        }
    });
}

/// Affine map over the last axis: x (..., in) * W (in, out) + b (out).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, const Var<T>* b = nullptr) {
    detail::same_tape(x, w);
    auto& tp = *x.tape;
    const auto& X = x.value();
    const auto& W = w.value();
    detail::check(W.rank() == 2 && X.cols() == W.dim(0), Errc::ShapeMismatch,
                  "linear " + shape_str(X.shape()) + " with weight " + shape_str(W.shape()));
    const std::size_t rows = X.rows(), in = W.dim(0), outd = W.dim(1);
    Shape os = X.shape();
    os.back() = outd;
    Tensor<T> out(os);
    MatMap<T> O(out.ptr(), rows, outd);
    O.noalias() = CMatMap<T>(X.ptr(), rows, in) * CMatMap<T>(W.ptr(), in, outd);
    std::size_t bid = 0;
    bool has_b = b != nullptr;
    if (has_b) {
        const auto& B = b->value();
        detail::check(B.size() == outd, Errc::ShapeMismatch, "linear bias " + shape_str(B.shape()));
        O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(B.ptr(), outd);
        bid = b->id;
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(w) || (has_b && tp.needs_grad(*b));
    return tp.push(std::move(out), ng,
                   [xi = x.id, wi = w.id, bid, has_b, rows, in, outd](Tape<T>& t, std::size_t self) {
                       CMatMap<T> G(t.grad(self).data(), rows, outd);
                       if (t.needs_grad(Var<T>{&t, xi})) {
                           MatMap<T>(t.grad(xi).data(), rows, in).noalias() +=
                               G * CMatMap<T>(t.value(wi).ptr(), in, outd).transpose();
                       }
                       if (t.needs_grad(Var<T>{&t, wi})) {
                           MatMap<T>(t.grad(wi).data(), in, outd).noalias() +=
                               CMatMap<T>(t.value(xi).ptr(), rows, in).transpose() * G;
                       }
                       if (has_b && t.needs_grad(Var<T>{&t, bid})) {
                           Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.grad(bid).data(), outd) +=
                               G.colwise().sum();
                       }
                   });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    return linear(x, w, &b);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::same_tape(a, b);
    auto& tp = *a.tape;
    detail::check(a.shape() == b.shape(), Errc::ShapeMismatch,
                  "add " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    Tensor<T> out = a.value();
    const auto& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += B[i];
    }
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.push(std::move(out), ng, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t id : {ai, bi}) {
            if (t.needs_grad(Var<T>{&t, id})) {
                detail::add_into(t.grad(id), std::span<const T>(g));
            }
        }
    });
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::same_tape(a, b);
    auto& tp = *a.tape;
    detail::check(a.shape() == b.shape(), Errc::ShapeMismatch,
                  "mul " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    Tensor<T> out = a.value();
    const auto& B = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= B[i];
    }
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.push(std::move(out), ng, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& A = t.value(ai);
        const auto& B = t.value(bi);
        if (t.needs_grad(Var<T>{&t, ai})) {
            auto& ga = t.grad(ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.needs_grad(Var<T>{&t, bi})) {
            auto& gb = t.grad(bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
    auto& tp = *a.tape;
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) {
        v *= s;
    }
    return tp.push(std::move(out), tp.needs_grad(a), [ai = a.id, s](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

/// x (R, D) + y broadcast: y has R / group rows of width D, and row r of x
/// receives row r / group of y. With y of shape (D) this is a plain row
/// broadcast.
template <class T>
Var<T> add_broadcast(Var<T> x, Var<T> y) {
    detail::same_tape(x, y);
    auto& tp = *x.tape;
    const auto& X = x.value();
    const auto& Y = y.value();
    const std::size_t d = X.cols();
    detail::check(Y.size() % d == 0 && Y.size() > 0, Errc::ShapeMismatch,
                  "add_broadcast " + shape_str(X.shape()) + " + " + shape_str(Y.shape()));
    const std::size_t yrows = Y.size() / d;
    detail::check(X.rows() % yrows == 0, Errc::ShapeMismatch,
                  "add_broadcast " + shape_str(X.shape()) + " + " + shape_str(Y.shape()));
    const std::size_t group = X.rows() / yrows;
    Tensor<T> out = X;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const T* yr = Y.ptr() + (r / group) * d;
        T* o = out.ptr() + r * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += yr[c];
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(y);
    return tp.push(std::move(out), ng, [xi = x.id, yi = y.id, d, group](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(Var<T>{&t, xi})) {
            detail::add_into(t.grad(xi), std::span<const T>(g));
        }
        if (t.needs_grad(Var<T>{&t, yi})) {
            auto& gy = t.grad(yi);
            const std::size_t rows = g.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                T* dst = gy.data() + (r / group) * d;
                const T* src = g.data() + r * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        }
    });
}

/// x (R, D) + y (P, D) where P divides R: row r of x receives row r % P of y.
template <class T>
Var<T> add_tiled(Var<T> x, Var<T> y) {
    detail::same_tape(x, y);
    auto& tp = *x.tape;
    const auto& X = x.value();
    const auto& Y = y.value();
    const std::size_t d = X.cols();
    detail::check(Y.size() > 0 && Y.size() % d == 0 && X.rows() % (Y.size() / d) == 0, Errc::ShapeMismatch,
                  "add_tiled " + shape_str(X.shape()) + " + " + shape_str(Y.shape()));
    const std::size_t period = Y.size() / d;
    Tensor<T> out = X;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const T* yr = Y.ptr() + (r % period) * d;
        T* o = out.ptr() + r * d;
        for (std::size_t c = 0; c < d; ++c) o[c] += yr[c];
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(y);
    return tp.push(std::move(out), ng, [xi = x.id, yi = y.id, d, period](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(Var<T>{&t, xi})) {
            detail::add_into(t.grad(xi), std::span<const T>(g));
        }
        if (t.needs_grad(Var<T>{&t, yi})) {
            auto& gy = t.grad(yi);
            const std::size_t rows = g.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                T* dst = gy.data() + (r % period) * d;
                const T* src = g.data() + r * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        }
    });
}

template <class T>
Var<T> transpose(Var<T> a) {
    auto& tp = *a.tape;
    const auto& A = a.value();
    detail::check(A.rank() == 2, Errc::ShapeMismatch, "transpose expects rank 2, got " + shape_str(A.shape()));
    const std::size_t m = A.dim(0), n = A.dim(1);
    Tensor<T> out({n, m});
    MatMap<T>(out.ptr(), n, m) = CMatMap<T>(A.ptr(), m, n).transpose();
    return tp.push(std::move(out), tp.needs_grad(a), [ai = a.id, m, n](Tape<T>& t, std::size_t self) {
        MatMap<T>(t.grad(ai).data(), m, n) += CMatMap<T>(t.grad(self).data(), n, m).transpose();
    });
}

template <class T>
Var<T> reshape(Var<T> a, Shape s) {
    auto& tp = *a.tape;
    Tensor<T> out = a.value().reshaped(std::move(s));
    return tp.push(std::move(out), tp.needs_grad(a), [ai = a.id](Tape<T>& t, std::size_t self) {
        detail::add_into(t.grad(ai), std::span<const T>(t.grad(self)));
    });
}

/// Concatenate along the last axis; leading extents must agree.
template <class T>
Var<T> concat_last_dim(Var<T> a, Var<T> b) {
    detail::same_tape(a, b);
    auto& tp = *a.tape;
    const auto& A = a.value();
    const auto& B = b.value();
    Shape sa(A.shape().begin(), A.shape().end() - 1);
    Shape sb(B.shape().begin(), B.shape().end() - 1);
    detail::check(sa == sb, Errc::ShapeMismatch, "concat " + shape_str(A.shape()) + " | " + shape_str(B.shape()));
    const std::size_t rows = A.rows(), ca = A.cols(), cb = B.cols();
    Shape os = A.shape();
    os.back() = ca + cb;
    Tensor<T> out(os);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(A.ptr() + r * ca, ca, out.ptr() + r * (ca + cb));
        std::copy_n(B.ptr() + r * cb, cb, out.ptr() + r * (ca + cb) + ca);
    }
    const bool ng = tp.needs_grad(a) || tp.needs_grad(b);
    return tp.push(std::move(out), ng, [ai = a.id, bi = b.id, rows, ca, cb](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.needs_grad(Var<T>{&t, ai})) {
            auto& ga = t.grad(ai);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
        }
        if (t.needs_grad(Var<T>{&t, bi})) {
            auto& gb = t.grad(bi);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
    });
}

/// Stacks (R_i, D) views along the row axis into (sum R_i, D).
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    detail::check(!parts.empty(), Errc::EmptySequence, "concat_rows: no inputs");
    auto& tp = *parts.front().tape;
    const std::size_t d = parts.front().value().cols();
    std::size_t rows = 0;
    bool ng = false;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p);
        detail::check(p.value().cols() == d, Errc::ShapeMismatch,
                      "concat_rows: width " + std::to_string(p.value().cols()) + " vs " + std::to_string(d));
        rows += p.value().rows();
        ng = ng || tp.needs_grad(p);
    }
    Tensor<T> out({rows, d});
    std::vector<std::size_t> ids, offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.value().ptr(), p.value().size(), out.ptr() + off);
        ids.push_back(p.id);
        offsets.push_back(off);
        off += p.value().size();
    }
    return tp.push(std::move(out), ng, [ids, offsets](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.needs_grad(Var<T>{&t, ids[k]})) continue;
            auto& gp = t.grad(ids[k]);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
        }
    });
}

/// Mean over one axis; that axis is removed from the shape (a rank-1 input
/// yields shape {1}).
template <class T>
Var<T> mean_over_axis(Var<T> a, std::size_t axis) {
    auto& tp = *a.tape;
    const auto& A = a.value();
    detail::check(axis < A.rank(), Errc::ShapeMismatch, "mean axis out of range for " + shape_str(A.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= A.dim(i);
    for (std::size_t i = axis + 1; i < A.rank(); ++i) inner *= A.dim(i);
    const std::size_t n = A.dim(axis);
    Shape os;
    for (std::size_t i = 0; i < A.rank(); ++i) {
        if (i != axis) os.push_back(A.dim(i));
    }
    if (os.empty()) os.push_back(1);
    Tensor<T> out(os);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            const T* src = A.ptr() + (o * n + k) * inner;
            T* dst = out.ptr() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    for (auto& v : out.vec()) v /= static_cast<T>(n);
    return tp.push(std::move(out), tp.needs_grad(a), [ai = a.id, outer, inner, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ai);
        const T inv = T(1) / static_cast<T>(n);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += g[o * inner + i] * inv;
    });
}

/// Averages consecutive row groups of a (R, D) view: segment s covers the next
/// counts[s] rows. Output is (S, D).
template <class T>
Var<T> segment_mean_rows(Var<T> a, std::vector<std::size_t> counts) {
    auto& tp = *a.tape;
    const auto& A = a.value();
    const std::size_t d = A.cols();
    std::size_t total = 0;
    for (auto c : counts) {
        detail::check(c > 0, Errc::EmptySequence, "segment_mean_rows: empty segment");
        total += c;
    }
    detail::check(total == A.rows(), Errc::ShapeMismatch, "segment counts do not cover " + shape_str(A.shape()));
    Tensor<T> out({counts.size(), d});
    std::size_t r = 0;
    for (std::size_t s = 0; s < counts.size(); ++s) {
        T* dst = out.ptr() + s * d;
        for (std::size_t k = 0; k < counts[s]; ++k, ++r) {
            const T* src = A.ptr() + r * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
        const T inv = T(1) / static_cast<T>(counts[s]);
        for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
    }
    return tp.push(std::move(out), tp.needs_grad(a),
                   [ai = a.id, d, counts = std::move(counts)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       auto& ga = t.grad(ai);
                       std::size_t r = 0;
                       for (std::size_t s = 0; s < counts.size(); ++s) {
                           const T inv = T(1) / static_cast<T>(counts[s]);
                           for (std::size_t k = 0; k < counts[s]; ++k, ++r)
                               for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[s * d + c] * inv;
                       }
                   });
}

template <class T>
Var<T> sum(Var<T> a) {
    auto& tp = *a.tape;
    T s = T(0);
    for (const T& v : a.value().vec()) s += v;
    return tp.push(Tensor<T>({1}, std::vector<T>{s}), tp.needs_grad(a), [ai = a.id](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad(ai)) v += g;
    });
}

/// Normalises each row over the last axis, then applies gamma and beta.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
    detail::same_tape(x, gamma);
    auto& tp = *x.tape;
    const auto& X = x.value();
    const std::size_t rows = X.rows(), d = X.cols();
    detail::check(gamma.value().size() == d && beta.value().size() == d, Errc::ShapeMismatch,
                  "layer_norm affine params do not match " + shape_str(X.shape()));
    Tensor<T> out(X.shape());
    Buffer<T> xhat(X.size());
    Buffer<T> inv_std(rows);
    const T* G = gamma.value().ptr();
    const T* Bt = beta.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.ptr() + r * d;
        T mean = T(0);
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (xr[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * G[c] + Bt[c];
        }
    }
    const bool ng = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
    return tp.push(std::move(out), ng,
                   [xi = x.id, gi = gamma.id, bi = beta.id, rows, d, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       const T* G = t.value(gi).ptr();
                       if (t.needs_grad(Var<T>{&t, gi})) {
                           auto& gg = t.grad(gi);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * xhat[r * d + c];
                       }
                       if (t.needs_grad(Var<T>{&t, bi})) {
                           auto& gb = t.grad(bi);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
                       }
                       if (t.needs_grad(Var<T>{&t, xi})) {
                           auto& gx = t.grad(xi);
                           for (std::size_t r = 0; r < rows; ++r) {
                               T m1 = T(0), m2 = T(0);
                               for (std::size_t c = 0; c < d; ++c) {
                                   const T dh = g[r * d + c] * G[c];
                                   m1 += dh;
                                   m2 += dh * xhat[r * d + c];
                               }
                               m1 /= static_cast<T>(d);
                               m2 /= static_cast<T>(d);
                               for (std::size_t c = 0; c < d; ++c) {
                                   const T dh = g[r * d + c] * G[c];
                                   gx[r * d + c] += inv_std[r] * (dh - m1 - xhat[r * d + c] * m2);
                               }
                           }
                       }
                   });
}

template <class T>
Var<T> softmax_last_dim(Var<T> x) {
    auto& tp = *x.tape;
    const auto& X = x.value();
    const std::size_t rows = X.rows(), d = X.cols();
    Tensor<T> out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X.ptr() + r * d;
        T* o = out.ptr() + r * d;
        const T mx = *std::max_element(xr, xr + d);
        T s = T(0);
        for (std::size_t c = 0; c < d; ++c) s += (o[c] = std::exp(xr[c] - mx));
        for (std::size_t c = 0; c < d; ++c) o[c] /= s;
    }
    return tp.push(std::move(out), tp.needs_grad(x), [xi = x.id, rows, d](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& P = t.value(self);
        auto& gx = t.grad(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = T(0);
            for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * P[r * d + c];
            for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += P[r * d + c] * (g[r * d + c] - dot);
        }
    });
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(Var<T> x) {
    auto& tp = *x.tape;
    Tensor<T> out = x.value();
    const T k = T(1) / std::sqrt(T(2));
    for (auto& v : out.vec()) v = T(0.5) * v * (T(1) + std::erf(v * k));
    return tp.push(std::move(out), tp.needs_grad(x), [xi = x.id, k](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& X = t.value(xi);
        auto& gx = t.grad(xi);
        const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = X[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * k));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
}

template <class T>
Var<T> relu(Var<T> x) {
    auto& tp = *x.tape;
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
    return tp.push(std::move(out), tp.needs_grad(x), [xi = x.id](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& X = t.value(xi);
        auto& gx = t.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += X[i] > T(0) ? g[i] : T(0);
    });
}

/// Gathers rows of table (V, D) -> (ids.size(), D).
template <class T>
Var<T> embedding_lookup(Var<T> table, std::vector<std::size_t> ids) {
    auto& tp = *table.tape;
    const auto& E = table.value();
    detail::check(E.rank() == 2, Errc::ShapeMismatch, "embedding table must be rank 2");
    const std::size_t vocab = E.dim(0), d = E.dim(1);
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw Error(Errc::OutOfBounds, "embedding id " + std::to_string(ids[i]) + " >= table size " +
                                               std::to_string(vocab));
        }
        std::copy_n(E.ptr() + ids[i] * d, d, out.ptr() + i * d);
    }
    return tp.push(std::move(out), tp.needs_grad(table),
                   [ti = table.id, d, ids = std::move(ids)](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       auto& gt = t.grad(ti);
                       for (std::size_t i = 0; i < ids.size(); ++i)
                           for (std::size_t c = 0; c < d; ++c) gt[ids[i] * d + c] += g[i * d + c];
                   });
}

/// Mean softmax cross-entropy of logits (N, C) against integer labels.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> labels) {
    auto& tp = *logits.tape;
    const auto& Z = logits.value();
    detail::check(Z.rank() == 2 && Z.dim(0) == labels.size() && !labels.empty(), Errc::ShapeMismatch,
                  "cross_entropy logits " + shape_str(Z.shape()) + " vs " + std::to_string(labels.size()) +
                      " labels");
    const std::size_t n = Z.dim(0), c = Z.dim(1);
    Buffer<T> probs(Z.size());
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        detail::check(labels[i] < c, Errc::OutOfBounds, "label out of range");
        const T* z = Z.ptr() + i * c;
        const T mx = *std::max_element(z, z + c);
        T s = T(0);
        for (std::size_t k = 0; k < c; ++k) s += (probs[i * c + k] = std::exp(z[k] - mx));
        for (std::size_t k = 0; k < c; ++k) probs[i * c + k] /= s;
        loss += (std::log(s) + mx) - z[labels[i]];
    }
    loss /= static_cast<T>(n);
    return tp.push(Tensor<T>({1}, std::vector<T>{loss}), tp.needs_grad(logits),
                   [zi = logits.id, n, c, probs = std::move(probs), labels = std::move(labels)](Tape<T>& t,
                                                                                              std::size_t self) {
                       const T g = t.grad(self)[0] / static_cast<T>(n);
                       auto& gz = t.grad(zi);
                       for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t k = 0; k < c; ++k)
                               gz[i * c + k] += g * (probs[i * c + k] - (k == labels[i] ? T(1) : T(0)));
                   });
}

/// Multi-head scaled dot-product attention without projections.
/// q: (B, nq, D), k/v: (B, nkv, D); rank-2 inputs are treated as B = 1.
/// Each head h reads columns [h*D/H, (h+1)*D/H) and the head outputs are
/// written back side by side.
template <class T>
Var<T> scaled_dot_product_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
    detail::same_tape(q, k);
    detail::same_tape(q, v);
    auto& tp = *q.tape;
    const auto& Q = q.value();
    const auto& K = k.value();
    const auto& V = v.value();
    detail::check(Q.rank() == K.rank() && K.shape() == V.shape() && (Q.rank() == 2 || Q.rank() == 3),
                  Errc::ShapeMismatch,
                  "attention shapes " + shape_str(Q.shape()) + " " + shape_str(K.shape()) + " " +
                      shape_str(V.shape()));
    const std::size_t batch = Q.rank() == 3 ? Q.dim(0) : 1;
    detail::check(K.rank() == 2 || K.dim(0) == batch, Errc::ShapeMismatch, "attention batch mismatch");
    const std::size_t d = Q.cols();
    detail::check(K.cols() == d, Errc::ShapeMismatch, "attention width mismatch");
    detail::check(heads > 0 && d % heads == 0, Errc::HeadsMismatch,
                  "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    const std::size_t nq = Q.rows() / batch, nkv = K.rows() / batch, dh = d / heads;
    detail::check(nkv > 0 && nq > 0, Errc::EmptySequence, "attention over an empty sequence");
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> out(Q.shape());
    Buffer<T> probs(batch * heads * nq * nkv);
    RowMat<T> S(nq, nkv);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            CStridedMap<T> Qh(Q.ptr() + b * nq * d + h * dh, nq, dh, Eigen::OuterStride<>(d));
            CStridedMap<T> Kh(K.ptr() + b * nkv * d + h * dh, nkv, dh, Eigen::OuterStride<>(d));
            CStridedMap<T> Vh(V.ptr() + b * nkv * d + h * dh, nkv, dh, Eigen::OuterStride<>(d));
            S.noalias() = (Qh * Kh.transpose()) * sc;
            MatMap<T> P(probs.data() + (b * heads + h) * nq * nkv, nq, nkv);
            for (std::size_t i = 0; i < nq; ++i) {
                const T mx = S.row(i).maxCoeff();
                T s = T(0);
                for (std::size_t j = 0; j < nkv; ++j) s += (P(i, j) = std::exp(S(i, j) - mx));
                P.row(i) /= s;
            }
            StridedMap<T> Oh(out.ptr() + b * nq * d + h * dh, nq, dh, Eigen::OuterStride<>(d));
            Oh.noalias() = P * Vh;
        }
    }
    const bool ng = tp.needs_grad(q) || tp.needs_grad(k) || tp.needs_grad(v);
    return tp.push(
        std::move(out), ng,
        [qi = q.id, ki = k.id, vi = v.id, batch, heads, nq, nkv, d, dh, sc, probs = std::move(probs)](
            Tape<T>& t, std::size_t self) {
            const auto& Q = t.value(qi);
            const auto& K = t.value(ki);
            const auto& V = t.value(vi);
            const auto& G = t.grad(self);
            const bool gq = t.needs_grad(Var<T>{&t, qi});
            const bool gk = t.needs_grad(Var<T>{&t, ki});
            const bool gv = t.needs_grad(Var<T>{&t, vi});
            T* dQ = gq ? t.grad(qi).data() : nullptr;
            T* dK = gk ? t.grad(ki).data() : nullptr;
            T* dV = gv ? t.grad(vi).data() : nullptr;
            RowMat<T> dP(nq, nkv);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t qo = b * nq * d + h * dh;
                    const std::size_t ko = b * nkv * d + h * dh;
                    CStridedMap<T> dO(G.data() + qo, nq, dh, Eigen::OuterStride<>(d));
                    CMatMap<T> P(probs.data() + (b * heads + h) * nq * nkv, nq, nkv);
                    CStridedMap<T> Vh(V.ptr() + ko, nkv, dh, Eigen::OuterStride<>(d));
                    if (gv) {
                        StridedMap<T>(dV + ko, nkv, dh, Eigen::OuterStride<>(d)).noalias() += P.transpose() * dO;
                    }
                    if (!gq && !gk) continue;
                    dP.noalias() = dO * Vh.transpose();
                    for (std::size_t i = 0; i < nq; ++i) {
                        const T dot = dP.row(i).dot(P.row(i));
                        dP.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix() * sc;
                    }
                    if (gq) {
                        CStridedMap<T> Kh(K.ptr() + ko, nkv, dh, Eigen::OuterStride<>(d));
                        StridedMap<T>(dQ + qo, nq, dh, Eigen::OuterStride<>(d)).noalias() += dP * Kh;
                    }
                    if (gk) {
                        CStridedMap<T> Qh(Q.ptr() + qo, nq, dh, Eigen::OuterStride<>(d));
                        StridedMap<T>(dK + ko, nkv, dh, Eigen::OuterStride<>(d)).noalias() += dP.transpose() * Qh;
                    }
                }
            }
        });
}

/// Output bin i of an axis of length n split into o bins spans
/// [floor(i*n/o), ceil((i+1)*n/o)).
inline std::pair<std::size_t, std::size_t> adaptive_bin(std::size_t i, std::size_t n, std::size_t o) {
    return {(i * n) / o, ((i + 1) * n + o - 1) / o};
}

inline std::size_t pooled_extent(std::size_t g, std::size_t k) {
    return (g + k - 1) / k;
}

/// Adaptive average pooling of a (H, W, D) grid, or (B, H, W, D) batch, to
/// (oh, ow) bins.
template <class T>
Var<T> adaptive_avg_pool2d_to(Var<T> x, std::size_t oh, std::size_t ow) {
    auto& tp = *x.tape;
    const auto& X = x.value();
    detail::check(X.rank() == 3 || X.rank() == 4, Errc::ShapeMismatch,
                  "adaptive pooling expects (G,G,D) or (B,G,G,D), got " + shape_str(X.shape()));
    const std::size_t off = X.rank() - 3;
    const std::size_t batch = off ? X.dim(0) : 1;
    const std::size_t gh = X.dim(off), gw = X.dim(off + 1), d = X.dim(off + 2);
    detail::check(gh >= 1 && gw >= 1 && oh >= 1 && ow >= 1, Errc::ShapeMismatch, "empty pooling grid");
    Shape os = X.shape();
    os[off] = oh;
    os[off + 1] = ow;
    Tensor<T> out(os);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < oh; ++i) {
            const auto [r0, r1] = adaptive_bin(i, gh, oh);
            for (std::size_t j = 0; j < ow; ++j) {
                const auto [c0, c1] = adaptive_bin(j, gw, ow);
                T* dst = out.ptr() + ((b * oh + i) * ow + j) * d;
                for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t c = c0; c < c1; ++c) {
                        const T* src = X.ptr() + ((b * gh + r) * gw + c) * d;
                        for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
                    }
                const T inv = T(1) / static_cast<T>((r1 - r0) * (c1 - c0));
                for (std::size_t e = 0; e < d; ++e) dst[e] *= inv;
            }
        }
    }
    return tp.push(std::move(out), tp.needs_grad(x),
                   [xi = x.id, batch, gh, gw, oh, ow, d](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       auto& gx = t.grad(xi);
                       for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < oh; ++i) {
                               const auto [r0, r1] = adaptive_bin(i, gh, oh);
                               for (std::size_t j = 0; j < ow; ++j) {
                                   const auto [c0, c1] = adaptive_bin(j, gw, ow);
                                   const T inv = T(1) / static_cast<T>((r1 - r0) * (c1 - c0));
                                   const T* src = g.data() + ((b * oh + i) * ow + j) * d;
                                   for (std::size_t r = r0; r < r1; ++r)
                                       for (std::size_t c = c0; c < c1; ++c) {
                                           T* dst = gx.data() + ((b * gh + r) * gw + c) * d;
                                           for (std::size_t e = 0; e < d; ++e) dst[e] += src[e] * inv;
                                       }
                               }
                           }
                   });
}

/// Kernel-size form: O = ceil(G / k) bins per axis.
template <class T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t kernel) {
    detail::check(kernel >= 1, Errc::Precondition, "pooling kernel must be >= 1");
    const auto& X = x.value();
    detail::check(X.rank() == 3 || X.rank() == 4, Errc::ShapeMismatch,
                  "adaptive pooling expects (G,G,D) or (B,G,G,D), got " + shape_str(X.shape()));
    const std::size_t off = X.rank() - 3;
    return adaptive_avg_pool2d_to(x, pooled_extent(X.dim(off), kernel), pooled_extent(X.dim(off + 1), kernel));
}

}  // namespace gopstream::ad
