#pragma once
// Dense f64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding shape, row-major data and an
// optional gradient buffer. Operations record a backward closure on the
// thread's active Tape (see TapeScope) whenever any input requires a gradient;
// with no active tape every op is a plain forward computation.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtnav/errors.hpp"

namespace mtnav {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool on_tape = false;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

#ifndef NDEBUG
inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) throw ContractError(std::string("non-finite output from ") + op);
    }
}
#else
inline void check_finite(const std::vector<double>&, const char*) {}
#endif

}  // namespace detail

class Tape;

class Tensor {
public:
    Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
        for (std::size_t d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{1}, {value}, requires_grad);
    }
    /// 1×n row vector.
    static Tensor row(std::vector<double> values, bool requires_grad = false) {
        const std::size_t n = values.size();
        return Tensor(Shape{1, n}, std::move(values), requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false) {
        return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.back() + c]; }
    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the values without gradient tracking.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }
    /// Deep copy that keeps the requires_grad flag but not the gradient.
    Tensor clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const detail::NodePtr& impl() const { return node_; }

private:
    detail::NodePtr node_;
};

/// Ordered record of differentiable operations for one forward pass.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    void record(Tensor& output, BackwardFn backward) {
        output.impl()->requires_grad = true;
        output.impl()->on_tape = true;
        records_.push_back({output.impl(), std::move(backward)});
    }

    /// Propagates d(root)/d(x) into every requires_grad tensor reachable from root.
    /// Leaf gradients accumulate across calls; intermediate gradients are reset first.
    void backward(const Tensor& root) {
        if (root.numel() != 1) {
            throw ContractError("backward() needs a scalar root, got shape " + shape_str(root.shape()));
        }
        const auto& root_node = root.impl();
        if (!root_node->on_tape) throw ContractError("backward() root was not produced on this tape");
        bool found = false;
        for (auto& rec : records_) {
            rec.output->grad.assign(rec.output->data.size(), 0.0);
            found = found || rec.output == root_node;
        }
        if (!found) throw ContractError("backward() root was not produced on this tape");
        root_node->grad[0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
    }

    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

private:
    struct Record {
        detail::NodePtr output;
        BackwardFn backward;
    };
    std::vector<Record> records_;
};

namespace detail {
inline Tape*& active_tape_slot() {
    thread_local Tape* tape = nullptr;
    return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the recording target for ops on this thread until destruction.
class TapeScope {
public:
    explicit TapeScope(Tape& tape) : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape; }
    ~TapeScope() { detail::active_tape_slot() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording on this thread.
class NoGradScope {
public:
    NoGradScope() : previous_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
    ~NoGradScope() { detail::active_tape_slot() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

namespace detail {

/// Active tape if any input needs a gradient, else nullptr.
inline Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = active_tape();
    if (!tape) return nullptr;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return tape;
    }
    return nullptr;
}

inline void require_rank2(const Tensor& t, const char* op, const char* arg) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": " + arg + " must be rank 2, got " + shape_str(t.shape()));
    }
}

// Splits shape around `axis` into (outer, axis length, inner) for row-major loops.
struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// out = a · b for a[m×k], b[k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_rank2(a, "matmul", "a");
    detail::require_rank2(b, "matmul", "b");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = A[i * k + l];
            if (av == 0.0) continue;
            const double* brow = B + l * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    detail::check_finite(out, "matmul");
    Tensor result(Shape{m, n}, std::move(out));
    if (Tape* tape = detail::tape_for({&a, &b})) {
        tape->record(result, [an = a.impl(), bn = b.impl(), on = result.impl().get(), m, k, n] {
            const double* G = on->grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        double s = 0.0;
                        const double* brow = bn->data.data() + l * n;
                        for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * brow[j];
                        an->grad[i * k + l] += s;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        const double av = an->data[i * k + l];
                        if (av == 0.0) continue;
                        double* grow = bn->grad.data() + l * n;
                        for (std::size_t j = 0; j < n; ++j) grow[j] += av * G[i * n + j];
                    }
            }
        });
    }
    return result;
}

/// out[i,j] = Σ_l x[i,l]·w[l,j] + b[j].
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_rank2(x, "affine", "x");
    detail::require_rank2(w, "affine", "w");
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k) {
        throw DimensionError("affine: inner dimensions disagree, x " + shape_str(x.shape()) + " vs w " +
                             shape_str(w.shape()));
    }
    if (b.numel() != n) {
        throw DimensionError("affine: bias " + shape_str(b.shape()) + " does not match output width " +
                             std::to_string(n));
    }
    std::vector<double> out(m * n);
    const double* X = x.data().data();
    const double* W = w.data().data();
    const double* Bv = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        std::copy(Bv, Bv + n, row);
        for (std::size_t l = 0; l < k; ++l) {
            const double xv = X[i * k + l];
            if (xv == 0.0) continue;
            const double* wrow = W + l * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
        }
    }
    detail::check_finite(out, "affine");
    Tensor result(Shape{m, n}, std::move(out));
    if (Tape* tape = detail::tape_for({&x, &w, &b})) {
        tape->record(result, [xn = x.impl(), wn = w.impl(), bn = b.impl(), on = result.impl().get(), m, k, n] {
            const double* G = on->grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        double s = 0.0;
                        const double* wrow = wn->data.data() + l * n;
                        for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * wrow[j];
                        xn->grad[i * k + l] += s;
                    }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        const double xv = xn->data[i * k + l];
                        if (xv == 0.0) continue;
                        double* grow = wn->grad.data() + l * n;
                        for (std::size_t j = 0; j < n; ++j) grow[j] += xv * G[i * n + j];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) bn->grad[j] += G[i * n + j];
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    detail::check_finite(out, "add");
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&a, &b})) {
        tape->record(result, [an = a.impl(), bn = b.impl(), on = result.impl().get()] {
            for (auto* in : {an.get(), bn.get()}) {
                if (!in->requires_grad) continue;
                in->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) in->grad[i] += on->grad[i];
            }
        });
    }
    return result;
}

/// out = c·x + offset.
inline Tensor scale(const Tensor& x, double c, double offset = 0.0) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i] + offset;
    detail::check_finite(out, "scale");
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), c] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
        });
    }
    return result;
}

inline Tensor square(const Tensor& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
    detail::check_finite(out, "square");
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get()] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += 2.0 * xn->data[i] * on->grad[i];
        });
    }
    return result;
}

enum class Activation { relu, sigmoid, tanh };

namespace detail {
inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace detail

inline Tensor activation(const Tensor& x, Activation kind) {
    std::vector<double> out(x.numel());
    switch (kind) {
        case Activation::relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_value(x[i]);
            break;
        case Activation::tanh:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
            break;
    }
    detail::check_finite(out, "activation");
    Tensor result(x.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), kind] {
            xn->ensure_grad();
            const std::size_t n = on->grad.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double y = on->data[i];
                double d = 0.0;
                switch (kind) {
                    case Activation::relu: d = xn->data[i] > 0.0 ? 1.0 : 0.0; break;
                    case Activation::sigmoid: d = y * (1.0 - y); break;
                    case Activation::tanh: d = 1.0 - y * y; break;
                }
                xn->grad[i] += d * on->grad[i];
            }
        });
    }
    return result;
}

inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::tanh); }

/// Hadamard product. `b` may also be a vector of length a.shape().back(),
/// which is then applied to every row of `a` (the only broadcast supported).
inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const std::size_t width = a.shape().back();
    const bool row_vector = b.numel() == width && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1));
    if (!same && !row_vector) {
        throw DimensionError("elementwise_mul: cannot combine " + shape_str(a.shape()) + " with " +
                             shape_str(b.shape()));
    }
    const bool broadcast = !same;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[broadcast ? i % width : i];
    detail::check_finite(out, "elementwise_mul");
    Tensor result(a.shape(), std::move(out));
    if (Tape* tape = detail::tape_for({&a, &b})) {
        tape->record(result, [an = a.impl(), bn = b.impl(), on = result.impl().get(), broadcast, width] {
            const std::size_t n = on->grad.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[broadcast ? i % width : i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) bn->grad[broadcast ? i % width : i] += on->grad[i] * an->data[i];
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Row-wise softmax

namespace detail {
inline Tensor softmax_impl(const Tensor& x, bool log_space) {
    detail::require_rank2(x, log_space ? "log_softmax_rows" : "softmax_rows", "x");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data().data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const double log_z = std::log(z);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = log_space ? row[j] - mx - log_z : std::exp(row[j] - mx) / z;
        }
    }
    detail::check_finite(out, "softmax");
    Tensor result(Shape{m, n}, std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), m, n, log_space] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = on->data.data() + i * n;
                const double* g = on->grad.data() + i * n;
                double* dx = xn->grad.data() + i * n;
                if (log_space) {
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < n; ++j) gsum += g[j];
                    for (std::size_t j = 0; j < n; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
                } else {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
                }
            }
        });
    }
    return result;
}
}  // namespace detail

/// Numerically stable softmax over each row of x[m×n].
inline Tensor softmax_rows(const Tensor& x) { return detail::softmax_impl(x, false); }
inline Tensor log_softmax_rows(const Tensor& x) { return detail::softmax_impl(x, true); }

// ---------------------------------------------------------------------------
// Reductions and structure

enum class Reduction { mean, sum };

/// Reduces along `axis`. The axis is dropped unless keepdim (rank-1 inputs give shape [1]).
inline Tensor reduce(const Tensor& x, std::size_t axis, Reduction kind, bool keepdim = false) {
    if (axis >= x.rank()) {
        throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    }
    const auto s = detail::split_axis(x.shape(), axis);
    const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(s.len) : 1.0;
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.len; ++a)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.len + a) * s.inner + i];
    if (factor != 1.0)
        for (double& v : out) v *= factor;
    Shape shape = x.shape();
    if (keepdim) {
        shape[axis] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
        if (shape.empty()) shape = {1};
    }
    detail::check_finite(out, "reduce");
    Tensor result(std::move(shape), std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), s, factor] {
            xn->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t a = 0; a < s.len; ++a)
                    for (std::size_t i = 0; i < s.inner; ++i)
                        xn->grad[(o * s.len + a) * s.inner + i] += factor * on->grad[o * s.inner + i];
        });
    }
    return result;
}

/// Sum of every element, as a scalar tensor.
inline Tensor sum_all(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    Tensor result = Tensor::scalar(total);
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get()] {
            xn->ensure_grad();
            const double g = on->grad[0];
            for (double& v : xn->grad) v += g;
        });
    }
    return result;
}

/// Concatenation in argument order along `axis`.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no parts");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
        if (!ok) {
            throw DimensionError("concat: " + shape_str(s) + " disagrees with " + shape_str(ref) +
                                 " off axis " + std::to_string(axis));
        }
        total += s[axis];
    }
    Shape shape = ref;
    shape[axis] = total;
    const auto out_split = detail::split_axis(shape, axis);
    std::vector<double> out(shape_numel(shape));
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    offsets.reserve(parts.size());
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const auto s = detail::split_axis(p.shape(), axis);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t a = 0; a < s.len; ++a)
                std::copy_n(p.data().data() + (o * s.len + a) * s.inner, s.inner,
                            out.data() + (o * out_split.len + offset + a) * out_split.inner);
        offset += s.len;
    }
    Tensor result(std::move(shape), std::move(out));
    std::vector<const Tensor*> ptrs;
    Tape* tape = active_tape();
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (tape && any) {
        std::vector<detail::NodePtr> nodes;
        for (const auto& p : parts) nodes.push_back(p.impl());
        tape->record(result, [nodes = std::move(nodes), offsets = std::move(offsets), on = result.impl().get(),
                              out_split, axis] {
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                auto& in = *nodes[k];
                if (!in.requires_grad) continue;
                in.ensure_grad();
                const auto s = detail::split_axis(in.shape, axis);
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t a = 0; a < s.len; ++a) {
                        const double* src = on->grad.data() + (o * out_split.len + offsets[k] + a) * out_split.inner;
                        double* dst = in.grad.data() + (o * s.len + a) * s.inner;
                        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                    }
            }
        });
    }
    return result;
}

/// Same data, new shape (element count must match).
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get()] {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return result;
}

/// Contiguous range [begin, begin+length) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t length) {
    if (axis >= x.rank() || length == 0 || begin + length > x.dim(axis)) {
        throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                             ") invalid on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    const auto s = detail::split_axis(x.shape(), axis);
    Shape shape = x.shape();
    shape[axis] = length;
    std::vector<double> out(shape_numel(shape));
    for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(x.data().data() + (o * s.len + begin) * s.inner, length * s.inner,
                    out.data() + o * length * s.inner);
    Tensor result(std::move(shape), std::move(out));
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), s, begin, length] {
            xn->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t i = 0; i < length * s.inner; ++i)
                    xn->grad[(o * s.len + begin) * s.inner + i] += on->grad[o * length * s.inner + i];
        });
    }
    return result;
}

/// Scalar holding element `index` of the flattened tensor.
inline Tensor pick(const Tensor& x, std::size_t index) {
    if (index >= x.numel()) throw DimensionError("pick: index out of range for " + shape_str(x.shape()));
    Tensor result = Tensor::scalar(x[index]);
    if (Tape* tape = detail::tape_for({&x})) {
        tape->record(result, [xn = x.impl(), on = result.impl().get(), index] {
            xn->ensure_grad();
            xn->grad[index] += on->grad[0];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Gradient verification

/// One coordinate of a parameter tensor to compare analytic vs numeric gradients on.
struct GradProbe {
    Tensor param;
    std::size_t index = 0;
};

/// Max relative error |analytic − numeric| / (|analytic| + 1e-8) over the probes,
/// with numeric gradients from central differences of half-width eps.
/// `loss` must rebuild the scalar from the current parameter values on every call.
inline double finite_diff_check(const std::function<Tensor()>& loss, std::span<const GradProbe> probes, double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");
    for (auto probe : probes) probe.param.zero_grad();
    std::vector<double> analytic(probes.size(), 0.0);
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor root = loss();
        tape.backward(root);
    }
    for (std::size_t i = 0; i < probes.size(); ++i) {
        analytic[i] = probes[i].param.has_grad() ? probes[i].param.grad()[probes[i].index] : 0.0;
    }
    NoGradScope no_grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        Tensor p = probes[i].param;
        double& slot = p.mutable_data()[probes[i].index];
        const double saved = slot;
        slot = saved + eps;
        const double plus = loss().item();
        slot = saved - eps;
        const double minus = loss().item();
        slot = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
    }
    return worst;
}

/// Checks every coordinate of a single tensor.
inline double finite_diff_check(const std::function<Tensor()>& loss, const Tensor& theta, double eps) {
    std::vector<GradProbe> probes;
    for (std::size_t i = 0; i < theta.numel(); ++i) probes.push_back({theta, i});
    return finite_diff_check(loss, probes, eps);
}

}  // namespace mtnav
