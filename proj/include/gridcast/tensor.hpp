#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gridcast {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index e : s) n *= e;
    return n;
}

enum class OpKind {
    leaf,
    add,
    sub,
    mul,
    scalar_add,
    scalar_mul,
    matmul,
    transpose,
    linear,
    add_rowwise,
    sigmoid,
    tanh,
    relu,
    softmax,
    softmax_rows,
    sum,
    mean,
    reshape,
    graph_propagate,
    concat_cols,
    col,
    scale_rows,
};

/// One recorded node of the computation graph. Nodes are created per forward
/// pass (define-by-run); the backward function accumulates into the parents'
/// grad buffers.
template <typename Scalar>
struct TensorNode {
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Shape shape;
    Array value;
    Array grad;  // sized lazily, same length as value
    bool requires_grad = false;
    OpKind op = OpKind::leaf;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    bool backward_done = false;

    Index numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad = Array::Zero(value.size());
    }
};

/// Shape-tagged dense tensor handle. Copying a tensor copies the handle;
/// the underlying buffer is shared. Values are stored flat in row-major
/// order; rank-2 tensors expose an Eigen matrix view.
template <typename Scalar>
class TensorT {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Node = TensorNode<Scalar>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static TensorT from_array(Shape shape, Array data, bool grad_enabled = false) {
        check_shape(shape);
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_string(shape));
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = grad_enabled;
        if (grad_enabled) node->ensure_grad();
        return TensorT(std::move(node));
    }

    static TensorT from_vector(const std::vector<Scalar>& data, Shape shape, bool grad_enabled = false) {
        Array a(static_cast<Index>(data.size()));
        for (Index i = 0; i < a.size(); ++i) a[i] = data[static_cast<std::size_t>(i)];
        return from_array(std::move(shape), std::move(a), grad_enabled);
    }

    template <typename Derived>
    static TensorT from_matrix(const Eigen::MatrixBase<Derived>& m, bool grad_enabled = false) {
        MatrixRM rm = m.template cast<Scalar>();
        Array a = Eigen::Map<const Array>(rm.data(), rm.size());
        return from_array({rm.rows(), rm.cols()}, std::move(a), grad_enabled);
    }

    static TensorT zeros(Shape shape, bool grad_enabled = false) {
        check_shape(shape);
        Array a = Array::Zero(shape_numel(shape));
        return from_array(std::move(shape), std::move(a), grad_enabled);
    }

    static TensorT full(Shape shape, Scalar v, bool grad_enabled = false) {
        check_shape(shape);
        Array a = Array::Constant(shape_numel(shape), v);
        return from_array(std::move(shape), std::move(a), grad_enabled);
    }

    static TensorT ones(Shape shape, bool grad_enabled = false) { return full(std::move(shape), Scalar(1), grad_enabled); }

    static TensorT scalar(Scalar v, bool grad_enabled = false) { return full({1}, v, grad_enabled); }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node()->shape; }
    Index numel() const { return node()->numel(); }
    int rank() const { return static_cast<int>(node()->shape.size()); }
    bool grad_enabled() const { return node()->requires_grad; }

    const Array& value() const { return node()->value; }
    Array& value_mut() { return node()->value; }

    /// Accumulated gradient; zero-length until backward has touched this leaf.
    const Array& grad() const { return node()->grad; }

    Scalar operator()(Index i) const { return node()->value[i]; }
    Scalar operator()(Index r, Index c) const {
        require_rank(2, "operator()(r, c)");
        return node()->value[r * node()->shape[1] + c];
    }

    Eigen::Map<const MatrixRM> matrix() const {
        require_rank(2, "matrix()");
        return Eigen::Map<const MatrixRM>(node()->value.data(), node()->shape[0], node()->shape[1]);
    }

    MatrixRM grad_matrix() const {
        require_rank(2, "grad_matrix()");
        const Array& g = node()->grad;
        if (g.size() != numel()) return MatrixRM::Zero(node()->shape[0], node()->shape[1]);
        return Eigen::Map<const MatrixRM>(g.data(), node()->shape[0], node()->shape[1]);
    }

    void zero_grad() {
        Node* n = node();
        n->grad = Array::Zero(n->value.size());
    }

    /// Value-sharing copy with gradient tracking stripped; used for frozen
    /// evaluation passes where no tape should be recorded.
    TensorT detached() const {
        auto m = std::make_shared<Node>();
        m->shape = node()->shape;
        m->value = node()->value;
        return TensorT(std::move(m));
    }

    /// Deep copy with its own buffers (fresh leaf).
    TensorT clone() const {
        auto m = std::make_shared<Node>();
        m->shape = node()->shape;
        m->value = node()->value;
        m->requires_grad = node()->requires_grad;
        if (m->requires_grad) m->ensure_grad();
        return TensorT(std::move(m));
    }

    std::shared_ptr<Node> node_ptr() const { return node_; }
    Node* node() const {
        if (!node_) throw std::logic_error("use of empty tensor");
        return node_.get();
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
        for (Index e : shape)
            if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_string(shape));
    }

    void require_rank(int r, const char* what) const {
        if (rank() != r)
            throw std::invalid_argument(std::string(what) + " requires rank-" + std::to_string(r) +
                                        " tensor, got " + shape_string(shape()));
    }

    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<double>;
using MatrixRM = Tensor::MatrixRM;

namespace detail {

template <typename Scalar>
void check_finite(const TensorT<Scalar>& t, const char* op) {
    if (!t.value().isFinite().all())
        throw std::invalid_argument(std::string(op) + ": non-finite input value");
}

template <typename Scalar>
bool any_requires(const std::vector<std::shared_ptr<TensorNode<Scalar>>>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

/// Build a graph node. The backward function is recorded only when some
/// parent participates in differentiation.
template <typename Scalar>
TensorT<Scalar> make_node(OpKind op, Shape shape, typename TensorNode<Scalar>::Array value,
                          std::vector<std::shared_ptr<TensorNode<Scalar>>> parents,
                          std::function<void(TensorNode<Scalar>&)> backward) {
    auto node = std::make_shared<TensorNode<Scalar>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    if (any_requires(parents)) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward);
    }
    return TensorT<Scalar>(std::move(node));
}

template <typename Scalar>
void check_same_shape(const TensorT<Scalar>& a, const TensorT<Scalar>& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename Scalar>
TensorT<Scalar> add(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
    detail::check_same_shape(a, b, "add");
    detail::check_finite(a, "add");
    detail::check_finite(b, "add");
    auto value = (a.value() + b.value()).eval();
    return detail::make_node<Scalar>(OpKind::add, a.shape(), std::move(value), {a.node_ptr(), b.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         for (auto& p : self.parents)
                                             if (p->requires_grad) {
                                                 p->ensure_grad();
                                                 p->grad += self.grad;
                                             }
                                     });
}

template <typename Scalar>
TensorT<Scalar> sub(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
    detail::check_same_shape(a, b, "sub");
    detail::check_finite(a, "sub");
    detail::check_finite(b, "sub");
    auto value = (a.value() - b.value()).eval();
    return detail::make_node<Scalar>(OpKind::sub, a.shape(), std::move(value), {a.node_ptr(), b.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& pa = self.parents[0];
                                         auto& pb = self.parents[1];
                                         if (pa->requires_grad) {
                                             pa->ensure_grad();
                                             pa->grad += self.grad;
                                         }
                                         if (pb->requires_grad) {
                                             pb->ensure_grad();
                                             pb->grad -= self.grad;
                                         }
                                     });
}

template <typename Scalar>
TensorT<Scalar> mul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
    detail::check_same_shape(a, b, "mul");
    detail::check_finite(a, "mul");
    detail::check_finite(b, "mul");
    auto value = (a.value() * b.value()).eval();
    return detail::make_node<Scalar>(OpKind::mul, a.shape(), std::move(value), {a.node_ptr(), b.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& pa = self.parents[0];
                                         auto& pb = self.parents[1];
                                         if (pa->requires_grad) {
                                             pa->ensure_grad();
                                             pa->grad += self.grad * pb->value;
                                         }
                                         if (pb->requires_grad) {
                                             pb->ensure_grad();
                                             pb->grad += self.grad * pa->value;
                                         }
                                     });
}

template <typename Scalar>
TensorT<Scalar> add_scalar(const TensorT<Scalar>& a, Scalar c) {
    detail::check_finite(a, "add_scalar");
    auto value = (a.value() + c).eval();
    return detail::make_node<Scalar>(OpKind::scalar_add, a.shape(), std::move(value), {a.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad;
                                     });
}

template <typename Scalar>
TensorT<Scalar> mul_scalar(const TensorT<Scalar>& a, Scalar c) {
    detail::check_finite(a, "mul_scalar");
    auto value = (a.value() * c).eval();
    return detail::make_node<Scalar>(OpKind::scalar_mul, a.shape(), std::move(value), {a.node_ptr()},
                                     [c](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad * c;
                                     });
}

template <typename Scalar>
TensorT<Scalar> operator+(const TensorT<Scalar>& a, const TensorT<Scalar>& b) { return add(a, b); }
template <typename Scalar>
TensorT<Scalar> operator-(const TensorT<Scalar>& a, const TensorT<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
TensorT<Scalar> operator+(const TensorT<Scalar>& a, Scalar c) { return add_scalar(a, c); }
template <typename Scalar>
TensorT<Scalar> operator*(const TensorT<Scalar>& a, Scalar c) { return mul_scalar(a, c); }
template <typename Scalar>
TensorT<Scalar> operator*(Scalar c, const TensorT<Scalar>& a) { return mul_scalar(a, c); }

template <typename Scalar>
TensorT<Scalar> sigmoid(const TensorT<Scalar>& x) {
    detail::check_finite(x, "sigmoid");
    // 1/(1+e^-x), numerically split by sign
    auto value = x.value().unaryExpr([](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
    }).eval();
    return detail::make_node<Scalar>(OpKind::sigmoid, x.shape(), std::move(value), {x.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad * self.value * (Scalar(1) - self.value);
                                     });
}

template <typename Scalar>
TensorT<Scalar> tanh(const TensorT<Scalar>& x) {
    detail::check_finite(x, "tanh");
    auto value = x.value().tanh().eval();
    return detail::make_node<Scalar>(OpKind::tanh, x.shape(), std::move(value), {x.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad * (Scalar(1) - self.value.square());
                                     });
}

template <typename Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& x) {
    detail::check_finite(x, "relu");
    auto value = x.value().max(Scalar(0)).eval();
    return detail::make_node<Scalar>(OpKind::relu, x.shape(), std::move(value), {x.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad * (p->value > Scalar(0)).template cast<Scalar>();
                                     });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void softmax_span(const Scalar* in, Scalar* out, Index n) {
    Scalar mx = in[0];
    for (Index i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        total += out[i];
    }
    for (Index i = 0; i < n; ++i) out[i] /= total;
}

// dx_i = y_i * (g_i - sum_j g_j y_j)
template <typename Scalar>
void softmax_backward_span(const Scalar* y, const Scalar* g, Scalar* dx, Index n) {
    Scalar dot = 0;
    for (Index i = 0; i < n; ++i) dot += g[i] * y[i];
    for (Index i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
}

}  // namespace detail

/// Max-shifted softmax over a rank-1 tensor.
template <typename Scalar>
TensorT<Scalar> softmax(const TensorT<Scalar>& x) {
    if (x.rank() != 1) throw std::invalid_argument("softmax: expected rank-1 tensor, got " + shape_string(x.shape()));
    detail::check_finite(x, "softmax");
    const Index n = x.numel();
    typename TensorNode<Scalar>::Array value(n);
    detail::softmax_span(x.value().data(), value.data(), n);
    return detail::make_node<Scalar>(OpKind::softmax, x.shape(), std::move(value), {x.node_ptr()},
                                     [n](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         detail::softmax_backward_span(self.value.data(), self.grad.data(),
                                                                       p->grad.data(), n);
                                     });
}

/// Row-wise softmax over a rank-2 tensor.
template <typename Scalar>
TensorT<Scalar> softmax_rows(const TensorT<Scalar>& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("softmax_rows: expected rank-2 tensor, got " + shape_string(x.shape()));
    detail::check_finite(x, "softmax_rows");
    const Index rows = x.shape()[0], cols = x.shape()[1];
    typename TensorNode<Scalar>::Array value(rows * cols);
    for (Index r = 0; r < rows; ++r)
        detail::softmax_span(x.value().data() + r * cols, value.data() + r * cols, cols);
    return detail::make_node<Scalar>(OpKind::softmax_rows, x.shape(), std::move(value), {x.node_ptr()},
                                     [rows, cols](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         for (Index r = 0; r < rows; ++r)
                                             detail::softmax_backward_span(self.value.data() + r * cols,
                                                                           self.grad.data() + r * cols,
                                                                           p->grad.data() + r * cols, cols);
                                     });
}

// ---------------------------------------------------------------------------
// Matrix operations
// ---------------------------------------------------------------------------

template <typename Scalar>
TensorT<Scalar> matmul(const TensorT<Scalar>& a, const TensorT<Scalar>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    using MatrixRM = typename TensorT<Scalar>::MatrixRM;
    const Index m = a.shape()[0], n = b.shape()[1];
    MatrixRM prod = a.matrix() * b.matrix();
    typename TensorNode<Scalar>::Array value = Eigen::Map<const typename TensorNode<Scalar>::Array>(prod.data(), prod.size());
    return detail::make_node<Scalar>(
        OpKind::matmul, {m, n}, std::move(value), {a.node_ptr(), b.node_ptr()},
        [m, n](TensorNode<Scalar>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const Index k = pa->shape[1];
            Eigen::Map<const MatrixRM> g(self.grad.data(), m, n);
            Eigen::Map<const MatrixRM> av(pa->value.data(), m, k);
            Eigen::Map<const MatrixRM> bv(pb->value.data(), k, n);
            if (pa->requires_grad) {
                pa->ensure_grad();
                Eigen::Map<MatrixRM>(pa->grad.data(), m, k).noalias() += g * bv.transpose();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                Eigen::Map<MatrixRM>(pb->grad.data(), k, n).noalias() += av.transpose() * g;
            }
        });
}

template <typename Scalar>
TensorT<Scalar> transpose(const TensorT<Scalar>& x) {
    if (x.rank() != 2)
        throw std::invalid_argument("transpose: expected rank-2 tensor, got " + shape_string(x.shape()));
    using MatrixRM = typename TensorT<Scalar>::MatrixRM;
    const Index r = x.shape()[0], c = x.shape()[1];
    MatrixRM t = x.matrix().transpose();
    typename TensorNode<Scalar>::Array value = Eigen::Map<const typename TensorNode<Scalar>::Array>(t.data(), t.size());
    return detail::make_node<Scalar>(OpKind::transpose, {c, r}, std::move(value), {x.node_ptr()},
                                     [r, c](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         Eigen::Map<const MatrixRM> g(self.grad.data(), c, r);
                                         Eigen::Map<MatrixRM>(p->grad.data(), r, c).noalias() += g.transpose();
                                     });
}

/// Broadcast-add a rank-1 bias over every row of a rank-2 tensor. Broadcasting
/// is never implicit; this is the one named exception used by dense layers.
template <typename Scalar>
TensorT<Scalar> add_rowwise(const TensorT<Scalar>& x, const TensorT<Scalar>& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.shape()[1] != v.shape()[0])
        throw std::invalid_argument("add_rowwise: shape mismatch " + shape_string(x.shape()) + " vs " +
                                    shape_string(v.shape()));
    const Index rows = x.shape()[0], cols = x.shape()[1];
    typename TensorNode<Scalar>::Array value = x.value();
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) value[r * cols + c] += v.value()[c];
    return detail::make_node<Scalar>(OpKind::add_rowwise, x.shape(), std::move(value),
                                     {x.node_ptr(), v.node_ptr()},
                                     [rows, cols](TensorNode<Scalar>& self) {
                                         auto& px = self.parents[0];
                                         auto& pv = self.parents[1];
                                         if (px->requires_grad) {
                                             px->ensure_grad();
                                             px->grad += self.grad;
                                         }
                                         if (pv->requires_grad) {
                                             pv->ensure_grad();
                                             for (Index r = 0; r < rows; ++r)
                                                 for (Index c = 0; c < cols; ++c)
                                                     pv->grad[c] += self.grad[r * cols + c];
                                         }
                                     });
}

/// Fused dense map y = x * W^T + b with W stored out-by-in.
template <typename Scalar>
TensorT<Scalar> linear(const TensorT<Scalar>& x, const TensorT<Scalar>& w, const TensorT<Scalar>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.shape()[1] != w.shape()[1] ||
        w.shape()[0] != b.shape()[0])
        throw std::invalid_argument("linear: shape mismatch x" + shape_string(x.shape()) + " W" +
                                    shape_string(w.shape()) + " b" + shape_string(b.shape()));
    using MatrixRM = typename TensorT<Scalar>::MatrixRM;
    const Index rows = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
    MatrixRM y = x.matrix() * w.matrix().transpose();
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b.value().data(), out);
    typename TensorNode<Scalar>::Array value = Eigen::Map<const typename TensorNode<Scalar>::Array>(y.data(), y.size());
    return detail::make_node<Scalar>(
        OpKind::linear, {rows, out}, std::move(value), {x.node_ptr(), w.node_ptr(), b.node_ptr()},
        [rows, in, out](TensorNode<Scalar>& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            auto& pb = self.parents[2];
            Eigen::Map<const MatrixRM> g(self.grad.data(), rows, out);
            Eigen::Map<const MatrixRM> xv(px->value.data(), rows, in);
            Eigen::Map<const MatrixRM> wv(pw->value.data(), out, in);
            if (px->requires_grad) {
                px->ensure_grad();
                Eigen::Map<MatrixRM>(px->grad.data(), rows, in).noalias() += g * wv;
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                Eigen::Map<MatrixRM>(pw->grad.data(), out, in).noalias() += g.transpose() * xv;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(pb->grad.data(), out) +=
                    g.colwise().sum().transpose();
            }
        });
}

/// Multiply each consecutive `block` rows of x by the fixed square matrix a.
/// Equivalent to (I_B (x) a) * x for a batch of stacked per-graph features;
/// a itself is not differentiated.
template <typename Scalar>
TensorT<Scalar> graph_propagate(const std::shared_ptr<const typename TensorT<Scalar>::MatrixRM>& a,
                                const TensorT<Scalar>& x) {
    using MatrixRM = typename TensorT<Scalar>::MatrixRM;
    if (!a || a->rows() != a->cols()) throw std::invalid_argument("graph_propagate: propagation matrix must be square");
    const Index block = a->rows();
    if (x.rank() != 2 || x.shape()[0] % block != 0)
        throw std::invalid_argument("graph_propagate: rows of " + shape_string(x.shape()) +
                                    " not a multiple of block size " + std::to_string(block));
    const Index rows = x.shape()[0], cols = x.shape()[1], nblocks = rows / block;
    typename TensorNode<Scalar>::Array value(rows * cols);
    Eigen::Map<MatrixRM> y(value.data(), rows, cols);
    Eigen::Map<const MatrixRM> xv(x.value().data(), rows, cols);
    for (Index i = 0; i < nblocks; ++i)
        y.middleRows(i * block, block).noalias() = (*a) * xv.middleRows(i * block, block);
    return detail::make_node<Scalar>(OpKind::graph_propagate, x.shape(), std::move(value), {x.node_ptr()},
                                     [a, block, nblocks, rows, cols](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         Eigen::Map<const MatrixRM> g(self.grad.data(), rows, cols);
                                         Eigen::Map<MatrixRM> dx(p->grad.data(), rows, cols);
                                         for (Index i = 0; i < nblocks; ++i)
                                             dx.middleRows(i * block, block).noalias() +=
                                                 a->transpose() * g.middleRows(i * block, block);
                                     });
}

// ---------------------------------------------------------------------------
// Structural operations
// ---------------------------------------------------------------------------

template <typename Scalar>
TensorT<Scalar> reshape(const TensorT<Scalar>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                    shape_string(shape));
    return detail::make_node<Scalar>(OpKind::reshape, std::move(shape), x.value(), {x.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad;
                                     });
}

/// Stack rank-2 tensors side by side (equal row counts).
template <typename Scalar>
TensorT<Scalar> concat_cols(const std::vector<TensorT<Scalar>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const Index rows = parts[0].shape()[0];
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != rows)
            throw std::invalid_argument("concat_cols: incompatible part shape " + shape_string(p.shape()));
        cols += p.shape()[1];
    }
    typename TensorNode<Scalar>::Array value(rows * cols);
    std::vector<Index> widths;
    std::vector<std::shared_ptr<TensorNode<Scalar>>> parents;
    Index at = 0;
    for (const auto& p : parts) {
        const Index w = p.shape()[1];
        for (Index r = 0; r < rows; ++r)
            for (Index c = 0; c < w; ++c) value[r * cols + at + c] = p.value()[r * w + c];
        widths.push_back(w);
        parents.push_back(p.node_ptr());
        at += w;
    }
    return detail::make_node<Scalar>(OpKind::concat_cols, {rows, cols}, std::move(value), std::move(parents),
                                     [rows, cols, widths](TensorNode<Scalar>& self) {
                                         Index at = 0;
                                         for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                             auto& p = self.parents[i];
                                             const Index w = widths[i];
                                             if (p->requires_grad) {
                                                 p->ensure_grad();
                                                 for (Index r = 0; r < rows; ++r)
                                                     for (Index c = 0; c < w; ++c)
                                                         p->grad[r * w + c] += self.grad[r * cols + at + c];
                                             }
                                             at += w;
                                         }
                                     });
}

/// Extract column j of a rank-2 tensor as a rank-1 tensor.
template <typename Scalar>
TensorT<Scalar> col(const TensorT<Scalar>& x, Index j) {
    if (x.rank() != 2 || j < 0 || j >= x.shape()[1])
        throw std::invalid_argument("col: index " + std::to_string(j) + " out of range for " +
                                    shape_string(x.shape()));
    const Index rows = x.shape()[0], cols = x.shape()[1];
    typename TensorNode<Scalar>::Array value(rows);
    for (Index r = 0; r < rows; ++r) value[r] = x.value()[r * cols + j];
    return detail::make_node<Scalar>(OpKind::col, {rows}, std::move(value), {x.node_ptr()},
                                     [rows, cols, j](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         for (Index r = 0; r < rows; ++r) p->grad[r * cols + j] += self.grad[r];
                                     });
}

/// Scale row b of x by s[b].
template <typename Scalar>
TensorT<Scalar> scale_rows(const TensorT<Scalar>& x, const TensorT<Scalar>& s) {
    if (x.rank() != 2 || s.rank() != 1 || s.shape()[0] != x.shape()[0])
        throw std::invalid_argument("scale_rows: shape mismatch " + shape_string(x.shape()) + " vs " +
                                    shape_string(s.shape()));
    const Index rows = x.shape()[0], cols = x.shape()[1];
    typename TensorNode<Scalar>::Array value(rows * cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) value[r * cols + c] = x.value()[r * cols + c] * s.value()[r];
    return detail::make_node<Scalar>(OpKind::scale_rows, x.shape(), std::move(value),
                                     {x.node_ptr(), s.node_ptr()},
                                     [rows, cols](TensorNode<Scalar>& self) {
                                         auto& px = self.parents[0];
                                         auto& ps = self.parents[1];
                                         if (px->requires_grad) {
                                             px->ensure_grad();
                                             for (Index r = 0; r < rows; ++r)
                                                 for (Index c = 0; c < cols; ++c)
                                                     px->grad[r * cols + c] +=
                                                         self.grad[r * cols + c] * ps->value[r];
                                         }
                                         if (ps->requires_grad) {
                                             ps->ensure_grad();
                                             for (Index r = 0; r < rows; ++r) {
                                                 Scalar acc = 0;
                                                 for (Index c = 0; c < cols; ++c)
                                                     acc += self.grad[r * cols + c] * px->value[r * cols + c];
                                                 ps->grad[r] += acc;
                                             }
                                         }
                                     });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Scalar>
TensorT<Scalar> sum(const TensorT<Scalar>& x) {
    typename TensorNode<Scalar>::Array value(1);
    value[0] = x.value().sum();
    return detail::make_node<Scalar>(OpKind::sum, {1}, std::move(value), {x.node_ptr()},
                                     [](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad[0];
                                     });
}

template <typename Scalar>
TensorT<Scalar> mean(const TensorT<Scalar>& x) {
    const Index n = x.numel();
    typename TensorNode<Scalar>::Array value(1);
    value[0] = x.value().sum() / static_cast<Scalar>(n);
    return detail::make_node<Scalar>(OpKind::mean, {1}, std::move(value), {x.node_ptr()},
                                     [n](TensorNode<Scalar>& self) {
                                         auto& p = self.parents[0];
                                         p->ensure_grad();
                                         p->grad += self.grad[0] / static_cast<Scalar>(n);
                                     });
}

/// Mean squared error between a prediction and a target of equal shape.
template <typename Scalar>
TensorT<Scalar> mse_loss(const TensorT<Scalar>& pred, const TensorT<Scalar>& target) {
    auto d = sub(pred, target);
    return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

/// Populate gradients of every grad-enabled leaf reachable from a scalar loss.
/// Gradients accumulate; callers reset leaves between steps via zero_grad.
template <typename Scalar>
void backward(const TensorT<Scalar>& loss) {
    auto* root = loss.node();
    if (root->numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_string(root->shape));
    if (root->backward_done)
        throw std::logic_error("backward: already run on this graph; rebuild the forward pass first");
    root->backward_done = true;
    if (!root->requires_grad) return;  // loss does not depend on any tracked leaf

    // Post-order DFS, then replay in reverse so parents see complete grads.
    std::vector<TensorNode<Scalar>*> order;
    std::unordered_set<const TensorNode<Scalar>*> seen;
    std::vector<std::pair<TensorNode<Scalar>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<Scalar>* parent = node->parents[next++].get();
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<Scalar>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

template <typename Scalar>
void zero_grads(std::vector<TensorT<Scalar>*> tensors) {
    for (auto* t : tensors) t->zero_grad();
}

}  // namespace gridcast
