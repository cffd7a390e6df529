#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mped {

/// Dense row-major real tensor. All math runs in double; the gradient
/// checks in the test suite rely on 64-bit accuracy.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), v(std::move(values)) {
        if (size_from_shape(shape) != v.size())
            throw std::invalid_argument("Tensor: shape/value count mismatch");
    }

    static std::size_t size_from_shape(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = size_from_shape(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor vector(std::vector<double> values) {
        std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor scalar(double x) { return Tensor({}, {x}); }

    std::size_t size() const { return v.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

/// Handle to a node on a Tape.
struct Var {
    std::uint32_t idx = 0;
};

/// Gradients keyed by the parameter tensor they belong to. Accumulation is
/// additive across repeated uses of the same parameter on one tape.
using Gradient = std::unordered_map<const Tensor*, Tensor>;

/// Reverse-mode tape over vector/scalar tensors. Single-threaded; distinct
/// tapes are independent.
class Tape {
    enum class Op : std::uint8_t {
        Leaf,
        MatVec,
        Add,
        Sub,
        Mul,
        Sigmoid,
        Tanh,
        Concat,
        Slice,
        Mean,
        SqNorm,
        Scale,
    };

    struct Node {
        Op op;
        std::uint32_t a = 0, b = 0;
        std::size_t aux = 0;      // slice offset
        double caux = 0.0;        // scale factor
        Tensor value;
        std::vector<double> adj;  // allocated lazily in backward
        const Tensor* param = nullptr;
    };

    std::vector<Node> nodes_;

    static const char* op_name(Op op) {
        switch (op) {
            case Op::Leaf: return "leaf";
            case Op::MatVec: return "matvec";
            case Op::Add: return "add";
            case Op::Sub: return "sub";
            case Op::Mul: return "mul";
            case Op::Sigmoid: return "sigmoid";
            case Op::Tanh: return "tanh";
            case Op::Concat: return "concat";
            case Op::Slice: return "slice";
            case Op::Mean: return "mean";
            case Op::SqNorm: return "sq_norm";
            case Op::Scale: return "scale";
        }
        return "?";
    }

    [[noreturn]] static void shape_error(Op op, const Tensor& x,
                                         const Tensor& y) {
        throw std::invalid_argument(std::string("autodiff ") + op_name(op) +
                                    ": shape mismatch " + x.shape_str() +
                                    " vs " + y.shape_str());
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Tensor& val(Var x) const { return nodes_[x.idx].value; }

public:
    std::size_t node_count() const { return nodes_.size(); }

    const Tensor& value(Var x) const { return nodes_.at(x.idx).value; }

    /// Records a constant (non-trainable) input.
    Var constant(Tensor t) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(t);
        return push(std::move(n));
    }

    /// Leases a trainable parameter onto the tape. Gradients returned by
    /// backward() are keyed by the given pointer.
    Var param(const Tensor& p) {
        Node n;
        n.op = Op::Leaf;
        n.value = p;
        n.param = &p;
        return push(std::move(n));
    }

    /// y = M x, M is [r,c], x is [c].
    Var matvec(Var m, Var x) {
        const Tensor& M = val(m);
        const Tensor& X = val(x);
        if (M.shape.size() != 2 || X.shape.size() != 1 || M.cols() != X.size())
            shape_error(Op::MatVec, M, X);
        Tensor out = Tensor::zeros({M.rows()});
        for (std::size_t i = 0; i < M.rows(); ++i) {
            double s = 0;
            const double* row = M.v.data() + i * M.cols();
            for (std::size_t j = 0; j < M.cols(); ++j) s += row[j] * X.v[j];
            out.v[i] = s;
        }
        Node n;
        n.op = Op::MatVec;
        n.a = m.idx;
        n.b = x.idx;
        n.value = std::move(out);
        return push(std::move(n));
    }

    Var add(Var a, Var b) { return binary(Op::Add, a, b); }
    Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }

    Var sigmoid(Var x) {
        Tensor out = val(x);
        for (double& e : out.v) e = 1.0 / (1.0 + std::exp(-e));
        Node n;
        n.op = Op::Sigmoid;
        n.a = x.idx;
        n.value = std::move(out);
        return push(std::move(n));
    }

    Var tanh(Var x) {
        Tensor out = val(x);
        for (double& e : out.v) e = std::tanh(e);
        Node n;
        n.op = Op::Tanh;
        n.a = x.idx;
        n.value = std::move(out);
        return push(std::move(n));
    }

    /// Concatenation along the (single) feature axis.
    Var concat(Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.shape.size() != 1 || B.shape.size() != 1)
            shape_error(Op::Concat, A, B);
        Tensor out = Tensor::zeros({A.size() + B.size()});
        std::copy(A.v.begin(), A.v.end(), out.v.begin());
        std::copy(B.v.begin(), B.v.end(), out.v.begin() + A.size());
        Node n;
        n.op = Op::Concat;
        n.a = a.idx;
        n.b = b.idx;
        n.aux = A.size();
        n.value = std::move(out);
        return push(std::move(n));
    }

    /// Contiguous slice [begin, begin+len) of a vector.
    Var slice(Var x, std::size_t begin, std::size_t len) {
        const Tensor& X = val(x);
        if (X.shape.size() != 1 || begin + len > X.size())
            throw std::invalid_argument(
                "autodiff slice: range [" + std::to_string(begin) + "," +
                std::to_string(begin + len) + ") out of bounds for " +
                X.shape_str());
        Tensor out({len}, std::vector<double>(X.v.begin() + begin,
                                              X.v.begin() + begin + len));
        Node n;
        n.op = Op::Slice;
        n.a = x.idx;
        n.aux = begin;
        n.value = std::move(out);
        return push(std::move(n));
    }

    /// Arithmetic mean of all elements, scalar output.
    Var mean(Var x) {
        const Tensor& X = val(x);
        if (X.size() == 0)
            throw std::invalid_argument("autodiff mean: empty input");
        double s = std::accumulate(X.v.begin(), X.v.end(), 0.0);
        Node n;
        n.op = Op::Mean;
        n.a = x.idx;
        n.value = Tensor::scalar(s / static_cast<double>(X.size()));
        return push(std::move(n));
    }

    /// Squared L2 norm, scalar output.
    Var sq_norm(Var x) {
        const Tensor& X = val(x);
        double s = 0;
        for (double e : X.v) s += e * e;
        Node n;
        n.op = Op::SqNorm;
        n.a = x.idx;
        n.value = Tensor::scalar(s);
        return push(std::move(n));
    }

    Var scale(Var x, double c) {
        Tensor out = val(x);
        for (double& e : out.v) e *= c;
        Node n;
        n.op = Op::Scale;
        n.a = x.idx;
        n.caux = c;
        n.value = std::move(out);
        return push(std::move(n));
    }

    /// Reverse sweep from a scalar loss. Visits every recorded node exactly
    /// once in reverse order; returns gradients for all leased parameters.
    Gradient backward(Var loss) {
        Node& top = nodes_.at(loss.idx);
        if (top.value.size() != 1)
            throw std::invalid_argument(
                "backward: loss must be scalar, got " + top.value.shape_str());
        for (Node& n : nodes_) n.adj.assign(n.value.size(), 0.0);
        top.adj[0] = 1.0;

        for (std::size_t i = loss.idx + 1; i-- > 0;) {
            Node& n = nodes_[i];
            bool touched = false;
            for (double g : n.adj)
                if (g != 0.0) { touched = true; break; }
            if (!touched) continue;
            for (double g : n.adj)
                if (!std::isfinite(g))
                    throw std::runtime_error(
                        std::string("backward: non-finite adjoint at ") +
                        op_name(n.op));
            propagate(n);
        }

        Gradient grads;
        for (const Node& n : nodes_) {
            if (!n.param) continue;
            auto it = grads.find(n.param);
            if (it == grads.end()) {
                Tensor g = n.param->v.empty() ? Tensor() : *n.param;
                g.v = n.adj.empty() ? std::vector<double>(n.value.size(), 0.0)
                                    : n.adj;
                g.shape = n.param->shape;
                grads.emplace(n.param, std::move(g));
            } else {
                for (std::size_t j = 0; j < n.adj.size(); ++j)
                    it->second.v[j] += n.adj[j];
            }
        }
        return grads;
    }

private:
    Var binary(Op op, Var a, Var b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B)) shape_error(op, A, B);
        Tensor out = A;
        switch (op) {
            case Op::Add:
                for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
                break;
            case Op::Sub:
                for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= B.v[i];
                break;
            case Op::Mul:
                for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= B.v[i];
                break;
            default:
                throw std::logic_error("binary: bad op");
        }
        Node n;
        n.op = op;
        n.a = a.idx;
        n.b = b.idx;
        n.value = std::move(out);
        return push(std::move(n));
    }

    void propagate(Node& n) {
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatVec: {
                Node& m = nodes_[n.a];
                Node& x = nodes_[n.b];
                std::size_t r = m.value.rows(), c = m.value.cols();
                for (std::size_t i = 0; i < r; ++i) {
                    double g = n.adj[i];
                    if (g == 0.0) continue;
                    const double* row = m.value.v.data() + i * c;
                    double* mrow = m.adj.data() + i * c;
                    for (std::size_t j = 0; j < c; ++j) {
                        mrow[j] += g * x.value.v[j];
                        x.adj[j] += g * row[j];
                    }
                }
                break;
            }
            case Op::Add: {
                accumulate(n.a, n.adj, +1.0);
                accumulate(n.b, n.adj, +1.0);
                break;
            }
            case Op::Sub: {
                accumulate(n.a, n.adj, +1.0);
                accumulate(n.b, n.adj, -1.0);
                break;
            }
            case Op::Mul: {
                Node& a = nodes_[n.a];
                Node& b = nodes_[n.b];
                for (std::size_t i = 0; i < n.adj.size(); ++i) {
                    a.adj[i] += n.adj[i] * b.value.v[i];
                    b.adj[i] += n.adj[i] * a.value.v[i];
                }
                break;
            }
            case Op::Sigmoid: {
                Node& a = nodes_[n.a];
                for (std::size_t i = 0; i < n.adj.size(); ++i) {
                    double y = n.value.v[i];
                    a.adj[i] += n.adj[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::Tanh: {
                Node& a = nodes_[n.a];
                for (std::size_t i = 0; i < n.adj.size(); ++i) {
                    double y = n.value.v[i];
                    a.adj[i] += n.adj[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::Concat: {
                Node& a = nodes_[n.a];
                Node& b = nodes_[n.b];
                for (std::size_t i = 0; i < n.aux; ++i) a.adj[i] += n.adj[i];
                for (std::size_t i = n.aux; i < n.adj.size(); ++i)
                    b.adj[i - n.aux] += n.adj[i];
                break;
            }
            case Op::Slice: {
                Node& a = nodes_[n.a];
                for (std::size_t i = 0; i < n.adj.size(); ++i)
                    a.adj[n.aux + i] += n.adj[i];
                break;
            }
            case Op::Mean: {
                Node& a = nodes_[n.a];
                double g = n.adj[0] / static_cast<double>(a.value.size());
                for (double& e : a.adj) e += g;
                break;
            }
            case Op::SqNorm: {
                Node& a = nodes_[n.a];
                double g = 2.0 * n.adj[0];
                for (std::size_t i = 0; i < a.adj.size(); ++i)
                    a.adj[i] += g * a.value.v[i];
                break;
            }
            case Op::Scale: {
                accumulate(n.a, n.adj, n.caux);
                break;
            }
        }
    }

    void accumulate(std::uint32_t target, const std::vector<double>& g,
                    double factor) {
        Node& t = nodes_[target];
        for (std::size_t i = 0; i < g.size(); ++i) t.adj[i] += factor * g[i];
    }
};

/// Central-difference check of df/dtheta against the analytic gradient.
/// `f` builds a scalar loss on the given tape from the leased parameter.
/// Returns the max over coordinates of
///   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(
    const std::function<Var(Tape&, Var)>& f, Tensor theta, double eps) {
    if (eps <= 0) throw std::invalid_argument("grad_check: eps must be > 0");

    Tape tape;
    Var p = tape.param(theta);
    Var loss = f(tape, p);
    Gradient grads = tape.backward(loss);
    Tensor analytic = grads.count(&theta) ? grads.at(&theta)
                                          : Tensor::zeros(theta.shape);

    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double saved = theta.v[i];
        auto eval = [&](double x) {
            theta.v[i] = x;
            Tape t;
            double y = t.value(f(t, t.param(theta))).v[0];
            if (!std::isfinite(y))
                throw std::runtime_error(
                    "grad_check: non-finite loss at perturbed point");
            return y;
        };
        double numeric = (eval(saved + eps) - eval(saved - eps)) / (2.0 * eps);
        theta.v[i] = saved;
        double a = analytic.v[i];
        double err = std::abs(a - numeric) /
                     std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace mped
