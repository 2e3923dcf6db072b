#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdlab/kernels.hpp"
#include "kdlab/tensor.hpp"

namespace kdlab {

// Probabilities are clamped to this floor inside standalone log ops so a
// support mismatch (e.g. reverse KL on zero-mass tokens) cannot produce -inf.
// Fused log-softmax does not need the floor: it is finite for finite logits.
inline constexpr double kProbFloor = 1e-12;

namespace detail {

template <typename T>
void check_finite_rows(const T* x, int64_t n, const char* op) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(x[i]))) {
            throw std::domain_error(std::string(op) + ": non-finite input");
        }
    }
}

template <typename T>
void softmax_row(const T* in, T* out, int n, T inv_tau) {
    T m = in[0] * inv_tau;
    for (int j = 1; j < n; ++j) {
        m = std::max(m, in[j] * inv_tau);
    }
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] * inv_tau - m);
        sum += out[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) {
        out[j] *= inv;
    }
}

template <typename T>
void log_softmax_row(const T* in, T* out, int n, T inv_tau) {
    T m = in[0] * inv_tau;
    for (int j = 1; j < n; ++j) {
        m = std::max(m, in[j] * inv_tau);
    }
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
        sum += std::exp(in[j] * inv_tau - m);
    }
    const T lse = m + std::log(sum);
    for (int j = 0; j < n; ++j) {
        out[j] = in[j] * inv_tau - lse;
    }
}

}  // namespace detail

// Standalone (non-differentiated) row softmax, used by decoding and metrics.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("softmax_rows: temperature must be positive");
    }
    detail::check_finite_rows(logits.data.data(), logits.numel(), "softmax_rows");
    Tensor<T> out = Tensor<T>::zeros(logits.shape);
    const int n = logits.cols();
    const int rows = static_cast<int>(logits.numel() / n);
    const T inv_tau = static_cast<T>(1.0 / temperature);
    for (int i = 0; i < rows; ++i) {
        detail::softmax_row(logits.data.data() + static_cast<size_t>(i) * n,
                            out.data.data() + static_cast<size_t>(i) * n, n, inv_tau);
    }
    return out;
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("log_softmax_rows: temperature must be positive");
    }
    detail::check_finite_rows(logits.data.data(), logits.numel(), "log_softmax_rows");
    Tensor<T> out = Tensor<T>::zeros(logits.shape);
    const int n = logits.cols();
    const int rows = static_cast<int>(logits.numel() / n);
    const T inv_tau = static_cast<T>(1.0 / temperature);
    for (int i = 0; i < rows; ++i) {
        detail::log_softmax_row(logits.data.data() + static_cast<size_t>(i) * n,
                                out.data.data() + static_cast<size_t>(i) * n, n, inv_tau);
    }
    return out;
}

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append records in execution order; backward() walks
// the records once, in reverse. Nodes whose ancestors contain no trainable
// leaf are skipped entirely during the backward pass.
template <typename T>
class Tape {
public:
    Var leaf(const Tensor<T>& value, bool requires_grad) {
        if (!value.all_finite()) {
            throw std::domain_error("Tape::leaf: non-finite values rejected at graph boundary");
        }
        return push(value, requires_grad, nullptr);
    }

    Var constant(const Tensor<T>& value) { return leaf(value, false); }

    Var constant_scalar(T v) {
        return constant(Tensor<T>::from_vector({1}, {v}));
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }

    T scalar(Var v) const {
        const Tensor<T>& t = node(v).value;
        if (t.numel() != 1) {
            throw std::invalid_argument("Tape::scalar: tensor is not scalar");
        }
        return t.data[0];
    }

    const std::vector<T>& grad(Var v) const {
        const NodeRec& n = node(v);
        if (!n.requires_grad) {
            throw std::invalid_argument("Tape::grad: node does not require grad");
        }
        return n.grad;
    }

    bool requires_grad(Var v) const { return node(v).requires_grad; }

    size_t size() const { return nodes_.size(); }

    // Checkpoint/rollback for graph reuse: bind long-lived leaves, mark, then
    // truncate back before each fresh forward. Vars minted after the mark are
    // invalidated by reset_to.
    size_t mark() const { return nodes_.size(); }

    void reset_to(size_t mark) {
        if (mark > nodes_.size()) {
            throw std::invalid_argument("Tape::reset_to: mark beyond end of tape");
        }
        nodes_.resize(mark);
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        Tensor<T> out = node(a).value;
        const auto& bv = node(b).value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
        return binary(std::move(out), a, b, [](Tape& t, const std::vector<T>& g, int a, int b) {
            t.accumulate(a, g.data(), g.size(), T(1));
            t.accumulate(b, g.data(), g.size(), T(1));
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        Tensor<T> out = node(a).value;
        const auto& bv = node(b).value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
        return binary(std::move(out), a, b, [](Tape& t, const std::vector<T>& g, int a, int b) {
            t.accumulate(a, g.data(), g.size(), T(1));
            t.accumulate(b, g.data(), g.size(), T(-1));
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(a, b, "mul");
        Tensor<T> out = node(a).value;
        const auto& bv = node(b).value.data;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
        return binary(std::move(out), a, b, [](Tape& t, const std::vector<T>& g, int a, int b) {
            if (t.wants_grad(a)) {
                const auto& bv = t.node_at(b).value.data;
                auto* ga = t.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (t.wants_grad(b)) {
                const auto& av = t.node_at(a).value.data;
                auto* gb = t.grad_buf(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }

    Var scale(Var a, T c) {
        Tensor<T> out = node(a).value;
        for (T& v : out.data) v *= c;
        return unary(std::move(out), a, [c](Tape& t, const std::vector<T>& g, int a) {
            t.accumulate(a, g.data(), g.size(), c);
        });
    }

    Var exp_elem(Var a) {
        Tensor<T> out = node(a).value;
        for (T& v : out.data) v = std::exp(v);
        const int id = next_id();
        Var r = unary(std::move(out), a, [id](Tape& t, const std::vector<T>& g, int a) {
            const auto& y = t.node_at(id).value.data;
            auto* ga = t.grad_buf(a);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        });
        return r;
    }

    // log with the probability floor; the clamped region has zero gradient.
    Var log_elem(Var a) {
        const T floor = static_cast<T>(kProbFloor);
        Tensor<T> out = node(a).value;
        for (T& v : out.data) v = std::log(std::max(v, floor));
        return unary(std::move(out), a, [floor](Tape& t, const std::vector<T>& g, int a) {
            const auto& x = t.node_at(a).value.data;
            auto* ga = t.grad_buf(a);
            for (size_t i = 0; i < g.size(); ++i) {
                if (x[i] > floor) ga[i] += g[i] / x[i];
            }
        });
    }

    Var gelu(Var a) {
        Tensor<T> out = node(a).value;
        for (T& v : out.data) {
            const double x = static_cast<double>(v);
            const double u = kC_ * (x + 0.044715 * x * x * x);
            v = static_cast<T>(0.5 * x * (1.0 + std::tanh(u)));
        }
        return unary(std::move(out), a, [](Tape& t, const std::vector<T>& g, int a) {
            const auto& xv = t.node_at(a).value.data;
            auto* ga = t.grad_buf(a);
            for (size_t i = 0; i < g.size(); ++i) {
                const double x = static_cast<double>(xv[i]);
                const double u = kC_ * (x + 0.044715 * x * x * x);
                const double th = std::tanh(u);
                const double du = kC_ * (1.0 + 3.0 * 0.044715 * x * x);
                const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                ga[i] += g[i] * static_cast<T>(d);
            }
        });
    }

    // ---- matrix ops ----

    Var matmul(Var a, Var b) {
        const Tensor<T>& av = node(a).value;
        const Tensor<T>& bv = node(b).value;
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[0]) {
            throw std::invalid_argument("matmul: incompatible shapes " + shape_string(av.shape) +
                                        " x " + shape_string(bv.shape));
        }
        const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        Tensor<T> out = Tensor<T>::zeros({m, n});
        gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
        return binary(std::move(out), a, b, [m, k, n](Tape& t, const std::vector<T>& g, int a, int b) {
            if (t.wants_grad(a)) {
                gemm_nt(g.data(), t.node_at(b).value.data.data(), t.grad_buf(a), m, n, k);
            }
            if (t.wants_grad(b)) {
                gemm_tn(t.node_at(a).value.data.data(), g.data(), t.grad_buf(b), m, k, n);
            }
        });
    }

    // a [m,k] x b[n,k]^T -> [m,n]
    Var matmul_nt(Var a, Var b) {
        const Tensor<T>& av = node(a).value;
        const Tensor<T>& bv = node(b).value;
        if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[1]) {
            throw std::invalid_argument("matmul_nt: incompatible shapes");
        }
        const int m = av.shape[0], k = av.shape[1], n = bv.shape[0];
        Tensor<T> out = Tensor<T>::zeros({m, n});
        gemm_nt(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
        return binary(std::move(out), a, b, [m, k, n](Tape& t, const std::vector<T>& g, int a, int b) {
            if (t.wants_grad(a)) {
                gemm_nn(g.data(), t.node_at(b).value.data.data(), t.grad_buf(a), m, n, k);
            }
            if (t.wants_grad(b)) {
                gemm_tn(g.data(), t.node_at(a).value.data.data(), t.grad_buf(b), m, n, k);
            }
        });
    }

    Var add_row(Var x, Var bias) {
        const Tensor<T>& xv = node(x).value;
        const Tensor<T>& bv = node(bias).value;
        if (xv.shape.size() != 2 || bv.numel() != static_cast<int64_t>(xv.shape[1])) {
            throw std::invalid_argument("add_row: bias length must match columns");
        }
        const int m = xv.shape[0], n = xv.shape[1];
        Tensor<T> out = xv;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) out.at(i, j) += bv.data[j];
        }
        return binary(std::move(out), x, bias, [m, n](Tape& t, const std::vector<T>& g, int x, int b) {
            t.accumulate(x, g.data(), g.size(), T(1));
            if (t.wants_grad(b)) {
                auto* gb = t.grad_buf(b);
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
                }
            }
        });
    }

    Var slice_cols(Var x, int c0, int c1) {
        const Tensor<T>& xv = node(x).value;
        if (xv.shape.size() != 2) {
            throw std::invalid_argument("slice_cols: 2-d tensor expected");
        }
        const int m = xv.shape[0], n = xv.shape[1];
        if (c0 < 0 || c1 > n || c0 >= c1) {
            throw std::invalid_argument("slice_cols: bad range");
        }
        const int w = c1 - c0;
        Tensor<T> out = Tensor<T>::zeros({m, w});
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) out.at(i, j) = xv.at(i, c0 + j);
        }
        return unary(std::move(out), x, [m, n, c0, w](Tape& t, const std::vector<T>& g, int x) {
            auto* gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < w; ++j) {
                    gx[static_cast<size_t>(i) * n + c0 + j] += g[static_cast<size_t>(i) * w + j];
                }
            }
        });
    }

    Var concat_cols(const std::vector<Var>& xs) {
        if (xs.empty()) {
            throw std::invalid_argument("concat_cols: empty input");
        }
        const int m = node(xs[0]).value.shape[0];
        int total = 0;
        std::vector<int> widths;
        for (Var v : xs) {
            const Tensor<T>& t = node(v).value;
            if (t.shape.size() != 2 || t.shape[0] != m) {
                throw std::invalid_argument("concat_cols: row mismatch");
            }
            widths.push_back(t.shape[1]);
            total += t.shape[1];
        }
        Tensor<T> out = Tensor<T>::zeros({m, total});
        int off = 0;
        for (size_t s = 0; s < xs.size(); ++s) {
            const Tensor<T>& t = node(xs[s]).value;
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < widths[s]; ++j) out.at(i, off + j) = t.at(i, j);
            }
            off += widths[s];
        }
        std::vector<int> ids;
        bool rg = false;
        for (Var v : xs) {
            ids.push_back(v.id);
            rg = rg || node(v).requires_grad;
        }
        return push(std::move(out), rg,
                    [ids, widths, m, total](Tape& t, const std::vector<T>& g) {
                        int off = 0;
                        for (size_t s = 0; s < ids.size(); ++s) {
                            if (t.wants_grad(ids[s])) {
                                auto* gx = t.grad_buf(ids[s]);
                                for (int i = 0; i < m; ++i) {
                                    for (int j = 0; j < widths[s]; ++j) {
                                        gx[static_cast<size_t>(i) * widths[s] + j] +=
                                            g[static_cast<size_t>(i) * total + off + j];
                                    }
                                }
                            }
                            off += widths[s];
                        }
                    });
    }

    Var embedding(Var table, const std::vector<int>& ids) {
        const Tensor<T>& tv = node(table).value;
        if (tv.shape.size() != 2) {
            throw std::invalid_argument("embedding: table must be 2-d");
        }
        const int vocab = tv.shape[0], d = tv.shape[1];
        for (int id : ids) {
            if (id < 0 || id >= vocab) {
                throw std::invalid_argument("embedding: id out of range");
            }
        }
        const int m = static_cast<int>(ids.size());
        Tensor<T> out = Tensor<T>::zeros({m, d});
        for (int i = 0; i < m; ++i) {
            const T* src = tv.data.data() + static_cast<size_t>(ids[i]) * d;
            std::copy(src, src + d, out.data.data() + static_cast<size_t>(i) * d);
        }
        return unary(std::move(out), table, [ids, d](Tape& t, const std::vector<T>& g, int table) {
            auto* gt = t.grad_buf(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                axpy(T(1), g.data() + i * d, gt + static_cast<size_t>(ids[i]) * d, d);
            }
        });
    }

    Var layer_norm(Var x, Var gain, Var bias, T eps) {
        const Tensor<T>& xv = node(x).value;
        if (xv.shape.size() != 2) {
            throw std::invalid_argument("layer_norm: 2-d tensor expected");
        }
        const int m = xv.shape[0], n = xv.shape[1];
        if (node(gain).value.numel() != n || node(bias).value.numel() != n) {
            throw std::invalid_argument("layer_norm: gain/bias length must match columns");
        }
        Tensor<T> out = Tensor<T>::zeros({m, n});
        auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(m) * n);
        auto inv_std = std::make_shared<std::vector<T>>(m);
        const auto& gv = node(gain).value.data;
        const auto& bv = node(bias).value.data;
        for (int i = 0; i < m; ++i) {
            const T* row = xv.data.data() + static_cast<size_t>(i) * n;
            T mean = T(0);
            for (int j = 0; j < n; ++j) mean += row[j];
            mean /= static_cast<T>(n);
            T var = T(0);
            for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= static_cast<T>(n);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[i] = is;
            for (int j = 0; j < n; ++j) {
                const T xh = (row[j] - mean) * is;
                (*xhat)[static_cast<size_t>(i) * n + j] = xh;
                out.at(i, j) = gv[j] * xh + bv[j];
            }
        }
        const int xi = x.id, gi = gain.id, bi = bias.id;
        const bool rg = node(x).requires_grad || node(gain).requires_grad || node(bias).requires_grad;
        return push(std::move(out), rg, [xi, gi, bi, m, n, xhat, inv_std](Tape& t, const std::vector<T>& g) {
            const auto& gv = t.node_at(gi).value.data;
            if (t.wants_grad(gi)) {
                auto* gg = t.grad_buf(gi);
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        gg[j] += g[static_cast<size_t>(i) * n + j] * (*xhat)[static_cast<size_t>(i) * n + j];
                    }
                }
            }
            if (t.wants_grad(bi)) {
                auto* gb = t.grad_buf(bi);
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<size_t>(i) * n + j];
                }
            }
            if (t.wants_grad(xi)) {
                auto* gx = t.grad_buf(xi);
                for (int i = 0; i < m; ++i) {
                    const T* grow = g.data() + static_cast<size_t>(i) * n;
                    const T* xh = xhat->data() + static_cast<size_t>(i) * n;
                    T mean_dy = T(0), mean_dy_xh = T(0);
                    for (int j = 0; j < n; ++j) {
                        const T dy = grow[j] * gv[j];
                        mean_dy += dy;
                        mean_dy_xh += dy * xh[j];
                    }
                    mean_dy /= static_cast<T>(n);
                    mean_dy_xh /= static_cast<T>(n);
                    for (int j = 0; j < n; ++j) {
                        const T dy = grow[j] * gv[j];
                        gx[static_cast<size_t>(i) * n + j] +=
                            (*inv_std)[i] * (dy - mean_dy - xh[j] * mean_dy_xh);
                    }
                }
            }
        });
    }

    // ---- softmax family ----

    Var softmax_rows_op(Var x, T temperature) {
        if (!(temperature > T(0))) {
            throw std::invalid_argument("softmax_rows: temperature must be positive");
        }
        const Tensor<T>& xv = node(x).value;
        detail::check_finite_rows(xv.data.data(), xv.numel(), "softmax_rows");
        const int n = xv.cols();
        const int m = static_cast<int>(xv.numel() / n);
        Tensor<T> out = Tensor<T>::zeros(xv.shape);
        const T inv_tau = T(1) / temperature;
        for (int i = 0; i < m; ++i) {
            detail::softmax_row(xv.data.data() + static_cast<size_t>(i) * n,
                                out.data.data() + static_cast<size_t>(i) * n, n, inv_tau);
        }
        const int id = next_id();
        return unary(std::move(out), x, [id, m, n, inv_tau](Tape& t, const std::vector<T>& g, int x) {
            const auto& p = t.node_at(id).value.data;
            auto* gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i) {
                const size_t off = static_cast<size_t>(i) * n;
                T dot = T(0);
                for (int j = 0; j < n; ++j) dot += g[off + j] * p[off + j];
                for (int j = 0; j < n; ++j) {
                    gx[off + j] += p[off + j] * (g[off + j] - dot) * inv_tau;
                }
            }
        });
    }

    Var log_softmax_rows_op(Var x, T temperature) {
        if (!(temperature > T(0))) {
            throw std::invalid_argument("log_softmax_rows: temperature must be positive");
        }
        const Tensor<T>& xv = node(x).value;
        detail::check_finite_rows(xv.data.data(), xv.numel(), "log_softmax_rows");
        const int n = xv.cols();
        const int m = static_cast<int>(xv.numel() / n);
        Tensor<T> out = Tensor<T>::zeros(xv.shape);
        const T inv_tau = T(1) / temperature;
        for (int i = 0; i < m; ++i) {
            detail::log_softmax_row(xv.data.data() + static_cast<size_t>(i) * n,
                                    out.data.data() + static_cast<size_t>(i) * n, n, inv_tau);
        }
        const int id = next_id();
        return unary(std::move(out), x, [id, m, n, inv_tau](Tape& t, const std::vector<T>& g, int x) {
            const auto& y = t.node_at(id).value.data;
            auto* gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i) {
                const size_t off = static_cast<size_t>(i) * n;
                T gsum = T(0);
                for (int j = 0; j < n; ++j) gsum += g[off + j];
                for (int j = 0; j < n; ++j) {
                    gx[off + j] += (g[off + j] - std::exp(y[off + j]) * gsum) * inv_tau;
                }
            }
        });
    }

    // Square score matrix; row i is a softmax over columns 0..i, rest 0.
    Var causal_softmax(Var x) {
        const Tensor<T>& xv = node(x).value;
        const int m = xv.shape[0];
        if (xv.shape.size() != 2 || xv.shape[1] != m) {
            throw std::invalid_argument("causal_softmax: square matrix expected");
        }
        detail::check_finite_rows(xv.data.data(), xv.numel(), "causal_softmax");
        Tensor<T> out = Tensor<T>::zeros({m, m});
        for (int i = 0; i < m; ++i) {
            detail::softmax_row(xv.data.data() + static_cast<size_t>(i) * m,
                                out.data.data() + static_cast<size_t>(i) * m, i + 1, T(1));
        }
        const int id = next_id();
        return unary(std::move(out), x, [id, m](Tape& t, const std::vector<T>& g, int x) {
            const auto& p = t.node_at(id).value.data;
            auto* gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i) {
                const size_t off = static_cast<size_t>(i) * m;
                T dot = T(0);
                for (int j = 0; j <= i; ++j) dot += g[off + j] * p[off + j];
                for (int j = 0; j <= i; ++j) {
                    gx[off + j] += p[off + j] * (g[off + j] - dot);
                }
            }
        });
    }

    // ---- reductions / indexing ----

    Var row_sum(Var x) {
        const Tensor<T>& xv = node(x).value;
        if (xv.shape.size() != 2) {
            throw std::invalid_argument("row_sum: 2-d tensor expected");
        }
        const int m = xv.shape[0], n = xv.shape[1];
        Tensor<T> out = Tensor<T>::zeros({m});
        for (int i = 0; i < m; ++i) {
            T s = T(0);
            for (int j = 0; j < n; ++j) s += xv.at(i, j);
            out.data[i] = s;
        }
        return unary(std::move(out), x, [m, n](Tape& t, const std::vector<T>& g, int x) {
            auto* gx = t.grad_buf(x);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) gx[static_cast<size_t>(i) * n + j] += g[i];
            }
        });
    }

    Var gather_cols(Var x, const std::vector<int>& idx) {
        const Tensor<T>& xv = node(x).value;
        if (xv.shape.size() != 2) {
            throw std::invalid_argument("gather_cols: 2-d tensor expected");
        }
        const int m = xv.shape[0], n = xv.shape[1];
        if (static_cast<int>(idx.size()) != m) {
            throw std::invalid_argument("gather_cols: index length must match rows");
        }
        Tensor<T> out = Tensor<T>::zeros({m});
        for (int i = 0; i < m; ++i) {
            if (idx[i] < 0 || idx[i] >= n) {
                throw std::invalid_argument("gather_cols: index out of range");
            }
            out.data[i] = xv.at(i, idx[i]);
        }
        return unary(std::move(out), x, [idx, n](Tape& t, const std::vector<T>& g, int x) {
            auto* gx = t.grad_buf(x);
            for (size_t i = 0; i < idx.size(); ++i) {
                gx[i * n + idx[i]] += g[i];
            }
        });
    }

    Var masked_sum(Var x, const std::vector<uint8_t>& mask) {
        const Tensor<T>& xv = node(x).value;
        if (mask.size() != xv.data.size()) {
            throw std::invalid_argument("masked_sum: mask length mismatch");
        }
        T s = T(0);
        for (size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) s += xv.data[i];
        }
        Tensor<T> out = Tensor<T>::from_vector({1}, {s});
        return unary(std::move(out), x, [mask](Tape& t, const std::vector<T>& g, int x) {
            auto* gx = t.grad_buf(x);
            for (size_t i = 0; i < mask.size(); ++i) {
                if (mask[i]) gx[i] += g[0];
            }
        });
    }

    Var sum_all(Var x) {
        const Tensor<T>& xv = node(x).value;
        T s = T(0);
        for (T v : xv.data) s += v;
        Tensor<T> out = Tensor<T>::from_vector({1}, {s});
        return unary(std::move(out), x, [](Tape& t, const std::vector<T>& g, int x) {
            auto* gx = t.grad_buf(x);
            const size_t n = t.node_at(x).value.data.size();
            for (size_t i = 0; i < n; ++i) gx[i] += g[0];
        });
    }

    // ---- backward ----

    void backward(Var loss) {
        NodeRec& ln = node_mut(loss);
        if (ln.value.numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar");
        }
        if (!ln.requires_grad) {
            return;  // nothing trainable below the loss
        }
        ln.grad.assign(1, T(1));
        for (int id = loss.id; id >= 0; --id) {
            NodeRec& n = nodes_[id];
            if (n.requires_grad && n.back) {
                n.back(*this, n.grad);
            }
        }
    }

private:
    struct NodeRec {
        Tensor<T> value;
        std::vector<T> grad;
        bool requires_grad = false;
        std::function<void(Tape&, const std::vector<T>&)> back;
    };

    static constexpr double kC_ = 0.7978845608028654;

    std::vector<NodeRec> nodes_;

    int next_id() const { return static_cast<int>(nodes_.size()); }

    Var push(Tensor<T> value, bool requires_grad,
             std::function<void(Tape&, const std::vector<T>&)> back) {
        NodeRec n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.back = std::move(back);
        if (requires_grad) {
            n.grad.assign(n.value.data.size(), T(0));
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    template <typename F>
    Var unary(Tensor<T> out, Var a, F f) {
        const int ai = a.id;
        const bool rg = node(a).requires_grad;
        if (!rg) {
            return push(std::move(out), false, nullptr);
        }
        return push(std::move(out), true, [ai, f](Tape& t, const std::vector<T>& g) {
            if (t.wants_grad(ai)) f(t, g, ai);
        });
    }

    template <typename F>
    Var binary(Tensor<T> out, Var a, Var b, F f) {
        const int ai = a.id, bi = b.id;
        const bool rg = node(a).requires_grad || node(b).requires_grad;
        if (!rg) {
            return push(std::move(out), false, nullptr);
        }
        return push(std::move(out), true, [ai, bi, f](Tape& t, const std::vector<T>& g) {
            f(t, g, ai, bi);
        });
    }

    const NodeRec& node(Var v) const {
        if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
            throw std::invalid_argument("Tape: invalid var");
        }
        return nodes_[v.id];
    }

    NodeRec& node_mut(Var v) { return const_cast<NodeRec&>(node(v)); }

    const NodeRec& node_at(int id) const { return nodes_[id]; }

    bool wants_grad(int id) const { return nodes_[id].requires_grad; }

    T* grad_buf(int id) { return nodes_[id].grad.data(); }

    void accumulate(int id, const T* g, size_t n, T scale) {
        if (!wants_grad(id)) return;
        T* dst = grad_buf(id);
        for (size_t i = 0; i < n; ++i) dst[i] += scale * g[i];
    }

    void check_same_shape(Var a, Var b, const char* op) const {
        if (!node(a).value.same_shape(node(b).value)) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
        }
    }
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace kdlab
