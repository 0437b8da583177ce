#pragma once

#include "avcap/attention_mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace avcap {

class TensorError : public std::runtime_error {
  public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline thread_local bool grad_mode_enabled = true;

template <typename T>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

// Disables graph construction for the enclosing scope (inference paths).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// Dense row-major matrix with reverse-mode differentiation. Vectors are 1xN,
// scalars 1x1. Every op validates shapes and rejects non-finite outputs.
template <typename T>
class Tensor {
  public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(int rows, int cols, bool requires_grad = false) {
        return filled(rows, cols, T(0), requires_grad);
    }

    static Tensor filled(int rows, int cols, T v, bool requires_grad = false) {
        check_dims(rows, cols);
        auto n = std::make_shared<detail::Node<T>>();
        n->rows = rows;
        n->cols = cols;
        n->value.assign(static_cast<size_t>(rows) * cols, v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(std::vector<T> data, int rows, int cols, bool requires_grad = false) {
        check_dims(rows, cols);
        if (data.size() != static_cast<size_t>(rows) * cols)
            throw TensorError("Tensor::from_data: data length does not match shape");
        auto n = std::make_shared<detail::Node<T>>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        for (T v : n->value)
            if (!std::isfinite(static_cast<double>(v)))
                throw TensorError("Tensor::from_data: non-finite entry");
        return Tensor(std::move(n));
    }

    static Tensor scalar(T v) { return from_data({v}, 1, 1); }

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_ ? node_->rows : 0; }
    int cols() const { return node_ ? node_->cols : 0; }
    size_t size() const { return node_ ? node_->size() : 0; }

    const std::vector<T>& data() const { return node_->value; }
    // Direct mutation; valid only for leaves (optimizer updates).
    std::vector<T>& mutable_data() { return node_->value; }

    T at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }
    T item() const {
        if (size() != 1) throw TensorError("Tensor::item: tensor is not a scalar");
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (node_) node_->grad.assign(node_->value.size(), T(0));
    }

    NodePtr node() const { return node_; }

  private:
    static void check_dims(int rows, int cols) {
        if (rows < 0 || cols < 0) throw TensorError("Tensor: negative dimension");
    }

    NodePtr node_;
};

namespace detail {

template <typename T>
inline void check_finite(const Node<T>& n, const char* op) {
    for (T v : n.value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw TensorError(std::string(op) + ": produced non-finite values");
    }
}

template <typename T>
inline Tensor<T> make_op(int rows, int cols, std::vector<T> value,
                         std::vector<std::shared_ptr<Node<T>>> parents,
                         std::function<void(Node<T>&)> backprop, const char* op) {
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    check_finite(*n, op);
    bool rg = false;
    if (grad_mode_enabled) {
        for (const auto& p : parents)
            if (p && p->requires_grad) rg = true;
    }
    if (rg) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

inline std::string shape_str(int r, int c) {
    std::ostringstream os;
    os << r << "x" << c;
    return os.str();
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.rows())
        throw TensorError("matmul: shape mismatch " + detail::shape_str(a.rows(), a.cols()) +
                          " * " + detail::shape_str(b.rows(), b.cols()));
    const int n = a.rows(), k = a.cols(), m = b.cols();
    auto an = a.node();
    auto bn = b.node();
    std::vector<T> out(static_cast<size_t>(n) * m, T(0));
    const T* A = an->value.data();
    const T* B = bn->value.data();
    for (int i = 0; i < n; ++i) {
        T* Ci = out.data() + static_cast<size_t>(i) * m;
        const T* Ai = A + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = Ai[kk];
            const T* Bk = B + static_cast<size_t>(kk) * m;
            for (int j = 0; j < m; ++j) Ci[j] += aik * Bk[j];
        }
    }
    auto back = [an, bn, n, k, m](detail::Node<T>& self) {
        const T* G = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            const T* B = bn->value.data();
            for (int i = 0; i < n; ++i) {
                T* dAi = an->grad.data() + static_cast<size_t>(i) * k;
                const T* Gi = G + static_cast<size_t>(i) * m;
                for (int kk = 0; kk < k; ++kk) {
                    const T* Bk = B + static_cast<size_t>(kk) * m;
                    T acc = T(0);
                    for (int j = 0; j < m; ++j) acc += Gi[j] * Bk[j];
                    dAi[kk] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            const T* A = an->value.data();
            for (int i = 0; i < n; ++i) {
                const T* Ai = A + static_cast<size_t>(i) * k;
                const T* Gi = G + static_cast<size_t>(i) * m;
                for (int kk = 0; kk < k; ++kk) {
                    const T aik = Ai[kk];
                    T* dBk = bn->grad.data() + static_cast<size_t>(kk) * m;
                    for (int j = 0; j < m; ++j) dBk[j] += aik * Gi[j];
                }
            }
        }
    };
    return detail::make_op<T>(n, m, std::move(out), {an, bn}, std::move(back), "matmul");
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    const int r = x.rows(), c = x.cols();
    auto xn = x.node();
    std::vector<T> out(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = x.at(i, j);
    auto back = [xn, r, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                xn->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
    };
    return detail::make_op<T>(c, r, std::move(out), {xn}, std::move(back), "transpose");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw TensorError("add: shape mismatch " + detail::shape_str(a.rows(), a.cols()) + " vs " +
                          detail::shape_str(b.rows(), b.cols()));
    auto an = a.node();
    auto bn = b.node();
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + bn->value[i];
    auto back = [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    };
    return detail::make_op<T>(a.rows(), a.cols(), std::move(out), {an, bn}, std::move(back), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw TensorError("sub: shape mismatch");
    auto an = a.node();
    auto bn = b.node();
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] - bn->value[i];
    auto back = [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    };
    return detail::make_op<T>(a.rows(), a.cols(), std::move(out), {an, bn}, std::move(back), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw TensorError("mul: shape mismatch");
    auto an = a.node();
    auto bn = b.node();
    std::vector<T> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] * bn->value[i];
    auto back = [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
        }
    };
    return detail::make_op<T>(a.rows(), a.cols(), std::move(out), {an, bn}, std::move(back), "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    auto xn = x.node();
    std::vector<T> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = xn->value[i] * c;
    auto back = [xn, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
    };
    return detail::make_op<T>(x.rows(), x.cols(), std::move(out), {xn}, std::move(back), "scale");
}

// x: NxC, bias: 1xC broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols())
        throw TensorError("add_row_bias: bias shape mismatch");
    auto xn = x.node();
    auto bn = bias.node();
    const int n = x.rows(), c = x.cols();
    std::vector<T> out(x.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(i) * c + j] = xn->value[static_cast<size_t>(i) * c + j] + bn->value[j];
    auto back = [xn, bn, n, c](detail::Node<T>& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) bn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
        }
    };
    return detail::make_op<T>(n, c, std::move(out), {xn, bn}, std::move(back), "add_row_bias");
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw TensorError("concat_rows: empty input");
    const int c = parts[0].cols();
    int n = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw TensorError("concat_rows: column mismatch");
        n += p.rows();
    }
    std::vector<T> out;
    out.reserve(static_cast<size_t>(n) * c);
    std::vector<typename Tensor<T>::NodePtr> parents;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.node());
    }
    auto parents_copy = parents;
    auto back = [parents_copy, c](detail::Node<T>& self) {
        size_t off = 0;
        for (const auto& p : parents_copy) {
            const size_t len = p->value.size();
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < len; ++i) p->grad[i] += self.grad[off + i];
            }
            off += len;
        }
    };
    return detail::make_op<T>(n, c, std::move(out), std::move(parents), std::move(back), "concat_rows");
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, int r0, int r1) {
    if (r0 < 0 || r1 > x.rows() || r0 > r1) throw TensorError("slice_rows: range out of bounds");
    const int c = x.cols();
    auto xn = x.node();
    std::vector<T> out(xn->value.begin() + static_cast<size_t>(r0) * c,
                       xn->value.begin() + static_cast<size_t>(r1) * c);
    auto back = [xn, r0, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const size_t base = static_cast<size_t>(r0) * c;
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[base + i] += self.grad[i];
    };
    return detail::make_op<T>(r1 - r0, c, std::move(out), {xn}, std::move(back), "slice_rows");
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw TensorError("concat_cols: empty input");
    const int n = parts[0].rows();
    int c = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw TensorError("concat_cols: row mismatch");
        c += p.cols();
    }
    std::vector<T> out(static_cast<size_t>(n) * c);
    std::vector<typename Tensor<T>::NodePtr> parents;
    int off = 0;
    for (const auto& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pc; ++j)
                out[static_cast<size_t>(i) * c + off + j] = p.at(i, j);
        off += pc;
        parents.push_back(p.node());
    }
    auto parents_copy = parents;
    auto back = [parents_copy, n, c](detail::Node<T>& self) {
        int off2 = 0;
        for (const auto& p : parents_copy) {
            const int pc = p->cols;
            if (p->requires_grad) {
                p->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < pc; ++j)
                        p->grad[static_cast<size_t>(i) * pc + j] +=
                            self.grad[static_cast<size_t>(i) * c + off2 + j];
            }
            off2 += pc;
        }
    };
    return detail::make_op<T>(n, c, std::move(out), std::move(parents), std::move(back), "concat_cols");
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
    if (c0 < 0 || c1 > x.cols() || c0 > c1) throw TensorError("slice_cols: range out of bounds");
    const int n = x.rows(), c = x.cols(), w = c1 - c0;
    auto xn = x.node();
    std::vector<T> out(static_cast<size_t>(n) * w);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * w + j] = x.at(i, c0 + j);
    auto back = [xn, n, c, c0, w](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                xn->grad[static_cast<size_t>(i) * c + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
    };
    return detail::make_op<T>(n, w, std::move(out), {xn}, std::move(back), "slice_cols");
}

// Row-wise layer normalization with population variance and affine output.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const int n = x.rows(), c = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
        throw TensorError("layer_norm: gamma/beta must be 1x" + std::to_string(c));
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(n);
    for (int i = 0; i < n; ++i) {
        const T* row = xn->value.data() + static_cast<size_t>(i) * c;
        T mean = T(0);
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int j = 0; j < c; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < c; ++j) {
            const T h = (row[j] - mean) * is;
            (*xhat)[static_cast<size_t>(i) * c + j] = h;
            out[static_cast<size_t>(i) * c + j] = gn->value[j] * h + bn->value[j];
        }
    }
    auto back = [xn, gn, bn, xhat, inv_std, n, c](detail::Node<T>& self) {
        if (gn->requires_grad) {
            gn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    gn->grad[j] += self.grad[static_cast<size_t>(i) * c + j] *
                                   (*xhat)[static_cast<size_t>(i) * c + j];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) bn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const size_t base = static_cast<size_t>(i) * c;
                T sum_gy = T(0), sum_gyh = T(0);
                for (int j = 0; j < c; ++j) {
                    const T gy = self.grad[base + j] * gn->value[j];
                    sum_gy += gy;
                    sum_gyh += gy * (*xhat)[base + j];
                }
                const T inv_c = T(1) / static_cast<T>(c);
                for (int j = 0; j < c; ++j) {
                    const T gy = self.grad[base + j] * gn->value[j];
                    xn->grad[base + j] +=
                        (gy - sum_gy * inv_c - (*xhat)[base + j] * sum_gyh * inv_c) * (*inv_std)[i];
                }
            }
        }
    };
    return detail::make_op<T>(n, c, std::move(out), {xn, gn, bn}, std::move(back), "layer_norm");
}

// Row-wise softmax with an additive -1e9 penalty on masked entries. A fully
// masked row has no defined distribution and is rejected.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const AttentionMask* mask) {
    const int n = scores.rows(), c = scores.cols();
    if (mask && (mask->rows != n || mask->cols != c))
        throw TensorError("masked_softmax: mask shape mismatch");
    auto xn = scores.node();
    std::vector<T> out(scores.size());
    constexpr T penalty = T(-1e9);
    for (int i = 0; i < n; ++i) {
        const size_t base = static_cast<size_t>(i) * c;
        bool any_allowed = false;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < c; ++j) {
            const bool ok = !mask || mask->at(i, j);
            any_allowed = any_allowed || ok;
            const T s = xn->value[base + j] + (ok ? T(0) : penalty);
            mx = std::max(mx, s);
        }
        if (!any_allowed) throw TensorError("masked_softmax: fully masked row " + std::to_string(i));
        T denom = T(0);
        for (int j = 0; j < c; ++j) {
            const bool ok = !mask || mask->at(i, j);
            const T s = xn->value[base + j] + (ok ? T(0) : penalty);
            const T e = std::exp(s - mx);
            out[base + j] = e;
            denom += e;
        }
        for (int j = 0; j < c; ++j) out[base + j] /= denom;
    }
    auto probs = std::make_shared<std::vector<T>>(out);
    auto back = [xn, probs, n, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const size_t base = static_cast<size_t>(i) * c;
            T dot = T(0);
            for (int j = 0; j < c; ++j) dot += self.grad[base + j] * (*probs)[base + j];
            for (int j = 0; j < c; ++j)
                xn->grad[base + j] += (*probs)[base + j] * (self.grad[base + j] - dot);
        }
    };
    return detail::make_op<T>(n, c, std::move(out), {xn}, std::move(back), "masked_softmax");
}

// Row-wise log-softmax (numerically stable).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    const int n = x.rows(), c = x.cols();
    auto xn = x.node();
    std::vector<T> out(x.size());
    for (int i = 0; i < n; ++i) {
        const size_t base = static_cast<size_t>(i) * c;
        T mx = xn->value[base];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xn->value[base + j]);
        T denom = T(0);
        for (int j = 0; j < c; ++j) denom += std::exp(xn->value[base + j] - mx);
        const T lse = mx + std::log(denom);
        for (int j = 0; j < c; ++j) out[base + j] = xn->value[base + j] - lse;
    }
    auto logp = std::make_shared<std::vector<T>>(out);
    auto back = [xn, logp, n, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const size_t base = static_cast<size_t>(i) * c;
            T sum_g = T(0);
            for (int j = 0; j < c; ++j) sum_g += self.grad[base + j];
            for (int j = 0; j < c; ++j)
                xn->grad[base + j] += self.grad[base + j] - std::exp((*logp)[base + j]) * sum_g;
        }
    };
    return detail::make_op<T>(n, c, std::move(out), {xn}, std::move(back), "log_softmax");
}

// GELU in its erf form: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    auto xn = x.node();
    std::vector<T> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const T v = xn->value[i];
        out[i] = T(0.5) * v * (T(1) + std::erf(v / T(M_SQRT2)));
    }
    auto back = [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        constexpr T inv_sqrt_2pi = T(0.3989422804014326779);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const T v = xn->value[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v / T(M_SQRT2)));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
            xn->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    };
    return detail::make_op<T>(x.rows(), x.cols(), std::move(out), {xn}, std::move(back), "gelu");
}

// Gathers table rows by id; gradient scatter-adds back into the table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw TensorError("embedding_lookup: id " + std::to_string(id) + " out of range [0," +
                              std::to_string(v) + ")");
    auto tn = table.node();
    const int n = static_cast<int>(ids.size());
    std::vector<T> out(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        std::copy_n(tn->value.begin() + static_cast<size_t>(ids[i]) * d, d,
                    out.begin() + static_cast<size_t>(i) * d);
    auto ids_copy = ids;
    auto back = [tn, ids_copy, d](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (size_t i = 0; i < ids_copy.size(); ++i)
            for (int j = 0; j < d; ++j)
                tn->grad[static_cast<size_t>(ids_copy[i]) * d + j] += self.grad[i * d + j];
    };
    return detail::make_op<T>(n, d, std::move(out), {tn}, std::move(back), "embedding_lookup");
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    auto xn = x.node();
    T acc = T(0);
    for (T v : xn->value) acc += v;
    auto back = [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += self.grad[0];
    };
    return detail::make_op<T>(1, 1, {acc}, {xn}, std::move(back), "sum_all");
}

// Mean over rows -> 1xC.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    const int n = x.rows(), c = x.cols();
    if (n == 0) throw TensorError("mean_rows: empty tensor");
    auto xn = x.node();
    std::vector<T> out(c, T(0));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) out[j] += x.at(i, j);
    for (int j = 0; j < c; ++j) out[j] /= static_cast<T>(n);
    auto back = [xn, n, c](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T inv = T(1) / static_cast<T>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) xn->grad[static_cast<size_t>(i) * c + j] += self.grad[j] * inv;
    };
    return detail::make_op<T>(1, c, std::move(out), {xn}, std::move(back), "mean_rows");
}

// Reverse-mode sweep from a scalar loss. Fills .grad on every reachable node
// with requires_grad, leaves included.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) throw TensorError("backward: loss must be scalar");
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT* p = node->parents[idx].get();
            ++idx;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

}  // namespace avcap
