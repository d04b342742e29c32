#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "grf/param.hpp"
#include "grf/tensor.hpp"

namespace grf {

// Handle to a node on a tape. Plain index; only valid for the tape that
// produced it.
struct Var {
    int id = -1;
};

namespace detail {

// C(+)= A * B for row-major 2-D blocks. The k loop is outermost inside each
// output row so every (i,j) cell accumulates terms in ascending-k order;
// reference oracles that sum in ascending k produce bit-identical results.
template <typename S>
void mm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + static_cast<int64_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const S av = arow[l];
            const S* brow = b + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(+)= A * B^T where B is stored n x k.
template <typename S>
void mm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<int64_t>(i) * k;
        S* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<int64_t>(j) * k;
            S acc = S(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            if (accumulate)
                crow[j] += acc;
            else
                crow[j] = acc;
        }
    }
}

// C(+)= A^T * B where A is stored k x m.
template <typename S>
void mm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) c[i] = S(0);
    for (int l = 0; l < k; ++l) {
        const S* arow = a + static_cast<int64_t>(l) * m;
        const S* brow = b + static_cast<int64_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const S av = arow[i];
            S* crow = c + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline std::vector<int> leading_dims(const std::vector<int>& shape) {
    return std::vector<int>(shape.begin(), shape.end() - 2);
}

template <typename S>
Tensor<S> swap_axes_tensor(const Tensor<S>& t, int ax0, int ax1) {
    const int r = t.rank();
    if (ax0 < 0 || ax1 < 0 || ax0 >= r || ax1 >= r || ax0 == ax1)
        throw DimError("swap_axes: bad axes for shape " + format_shape(t.shape()));
    std::vector<int> out_shape = t.shape();
    std::swap(out_shape[static_cast<size_t>(ax0)], out_shape[static_cast<size_t>(ax1)]);
    Tensor<S> out(out_shape);
    // strides of the input
    int64_t stride[4] = {1, 1, 1, 1};
    for (int a = r - 2; a >= 0; --a)
        stride[a] = stride[a + 1] * t.shape()[static_cast<size_t>(a + 1)];
    int idx[4] = {0, 0, 0, 0};
    for (int64_t o = 0; o < out.numel(); ++o) {
        int64_t rem = o;
        for (int a = r - 1; a >= 0; --a) {
            idx[a] = static_cast<int>(rem % out_shape[static_cast<size_t>(a)]);
            rem /= out_shape[static_cast<size_t>(a)];
        }
        std::swap(idx[ax0], idx[ax1]);
        int64_t in_off = 0;
        for (int a = 0; a < r; ++a) in_off += idx[a] * stride[a];
        out[o] = t[in_off];
    }
    return out;
}

}  // namespace detail

// Define-by-run reverse-mode tape over dense tensors. A fresh tape is built
// per forward pass; nodes are created in topological order by construction,
// and backward() walks them once in reverse. Gradients accumulate into
// watched Parameters (a second backward on the same tape adds again).
template <typename S>
class Tape {
public:
    Var leaf(Tensor<S> value) { return push(std::move(value), nullptr); }

    // Registers a parameter's current value as a leaf; after backward() the
    // node's gradient is added into the parameter's grad slot.
    Var watch(const std::shared_ptr<Parameter<S>>& p) {
        Var v = push(p->value, nullptr);
        watched_.emplace_back(v.id, p);
        return v;
    }

    // Generic escape hatch: record an arbitrary value with a custom pullback.
    Var record(Tensor<S> value, std::function<void(Tape&)> backward) {
        return push(std::move(value), std::move(backward));
    }

    const Tensor<S>& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }

    // Gradient of a node; empty tensor if backward never touched it.
    const Tensor<S>& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

    size_t num_nodes() const { return nodes_.size(); }
    long long macs() const { return macs_; }
    void reset_macs() { macs_ = 0; }

    // ---- arithmetic ops ----

    Var matmul(Var a, Var b) { return matmul_impl(a, b, false); }

    // a @ b^T with b stored [..., n, k]; same contraction cost as matmul.
    Var matmul_nt(Var a, Var b) { return matmul_impl(a, b, true); }

    Var add(Var a, Var b) {
        const Tensor<S>&va = value(a), &vb = value(b);
        if (!va.same_shape(vb))
            throw DimError("add: shape mismatch " + format_shape(va.shape()) + " vs " +
                           format_shape(vb.shape()));
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
        int ida = a.id, idb = b.id;
        return push(std::move(out), [ida, idb](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            Tensor<S>& gb = t.grad_buf(idb);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }

    // a + b where b's shape is a trailing suffix of a's shape (bias add).
    Var add_suffix(Var a, Var b) {
        const Tensor<S>&va = value(a), &vb = value(b);
        check_suffix(va.shape(), vb.shape(), "add_suffix");
        Tensor<S> out(va.shape());
        const int64_t k = vb.numel();
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i % k];
        int ida = a.id, idb = b.id;
        return push(std::move(out), [ida, idb, k](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            Tensor<S>& gb = t.grad_buf(idb);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i];
                gb[i % k] += g[i];
            }
        });
    }

    Var mul(Var a, Var b) {
        const Tensor<S>&va = value(a), &vb = value(b);
        if (!va.same_shape(vb))
            throw DimError("mul: shape mismatch " + format_shape(va.shape()) + " vs " +
                           format_shape(vb.shape()));
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
        int ida = a.id, idb = b.id;
        return push(std::move(out), [ida, idb](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            const Tensor<S>& xa = t.nodes_[static_cast<size_t>(ida)].value;
            const Tensor<S>& xb = t.nodes_[static_cast<size_t>(idb)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            Tensor<S>& gb = t.grad_buf(idb);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i] * xb[i];
                gb[i] += g[i] * xa[i];
            }
        });
    }

    // a * b with b a trailing suffix of a (per-feature gain).
    Var mul_suffix(Var a, Var b) {
        const Tensor<S>&va = value(a), &vb = value(b);
        check_suffix(va.shape(), vb.shape(), "mul_suffix");
        Tensor<S> out(va.shape());
        const int64_t k = vb.numel();
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i % k];
        int ida = a.id, idb = b.id;
        return push(std::move(out), [ida, idb, k](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            const Tensor<S>& xa = t.nodes_[static_cast<size_t>(ida)].value;
            const Tensor<S>& xb = t.nodes_[static_cast<size_t>(idb)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            Tensor<S>& gb = t.grad_buf(idb);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i] * xb[i % k];
                gb[i % k] += g[i] * xa[i];
            }
        });
    }

    // a + c where c is a non-differentiable constant, suffix-broadcast.
    Var add_const(Var a, const Tensor<S>& c) {
        const Tensor<S>& va = value(a);
        check_suffix(va.shape(), c.shape(), "add_const");
        Tensor<S> out(va.shape());
        const int64_t k = c.numel();
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + c[i % k];
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }

    // a * c elementwise with a same-shaped constant (dropout masks).
    Var mul_const(Var a, Tensor<S> c) {
        const Tensor<S>& va = value(a);
        if (!va.same_shape(c))
            throw DimError("mul_const: shape mismatch " + format_shape(va.shape()) + " vs " +
                           format_shape(c.shape()));
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * c[i];
        int ida = a.id;
        auto mask = std::make_shared<Tensor<S>>(std::move(c));
        return push(std::move(out), [ida, mask](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (*mask)[i];
        });
    }

    // alpha * a + beta, elementwise.
    Var affine(Var a, S alpha, S beta) {
        const Tensor<S>& va = value(a);
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = alpha * va[i] + beta;
        int ida = a.id;
        return push(std::move(out), [ida, alpha](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += alpha * g[i];
        });
    }

    Var sigmoid(Var a) {
        const Tensor<S>& va = value(a);
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(va[i]);
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const int self = t.out_id();
            const Tensor<S>& g = t.node_grad(self);
            const Tensor<S>& y = t.nodes_[static_cast<size_t>(self)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
        });
    }

    Var tanh(Var a) {
        const Tensor<S>& va = value(a);
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(va[i]);
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const int self = t.out_id();
            const Tensor<S>& g = t.node_grad(self);
            const Tensor<S>& y = t.nodes_[static_cast<size_t>(self)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (S(1) - y[i] * y[i]);
        });
    }

    Var relu(Var a) {
        const Tensor<S>& va = value(a);
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] > S(0) ? va[i] : S(0);
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            const Tensor<S>& x = t.nodes_[static_cast<size_t>(ida)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (x[i] > S(0)) ga[i] += g[i];
        });
    }

    // |a| with subgradient sign(a), 0 at 0.
    Var abs(Var a) {
        const Tensor<S>& va = value(a);
        Tensor<S> out(va.shape());
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(va[i]);
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            const Tensor<S>& x = t.nodes_[static_cast<size_t>(ida)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) {
                if (x[i] > S(0))
                    ga[i] += g[i];
                else if (x[i] < S(0))
                    ga[i] -= g[i];
            }
        });
    }

    // Softmax along the last axis, max-subtracted for stability.
    Var softmax_last(Var a) {
        const Tensor<S>& va = value(a);
        if (va.rank() < 1) throw DimError("softmax_last: rank 0 input");
        const int n = va.dim(va.rank() - 1);
        const int64_t rows = va.numel() / n;
        Tensor<S> out(va.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const S* x = va.data() + r * n;
            S* y = out.data() + r * n;
            S mx = x[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            S sum = S(0);
            for (int j = 0; j < n; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            for (int j = 0; j < n; ++j) y[j] /= sum;
        }
        int ida = a.id;
        return push(std::move(out), [ida, n, rows](Tape& t) {
            const int self = t.out_id();
            const Tensor<S>& g = t.node_grad(self);
            const Tensor<S>& y = t.nodes_[static_cast<size_t>(self)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t r = 0; r < rows; ++r) {
                const S* gy = g.data() + r * n;
                const S* yy = y.data() + r * n;
                S dot = S(0);
                for (int j = 0; j < n; ++j) dot += gy[j] * yy[j];
                S* gx = ga.data() + r * n;
                for (int j = 0; j < n; ++j) gx[j] += yy[j] * (gy[j] - dot);
            }
        });
    }

    // Normalizes the last axis to zero mean / unit variance. Affine gain and
    // shift are applied by callers via mul_suffix / add_suffix.
    Var layer_norm(Var a, S eps) {
        const Tensor<S>& va = value(a);
        if (va.rank() < 1) throw DimError("layer_norm: rank 0 input");
        const int n = va.dim(va.rank() - 1);
        const int64_t rows = va.numel() / n;
        Tensor<S> out(va.shape());
        auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r) {
            const S* x = va.data() + r * n;
            S* y = out.data() + r * n;
            S mean = S(0);
            for (int j = 0; j < n; ++j) mean += x[j];
            mean /= static_cast<S>(n);
            S var = S(0);
            for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= static_cast<S>(n);
            const S inv = S(1) / std::sqrt(var + eps);
            (*inv_std)[static_cast<size_t>(r)] = inv;
            for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * inv;
        }
        int ida = a.id;
        return push(std::move(out), [ida, n, rows, inv_std](Tape& t) {
            const int self = t.out_id();
            const Tensor<S>& g = t.node_grad(self);
            const Tensor<S>& y = t.nodes_[static_cast<size_t>(self)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t r = 0; r < rows; ++r) {
                const S* gy = g.data() + r * n;
                const S* yy = y.data() + r * n;
                S mean_g = S(0), mean_gy = S(0);
                for (int j = 0; j < n; ++j) {
                    mean_g += gy[j];
                    mean_gy += gy[j] * yy[j];
                }
                mean_g /= static_cast<S>(n);
                mean_gy /= static_cast<S>(n);
                const S inv = (*inv_std)[static_cast<size_t>(r)];
                S* gx = ga.data() + r * n;
                for (int j = 0; j < n; ++j) gx[j] += inv * (gy[j] - mean_g - yy[j] * mean_gy);
            }
        });
    }

    Var concat_last(const std::vector<Var>& parts) {
        if (parts.empty()) throw DimError("concat_last: no inputs");
        const Tensor<S>& first = value(parts[0]);
        std::vector<int> out_shape = first.shape();
        int total_last = 0;
        std::vector<int> widths;
        for (Var p : parts) {
            const Tensor<S>& v = value(p);
            if (v.rank() != first.rank())
                throw DimError("concat_last: rank mismatch");
            for (int a = 0; a < v.rank() - 1; ++a)
                if (v.dim(a) != first.dim(a))
                    throw DimError("concat_last: shape mismatch " + format_shape(v.shape()) +
                                   " vs " + format_shape(first.shape()));
            widths.push_back(v.dim(v.rank() - 1));
            total_last += widths.back();
        }
        out_shape.back() = total_last;
        Tensor<S> out(out_shape);
        const int64_t rows = out.numel() / total_last;
        std::vector<int> ids;
        for (Var p : parts) ids.push_back(p.id);
        for (int64_t r = 0; r < rows; ++r) {
            S* dst = out.data() + r * total_last;
            for (size_t pi = 0; pi < ids.size(); ++pi) {
                const Tensor<S>& v = nodes_[static_cast<size_t>(ids[pi])].value;
                const int w = widths[pi];
                const S* src = v.data() + r * w;
                for (int j = 0; j < w; ++j) *dst++ = src[j];
            }
        }
        return push(std::move(out), [ids, widths, rows, total_last](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            for (int64_t r = 0; r < rows; ++r) {
                const S* src = g.data() + r * total_last;
                for (size_t pi = 0; pi < ids.size(); ++pi) {
                    Tensor<S>& gp = t.grad_buf(ids[pi]);
                    const int w = widths[pi];
                    S* dst = gp.data() + r * w;
                    for (int j = 0; j < w; ++j) dst[j] += *src++;
                }
            }
        });
    }

    // Mean over one axis; the axis is squeezed out of the result.
    Var mean_axis(Var a, int axis) {
        const Tensor<S>& va = value(a);
        const int r = va.rank();
        if (axis < 0 || axis >= r) throw DimError("mean_axis: bad axis");
        std::vector<int> out_shape;
        for (int i = 0; i < r; ++i)
            if (i != axis) out_shape.push_back(va.dim(i));
        if (out_shape.empty()) out_shape.push_back(1);
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= va.dim(i);
        for (int i = axis + 1; i < r; ++i) inner *= va.dim(i);
        const int kdim = va.dim(axis);
        Tensor<S> out(out_shape);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                S acc = S(0);
                for (int k = 0; k < kdim; ++k) acc += va[(o * kdim + k) * inner + in];
                out[o * inner + in] = acc / static_cast<S>(kdim);
            }
        int ida = a.id;
        return push(std::move(out), [ida, outer, inner, kdim](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            const S scale = S(1) / static_cast<S>(kdim);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const S gv = g[o * inner + in] * scale;
                    for (int k = 0; k < kdim; ++k) ga[(o * kdim + k) * inner + in] += gv;
                }
        });
    }

    Var sum_all(Var a) {
        const Tensor<S>& va = value(a);
        S acc = S(0);
        for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
        int ida = a.id;
        return push(Tensor<S>::scalar(acc), [ida](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
        });
    }

    Var mean_all(Var a) {
        const Tensor<S>& va = value(a);
        S acc = S(0);
        for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
        const int64_t n = va.numel();
        int ida = a.id;
        return push(Tensor<S>::scalar(acc / static_cast<S>(n)), [ida, n](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            const S gv = g[0] / static_cast<S>(n);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
        });
    }

    Var reshape(Var a, std::vector<int> shape) {
        const Tensor<S>& va = value(a);
        if (shape_numel(shape) != va.numel())
            throw DimError("reshape: cannot view " + format_shape(va.shape()) + " as " +
                           format_shape(shape));
        Tensor<S> out(shape);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i];
        int ida = a.id;
        return push(std::move(out), [ida](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }

    Var swap_axes(Var a, int ax0, int ax1) {
        Tensor<S> out = detail::swap_axes_tensor(value(a), ax0, ax1);
        int ida = a.id;
        return push(std::move(out), [ida, ax0, ax1](Tape& t) {
            Tensor<S> gswap = detail::swap_axes_tensor(t.node_grad(t.out_id()), ax0, ax1);
            Tensor<S>& ga = t.grad_buf(ida);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += gswap[i];
        });
    }

    // ---- backward ----

    // Seeds d(loss)/d(loss)=1 and sweeps the tape once in reverse creation
    // order, then adds each watched node's gradient into its Parameter.
    void backward(Var loss) {
        if (value(loss).numel() != 1)
            throw DimError("backward: loss must be scalar, got shape " +
                           format_shape(value(loss).shape()));
        for (auto& n : nodes_) n.grad = Tensor<S>();
        grad_buf(loss.id)[0] = S(1);
        for (int u = loss.id; u >= 0; --u) {
            Node& node = nodes_[static_cast<size_t>(u)];
            if (node.grad.empty() || !node.backward) continue;
            current_ = u;
            node.backward(*this);
        }
        for (auto& [id, p] : watched_) {
            const Tensor<S>& g = nodes_[static_cast<size_t>(id)].grad;
            if (g.empty()) continue;
            for (int64_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
        }
    }

    // Internal helpers used by pullback closures.
    Tensor<S>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<S>::zeros(n.value.shape());
        return n.grad;
    }
    const Tensor<S>& node_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    int out_id() const { return current_; }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        std::function<void(Tape&)> backward;
    };

    Var push(Tensor<S> value, std::function<void(Tape&)> backward) {
        nodes_.push_back(Node{std::move(value), Tensor<S>(), std::move(backward)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    static S stable_sigmoid(S x) {
        if (x >= S(0)) {
            const S e = std::exp(-x);
            return S(1) / (S(1) + e);
        }
        const S e = std::exp(x);
        return e / (S(1) + e);
    }

    static void check_suffix(const std::vector<int>& big, const std::vector<int>& small,
                             const char* op) {
        if (small.size() > big.size() ||
            !std::equal(small.rbegin(), small.rend(), big.rbegin()))
            throw DimError(std::string(op) + ": " + format_shape(small) +
                           " is not a trailing suffix of " + format_shape(big));
    }

    // Shared driver for matmul / matmul_nt. Supports equal leading dims or a
    // rank-2 right operand broadcast over the left's leading dims.
    Var matmul_impl(Var a, Var b, bool nt) {
        const Tensor<S>&va = value(a), &vb = value(b);
        const char* opname = nt ? "matmul_nt" : "matmul";
        if (va.rank() < 2 || vb.rank() < 2)
            throw DimError(std::string(opname) + ": operands must have rank >= 2, got " +
                           format_shape(va.shape()) + " and " + format_shape(vb.shape()));
        const int m = va.dim(va.rank() - 2);
        const int ka = va.dim(va.rank() - 1);
        const int kb = nt ? vb.dim(vb.rank() - 1) : vb.dim(vb.rank() - 2);
        const int n = nt ? vb.dim(vb.rank() - 2) : vb.dim(vb.rank() - 1);
        if (ka != kb)
            throw DimError(std::string(opname) + ": inner dimensions disagree, " +
                           format_shape(va.shape()) + " x " + format_shape(vb.shape()));
        const bool b_broadcast = vb.rank() == 2 && va.rank() > 2;
        if (!b_broadcast && detail::leading_dims(va.shape()) != detail::leading_dims(vb.shape()))
            throw DimError(std::string(opname) + ": leading dimensions disagree, " +
                           format_shape(va.shape()) + " x " + format_shape(vb.shape()));

        std::vector<int> out_shape = detail::leading_dims(va.shape());
        int64_t batches = 1;
        for (int d : out_shape) batches *= d;
        out_shape.push_back(m);
        out_shape.push_back(n);
        Tensor<S> out(out_shape);

        const int64_t a_step = static_cast<int64_t>(m) * ka;
        const int64_t b_step = b_broadcast ? 0 : static_cast<int64_t>(n) * ka;
        const int64_t c_step = static_cast<int64_t>(m) * n;
        for (int64_t bi = 0; bi < batches; ++bi) {
            const S* ap = va.data() + bi * a_step;
            const S* bp = vb.data() + bi * b_step;
            S* cp = out.data() + bi * c_step;
            if (nt)
                detail::mm_nt(ap, bp, cp, m, ka, n, false);
            else
                detail::mm_nn(ap, bp, cp, m, ka, n, false);
        }
        macs_ += batches * static_cast<int64_t>(m) * ka * n;

        int ida = a.id, idb = b.id;
        const int k = ka;
        return push(std::move(out), [ida, idb, nt, m, k, n, batches, a_step, b_step,
                                     c_step](Tape& t) {
            const Tensor<S>& g = t.node_grad(t.out_id());
            const Tensor<S>& xa = t.nodes_[static_cast<size_t>(ida)].value;
            const Tensor<S>& xb = t.nodes_[static_cast<size_t>(idb)].value;
            Tensor<S>& ga = t.grad_buf(ida);
            Tensor<S>& gb = t.grad_buf(idb);
            for (int64_t bi = 0; bi < batches; ++bi) {
                const S* gp = g.data() + bi * c_step;
                const S* ap = xa.data() + bi * a_step;
                const S* bp = xb.data() + bi * b_step;
                S* gap = ga.data() + bi * a_step;
                S* gbp = gb.data() + bi * b_step;
                if (!nt) {
                    // C = A B:   dA += dC B^T,  dB += A^T dC
                    detail::mm_nt(gp, bp, gap, m, n, k, true);
                    detail::mm_tn(ap, gp, gbp, k, m, n, true);
                } else {
                    // C = A B^T: dA += dC B,   dB += dC^T A
                    detail::mm_nn(gp, bp, gap, m, n, k, true);
                    detail::mm_tn(gp, ap, gbp, n, m, k, true);
                }
            }
        });
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<int, std::shared_ptr<Parameter<S>>>> watched_;
    long long macs_ = 0;
    int current_ = -1;
};

}  // namespace grf
