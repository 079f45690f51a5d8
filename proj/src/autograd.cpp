// SPDX-License-Identifier: Apache-2.0
#include "mcdm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mcdm::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

VarPtr variable(Tensor v, bool requires_grad) {
    auto var = std::make_shared<Var>();
    var->val = std::move(v);
    var->requires_grad = requires_grad;
    return var;
}

VarPtr scalar(double v) { return variable(Tensor::scalar(v), false); }

bool any_grad(const std::vector<VarPtr>& xs) {
    for (const auto& x : xs)
        if (x->requires_grad) return true;
    return false;
}

namespace {
thread_local int no_grad_depth = 0;
}

NoGrad::NoGrad() { ++no_grad_depth; }
NoGrad::~NoGrad() { --no_grad_depth; }
bool grad_enabled() { return no_grad_depth == 0; }

VarPtr make_node(Tensor value, std::vector<VarPtr> parents, std::function<void(Var&)> backward) {
    auto out = std::make_shared<Var>();
    out->val = std::move(value);
    out->requires_grad = grad_enabled() && any_grad(parents);
    if (out->requires_grad) {
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward);
    }
    return out;
}

void backward(const VarPtr& root) {
    if (root->val.numel() != 1) throw PreconditionError("backward: root must be scalar");
    // post-order DFS (iterative), then reverse sweep
    std::vector<Var*> order;
    std::unordered_set<Var*> seen;
    std::vector<std::pair<Var*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Var* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

// ---------------- elementwise ----------------

template <typename FwdFn, typename BwdFn>
static VarPtr binary_ew(const VarPtr& a, const VarPtr& b, FwdFn fwd, BwdFn bwd, const char* name) {
    check_same_shape(a->val, b->val, name);
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->val[i], b->val[i]);
    return make_node(std::move(out), {a, b}, [a, b, bwd](Var& self) {
        const int64_t n = self.val.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < n; ++i) a->grad[i] += bwd(a->val[i], b->val[i], self.grad[i], true);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < n; ++i) b->grad[i] += bwd(a->val[i], b->val[i], self.grad[i], false);
        }
    });
}

VarPtr add(const VarPtr& a, const VarPtr& b) {
    return binary_ew(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, bool) { return g; }, "add");
}
VarPtr sub(const VarPtr& a, const VarPtr& b) {
    return binary_ew(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, bool left) { return left ? g : -g; }, "sub");
}
VarPtr mul(const VarPtr& a, const VarPtr& b) {
    return binary_ew(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, bool left) { return left ? g * y : g * x; }, "mul");
}
VarPtr div(const VarPtr& a, const VarPtr& b) {
    return binary_ew(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g, bool left) { return left ? g / y : -g * x / (y * y); }, "div");
}

VarPtr scale(const VarPtr& a, double s) {
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] * s;
    return make_node(std::move(out), {a}, [a, s](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const int64_t n = self.val.numel();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * s;
    });
}

VarPtr add_scalar(const VarPtr& a, double s) {
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->val[i] + s;
    return make_node(std::move(out), {a}, [a](Var& self) {
        if (!a->requires_grad) return;
        a->accumulate(self.grad);
    });
}

// ---------------- unary ----------------

template <typename FwdFn, typename BwdFn>
static VarPtr unary_ew(const VarPtr& a, FwdFn fwd, BwdFn bwd) {
    Tensor out(a->val.shape);
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->val[i]);
    return make_node(std::move(out), {a}, [a, bwd](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const int64_t n = self.val.numel();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += bwd(a->val[i], self.val[i], self.grad[i]);
    });
}

VarPtr neg(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return -x; }, [](double, double, double g) { return -g; });
}
VarPtr exp_v(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return std::exp(x); }, [](double, double y, double g) { return g * y; });
}
VarPtr log_v(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return std::log(x); }, [](double x, double, double g) { return g / x; });
}
VarPtr sqrt_v(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y, double g) { return g * 0.5 / (y > 0 ? y : 1e-300); });
}
VarPtr abs_v(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return std::abs(x); },
        [](double x, double, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}
VarPtr relu(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return x > 0 ? x : 0.0; },
        [](double x, double, double g) { return x > 0 ? g : 0.0; });
}
VarPtr leaky_relu(const VarPtr& a, double slope) {
    return unary_ew(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double, double g) { return x > 0 ? g : slope * g; });
}
VarPtr sigmoid(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
}
VarPtr silu(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double, double g) {
            double s = 1.0 / (1.0 + std::exp(-x));
            return g * (s + x * s * (1.0 - s));
        });
}
VarPtr tanh_v(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return std::tanh(x); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
}
VarPtr clamp01(const VarPtr& a) {
    return unary_ew(
        a, [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
        [](double x, double, double g) { return (x > 0.0 && x < 1.0) ? g : 0.0; });
}

// ---------------- reductions ----------------

VarPtr sum_all(const VarPtr& a) {
    double s = 0.0;
    for (double v : a->val.data) s += v;
    return make_node(Tensor::scalar(s), {a}, [a](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = self.grad[0];
        for (auto& v : a->grad.data) v += g;
    });
}

VarPtr mean_all(const VarPtr& a) {
    const double inv = 1.0 / static_cast<double>(a->val.numel());
    double s = 0.0;
    for (double v : a->val.data) s += v;
    return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const double g = self.grad[0] * inv;
        for (auto& v : a->grad.data) v += g;
    });
}

// ---------------- shape ----------------

VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != a->val.numel())
        throw PreconditionError("reshape: element count mismatch");
    Tensor out(std::move(shape), a->val.data);
    return make_node(std::move(out), {a}, [a](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const int64_t n = self.val.numel();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
    });
}

static std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
    return st;
}

VarPtr permute(const VarPtr& a, const std::vector<int>& axes) {
    const auto& ish = a->val.shape;
    if (axes.size() != ish.size()) throw PreconditionError("permute: bad axes");
    std::vector<int64_t> osh(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) osh[i] = ish[axes[i]];
    auto ist = strides_of(ish);
    auto ost = strides_of(osh);
    Tensor out(osh);
    const int64_t n = out.numel();
    const int nd = static_cast<int>(axes.size());
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o, src = 0;
        for (int d = 0; d < nd; ++d) {
            int64_t idx = rem / ost[d];
            rem -= idx * ost[d];
            src += idx * ist[axes[d]];
        }
        out[o] = a->val[src];
    }
    return make_node(std::move(out), {a}, [a, axes, ist, ost](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        const int64_t n = self.val.numel();
        const int nd = static_cast<int>(axes.size());
        for (int64_t o = 0; o < n; ++o) {
            int64_t rem = o, src = 0;
            for (int d = 0; d < nd; ++d) {
                int64_t idx = rem / ost[d];
                rem -= idx * ost[d];
                src += idx * ist[axes[d]];
            }
            a->grad[src] += self.grad[o];
        }
    });
}

VarPtr concat(const std::vector<VarPtr>& xs, int axis) {
    if (xs.empty()) throw PreconditionError("concat: empty input");
    auto osh = xs[0]->val.shape;
    int64_t total = 0;
    for (const auto& x : xs) {
        if (x->val.ndim() != static_cast<int>(osh.size())) throw PreconditionError("concat: rank mismatch");
        for (int d = 0; d < x->val.ndim(); ++d)
            if (d != axis && x->val.shape[d] != osh[d]) throw PreconditionError("concat: shape mismatch");
        total += x->val.shape[axis];
    }
    osh[axis] = total;
    Tensor out(osh);
    // outer = product of dims before axis, inner = product after
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= osh[d];
    for (size_t d = axis + 1; d < osh.size(); ++d) inner *= osh[d];
    int64_t off = 0;
    for (const auto& x : xs) {
        const int64_t len = x->val.shape[axis];
        for (int64_t ou = 0; ou < outer; ++ou) {
            const double* src = x->val.ptr() + ou * len * inner;
            double* dst = out.ptr() + (ou * total + off) * inner;
            std::copy(src, src + len * inner, dst);
        }
        off += len;
    }
    std::vector<VarPtr> parents = xs;
    return make_node(std::move(out), parents, [parents, axis, outer, inner, total](Var& self) {
        int64_t off = 0;
        for (const auto& x : parents) {
            const int64_t len = x->val.shape[axis];
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t ou = 0; ou < outer; ++ou) {
                    const double* src = self.grad.ptr() + (ou * total + off) * inner;
                    double* dst = x->grad.ptr() + ou * len * inner;
                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            off += len;
        }
    });
}

VarPtr slice(const VarPtr& a, int axis, int64_t start, int64_t len) {
    auto osh = a->val.shape;
    if (axis < 0 || axis >= a->val.ndim() || start < 0 || start + len > osh[axis])
        throw PreconditionError("slice: out of range");
    const int64_t full = osh[axis];
    osh[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= osh[d];
    for (size_t d = axis + 1; d < osh.size(); ++d) inner *= osh[d];
    Tensor out(osh);
    for (int64_t ou = 0; ou < outer; ++ou) {
        const double* src = a->val.ptr() + (ou * full + start) * inner;
        std::copy(src, src + len * inner, out.ptr() + ou * len * inner);
    }
    return make_node(std::move(out), {a}, [a, start, len, full, outer, inner](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou) {
            const double* src = self.grad.ptr() + ou * len * inner;
            double* dst = a->grad.ptr() + (ou * full + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

VarPtr broadcast_rows(const VarPtr& row, int64_t n) {
    const int64_t e = row->val.numel();
    Tensor out({n, e});
    for (int64_t i = 0; i < n; ++i)
        std::copy(row->val.ptr(), row->val.ptr() + e, out.ptr() + i * e);
    return make_node(std::move(out), {row}, [row, n, e](Var& self) {
        if (!row->requires_grad) return;
        row->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < e; ++j) row->grad[j] += self.grad[i * e + j];
    });
}

// ---------------- matmul / softmax ----------------

VarPtr matmul(const VarPtr& a, const VarPtr& b) {
    const auto& ash = a->val.shape;
    const auto& bsh = b->val.shape;
    if (ash.size() < 2 || bsh.size() < 2) throw PreconditionError("matmul: rank must be >= 2");
    const int64_t m = ash[ash.size() - 2], k = ash[ash.size() - 1];
    const int64_t k2 = bsh[bsh.size() - 2], n = bsh[bsh.size() - 1];
    if (k != k2) throw PreconditionError("matmul: inner dimension mismatch");
    int64_t batch = 1;
    for (size_t d = 0; d + 2 < ash.size(); ++d) batch *= ash[d];
    const bool b_batched = bsh.size() > 2;
    if (b_batched) {
        int64_t bb = 1;
        for (size_t d = 0; d + 2 < bsh.size(); ++d) bb *= bsh[d];
        if (bb != batch) throw PreconditionError("matmul: batch dims mismatch");
    }
    std::vector<int64_t> osh(ash.begin(), ash.end() - 1);
    osh.push_back(n);
    Tensor out(osh);
    for (int64_t i = 0; i < batch; ++i) {
        CMap A(a->val.ptr() + i * m * k, m, k);
        CMap B(b->val.ptr() + (b_batched ? i * k * n : 0), k, n);
        MMap O(out.ptr() + i * m * n, m, n);
        O.noalias() = A * B;
    }
    return make_node(std::move(out), {a, b}, [a, b, m, k, n, batch, b_batched](Var& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < batch; ++i) {
                CMap G(self.grad.ptr() + i * m * n, m, n);
                CMap B(b->val.ptr() + (b_batched ? i * k * n : 0), k, n);
                MMap dA(a->grad.ptr() + i * m * k, m, k);
                dA.noalias() += G * B.transpose();
            }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < batch; ++i) {
                CMap G(self.grad.ptr() + i * m * n, m, n);
                CMap A(a->val.ptr() + i * m * k, m, k);
                MMap dB(b->grad.ptr() + (b_batched ? i * k * n : 0), k, n);
                dB.noalias() += A.transpose() * G;
            }
        }
    });
}

VarPtr softmax_lastdim(const VarPtr& a) {
    const auto& sh = a->val.shape;
    const int64_t k = sh.back();
    const int64_t rows = a->val.numel() / k;
    Tensor out(sh);
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a->val.ptr() + r * k;
        double* y = out.ptr() + r * k;
        double mx = x[0];
        for (int64_t i = 1; i < k; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (int64_t i = 0; i < k; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        const double inv = 1.0 / s;
        for (int64_t i = 0; i < k; ++i) y[i] *= inv;
    }
    return make_node(std::move(out), {a}, [a, rows, k](Var& self) {
        if (!a->requires_grad) return;
        a->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.val.ptr() + r * k;
            const double* g = self.grad.ptr() + r * k;
            double* da = a->grad.ptr() + r * k;
            double dot = 0.0;
            for (int64_t i = 0; i < k; ++i) dot += y[i] * g[i];
            for (int64_t i = 0; i < k; ++i) da[i] += y[i] * (g[i] - dot);
        }
    });
}

VarPtr mse(const VarPtr& a, const VarPtr& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

VarPtr l1_mean(const VarPtr& a, const VarPtr& b) { return mean_all(abs_v(sub(a, b))); }

} // namespace mcdm::ag
