// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mcdm/tensor.hpp"

namespace mcdm::ag {

// Reverse-mode autodiff over Tensor. Nodes form a DAG; backward() walks the
// post-order once and accumulates gradients into every node that wants them.
struct Var;
using VarPtr = std::shared_ptr<Var>;

struct Var {
    Tensor val;
    Tensor grad; // allocated lazily, same shape as val
    bool requires_grad = false;
    std::vector<VarPtr> parents;
    std::function<void(Var&)> backward_fn; // pulls this->grad into parents

    bool has_grad = false;
    void ensure_grad() {
        if (!has_grad) {
            grad = Tensor::zeros(val.shape);
            has_grad = true;
        }
    }
    void accumulate(const Tensor& g) {
        ensure_grad();
        const int64_t n = grad.numel();
        for (int64_t i = 0; i < n; ++i) grad[i] += g[i];
    }
};

VarPtr variable(Tensor v, bool requires_grad = false);
inline VarPtr constant(Tensor v) { return variable(std::move(v), false); }
VarPtr scalar(double v);

// True if gradients should flow through at least one input.
bool any_grad(const std::vector<VarPtr>& xs);

// Scoped tape suppression: nodes created while an instance is alive carry no
// parents or backward function. Inference paths use this to avoid growing a
// graph nothing will ever differentiate.
struct NoGrad {
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};
bool grad_enabled();

// Generic node builder for op implementations.
VarPtr make_node(Tensor value, std::vector<VarPtr> parents, std::function<void(Var&)> backward);

// Runs reverse accumulation from a scalar root.
void backward(const VarPtr& root);

// ---- elementwise (exact same shape) ----
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr div(const VarPtr& a, const VarPtr& b);

// ---- scalar affine ----
VarPtr scale(const VarPtr& a, double s);
VarPtr add_scalar(const VarPtr& a, double s);

// ---- unary ----
VarPtr neg(const VarPtr& a);
VarPtr exp_v(const VarPtr& a);
VarPtr log_v(const VarPtr& a);
VarPtr sqrt_v(const VarPtr& a);
VarPtr abs_v(const VarPtr& a);       // sign subgradient, sign(0)=0
VarPtr relu(const VarPtr& a);
VarPtr leaky_relu(const VarPtr& a, double slope);
VarPtr silu(const VarPtr& a);
VarPtr sigmoid(const VarPtr& a);
VarPtr tanh_v(const VarPtr& a);
VarPtr clamp01(const VarPtr& a);     // pass-through gradient strictly inside (0,1)

// ---- reductions ----
VarPtr sum_all(const VarPtr& a);     // -> [1]
VarPtr mean_all(const VarPtr& a);    // -> [1]

// ---- shape ----
VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape);
VarPtr permute(const VarPtr& a, const std::vector<int>& axes);
VarPtr concat(const std::vector<VarPtr>& xs, int axis);
VarPtr slice(const VarPtr& a, int axis, int64_t start, int64_t len);
VarPtr broadcast_rows(const VarPtr& row, int64_t n); // [E] or [1,E] -> [n,E]

// ---- linear algebra ----
// a: [..., m, k]; b: [k, n] or [..., k, n] with matching leading dims.
VarPtr matmul(const VarPtr& a, const VarPtr& b);
VarPtr softmax_lastdim(const VarPtr& a);

// Convenience compositions.
VarPtr mse(const VarPtr& a, const VarPtr& b);      // mean((a-b)^2)
VarPtr l1_mean(const VarPtr& a, const VarPtr& b);  // mean(|a-b|)

} // namespace mcdm::ag
