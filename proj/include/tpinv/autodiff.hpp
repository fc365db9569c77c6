#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tpinv/tensor.hpp"

namespace tpinv {

// Reverse-mode autodiff over Tensor payloads. Graphs are built per forward
// pass and freed when the root goes out of scope (children own parents).
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // pulls this->grad into parents
    const char* op = "leaf";

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(value.shape());
        return grad;
    }
};

bool grad_enabled();

// Disables graph construction in scope: ops yield detached constants.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

Var constant(Tensor v);
Var make_param(Tensor v);

// Seeds root with grad 1 (root must be a single-element tensor) and runs the
// reverse sweep in topological order.
void backward(const Var& root);

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Scalar s);
Var add_scalar(const Var& a, Scalar s);
Var div(const Var& a, const Var& b);

Var leaky_relu(const Var& a, Scalar slope);
// Values are d/dx leaky_relu(x); contributes no gradient itself (exact a.e.).
Var leaky_relu_deriv(const Var& a, Scalar slope);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var softplus(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var sqrt_op(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
Var maximum_scalar(const Var& a, Scalar floor);
Var stopgrad(const Var& a);

Var matmul(const Var& a, const Var& b);       // [m,k]x[k,n] -> [m,n]
Var transpose(const Var& a);                  // [m,n] -> [n,m]
Var reshape(const Var& a, std::vector<int> shape);
Var slice_cols(const Var& a, int c0, int c1); // [m,n] -> [m,c1-c0]
Var concat_cols(const Var& a, const Var& b);  // [m,n1],[m,n2] -> [m,n1+n2]
Var get_row(const Var& a, int i);             // [m,n] -> [1,n]
Var stack_rows(const std::vector<Var>& rows); // L x [1,n]|[n] -> [L,n]

Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]
Var row_sum(const Var& a);   // [m,n] -> [m]
Var mul_colvec(const Var& a, const Var& v);  // [m,n]*[m] per-row scale
Var add_rowvec(const Var& a, const Var& v);  // [m,n]+[n] per-row bias
Var mul_rowvec(const Var& a, const Var& v);  // [m,n]*[n] per-column scale
Var softmax_rows(const Var& a);
Var cumsum_excl_rows(const Var& a);  // y[i,j] = sum_{k<j} x[i,k]

// Image ops on [C,H,W].
Var conv2d(const Var& x, const Var& w, int stride, int pad);  // w [Co,Ci,kh,kw]
Var add_bias_chw(const Var& x, const Var& b);                 // b [C]
Var upsample2x(const Var& x);
Var global_avg_pool(const Var& x);  // -> [1,C]

// Weight-demodulation helpers for style-modulated convolution.
Var mul_weight_in(const Var& w, const Var& s);    // [Co,Ci,kh,kw] * [Ci]
Var mul_weight_out(const Var& w, const Var& d);   // [Co,Ci,kh,kw] * [Co]
Var sum_per_out(const Var& w);                    // -> [Co]

// Bilinear sample of a feature plane at fractional grid coords (already
// clamped to [0, R-1]). plane [C,R,R], gu/gv [P] (col, row). -> [P,C]
Var plane_sample(const Var& plane, const Tensor& gu, const Tensor& gv);

}  // namespace ops

}  // namespace tpinv
