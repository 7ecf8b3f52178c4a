#pragma once

#include <utility>
#include <vector>

#include "taml/tensor.hpp"

namespace taml {

// Differentiable dense ops. Every op validates shapes, checks its output for
// NaN/Inf, and records a backward rule on the active tape when any input is
// grad-connected. Broadcast variants are named rather than implicit:
//   *_rows(X[R,C], v[C]) applies v across rows,
//   *_cols(X[R,C], u[R]) applies u across columns.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_rows(const Tensor& x, const Tensor& v);
Tensor sub_rows(const Tensor& x, const Tensor& v);
Tensor mul_rows(const Tensor& x, const Tensor& v);
Tensor div_rows(const Tensor& x, const Tensor& v);
Tensor add_cols(const Tensor& x, const Tensor& u);
Tensor mul_cols(const Tensor& x, const Tensor& u);
Tensor div_cols(const Tensor& x, const Tensor& u);

Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
Tensor neg(const Tensor& x);
// Multiplies by a one-element tensor; gradient reaches both operands.
Tensor mul_scalar_t(const Tensor& x, const Tensor& s);

Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// out[i,j] = sum_k x[i,k] * w[k,j] + b[j]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum_all(const Tensor& x);          // -> [1]
Tensor col_sum(const Tensor& x);          // [R,C] -> [C]
Tensor row_sum(const Tensor& x);          // [R,C] -> [R]
Tensor col_mean(const Tensor& x);

// Per-channel mean and population variance over the sample axis.
std::pair<Tensor, Tensor> moments(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);

// Severs gradient flow: the result is a constant copy.
Tensor detach(const Tensor& x);

// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilized.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

std::size_t argmax_row(const Tensor& x, std::size_t row);

}  // namespace taml
